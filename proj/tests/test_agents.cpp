#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

// Must match the library build of httplib.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "mmedpo/agents.hpp"
#include "mmedpo/errors.hpp"

using namespace mmedpo;
using nlohmann::json;

namespace {

AgentSpec stub(const std::string& behavior, int rounds = 3) {
    return AgentSpec{"a", "stub:" + behavior, 0.0, rounds, "", ""};
}

/// Transport that fails a fixed number of times, then answers.
class FlakyTransport : public Transport {
public:
    explicit FlakyTransport(int failures) : failures_(failures) {}
    HttpResponse post(const HttpRequest& req) override {
        last = req;
        ++calls;
        if (calls <= failures_) throw TransportError("refused", 1);
        return {200, R"({"content": "Score: 3"})"};
    }
    int calls = 0;
    HttpRequest last;

private:
    int failures_;
};

/// Every call fails to connect; stub agents must never reach it.
class RefusingTransport : public Transport {
public:
    HttpResponse post(const HttpRequest&) override {
        ++calls;
        throw TransportError("no network in tests", 1);
    }
    int calls = 0;
};

}  // namespace

TEST_CASE("endpoint schemes") {
    CHECK_NOTHROW(stub("copy").validate());
    CHECK_NOTHROW((AgentSpec{"a", "http://localhost:1/x", 0, 1, "", ""}.validate()));
    CHECK_THROWS_AS((AgentSpec{"a", "ftp://x", 0, 1, "", ""}.validate()), ValidationError);
    Rng r(1);
    CHECK_THROWS_AS(call_agent(AgentSpec{"a", "ftp://x", 0, 1, "", ""}, "hi", r), ValidationError);
}

TEST_CASE("score parsing") {
    CHECK(parse_score("Score: 4. The response is wrong", 1, 5) == 4.0);
    CHECK(parse_score("7/5", 1, 5) == 5.0);
    CHECK(parse_score("-2", 1, 5) == 1.0);
    CHECK(parse_score("about 3.5", 1, 5) == 3.5);
    CHECK_THROWS_AS(parse_score("no digits here", 1, 5), FormatError);
    CHECK(!first_number("none"));
}

TEST_CASE("template filling") {
    CHECK(fill_template("Q: {query} / {unknown}", {{"query", "why"}}) == "Q: why / {unknown}");
    CHECK(fill_template("{a}{a}", {{"a", "x"}}) == "xx");
}

TEST_CASE("stub behaviours") {
    Rng r(1);
    CHECK(call_agent(stub("echo-score:4"), "anything", r).parsed_score == 4.0);
    CHECK(call_agent(stub("echo-text:hello"), "x", r).text == "hello");

    Rng a(9), b(9);
    const auto s1 = call_agent(stub("hash-score:1..5"), "same prompt", a).parsed_score;
    const auto s2 = call_agent(stub("hash-score:1..5"), "same prompt", b).parsed_score;
    REQUIRE(s1);
    CHECK(s1 == s2);
    CHECK((*s1 >= 1 && *s1 <= 5));

    CHECK_THROWS_AS(call_agent(stub("fail"), "x", r), TransportError);
    CHECK_THROWS_AS(call_agent(stub("nonsense"), "x", r), ValidationError);
}

TEST_CASE("fail-on wraps an inner behaviour") {
    AgentClient client(std::make_shared<RefusingTransport>());
    Rng r(1);
    const auto spec = stub("fail-on:boom;echo-score:2");
    CHECK(client.call(spec, PromptFields{{"query", "fine"}}, r).parsed_score == 2.0);
    CHECK_THROWS_AS(client.call(spec, PromptFields{{"query", "boom"}}, r), TransportError);
}

TEST_CASE("rubric ranks clinical errors") {
    AgentClient client(std::make_shared<RefusingTransport>());
    Rng r(1);
    const auto score = [&](const std::string& gt, const std::string& cand) {
        return *client.call(stub("rubric"), PromptFields{{"ground_truth", gt}, {"candidate", cand}, {"query", "q"}}, r)
                    .parsed_score;
    };
    CHECK(score("mild left effusion", "mild left nodule") == 5.0);
    CHECK(score("mild left effusion", "mild right effusion") == 4.0);
    CHECK(score("mild left effusion", "severe left effusion") == 3.0);
    CHECK(score("yes", "no") == 5.0);
    CHECK(score("mild left effusion", "mild left effusion") == 1.0);
}

TEST_CASE("stubs never touch the transport") {
    auto t = std::make_shared<RefusingTransport>();
    AgentClient client(t);
    Rng r(1);
    client.call(stub("mutate"), PromptFields{{"ground_truth", "left effusion"}, {"query", "q"}}, r);
    client.call(stub("rubric"), PromptFields{{"ground_truth", "yes"}, {"candidate", "no"}, {"query", "q"}}, r);
    CHECK(t->calls == 0);
    CHECK(client.remote_calls() == 0);
}

TEST_CASE("transport failures are retried up to the per-call cap") {
    auto flaky = std::make_shared<FlakyTransport>(2);
    AgentClient client(flaky, std::chrono::milliseconds(1));
    Rng r(1);
    AgentSpec spec{"remote", "http://127.0.0.1:9/v1", 0.2, 3, "", "be brief"};
    CHECK(client.call(spec, "rate this", r).parsed_score == 3.0);
    CHECK(flaky->calls == 3);

    auto dead = std::make_shared<RefusingTransport>();
    AgentClient gone(dead, std::chrono::milliseconds(1));
    try {
        gone.call(spec, "rate this", r);
        FAIL("expected transport error");
    } catch (const TransportError& e) {
        CHECK(e.attempts() == 3);
    }
    CHECK(dead->calls == 3);
}

TEST_CASE("wire contract against a local server") {
    httplib::Server server;
    std::mutex mu;
    json seen;
    std::string auth;
    server.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard<std::mutex> lock(mu);
        seen = json::parse(req.body);
        auth = req.get_header_value("Authorization");
        res.set_content(R"({"content": "Score: 4 because laterality"})", "application/json");
    });
    server.Post("/broken", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("not json", "text/plain");
    });
    server.Post("/nocontent", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"text": "4"})", "application/json");
    });
    server.Post("/error", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const std::string base = "http://127.0.0.1:" + std::to_string(port);
    AgentClient client(std::make_shared<HttpTransport>(std::chrono::seconds(5)), std::chrono::milliseconds(1));
    Rng r(1);
    ::setenv("AGENT_API_KEY", "k-test", 1);
    AgentSpec spec{"rater", base + "/v1/chat", 0.3, 2, "Rate: {candidate}", "sys"};
    const auto reply = client.call(spec, PromptFields{{"candidate", "right effusion"}}, r);
    ::unsetenv("AGENT_API_KEY");
    CHECK(reply.parsed_score == 4.0);
    {
        std::lock_guard<std::mutex> lock(mu);
        CHECK(seen["model"] == "rater");
        CHECK(seen["temperature"].get<double>() == doctest::Approx(0.3));
        REQUIRE(seen["messages"].size() == 2);
        CHECK(seen["messages"][0]["role"] == "system");
        CHECK(seen["messages"][1]["content"] == "Rate: right effusion");
        CHECK(auth == "Bearer k-test");
    }
    spec.endpoint = base + "/broken";
    CHECK_THROWS_AS(client.call(spec, "x", r), FormatError);
    spec.endpoint = base + "/nocontent";
    CHECK_THROWS_AS(client.call(spec, "x", r), FormatError);
    spec.endpoint = base + "/error";
    try {
        client.call(spec, "x", r);
        FAIL("expected protocol error");
    } catch (const ProtocolError& e) {
        CHECK(e.status() == 503);
    }
    server.stop();
    th.join();

    // Nothing listens on the port any more.
    spec.endpoint = base + "/v1/chat";
    CHECK_THROWS_AS(client.call(spec, "x", r), TransportError);
}

TEST_CASE("edit distance") {
    CHECK(edit_distance({"a", "b", "c"}, {"a", "c"}) == 1);
    CHECK(edit_distance({}, {"x", "y"}) == 2);
    CHECK(edit_distance({"a"}, {"a"}) == 0);
}

TEST_CASE("prompt files match the built-in templates") {
    const std::filesystem::path dir = MMEDPO_SOURCE_DIR "/prompts";
    const auto read = [&](const char* name) {
        std::ifstream in(dir / name, std::ios::binary);
        REQUIRE(in);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(read("generator.txt") == prompts::kGenerator);
    CHECK(read("judge_select.txt") == prompts::kJudgeSelect);
    CHECK(read("judge_generate.txt") == prompts::kJudgeGenerate);
    CHECK(read("relevance.txt") == prompts::kRelevance);
}
