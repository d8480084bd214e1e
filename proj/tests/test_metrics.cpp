#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "mmedpo/errors.hpp"
#include "mmedpo/metrics.hpp"
#include "mmedpo/rng.hpp"
#include "oracles.hpp"

using namespace mmedpo;

namespace {

Tokens random_tokens(Rng& r, std::size_t max_len) {
    static const char* words[] = {"a", "b", "c", "d"};
    Tokens t(1 + r.below(max_len));
    for (auto& w : t) w = words[r.below(4)];
    return t;
}

Dataset echo_dataset(Task task, const std::vector<std::string>& answers) {
    Dataset ds;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        ds.push_back({"e" + std::to_string(i), ImageTensor(1, 1, 1), "q", answers[i], task, std::nullopt});
    }
    return ds;
}

}  // namespace

TEST_CASE("closed accuracy rule") {
    CHECK(closed_correct("Yes, there is an effusion.", "yes"));
    CHECK(!closed_correct("yes and no", "yes"));
    CHECK(!closed_correct("", "no"));
    CHECK(closed_correct("no", "No."));
    CHECK_THROWS_AS(closed_correct("yes", "maybe"), ValidationError);
    const std::vector<std::string> p{"yes", "no", "no"}, ref{"yes", "yes", "no"};
    CHECK(closed_accuracy(p, ref) == doctest::Approx(2.0 / 3));
    CHECK_THROWS_AS(closed_accuracy(p, std::vector<std::string>{"yes"}), ValidationError);
}

TEST_CASE("open recall fixtures") {
    CHECK(open_recall("left lung cyst", "left lung cyst") == 1.0);
    CHECK(open_recall("right kidney", "left lung cyst") == 0.0);
    CHECK(open_recall("a cyst in the left side", "left lung cyst") == 2.0 / 3.0);
    CHECK_THROWS_AS(open_recall("x", "  "), ValidationError);
}

TEST_CASE("bleu fixtures") {
    const Tokens s = tokenize("the cat sat on the mat");
    for (int n = 1; n <= 4; ++n) CHECK(bleu_n(s, s, n) == 1.0);
    CHECK(bleu_n(tokenize("the the the"), tokenize("the cat sat"), 1) == doctest::Approx(1.0 / 3).epsilon(1e-15));
    CHECK(bleu_n(tokenize("the cat"), tokenize("the cat sat"), 1) == doctest::Approx(std::exp(1 - 1.5)).epsilon(1e-15));
    CHECK(bleu_n(tokenize("the cat"), tokenize("the cat sat"), 1) < 1.0);
    CHECK(bleu_n({}, s, 2) == 0.0);
    // "a b c d" vs "a b d c": p1 = 1, p2 = 1/3 -> sqrt(1/3)
    CHECK(bleu_n(tokenize("a b c d"), tokenize("a b d c"), 2) == doctest::Approx(std::sqrt(1.0 / 3)).epsilon(1e-15));
    // No 2-gram match: the floor dominates.
    CHECK(bleu_n(tokenize("a b"), tokenize("b a"), 2) == doctest::Approx(std::sqrt(1e-9)).epsilon(1e-12));
    CHECK_THROWS_AS(bleu_n(s, s, 5), ValidationError);
    CHECK(bleu_avg(s, s) == 1.0);
    const Tokens shorty = tokenize("left effusion");
    CHECK(bleu_n(shorty, shorty, 4) == 1.0);
    CHECK(bleu_n(tokenize("right effusion"), shorty, 3) == doctest::Approx(std::cbrt(0.5 * 1e-9)).epsilon(1e-12));
}

TEST_CASE("bleu decreases with order on a shared-prefix fixture") {
    const Tokens ref = tokenize("mild left pleural effusion with small nodule");
    const Tokens pred = tokenize("mild left pleural effusion and small nodule");
    for (int n = 1; n < 4; ++n) CHECK(bleu_n(pred, ref, n) >= bleu_n(pred, ref, n + 1));
}

TEST_CASE("rouge fixtures") {
    CHECK(rouge_l(tokenize("a b c d"), tokenize("a b c d")) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(rouge_l(tokenize("x y"), tokenize("a b")) == 0.0);
    CHECK(rouge_l(tokenize("a c d"), tokenize("a b c d")) == doctest::Approx(2.44 * 0.75 / (0.75 + 1.44)));
    CHECK(rouge_l(tokenize("a c d"), tokenize("a b c d")) == doctest::Approx(0.8356).epsilon(1e-4));
}

TEST_CASE("meteor fixtures") {
    const Tokens s = tokenize("a b c d e");
    const auto al = align_unigrams(s, s);
    CHECK(al.matches == 5);
    CHECK(al.chunks == 1);
    CHECK(meteor(s, s) == doctest::Approx(1.0 - 0.5 / 125.0).epsilon(1e-15));
    CHECK(meteor(tokenize("x"), tokenize("y")) == 0.0);
    CHECK(meteor(tokenize("x q"), tokenize("x r")) == doctest::Approx(0.5 * 0.5).epsilon(1e-15));
    // Repeated tokens: the alignment picks the contiguous placement.
    const auto rep = align_unigrams(tokenize("a b a b"), tokenize("a b"));
    CHECK(rep.matches == 2);
    CHECK(rep.chunks == 1);
}

TEST_CASE("rouge and meteor agree with brute force") {
    Rng r(99);
    for (int i = 0; i < 300; ++i) {
        const Tokens p = random_tokens(r, 8), q = random_tokens(r, 8);
        CHECK(lcs_length(p, q) == oracle::lcs(p, q));
        CHECK(std::abs(rouge_l(p, q) - oracle::rouge_l(p, q)) < 1e-12);
        const auto [m, c] = oracle::alignment(p, q);
        const auto got = align_unigrams(p, q);
        CHECK(got.matches == m);
        CHECK(got.chunks == c);
        CHECK(std::abs(meteor(p, q) - oracle::meteor(p, q)) < 1e-12);
    }
}

TEST_CASE("echo responder scores the maximum") {
    const auto reports = echo_dataset(Task::Report, {"mild left effusion", "severe right nodule"});
    const auto echo = [](const MedicalSample& s) { return s.answer_tokens(); };
    const auto rep = evaluate(echo, reports, Task::Report);
    CHECK(rep.rows.size() == 2);
    CHECK(rep.means.at("rouge_l") == doctest::Approx(100.0));
    CHECK(rep.means.at("bleu1") == doctest::Approx(100.0));
    CHECK(rep.means.at("bleu_avg") == doctest::Approx(100.0));
    CHECK(rep.means.at("meteor") == doctest::Approx(100.0 * (1 - 0.5 / 27.0)));

    const auto closed = echo_dataset(Task::ClosedQa, {"yes", "no"});
    CHECK(evaluate(echo, closed, Task::ClosedQa).means.at("accuracy") == 100.0);
    const auto open = echo_dataset(Task::OpenQa, {"nodule"});
    CHECK(evaluate(echo, open, Task::OpenQa).means.at("recall") == 100.0);
}

TEST_CASE("empty responder scores zero") {
    const auto silent = [](const MedicalSample&) { return Tokens{}; };
    const auto rep = evaluate(silent, echo_dataset(Task::Report, {"mild left effusion"}), Task::Report);
    for (const auto& [k, v] : rep.means) CHECK(v == 0.0);
    CHECK(evaluate(silent, echo_dataset(Task::ClosedQa, {"yes"}), Task::ClosedQa).means.at("accuracy") == 0.0);
}

TEST_CASE("report json and task mismatch") {
    const auto ds = echo_dataset(Task::OpenQa, {"a", "b", "c"});
    const auto echo = [](const MedicalSample& s) { return s.answer_tokens(); };
    const auto j = nlohmann::json::parse(evaluate(echo, ds, Task::OpenQa).to_json());
    CHECK(j["rows"].size() == 3);
    CHECK(j["task"] == "open_qa");
    CHECK_THROWS_AS(evaluate(echo, ds, Task::Report), ValidationError);
}
