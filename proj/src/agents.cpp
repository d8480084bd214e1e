#include "mmedpo/agents.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "mmedpo/errors.hpp"

namespace mmedpo {

using nlohmann::json;

namespace {

enum class TermKind { Polarity, Finding, Location, Severity };

struct TermGroup {
    TermKind kind;
    std::vector<std::string> terms;
    bool pairwise;  // polarity terms swap only with their partner
};

const std::vector<TermGroup>& term_groups() {
    static const std::vector<TermGroup> groups = {
        {TermKind::Polarity, {"yes", "no", "present", "absent", "positive", "negative", "normal", "abnormal"}, true},
        {TermKind::Finding,
         {"effusion", "pneumothorax", "consolidation", "edema", "cardiomegaly", "atelectasis", "nodule", "mass",
          "fracture", "pneumonia", "opacity", "cyst"},
         false},
        {TermKind::Location, {"left", "right", "upper", "lower", "bilateral", "apical", "basal"}, false},
        {TermKind::Severity, {"mild", "moderate", "severe", "small", "large", "increased", "decreased"}, false},
    };
    return groups;
}

std::optional<TermKind> kind_of(std::string_view token) {
    if (token == "not") return TermKind::Polarity;
    for (const auto& g : term_groups()) {
        if (std::find(g.terms.begin(), g.terms.end(), token) != g.terms.end()) return g.kind;
    }
    return std::nullopt;
}

/// Every single-term substitution of `gt`, in a fixed order.
std::vector<Tokens> single_swaps(const Tokens& gt) {
    std::vector<Tokens> out;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        for (const auto& [term, alts] : medical_swap_table()) {
            if (term != gt[i]) continue;
            for (const auto& alt : alts) {
                Tokens t = gt;
                t[i] = alt;
                out.push_back(std::move(t));
            }
        }
    }
    return out;
}

Tokens toggle_negation(const Tokens& gt) {
    if (!gt.empty() && gt.front() == "no" && gt.size() > 1) return Tokens(gt.begin() + 1, gt.end());
    Tokens t = gt;
    t.insert(t.begin(), "no");
    return t;
}

/// Candidate `index` from the enumeration of mutations of `gt`; the starting
/// offset is keyed on the ground truth so different samples start at
/// different substitutions.
Tokens mutation(const Tokens& gt, std::size_t index) {
    std::vector<Tokens> options = single_swaps(gt);
    if (options.empty()) return toggle_negation(gt);
    const std::size_t start = fnv1a64(join_tokens(gt)) % options.size();
    if (index < options.size()) return options[(start + index) % options.size()];
    // Past the single swaps: compose two of them.
    Tokens t = options[(start + index) % options.size()];
    for (auto& alt : single_swaps(t)) {
        if (alt != gt && edit_distance(alt, gt) == 2) return alt;
    }
    return t;
}

int rubric_score(const Tokens& gt, const Tokens& candidate) {
    if (gt == candidate) return 1;
    std::multiset<std::string> a(gt.begin(), gt.end());
    std::multiset<std::string> b(candidate.begin(), candidate.end());
    std::vector<std::string> diff;
    std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(diff));
    int best = 2;
    for (const auto& token : diff) {
        const auto kind = kind_of(token);
        if (!kind) continue;
        switch (*kind) {
            case TermKind::Polarity:
            case TermKind::Finding: best = std::max(best, 5); break;
            case TermKind::Location: best = std::max(best, 4); break;
            case TermKind::Severity: best = std::max(best, 3); break;
        }
    }
    return best;
}

std::string field(const PromptFields& fields, std::string_view key) {
    auto it = fields.find(key);
    return it == fields.end() ? std::string() : it->second;
}

std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
        lines.emplace_back(text.substr(pos, end - pos));
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return lines;
}

AgentReply scored(double v) { return {fmt::format("Score: {}", v), v}; }

AgentReply text_reply(std::string text) {
    auto n = first_number(text);
    return {std::move(text), n};
}

double parse_number(std::string_view s, std::string_view behavior) {
    auto n = first_number(s);
    if (!n) throw ValidationError(fmt::format("stub behavior '{}' needs a number", behavior));
    return *n;
}

/// Offline agent behaviours. Each reply is a pure function of the behavior
/// string, the prompt/fields and the rng stream.
AgentReply run_stub(std::string_view behavior, std::string_view prompt, const PromptFields& fields, Rng& rng) {
    // "fail-on:<substring>;<behavior>" fails whenever the prompt or any field
    // mentions the substring and otherwise defers to the inner behavior.
    if (behavior.rfind("fail-on:", 0) == 0) {
        const auto semi = behavior.find(';');
        if (semi == std::string_view::npos) throw ValidationError("stub 'fail-on' needs ';<behavior>'");
        const std::string_view needle = behavior.substr(8, semi - 8);
        bool hit = prompt.find(needle) != std::string_view::npos;
        for (const auto& [k, v] : fields) hit = hit || v.find(needle) != std::string::npos;
        if (hit) throw TransportError(fmt::format("stub transport failure on '{}'", needle), 1);
        return run_stub(behavior.substr(semi + 1), prompt, fields, rng);
    }
    if (behavior == "fail") throw TransportError("stub transport failure", 1);
    if (behavior.rfind("echo-score:", 0) == 0) return scored(parse_number(behavior.substr(11), behavior));
    if (behavior.rfind("echo-text:", 0) == 0) return text_reply(std::string(behavior.substr(10)));
    if (behavior.rfind("hash-score:", 0) == 0) {
        const std::string_view range = behavior.substr(11);
        const auto dots = range.find("..");
        if (dots == std::string_view::npos) throw ValidationError("stub 'hash-score' expects lo..hi");
        const auto lo = static_cast<long long>(parse_number(range.substr(0, dots), behavior));
        const auto hi = static_cast<long long>(parse_number(range.substr(dots + 2), behavior));
        if (hi < lo) throw ValidationError("stub 'hash-score' needs lo <= hi");
        const std::uint64_t mix = fnv1a64(prompt) ^ rng.next_u64();
        return scored(static_cast<double>(lo + static_cast<long long>(mix % static_cast<std::uint64_t>(hi - lo + 1))));
    }
    if (behavior == "copy") return text_reply(field(fields, "ground_truth"));
    if (behavior == "mutate") {
        const Tokens gt = tokenize(field(fields, "ground_truth"));
        if (gt.empty()) throw ValidationError("stub 'mutate' needs a ground_truth field");
        const std::string idx = field(fields, "sample_index");
        const std::size_t index = idx.empty() ? rng.below(1u << 16) : std::stoul(idx);
        return text_reply(join_tokens(mutation(gt, index)));
    }
    if (behavior == "max-edit") {
        const Tokens gt = tokenize(field(fields, "ground_truth"));
        if (field(fields, "mode") == "generate") {
            Tokens out = mutation(gt, rng.below(1u << 16));
            if (out == gt) out = toggle_negation(gt);
            return text_reply(join_tokens(out));
        }
        std::size_t best = 0;
        std::size_t best_index = 0;
        const auto lines = split_lines(field(fields, "candidate_list"));
        for (std::size_t i = 0; i < lines.size(); ++i) {
            const std::size_t d = edit_distance(tokenize(lines[i]), gt);
            if (d > best) {
                best = d;
                best_index = i + 1;
            }
        }
        if (best == 0) return {std::string(kNoConflict), std::nullopt};
        return text_reply(std::to_string(best_index));
    }
    if (behavior == "rubric" || behavior.rfind("rubric-noisy:", 0) == 0) {
        int s = rubric_score(tokenize(field(fields, "ground_truth")), tokenize(field(fields, "candidate")));
        if (behavior != "rubric") {
            const double p = parse_number(behavior.substr(13), behavior);
            Rng local(rng.next_u64() ^ fnv1a64(prompt));
            if (local.uniform() < p) s += local.uniform() < 0.5 ? -1 : 1;
            s = std::clamp(s, 1, 5);
        }
        return scored(s);
    }
    throw ValidationError(fmt::format("unknown stub behavior '{}'", behavior));
}

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

ParsedUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ValidationError(fmt::format("malformed endpoint '{}'", url));
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

const std::vector<std::pair<std::string, std::vector<std::string>>>& medical_swap_table() {
    static const auto table = [] {
        std::vector<std::pair<std::string, std::vector<std::string>>> t;
        for (const auto& g : term_groups()) {
            for (std::size_t i = 0; i < g.terms.size(); ++i) {
                std::vector<std::string> alts;
                if (g.pairwise) {
                    alts.push_back(g.terms[i ^ 1u]);
                } else {
                    for (std::size_t j = 0; j < g.terms.size(); ++j) {
                        if (j != i) alts.push_back(g.terms[j]);
                    }
                }
                t.emplace_back(g.terms[i], std::move(alts));
            }
        }
        return t;
    }();
    return table;
}

std::size_t edit_distance(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

void AgentSpec::validate() const {
    if (name.empty()) throw ValidationError("agent name must be non-empty");
    const bool ok = endpoint.rfind("http://", 0) == 0 || endpoint.rfind("https://", 0) == 0 || is_stub();
    if (!ok) throw ValidationError(fmt::format("agent '{}': endpoint '{}' must be http(s) or stub", name, endpoint));
    if (!(temperature >= 0.0)) throw ValidationError(fmt::format("agent '{}': temperature must be >= 0", name));
    if (max_rounds_per_call < 1) throw ValidationError(fmt::format("agent '{}': max_rounds_per_call must be >= 1", name));
}

std::string fill_template(std::string_view tmpl, const PromptFields& fields) {
    std::string out;
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const auto open = tmpl.find('{', pos);
        if (open == std::string_view::npos) break;
        const auto close = tmpl.find('}', open + 1);
        if (close == std::string_view::npos) break;
        const auto key = tmpl.substr(open + 1, close - open - 1);
        out.append(tmpl.substr(pos, open - pos));
        if (auto it = fields.find(key); it != fields.end()) {
            out += it->second;
        } else {
            out.append(tmpl.substr(open, close - open + 1));
        }
        pos = close + 1;
    }
    out.append(tmpl.substr(pos));
    return out;
}

std::optional<double> first_number(std::string_view text) {
    static const std::regex number(R"([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(text.begin(), text.end(), m, number)) return std::nullopt;
    const double v = std::strtod(m.str().c_str(), nullptr);
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

double parse_score(std::string_view text, double scale_low, double scale_high) {
    if (!(scale_low < scale_high)) {
        throw ValidationError(fmt::format("score scale [{}, {}] is empty", scale_low, scale_high));
    }
    auto v = first_number(text);
    if (!v) throw FormatError(fmt::format("no numeric score in reply '{}'", text.substr(0, 80)));
    return std::clamp(*v, scale_low, scale_high);
}

HttpResponse HttpTransport::post(const HttpRequest& request) {
    const ParsedUrl url = split_url(request.url);
    httplib::Client client(url.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    for (const auto& [k, v] : request.headers) headers.emplace(k, v);
    auto res = client.Post(url.path, headers, request.body, "application/json");
    if (!res) {
        throw TransportError(fmt::format("POST {} failed: {}", request.url, httplib::to_string(res.error())), 1);
    }
    return {res->status, res->body};
}

AgentClient::AgentClient(std::shared_ptr<Transport> transport, std::chrono::milliseconds base_backoff)
    : transport_(std::move(transport)),
      base_backoff_(base_backoff),
      remote_calls_(std::make_shared<std::atomic<std::size_t>>(0)) {}

AgentReply AgentClient::call(const AgentSpec& spec, const PromptFields& fields, Rng& rng) const {
    const std::string prompt = fill_template(spec.prompt_template.empty() ? "{query}" : spec.prompt_template, fields);
    return dispatch(spec, prompt, fields, rng);
}

AgentReply AgentClient::call(const AgentSpec& spec, std::string_view filled_prompt, Rng& rng) const {
    return dispatch(spec, filled_prompt, {}, rng);
}

AgentReply AgentClient::dispatch(const AgentSpec& spec, std::string_view prompt, const PromptFields& fields,
                                 Rng& rng) const {
    spec.validate();
    if (prompt.empty()) throw ValidationError(fmt::format("agent '{}': prompt is empty", spec.name));
    for (int attempt = 1;; ++attempt) {
        try {
            return spec.is_stub() ? run_stub(spec.stub_behavior(), prompt, fields, rng) : remote(spec, prompt);
        } catch (const TransportError& e) {
            if (attempt >= spec.max_rounds_per_call) {
                throw TransportError(fmt::format("agent '{}': {}", spec.name, e.what()), attempt);
            }
            if (!spec.is_stub()) std::this_thread::sleep_for(base_backoff_ * (1 << (attempt - 1)));
        }
    }
}

AgentReply AgentClient::remote(const AgentSpec& spec, std::string_view prompt) const {
    if (!transport_) throw TransportError(fmt::format("agent '{}': no transport configured", spec.name), 1);
    json messages = json::array();
    if (!spec.system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", spec.system_prompt}});
    messages.push_back({{"role", "user"}, {"content", std::string(prompt)}});
    const json body = {{"model", spec.name}, {"messages", messages}, {"temperature", spec.temperature}};

    HttpRequest request{spec.endpoint, {}, body.dump()};
    if (const char* key = std::getenv("AGENT_API_KEY"); key != nullptr && *key != '\0') {
        request.headers.emplace_back("Authorization", std::string("Bearer ") + key);
    }
    remote_calls_->fetch_add(1);
    const HttpResponse res = transport_->post(request);
    if (res.status < 200 || res.status >= 300) {
        throw ProtocolError(fmt::format("agent '{}' answered HTTP {}", spec.name, res.status), res.status);
    }
    json reply;
    try {
        reply = json::parse(res.body);
    } catch (const json::parse_error&) {
        throw FormatError(fmt::format("agent '{}' returned a non-JSON body", spec.name));
    }
    if (!reply.is_object() || !reply.contains("content") || !reply["content"].is_string()) {
        throw FormatError(fmt::format("agent '{}' reply lacks a string 'content' field", spec.name));
    }
    return text_reply(reply["content"].get<std::string>());
}

AgentReply call_agent(const AgentSpec& spec, std::string_view filled_prompt, Rng& rng) {
    static const AgentClient client;
    return client.call(spec, filled_prompt, rng);
}

}  // namespace mmedpo
