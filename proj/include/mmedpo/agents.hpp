#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmedpo/rng.hpp"
#include "mmedpo/types.hpp"

namespace mmedpo {

/// One language-model participant: a generator, a judge or a relevance rater.
///
/// `endpoint` is either an http(s) URL speaking the chat-completion wire
/// contract or `stub:<behavior>` for an offline deterministic agent.
/// `max_rounds_per_call` bounds the attempts made for one call (transport
/// failures only are retried).
struct AgentSpec {
    std::string name;
    std::string endpoint;
    double temperature = 0.0;
    int max_rounds_per_call = 3;
    std::string prompt_template;
    std::string system_prompt;

    bool is_stub() const noexcept { return endpoint.rfind("stub:", 0) == 0; }
    std::string_view stub_behavior() const noexcept { return std::string_view(endpoint).substr(5); }

    /// Throws ValidationError unless the endpoint scheme is http, https or stub.
    void validate() const;
};

struct AgentReply {
    std::string text;
    std::optional<double> parsed_score;
};

/// Named values substituted into `{placeholder}` slots of a prompt template.
using PromptFields = std::map<std::string, std::string, std::less<>>;

/// Replaces every `{key}` whose key is in `fields`; other braces are kept.
std::string fill_template(std::string_view tmpl, const PromptFields& fields);

/// First numeric literal in `text`, clamped to [scale_low, scale_high].
/// Throws FormatError when the text contains no number.
double parse_score(std::string_view text, double scale_low, double scale_high);
/// First numeric literal, unclamped, if any.
std::optional<double> first_number(std::string_view text);

struct HttpRequest {
    std::string url;
    std::vector<std::pair<std::string, std::string>> headers;
    std::string body;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Moves one POST to a remote endpoint. Implementations throw
/// TransportError for connection-level failures.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse post(const HttpRequest& request) = 0;
};

/// cpp-httplib backed transport.
class HttpTransport final : public Transport {
public:
    explicit HttpTransport(std::chrono::milliseconds timeout = std::chrono::seconds(60)) : timeout_(timeout) {}
    HttpResponse post(const HttpRequest& request) override;

private:
    std::chrono::milliseconds timeout_;
};

/// Dispatches agent calls to stubs or to the configured transport, with
/// exponential backoff between transport retries.
class AgentClient {
public:
    explicit AgentClient(std::shared_ptr<Transport> transport = std::make_shared<HttpTransport>(),
                         std::chrono::milliseconds base_backoff = std::chrono::milliseconds(250));

    /// Fills `spec.prompt_template` with `fields` and issues the call. Stubs
    /// see the structured fields as well as the filled prompt.
    AgentReply call(const AgentSpec& spec, const PromptFields& fields, Rng& rng) const;
    /// Sends an already-filled prompt.
    AgentReply call(const AgentSpec& spec, std::string_view filled_prompt, Rng& rng) const;

    /// Number of calls that went to the transport (stubs excluded).
    std::size_t remote_calls() const noexcept { return remote_calls_->load(); }

private:
    AgentReply dispatch(const AgentSpec& spec, std::string_view prompt, const PromptFields& fields, Rng& rng) const;
    AgentReply remote(const AgentSpec& spec, std::string_view prompt) const;

    std::shared_ptr<Transport> transport_;
    std::chrono::milliseconds base_backoff_;
    std::shared_ptr<std::atomic<std::size_t>> remote_calls_;
};

/// call_agent with a default client (real HTTP transport).
AgentReply call_agent(const AgentSpec& spec, std::string_view filled_prompt, Rng& rng);

/// Sentinel a judge returns when no candidate conflicts with the ground truth.
inline constexpr std::string_view kNoConflict = "NONE";

/// Fixed table of clinically meaningful substitutions used by the stub
/// generator (term -> alternatives).
const std::vector<std::pair<std::string, std::vector<std::string>>>& medical_swap_table();

/// Token-level Levenshtein distance.
std::size_t edit_distance(const Tokens& a, const Tokens& b);

/// Built-in prompt templates; the files under prompts/ carry the same text.
namespace prompts {
inline constexpr std::string_view kGenerator = "{query}";
inline constexpr std::string_view kJudgeSelect =
    "You review answers to a medical imaging question.\n"
    "Question: {query}\n"
    "Reference answer: {ground_truth}\n"
    "Candidate answers:\n{candidate}\n"
    "Reply with the number of the candidate that contradicts the reference most severely "
    "(wrong finding, wrong location, wrong diagnosis). If no candidate contradicts the reference, reply NONE.";
inline constexpr std::string_view kJudgeGenerate =
    "Question: {query}\n"
    "Reference answer: {ground_truth}\n"
    "Write one answer to the question that sounds plausible but contradicts the reference with a concrete medical "
    "error (for example a wrong finding, laterality or diagnosis). Reply with the answer only.";
inline constexpr std::string_view kRelevance =
    "You rate how clinically consequential an incorrect answer is.\n"
    "Question: {query}\n"
    "Reference answer: {ground_truth}\n"
    "Incorrect answer: {candidate}\n"
    "Previous reviewer score: {prior_score}\n"
    "On a scale of 1 (harmless wording difference) to 5 (dangerous clinical error), state your score as "
    "'Score: N'. If you agree with the previous reviewer, repeat their score.";
}  // namespace prompts

}  // namespace mmedpo
