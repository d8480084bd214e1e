#include "mmedpo/relevance.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mmedpo/errors.hpp"

namespace mmedpo {

namespace {

std::string format_score(double s) { return fmt::format("{}", s); }

double rate(const AgentClient& client, const AgentSpec& agent, const Tokens& dispreferred,
            const ScoringContext& context, const ScoreScale& scale, bool show_ground_truth,
            const std::string& prior, Rng& rng) {
    AgentSpec spec = agent;
    if (spec.prompt_template.empty()) spec.prompt_template = prompts::kRelevance;
    const PromptFields fields = {{"query", join_tokens(context.query)},
                                 {"ground_truth", show_ground_truth ? join_tokens(context.ground_truth) : "(withheld)"},
                                 {"candidate", join_tokens(dispreferred)},
                                 {"prior_score", prior}};
    const AgentReply reply = client.call(spec, fields, rng);
    double s = parse_score(reply.text, scale.low, scale.high);
    if (scale.integral) s = std::round(s);
    return s;
}

}  // namespace

void ConsensusConfig::validate() const {
    if (agents.empty()) throw ValidationError("consensus needs at least one agent");
    if (round_cap < 1) throw ValidationError("consensus round cap must be at least 1");
    if (!(scale.low < scale.high)) throw ValidationError("consensus score scale is empty");
    for (const auto& a : agents) a.validate();
}

std::string_view to_string(Decision d) noexcept {
    switch (d) {
        case Decision::Initial: return "initial";
        case Decision::Agree: return "agree";
        case Decision::Revise: return "revise";
    }
    return "initial";
}

ConsensusTranscript consensus_score(const AgentClient& client, const ConsensusConfig& config,
                                    const Tokens& dispreferred, const ScoringContext& context, Rng& rng) {
    config.validate();
    if (dispreferred.empty()) throw ValidationError("cannot score an empty dispreferred response");
    const std::size_t g = config.agents.size();
    const std::size_t cap = g * config.round_cap;

    ConsensusTranscript t;
    std::size_t failures_this_pass = 0;
    for (std::size_t e = 0; e < cap; ++e) {
        const std::size_t i = e % g;
        if (i == 0) failures_this_pass = 0;
        const AgentSpec& agent = config.agents[i];
        t.evaluations = e + 1;
        const std::string prior = t.history.empty() ? "none" : format_score(t.history.back().score);
        double s = 0.0;
        try {
            s = rate(client, agent, dispreferred, context, config.scale, config.show_ground_truth, prior, rng);
        } catch (const TransportError&) {
            t.skipped.push_back(agent.name);
            if (++failures_this_pass == g) {
                throw ProtocolError(fmt::format("every agent failed during consensus pass {}", e / g + 1));
            }
            continue;
        }
        Decision d = Decision::Initial;
        if (!t.history.empty()) d = s == t.history.back().score ? Decision::Agree : Decision::Revise;
        t.history.push_back({agent.name, s, d});

        if (t.history.size() >= g) {
            bool unanimous = true;
            for (std::size_t j = t.history.size() - g; j < t.history.size(); ++j) {
                unanimous = unanimous && t.history[j].score == s;
            }
            if (unanimous) {
                t.converged = true;
                t.final_score = s;
                return t;
            }
        }
    }
    if (t.history.empty()) throw ProtocolError("consensus produced no scores");
    double sum = 0.0;
    for (const auto& entry : t.history) sum += entry.score;
    t.final_score = sum / static_cast<double>(t.history.size());
    return t;
}

double single_agent_score(const AgentClient& client, const AgentSpec& agent, const Tokens& dispreferred,
                          const ScoringContext& context, Rng& rng, const ScoreScale& scale) {
    agent.validate();
    if (dispreferred.empty()) throw ValidationError("cannot score an empty dispreferred response");
    return rate(client, agent, dispreferred, context, scale, true, "none", rng);
}

ScoredPairs score_pairs(const AgentClient& client, std::vector<PreferencePair> pairs, const ConsensusConfig& config,
                        Rng& rng) {
    const Rng base(rng.next_u64());
    ScoredPairs out;
    out.transcripts.resize(pairs.size());
    bool has_text = false;
    for (const auto& p : pairs) has_text = has_text || p.source == PairSource::TextHallucination;
    if (has_text) config.validate();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto& p = pairs[i];
        if (p.source != PairSource::TextHallucination) continue;
        Rng local = base.derive(p.sample_id);
        try {
            out.transcripts[i] = consensus_score(client, config, p.dispreferred, {p.query, p.preferred}, local);
            p.raw_score = out.transcripts[i].final_score;
        } catch (const Error& e) {
            p.raw_score.reset();
            out.issues.push_back({p.sample_id, e.what()});
        }
    }
    out.pairs = std::move(pairs);
    return out;
}

}  // namespace mmedpo
