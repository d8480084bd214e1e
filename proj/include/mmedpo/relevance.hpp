#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "mmedpo/agents.hpp"
#include "mmedpo/curation.hpp"
#include "mmedpo/rng.hpp"
#include "mmedpo/types.hpp"

namespace mmedpo {

struct ScoreScale {
    double low = 1.0;
    double high = 5.0;
    /// Round parsed scores to the nearest integer so agreement is exact.
    bool integral = true;
};

struct ConsensusConfig {
    std::vector<AgentSpec> agents;
    std::size_t round_cap = 5;
    ScoreScale scale;
    /// Whether raters see the reference answer.
    bool show_ground_truth = true;

    void validate() const;
};

enum class Decision { Initial, Agree, Revise };

std::string_view to_string(Decision d) noexcept;

struct ConsensusEntry {
    std::string agent;
    double score = 0.0;
    Decision decision = Decision::Initial;
};

/// Full record of one consensus exchange. `skipped` lists agents whose call
/// failed at the transport level, in evaluation order.
struct ConsensusTranscript {
    std::vector<ConsensusEntry> history;
    std::vector<std::string> skipped;
    double final_score = 0.0;
    bool converged = false;
    /// Attempted evaluations, including skipped ones.
    std::size_t evaluations = 0;
};

/// Text the raters judge: the question and (optionally) the reference.
struct ScoringContext {
    Tokens query;
    Tokens ground_truth;
};

/// Sequential multi-agent scoring. Agents are visited in configured order,
/// cycling. The first successful evaluation is INITIAL; every later agent sees
/// the previous score and either repeats it (AGREE) or gives a different one
/// (REVISE); both are appended to the history. The exchange converges once
/// the last g entries are equal (g = number of agents) and the final score is
/// that value. If g * round_cap evaluations pass without convergence the final
/// score is the mean of the whole history.
///
/// Transport failures skip the agent for that turn; a full pass over the
/// agents in which every call failed raises ProtocolError.
ConsensusTranscript consensus_score(const AgentClient& client, const ConsensusConfig& config,
                                    const Tokens& dispreferred, const ScoringContext& context, Rng& rng);

/// One rater, one call.
double single_agent_score(const AgentClient& client, const AgentSpec& agent, const Tokens& dispreferred,
                          const ScoringContext& context, Rng& rng, const ScoreScale& scale = {});

struct ScoredPairs {
    std::vector<PreferencePair> pairs;
    /// Parallel to `pairs`; empty transcripts for lesion pairs.
    std::vector<ConsensusTranscript> transcripts;
    std::vector<CurationIssue> issues;
};

/// Text pairs get the consensus score; lesion pairs keep their detector
/// confidence. Pairs whose consensus fails keep raw_score unset and are listed
/// in `issues`.
ScoredPairs score_pairs(const AgentClient& client, std::vector<PreferencePair> pairs, const ConsensusConfig& config,
                        Rng& rng);

}  // namespace mmedpo
