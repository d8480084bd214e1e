#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mmedpo/agents.hpp"
#include "mmedpo/noising.hpp"
#include "mmedpo/rng.hpp"
#include "mmedpo/types.hpp"

namespace mmedpo {

/// Samples that could not be turned into pairs, in input order.
struct CurationIssue {
    std::string sample_id;
    std::string message;
};

struct CurationResult {
    std::vector<PreferencePair> pairs;
    std::vector<CurationIssue> issues;
};

/// Draws `n` responses from the generator for one sample. Agent errors are
/// rethrown with the sample id prefixed.
std::vector<Tokens> sample_candidates(const AgentClient& client, const AgentSpec& generator,
                                      const MedicalSample& sample, std::size_t n, Rng& rng);

/// Asks the judge for the candidate that conflicts most with the ground
/// truth; when the judge answers with the no-conflict sentinel, asks it to
/// write a fresh hallucinated answer using `generate_template`.
Tokens select_dispreferred(const AgentClient& client, const AgentSpec& judge, const std::vector<Tokens>& candidates,
                           const Tokens& ground_truth, const Tokens& query, Rng& rng,
                           std::string_view generate_template = prompts::kJudgeGenerate);

/// One hallucination pair per sample (preferred = ground truth). Each sample
/// uses its own stream seeded from `rng` and the sample id.
CurationResult build_text_pairs(const Dataset& dataset, const AgentClient& client, const AgentSpec& generator,
                                const AgentSpec& judge, std::size_t n, Rng& rng);

/// One lesion-noise pair per sample: (x, y) preferred over (x*, y). Local mode
/// needs a heatmap per sample and scores the pair with its confidence;
/// global mode scores 1.0. Pairs whose mask is all zero are reported and
/// dropped.
CurationResult build_visual_pairs(const Dataset& dataset, const NoiseSchedule& schedule, std::size_t k,
                                  NoiseMode mode, Rng& rng);

/// d_t followed by d_v.
std::vector<PreferencePair> merge(std::vector<PreferencePair> d_t, std::vector<PreferencePair> d_v);

}  // namespace mmedpo
