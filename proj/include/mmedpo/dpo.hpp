#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmedpo/policy.hpp"
#include "mmedpo/rng.hpp"
#include "mmedpo/types.hpp"

namespace mmedpo {

enum class TrainMode {
    Dpo,     ///< unweighted preference loss
    MMedPo,  ///< relevance-weighted preference loss
    Sft,     ///< maximum likelihood on the preferred response
};

std::string_view to_string(TrainMode mode) noexcept;
TrainMode parse_train_mode(std::string_view name);

struct TrainConfig {
    double alpha = 0.1;
    double learning_rate = 0.5;
    std::size_t epochs = 20;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::MMedPo;

    bool weighted() const noexcept { return mode == TrainMode::MMedPo; }
    void validate() const;
};

/// The four log-probabilities that enter one preference margin.
struct PairLogProbs {
    double policy_preferred = 0.0;
    double reference_preferred = 0.0;
    double policy_dispreferred = 0.0;
    double reference_dispreferred = 0.0;
};

/// alpha * (log-ratio of the preferred response) - alpha * (log-ratio of the
/// dispreferred response).
double margin_from_log_probs(const PairLogProbs& lp, double alpha) noexcept;

/// Preferred term conditioned on the clean input, dispreferred term on the
/// noised image for lesion pairs and on the clean input for text pairs.
PairLogProbs pair_log_probs(const PolicyModel& policy, const PolicyModel& reference, const PreferencePair& pair);
double pair_margin(const PolicyModel& policy, const PolicyModel& reference, const PreferencePair& pair, double alpha);

/// -log sigmoid(d), computed without overflow.
double neg_log_sigmoid(double d) noexcept;
double sigmoid(double d) noexcept;

/// Mean of -log sigmoid(d_i).
double dpo_loss(const PolicyModel& policy, const PolicyModel& reference, std::span<const PreferencePair> batch,
                const TrainConfig& config);
/// Mean of -w_i log sigmoid(d_i); every pair must carry a weight.
double mmedpo_loss(const PolicyModel& policy, const PolicyModel& reference, std::span<const PreferencePair> batch,
                   const TrainConfig& config);
/// The loss selected by config.mode (dpo or mmedpo).
double preference_loss(const PolicyModel& policy, const PolicyModel& reference, std::span<const PreferencePair> batch,
                       const TrainConfig& config);

/// Gradient of preference_loss with respect to the policy parameters. The
/// reference contributes no gradient.
std::vector<double> loss_grad(const PolicyModel& policy, const PolicyModel& reference,
                              std::span<const PreferencePair> batch, const TrainConfig& config);

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;
    double mean_margin = 0.0;
};

struct TrainResult {
    PolicyModel policy;
    /// Row 0 is the state before training, then one row per epoch.
    std::vector<EpochStats> trace;
};

/// Plain SGD over seeded-shuffled minibatches.
TrainResult train(PolicyModel policy, const PolicyModel& reference, std::span<const PreferencePair> pairs,
                  const TrainConfig& config, Rng& rng);

struct SupervisedExample {
    ImageTensor image;
    Tokens query;
    Tokens response;  ///< <eos> is appended during training
};

/// Unique (image, query, preferred) examples from a pair list, by sample id.
std::vector<SupervisedExample> supervised_from_pairs(std::span<const PreferencePair> pairs);
std::vector<SupervisedExample> supervised_from_dataset(const Dataset& dataset);

/// Mean of -log pi(response + <eos> | image, query).
double sft_loss(const PolicyModel& policy, std::span<const SupervisedExample> examples);

/// SGD on sft_loss; the trace's mean_margin column is zero.
TrainResult train_sft(PolicyModel policy, std::span<const SupervisedExample> examples, const TrainConfig& config,
                      Rng& rng);

/// Trace as CSV with header `epoch,loss,mean_margin`.
std::string trace_csv(const std::vector<EpochStats>& trace);

}  // namespace mmedpo
