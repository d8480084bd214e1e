#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "mmedpo/types.hpp"

namespace mmedpo {

enum class NormalizationMode {
    /// Standardise by the batch mean and population std, then rescale to
    /// target_mean / target_var.
    Remap,
    /// (s - target_mean) / sqrt(target_var), no batch statistics.
    Literal,
};

std::string_view to_string(NormalizationMode mode) noexcept;
NormalizationMode parse_normalization_mode(std::string_view name);

struct NormalizationConfig {
    double target_mean = 1.0;
    double target_var = 0.1;
    double clip_low = 0.75;
    double clip_high = 1.25;
    NormalizationMode mode = NormalizationMode::Remap;

    void validate() const;
};

/// Weights before clipping. In remap mode these have exactly the target mean
/// and (population) variance unless every input is equal, in which case all
/// equal target_mean.
std::vector<double> prescale_scores(std::span<const double> raw, const NormalizationConfig& config);

/// prescale_scores clamped to [clip_low, clip_high].
std::vector<double> normalize_scores(std::span<const double> raw, const NormalizationConfig& config);

/// Normalises the raw scores of the whole batch jointly and stores the
/// result in each pair's weight.
void attach_weights(std::vector<PreferencePair>& pairs, const NormalizationConfig& config);

/// Sets every weight to 1 (the unweighted ablation).
void attach_unit_weights(std::vector<PreferencePair>& pairs);

}  // namespace mmedpo
