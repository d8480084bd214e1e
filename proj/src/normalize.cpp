#include "mmedpo/normalize.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "mmedpo/errors.hpp"

namespace mmedpo {

std::string_view to_string(NormalizationMode mode) noexcept {
    return mode == NormalizationMode::Remap ? "remap" : "literal";
}

NormalizationMode parse_normalization_mode(std::string_view name) {
    if (name == "remap") return NormalizationMode::Remap;
    if (name == "literal") return NormalizationMode::Literal;
    throw ValidationError(fmt::format("unknown normalization mode '{}' (valid: remap, literal)", name));
}

void NormalizationConfig::validate() const {
    if (!(clip_low < clip_high)) throw ValidationError("normalization clip_low must be below clip_high");
    if (!(target_var > 0.0)) throw ValidationError("normalization target variance must be positive");
    if (!(target_mean >= clip_low && target_mean <= clip_high)) {
        throw ValidationError("normalization target mean must lie inside the clip window");
    }
}

std::vector<double> prescale_scores(std::span<const double> raw, const NormalizationConfig& config) {
    config.validate();
    if (raw.empty()) throw ValidationError("cannot normalise an empty score list");
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!std::isfinite(raw[i])) throw ValidationError(fmt::format("score at index {} is not finite", i));
    }
    const double target_std = std::sqrt(config.target_var);
    std::vector<double> out(raw.size());
    if (config.mode == NormalizationMode::Literal) {
        for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - config.target_mean) / target_std;
        return out;
    }
    // Checked directly: the rounded mean of equal values can leave a tiny
    // spurious variance that the rescale would blow up.
    if (std::all_of(raw.begin(), raw.end(), [&](double s) { return s == raw[0]; })) {
        std::fill(out.begin(), out.end(), config.target_mean);
        return out;
    }
    const auto n = static_cast<double>(raw.size());
    double mean = 0.0;
    for (double s : raw) mean += s;
    mean /= n;
    double var = 0.0;
    for (double s : raw) var += (s - mean) * (s - mean);
    var /= n;
    const double std_dev = std::sqrt(var);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double z = (raw[i] - mean) / std_dev;
        out[i] = config.target_mean + target_std * z;
    }
    return out;
}

std::vector<double> normalize_scores(std::span<const double> raw, const NormalizationConfig& config) {
    auto out = prescale_scores(raw, config);
    for (double& v : out) v = std::clamp(v, config.clip_low, config.clip_high);
    return out;
}

void attach_weights(std::vector<PreferencePair>& pairs, const NormalizationConfig& config) {
    std::vector<std::string> missing;
    std::vector<double> raw;
    raw.reserve(pairs.size());
    for (const auto& p : pairs) {
        if (p.raw_score) {
            raw.push_back(*p.raw_score);
        } else {
            missing.push_back(p.sample_id);
        }
    }
    if (!missing.empty()) {
        throw ValidationError(fmt::format("pairs without a raw score: {}", fmt::join(missing, ", ")));
    }
    if (pairs.empty()) return;
    const auto weights = normalize_scores(raw, config);
    for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].weight = weights[i];
}

void attach_unit_weights(std::vector<PreferencePair>& pairs) {
    for (auto& p : pairs) p.weight = 1.0;
}

}  // namespace mmedpo
