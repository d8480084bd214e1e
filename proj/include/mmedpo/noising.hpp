#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "mmedpo/rng.hpp"
#include "mmedpo/types.hpp"

namespace mmedpo {

/// Per-step retention factors and their running products.
struct NoiseSchedule {
    std::vector<double> xi;
    std::vector<double> cumulative;

    std::size_t steps() const noexcept { return xi.size(); }
};

enum class NoiseMode { Local, Global };

std::string_view to_string(NoiseMode mode) noexcept;
NoiseMode parse_noise_mode(std::string_view name);

struct NoiseConfig {
    std::size_t steps = 500;
    double xi_start = 0.9999;
    double xi_end = 0.98;
    std::size_t k = 400;
    NoiseMode mode = NoiseMode::Local;
};

/// Linear interpolation of xi from xi_start to xi_end over `steps` entries.
/// Requires 0 < xi_end <= xi_start < 1.
NoiseSchedule build_schedule(std::size_t steps, double xi_start, double xi_end);

/// Localised forward noising:
///   x* = sqrt(cum_k) (x . h) + sqrt(1 - cum_k) (eps . h) + x . (1 - h)
/// with h broadcast over channels. One standard normal is drawn per element
/// whose mask value is positive, in row-major element order; elements with
/// h = 0 are copied unchanged and consume no randomness.
ImageTensor noise_image(const ImageTensor& image, const LesionHeatmap& heatmap, const NoiseSchedule& schedule,
                        std::size_t k, Rng& rng);

/// noise_image with h = 1 everywhere.
ImageTensor noise_image_global(const ImageTensor& image, const NoiseSchedule& schedule, std::size_t k, Rng& rng);

/// Hard disk mask: 1 where the pixel centre lies within `radius` of `center`
/// (row, col measured in pixel-centre coordinates), 0 elsewhere.
LesionHeatmap synth_heatmap(const ImageTensor& image, double center_row, double center_col, double radius,
                            double confidence);

}  // namespace mmedpo
