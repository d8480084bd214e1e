#include "mmedpo/noising.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mmedpo/errors.hpp"

namespace mmedpo {

std::string_view to_string(NoiseMode mode) noexcept { return mode == NoiseMode::Local ? "local" : "global"; }

NoiseMode parse_noise_mode(std::string_view name) {
    if (name == "local") return NoiseMode::Local;
    if (name == "global") return NoiseMode::Global;
    throw ValidationError(fmt::format("unknown noise mode '{}' (valid: local, global)", name));
}

NoiseSchedule build_schedule(std::size_t steps, double xi_start, double xi_end) {
    if (steps == 0) throw ValidationError("noise schedule needs at least one step");
    auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!in_unit(xi_start) || !in_unit(xi_end)) {
        throw ValidationError(fmt::format("xi_start={} and xi_end={} must lie in (0, 1)", xi_start, xi_end));
    }
    if (xi_end > xi_start) {
        throw ValidationError(fmt::format("xi_end={} must not exceed xi_start={}", xi_end, xi_start));
    }
    NoiseSchedule s;
    s.xi.resize(steps);
    s.cumulative.resize(steps);
    double running = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
        const double t = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        s.xi[i] = xi_start + (xi_end - xi_start) * t;
        running *= s.xi[i];
        s.cumulative[i] = running;
    }
    return s;
}

ImageTensor noise_image(const ImageTensor& image, const LesionHeatmap& heatmap, const NoiseSchedule& schedule,
                        std::size_t k, Rng& rng) {
    heatmap.validate_against(image);
    if (k >= schedule.steps()) {
        throw ValidationError(fmt::format("noise step {} out of range for a {}-step schedule", k, schedule.steps()));
    }
    const double keep = std::sqrt(schedule.cumulative[k]);
    const double blend = std::sqrt(1.0 - schedule.cumulative[k]);
    const std::size_t channels = image.channels();

    ImageTensor out = image;
    auto src = image.data();
    auto dst = out.data();
    for (std::size_t p = 0; p < image.pixels(); ++p) {
        const double h = heatmap.mask[p];
        if (h == 0.0) continue;
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t i = p * channels + c;
            const double x = src[i];
            const double eps = rng.gaussian();
            dst[i] = static_cast<float>(keep * (x * h) + blend * (eps * h) + x * (1.0 - h));
        }
    }
    return out;
}

ImageTensor noise_image_global(const ImageTensor& image, const NoiseSchedule& schedule, std::size_t k, Rng& rng) {
    LesionHeatmap ones;
    ones.height = image.height();
    ones.width = image.width();
    ones.mask.assign(image.pixels(), 1.0f);
    ones.confidence = 1.0f;
    return noise_image(image, ones, schedule, k, rng);
}

LesionHeatmap synth_heatmap(const ImageTensor& image, double center_row, double center_col, double radius,
                            double confidence) {
    const auto rows = static_cast<double>(image.height());
    const auto cols = static_cast<double>(image.width());
    if (!(center_row >= -0.5 && center_row < rows - 0.5 && center_col >= -0.5 && center_col < cols - 0.5)) {
        throw ValidationError(
            fmt::format("heatmap centre ({}, {}) lies outside the {}x{} image", center_row, center_col, rows, cols));
    }
    if (!(radius > 0.0)) throw ValidationError(fmt::format("heatmap radius must be positive, got {}", radius));
    if (!(confidence >= 0.0 && confidence <= 1.0)) {
        throw ValidationError(fmt::format("heatmap confidence {} outside [0, 1]", confidence));
    }
    LesionHeatmap hm;
    hm.height = image.height();
    hm.width = image.width();
    hm.confidence = static_cast<float>(confidence);
    hm.mask.assign(image.pixels(), 0.0f);
    const double r2 = radius * radius;
    for (std::size_t r = 0; r < image.height(); ++r) {
        for (std::size_t c = 0; c < image.width(); ++c) {
            const double dr = static_cast<double>(r) - center_row;
            const double dc = static_cast<double>(c) - center_col;
            if (dr * dr + dc * dc <= r2) hm.mask[r * image.width() + c] = 1.0f;
        }
    }
    return hm;
}

}  // namespace mmedpo
