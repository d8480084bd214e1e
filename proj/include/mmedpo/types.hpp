#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmedpo {

using Tokens = std::vector<std::string>;

/// Lowercase, drop ASCII punctuation, split on whitespace. The single
/// tokenisation rule shared by the policy, curation and metrics.
Tokens tokenize(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

/// Dense float feature image, row-major (row, col, channel).
class ImageTensor {
public:
    ImageTensor() = default;
    /// Zero-filled image.
    ImageTensor(std::size_t height, std::size_t width, std::size_t channels);
    /// Throws ValidationError when the payload length or values are invalid.
    ImageTensor(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> data);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t channels() const noexcept { return channels_; }
    std::size_t pixels() const noexcept { return height_ * width_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<const float> data() const noexcept { return data_; }
    std::span<float> data() noexcept { return data_; }

    float at(std::size_t row, std::size_t col, std::size_t channel) const noexcept {
        return data_[(row * width_ + col) * channels_ + channel];
    }
    float& at(std::size_t row, std::size_t col, std::size_t channel) noexcept {
        return data_[(row * width_ + col) * channels_ + channel];
    }

    /// Per-channel mean over all pixels.
    std::vector<double> channel_means() const;

    bool operator==(const ImageTensor&) const = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t channels_ = 0;
    std::vector<float> data_;
};

/// Spatial lesion mask in [0, 1] plus the detector's confidence.
struct LesionHeatmap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> mask;
    float confidence = 0.0f;

    /// Throws ValidationError on bad dimensions or out-of-range values.
    void validate() const;
    void validate_against(const ImageTensor& image) const;
    bool all_zero() const noexcept;

    bool operator==(const LesionHeatmap&) const = default;
};

enum class Task { ClosedQa, OpenQa, Report };

std::string_view to_string(Task task) noexcept;
Task parse_task(std::string_view name);

struct MedicalSample {
    std::string id;
    ImageTensor image;
    std::string query;
    std::string answer;
    Task task = Task::ClosedQa;
    std::optional<LesionHeatmap> heatmap;

    Tokens query_tokens() const { return tokenize(query); }
    Tokens answer_tokens() const { return tokenize(answer); }

    void validate() const;
};

using Dataset = std::vector<MedicalSample>;

/// Throws ValidationError if any sample is invalid or an id repeats.
void validate_dataset(const Dataset& dataset);

enum class PairSource { TextHallucination, LesionNoise };

std::string_view to_string(PairSource source) noexcept;
PairSource parse_pair_source(std::string_view name);

struct PreferencePair {
    std::string sample_id;
    ImageTensor input_image;
    std::optional<ImageTensor> dispreferred_image;
    Tokens query;
    Tokens preferred;
    Tokens dispreferred;
    std::optional<double> raw_score;
    std::optional<double> weight;
    PairSource source = PairSource::TextHallucination;

    /// Image the dispreferred response is conditioned on: the noised image
    /// for lesion pairs, the clean input otherwise.
    const ImageTensor& dispreferred_input() const noexcept {
        return dispreferred_image ? *dispreferred_image : input_image;
    }

    /// Checks the source-dependent structure (weight bounds are checked by
    /// the normalisation module, which knows the active clip window).
    void validate() const;
};

}  // namespace mmedpo
