#include "mmedpo/types.hpp"

#include <cctype>
#include <cmath>
#include <unordered_set>

#include <fmt/format.h>

#include "mmedpo/errors.hpp"

namespace mmedpo {

Tokens tokenize(std::string_view text) {
    Tokens out;
    std::string current;
    for (char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isspace(c)) {
            if (!current.empty()) out.push_back(std::move(current));
            current.clear();
        } else if (c < 0x80 && std::ispunct(c)) {
            continue;
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out.push_back(' ');
        out += t;
    }
    return out;
}

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels)
    : ImageTensor(height, width, channels, std::vector<float>(height * width * channels, 0.0f)) {}

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (height == 0 || width == 0 || channels == 0) {
        throw ValidationError(fmt::format("image dimensions must be positive, got {}x{}x{}", height, width, channels));
    }
    if (data_.size() != height * width * channels) {
        throw ValidationError(fmt::format("image payload has {} values, expected {}x{}x{} = {}", data_.size(), height,
                                          width, channels, height * width * channels));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) throw ValidationError(fmt::format("image value {} is not finite", i));
    }
}

std::vector<double> ImageTensor::channel_means() const {
    std::vector<double> means(channels_, 0.0);
    for (std::size_t p = 0; p < pixels(); ++p) {
        for (std::size_t c = 0; c < channels_; ++c) means[c] += data_[p * channels_ + c];
    }
    if (pixels() > 0) {
        for (auto& m : means) m /= static_cast<double>(pixels());
    }
    return means;
}

void LesionHeatmap::validate() const {
    if (height == 0 || width == 0) throw ValidationError("heatmap dimensions must be positive");
    if (mask.size() != height * width) {
        throw ValidationError(fmt::format("heatmap has {} values, expected {}x{}", mask.size(), height, width));
    }
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!(mask[i] >= 0.0f && mask[i] <= 1.0f)) {
            throw ValidationError(fmt::format("heatmap value {} at index {} outside [0, 1]", mask[i], i));
        }
    }
    if (!(confidence >= 0.0f && confidence <= 1.0f)) {
        throw ValidationError(fmt::format("heatmap confidence {} outside [0, 1]", confidence));
    }
}

void LesionHeatmap::validate_against(const ImageTensor& image) const {
    validate();
    if (height != image.height() || width != image.width()) {
        throw ValidationError(fmt::format("heatmap is {}x{} but image is {}x{}", height, width, image.height(),
                                          image.width()));
    }
}

bool LesionHeatmap::all_zero() const noexcept {
    for (float v : mask) {
        if (v != 0.0f) return false;
    }
    return true;
}

std::string_view to_string(Task task) noexcept {
    switch (task) {
        case Task::ClosedQa: return "closed_qa";
        case Task::OpenQa: return "open_qa";
        case Task::Report: return "report";
    }
    return "closed_qa";
}

Task parse_task(std::string_view name) {
    if (name == "closed_qa") return Task::ClosedQa;
    if (name == "open_qa") return Task::OpenQa;
    if (name == "report") return Task::Report;
    throw ValidationError(fmt::format("unknown task '{}' (valid: closed_qa, open_qa, report)", name));
}

void MedicalSample::validate() const {
    if (id.empty()) throw ValidationError("sample id must be non-empty");
    if (query_tokens().empty()) throw ValidationError(fmt::format("sample '{}': query is empty", id));
    if (answer_tokens().empty()) throw ValidationError(fmt::format("sample '{}': answer is empty", id));
    if (heatmap) {
        try {
            heatmap->validate_against(image);
        } catch (const ValidationError& e) {
            throw ValidationError(fmt::format("sample '{}': {}", id, e.what()));
        }
    }
}

void validate_dataset(const Dataset& dataset) {
    std::unordered_set<std::string> seen;
    for (const auto& s : dataset) {
        s.validate();
        if (!seen.insert(s.id).second) throw ValidationError(fmt::format("duplicate sample id '{}'", s.id));
    }
}

std::string_view to_string(PairSource source) noexcept {
    return source == PairSource::TextHallucination ? "text_hallucination" : "lesion_noise";
}

PairSource parse_pair_source(std::string_view name) {
    if (name == "text_hallucination") return PairSource::TextHallucination;
    if (name == "lesion_noise") return PairSource::LesionNoise;
    throw ValidationError(fmt::format("unknown pair source '{}'", name));
}

void PreferencePair::validate() const {
    if (preferred.empty() || dispreferred.empty()) {
        throw ValidationError(fmt::format("pair '{}': responses must be non-empty", sample_id));
    }
    if (source == PairSource::TextHallucination) {
        if (dispreferred_image) {
            throw ValidationError(fmt::format("pair '{}': text pair must not carry a noised image", sample_id));
        }
        if (preferred == dispreferred) {
            throw ValidationError(fmt::format("pair '{}': preferred and dispreferred responses are equal", sample_id));
        }
    } else {
        if (!dispreferred_image) {
            throw ValidationError(fmt::format("pair '{}': lesion pair requires a noised image", sample_id));
        }
        if (preferred != dispreferred) {
            throw ValidationError(fmt::format("pair '{}': lesion pair must share the response text", sample_id));
        }
        const auto& x = input_image;
        const auto& xs = *dispreferred_image;
        if (x.height() != xs.height() || x.width() != xs.width() || x.channels() != xs.channels()) {
            throw ValidationError(fmt::format("pair '{}': noised image shape differs from input", sample_id));
        }
    }
    if (raw_score && !std::isfinite(*raw_score)) {
        throw ValidationError(fmt::format("pair '{}': raw score is not finite", sample_id));
    }
}

}  // namespace mmedpo
