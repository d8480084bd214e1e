#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mmedpo/rng.hpp"
#include "mmedpo/types.hpp"

namespace mmedpo {

/// Planted-lesion generator. An image carries at most one disk-shaped lesion
/// whose finding class is coded by the channel it is drawn in (one channel per
/// finding), plus a final "anatomy" channel with a flat baseline. Open and
/// report answers name the planted class; closed questions ask about one
/// class and are answered "yes" on images that carry it and "no" on
/// lesion-free images. A model therefore has to look at the image.
struct SynthConfig {
    std::size_t n = 240;
    /// closed_qa, open_qa, report, or mixed (cycles through the three).
    std::string task = "mixed";
    std::size_t size = 12;
    double radius = 2.5;
    double amplitude = 4.0;
    double noise_sd = 0.05;
    double anatomy_level = 1.0;
    /// Fraction of heatmaps placed away from the lesion, with low confidence.
    double miss_rate = 0.2;

    void validate() const;
};

/// Finding terms used by the generator, in channel order.
const std::vector<std::string>& synth_findings();

/// Ground truth the generator planted, kept next to the dataset.
struct SynthTruth {
    std::string id;
    bool has_lesion = true;
    /// Planted class, or for lesion-free images the class the question asks about.
    std::size_t finding = 0;
    double center_row = 0.0;
    double center_col = 0.0;
    bool heatmap_on_lesion = true;
};

struct SynthDataset {
    Dataset samples;
    std::vector<SynthTruth> truth;
};

/// Deterministic in (config, rng state). Sample i uses a stream derived from
/// the rng's next draw and the sample id.
SynthDataset synth_dataset(const SynthConfig& config, Rng& rng);

/// Dataset JSONL via save_dataset plus `truth.jsonl` beside it.
void save_synth(const SynthDataset& data, const std::filesystem::path& jsonl);

/// The subset of samples whose task is `task`, order kept.
Dataset filter_task(const Dataset& dataset, Task task);

/// Deterministic train/eval split: every `stride`-th sample (offset by
/// `stride - 1`) goes to eval.
std::pair<Dataset, Dataset> split_every(const Dataset& dataset, std::size_t stride);

}  // namespace mmedpo
