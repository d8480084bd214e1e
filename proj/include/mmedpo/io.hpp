#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mmedpo/types.hpp"

namespace mmedpo {

// Tensor file: three little-endian u32 (height, width, channels) followed by
// height*width*channels little-endian IEEE-754 f32 values, row-major.
// Heatmap file: the same layout with channels = 1 and one trailing f32
// confidence.

std::string encode_tensor(const ImageTensor& image);
ImageTensor decode_tensor(std::string_view bytes);
std::string encode_heatmap(const LesionHeatmap& heatmap);
LesionHeatmap decode_heatmap(std::string_view bytes);

ImageTensor read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const ImageTensor& image);
LesionHeatmap read_heatmap(const std::filesystem::path& path);
void write_heatmap(const std::filesystem::path& path, const LesionHeatmap& heatmap);

std::string read_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes: truncate then write, creating
/// parent directories.
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Dataset JSONL: one object per line,
/// {"id", "query", "answer", "task", "image", "heatmap"?}; paths are relative
/// to the JSONL file's directory. Blank lines are ignored.
Dataset load_dataset(const std::filesystem::path& path);
/// Writes the JSONL plus tensor files under `images/` and `heatmaps/` next to it.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

/// Pairs JSONL: {"sample_id", "source", "query", "preferred", "dispreferred",
/// "image", "dispreferred_image", "raw_score", "weight"}; absent optionals are
/// null. Image tensors are stored content-addressed under `tensors/`.
std::vector<PreferencePair> load_pairs(const std::filesystem::path& path);
void save_pairs(const std::vector<PreferencePair>& pairs, const std::filesystem::path& path);

/// File-name-safe rendering of an identifier that stays unique: non
/// [A-Za-z0-9_-] bytes become '_' and a short hash of the original is appended.
std::string safe_file_stem(std::string_view id);

}  // namespace mmedpo
