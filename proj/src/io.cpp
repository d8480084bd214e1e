#include "mmedpo/io.hpp"

#include <bit>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

#include "mmedpo/errors.hpp"
#include "mmedpo/hash.hpp"
#include "mmedpo/rng.hpp"

namespace mmedpo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
    return v;
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
float get_f32(std::string_view bytes, std::size_t offset) { return std::bit_cast<float>(get_u32(bytes, offset)); }

constexpr std::size_t kHeaderBytes = 12;

struct Header {
    std::uint32_t height, width, channels;
    std::size_t count() const { return std::size_t{height} * width * channels; }
};

Header read_header(std::string_view bytes) {
    if (bytes.size() < kHeaderBytes) {
        throw FormatError(fmt::format("tensor payload is {} bytes, shorter than the 12-byte header", bytes.size()));
    }
    return {get_u32(bytes, 0), get_u32(bytes, 4), get_u32(bytes, 8)};
}

std::string str_field(const json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        throw FormatError(fmt::format("line {}: field '{}' missing or not a string", line, key));
    }
    return it->get<std::string>();
}

std::optional<double> opt_number(const json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) throw FormatError(fmt::format("line {}: field '{}' is not a number", line, key));
    return it->get<double>();
}

json number_or_null(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

/// Calls fn(json, line_number) for every non-blank line.
template <typename Fn>
void for_each_json_line(const fs::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(fmt::format("{}: parse error at line {}: {}", path.string(), line_no, e.what()));
        }
        if (!obj.is_object()) throw FormatError(fmt::format("{}: line {} is not a JSON object", path.string(), line_no));
        fn(obj, line_no);
    }
}

std::string store_content_addressed(const fs::path& root, const ImageTensor& image) {
    const std::string bytes = encode_tensor(image);
    const std::string rel = "tensors/" + sha256_hex(bytes).substr(0, 32) + ".bin";
    const fs::path full = root / rel;
    if (!fs::exists(full)) write_file(full, bytes);
    return rel;
}

}  // namespace

std::string encode_tensor(const ImageTensor& image) {
    std::string out;
    out.reserve(kHeaderBytes + 4 * image.size());
    put_u32(out, static_cast<std::uint32_t>(image.height()));
    put_u32(out, static_cast<std::uint32_t>(image.width()));
    put_u32(out, static_cast<std::uint32_t>(image.channels()));
    for (float v : image.data()) put_f32(out, v);
    return out;
}

ImageTensor decode_tensor(std::string_view bytes) {
    const Header h = read_header(bytes);
    const std::size_t expected = kHeaderBytes + 4 * h.count();
    if (bytes.size() != expected) {
        throw FormatError(fmt::format("tensor header declares {}x{}x{} ({} bytes) but payload has {} bytes", h.height,
                                      h.width, h.channels, expected, bytes.size()));
    }
    std::vector<float> data(h.count());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = get_f32(bytes, kHeaderBytes + 4 * i);
    try {
        return ImageTensor(h.height, h.width, h.channels, std::move(data));
    } catch (const ValidationError& e) {
        throw FormatError(e.what());
    }
}

std::string encode_heatmap(const LesionHeatmap& heatmap) {
    std::string out;
    put_u32(out, static_cast<std::uint32_t>(heatmap.height));
    put_u32(out, static_cast<std::uint32_t>(heatmap.width));
    put_u32(out, 1);
    for (float v : heatmap.mask) put_f32(out, v);
    put_f32(out, heatmap.confidence);
    return out;
}

LesionHeatmap decode_heatmap(std::string_view bytes) {
    const Header h = read_header(bytes);
    if (h.channels != 1) throw FormatError(fmt::format("heatmap must have 1 channel, header says {}", h.channels));
    const std::size_t expected = kHeaderBytes + 4 * h.count() + 4;
    if (bytes.size() != expected) {
        throw FormatError(fmt::format("heatmap header declares {}x{} ({} bytes with confidence) but payload has {} bytes",
                                      h.height, h.width, expected, bytes.size()));
    }
    LesionHeatmap out;
    out.height = h.height;
    out.width = h.width;
    out.mask.resize(h.count());
    for (std::size_t i = 0; i < out.mask.size(); ++i) out.mask[i] = get_f32(bytes, kHeaderBytes + 4 * i);
    out.confidence = get_f32(bytes, expected - 4);
    try {
        out.validate();
    } catch (const ValidationError& e) {
        throw FormatError(e.what());
    }
    return out;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

void write_file(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError(fmt::format("cannot write '{}'", path.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError(fmt::format("short write to '{}'", path.string()));
}

ImageTensor read_tensor(const fs::path& path) { return decode_tensor(read_file(path)); }
void write_tensor(const fs::path& path, const ImageTensor& image) { write_file(path, encode_tensor(image)); }
LesionHeatmap read_heatmap(const fs::path& path) { return decode_heatmap(read_file(path)); }
void write_heatmap(const fs::path& path, const LesionHeatmap& heatmap) { write_file(path, encode_heatmap(heatmap)); }

std::string safe_file_stem(std::string_view id) {
    std::string stem;
    for (char c : id) {
        const auto u = static_cast<unsigned char>(c);
        stem.push_back(std::isalnum(u) || c == '-' || c == '_' ? c : '_');
    }
    return fmt::format("{}-{:08x}", stem, static_cast<std::uint32_t>(fnv1a64(id)));
}

Dataset load_dataset(const fs::path& path) {
    const fs::path root = path.parent_path();
    Dataset out;
    std::unordered_set<std::string> ids;
    for_each_json_line(path, [&](const json& obj, std::size_t line) {
        MedicalSample s;
        s.id = str_field(obj, "id", line);
        s.query = str_field(obj, "query", line);
        s.answer = str_field(obj, "answer", line);
        try {
            s.task = parse_task(str_field(obj, "task", line));
        } catch (const ValidationError& e) {
            throw FormatError(fmt::format("line {}: {}", line, e.what()));
        }
        try {
            s.image = read_tensor(root / str_field(obj, "image", line));
            if (auto it = obj.find("heatmap"); it != obj.end() && !it->is_null()) {
                if (!it->is_string()) throw FormatError("field 'heatmap' is not a string");
                s.heatmap = read_heatmap(root / it->get<std::string>());
            }
        } catch (const FormatError& e) {
            throw FormatError(fmt::format("sample '{}' (line {}): {}", s.id, line, e.what()));
        }
        s.validate();
        if (!ids.insert(s.id).second) {
            throw ValidationError(fmt::format("duplicate sample id '{}' at line {}", s.id, line));
        }
        out.push_back(std::move(s));
    });
    return out;
}

void save_dataset(const Dataset& dataset, const fs::path& path) {
    validate_dataset(dataset);
    const fs::path root = path.parent_path();
    std::string jsonl;
    for (const auto& s : dataset) {
        const std::string stem = safe_file_stem(s.id);
        json obj = {{"id", s.id},
                    {"query", s.query},
                    {"answer", s.answer},
                    {"task", std::string(to_string(s.task))},
                    {"image", "images/" + stem + ".bin"}};
        write_tensor(root / "images" / (stem + ".bin"), s.image);
        if (s.heatmap) {
            obj["heatmap"] = "heatmaps/" + stem + ".bin";
            write_heatmap(root / "heatmaps" / (stem + ".bin"), *s.heatmap);
        }
        jsonl += obj.dump();
        jsonl += '\n';
    }
    write_file(path, jsonl);
}

std::vector<PreferencePair> load_pairs(const fs::path& path) {
    const fs::path root = path.parent_path();
    std::vector<PreferencePair> out;
    for_each_json_line(path, [&](const json& obj, std::size_t line) {
        PreferencePair p;
        p.sample_id = str_field(obj, "sample_id", line);
        try {
            p.source = parse_pair_source(str_field(obj, "source", line));
        } catch (const ValidationError& e) {
            throw FormatError(fmt::format("line {}: {}", line, e.what()));
        }
        p.query = tokenize(str_field(obj, "query", line));
        p.preferred = tokenize(str_field(obj, "preferred", line));
        p.dispreferred = tokenize(str_field(obj, "dispreferred", line));
        try {
            p.input_image = read_tensor(root / str_field(obj, "image", line));
            if (auto it = obj.find("dispreferred_image"); it != obj.end() && !it->is_null()) {
                if (!it->is_string()) throw FormatError("field 'dispreferred_image' is not a string");
                p.dispreferred_image = read_tensor(root / it->get<std::string>());
            }
        } catch (const FormatError& e) {
            throw FormatError(fmt::format("pair '{}' (line {}): {}", p.sample_id, line, e.what()));
        }
        p.raw_score = opt_number(obj, "raw_score", line);
        p.weight = opt_number(obj, "weight", line);
        p.validate();
        out.push_back(std::move(p));
    });
    return out;
}

void save_pairs(const std::vector<PreferencePair>& pairs, const fs::path& path) {
    const fs::path root = path.parent_path();
    std::string jsonl;
    for (const auto& p : pairs) {
        p.validate();
        json obj = {{"sample_id", p.sample_id},
                    {"source", std::string(to_string(p.source))},
                    {"query", join_tokens(p.query)},
                    {"preferred", join_tokens(p.preferred)},
                    {"dispreferred", join_tokens(p.dispreferred)},
                    {"image", store_content_addressed(root, p.input_image)},
                    {"dispreferred_image",
                     p.dispreferred_image ? json(store_content_addressed(root, *p.dispreferred_image)) : json(nullptr)},
                    {"raw_score", number_or_null(p.raw_score)},
                    {"weight", number_or_null(p.weight)}};
        jsonl += obj.dump();
        jsonl += '\n';
    }
    write_file(path, jsonl);
}

}  // namespace mmedpo
