#include "mmedpo/synth.hpp"

#include <cmath>

#include <fmt/format.h>
#include <json.hpp>

#include "mmedpo/errors.hpp"
#include "mmedpo/io.hpp"
#include "mmedpo/noising.hpp"

namespace mmedpo {

namespace {

const std::vector<std::string> kSeverity = {"mild", "moderate", "severe"};
const std::vector<std::string> kLocation = {"left", "right", "bilateral"};
// Closed questions end in a cue word per finding rather than the finding
// itself: the policy conditions on the last query token only, and finding
// words also end open and report answers.
const std::vector<std::string> kClosedQuestion = {"is there pleural fluid", "is there free pleural air",
                                                  "is there airspace filling", "is there a focal spot"};

Task task_for(const std::string& mode, std::size_t i) {
    if (mode == "mixed") {
        static constexpr Task cycle[] = {Task::ClosedQa, Task::OpenQa, Task::Report};
        return cycle[i % 3];
    }
    return parse_task(mode);
}

}  // namespace

const std::vector<std::string>& synth_findings() {
    static const std::vector<std::string> f = {"effusion", "pneumothorax", "consolidation", "nodule"};
    return f;
}

void SynthConfig::validate() const {
    if (n == 0) throw ValidationError("synth.n must be >= 1");
    if (task != "mixed") parse_task(task);
    if (size < 4) throw ValidationError("synth.size must be >= 4");
    if (!(radius > 0.0) || 2.0 * radius >= static_cast<double>(size)) {
        throw ValidationError("synth.radius must be positive and smaller than half the image");
    }
    if (!(noise_sd >= 0.0)) throw ValidationError("synth.noise_sd must be >= 0");
    if (!(miss_rate >= 0.0 && miss_rate <= 1.0)) throw ValidationError("synth.miss_rate must lie in [0, 1]");
    if (!std::isfinite(amplitude) || !std::isfinite(anatomy_level)) {
        throw ValidationError("synth.amplitude and synth.anatomy_level must be finite");
    }
}

SynthDataset synth_dataset(const SynthConfig& config, Rng& rng) {
    config.validate();
    const auto& findings = synth_findings();
    const std::size_t k = findings.size();
    const std::size_t channels = k + 1;
    const std::size_t side = config.size;
    const double lo = config.radius;
    const double hi = static_cast<double>(side) - 1.0 - config.radius;

    Rng base(rng.next_u64());
    SynthDataset out;
    out.samples.reserve(config.n);
    out.truth.reserve(config.n);
    for (std::size_t i = 0; i < config.n; ++i) {
        const std::string id = fmt::format("synth-{:05d}", i);
        Rng r = base.derive(id);

        const Task task = task_for(config.task, i);
        const std::size_t finding = r.below(k);
        // Closed questions are balanced: "yes" images carry the asked finding,
        // "no" images carry no lesion at all.
        const bool has_lesion = task != Task::ClosedQa || r.uniform() < 0.5;
        const double row = r.uniform(lo, hi);
        const double col = r.uniform(lo, hi);

        std::vector<float> data(side * side * channels);
        for (std::size_t p = 0; p < side * side; ++p) {
            for (std::size_t c = 0; c < k; ++c) {
                data[p * channels + c] = static_cast<float>(config.noise_sd * r.gaussian());
            }
            data[p * channels + k] = static_cast<float>(config.anatomy_level + config.noise_sd * r.gaussian());
        }
        if (has_lesion) {
            const LesionHeatmap lesion =
                synth_heatmap(ImageTensor(side, side, channels), row, col, config.radius, 1.0);
            for (std::size_t p = 0; p < side * side; ++p) {
                data[p * channels + finding] += static_cast<float>(config.amplitude * lesion.mask[p]);
            }
        }
        ImageTensor image(side, side, channels, std::move(data));

        const bool on_lesion = has_lesion && r.uniform() >= config.miss_rate;
        LesionHeatmap heatmap;
        if (!has_lesion) {
            // Nothing for the detector to find: an empty mask.
            heatmap = LesionHeatmap{side, side, std::vector<float>(side * side, 0.0f),
                                    static_cast<float>(r.uniform(0.0, 0.1))};
        } else if (on_lesion) {
            heatmap = synth_heatmap(image, row, col, config.radius, r.uniform(0.7, 1.0));
        } else {
            // A detector miss: somewhere away from the lesion, low confidence.
            double mr = row, mc = col, best = -1.0;
            for (int attempt = 0; attempt < 64; ++attempt) {
                const double cr = r.uniform(lo, hi);
                const double cc = r.uniform(lo, hi);
                const double d = std::hypot(cr - row, cc - col);
                if (d > best) {
                    best = d;
                    mr = cr;
                    mc = cc;
                }
                if (d > 2.0 * config.radius + 1.0) break;
            }
            heatmap = synth_heatmap(image, mr, mc, config.radius, r.uniform(0.05, 0.35));
        }

        std::string query, answer;
        switch (task) {
            case Task::ClosedQa:
                query = kClosedQuestion[finding];
                answer = has_lesion ? "yes" : "no";
                break;
            case Task::OpenQa:
                query = "which abnormality is present";
                answer = findings[finding];
                break;
            case Task::Report:
                query = "describe the findings";
                answer = fmt::format("{} {} {}", kSeverity[r.below(kSeverity.size())],
                                     kLocation[r.below(kLocation.size())], findings[finding]);
                break;
        }

        out.samples.push_back(MedicalSample{id, std::move(image), query, answer, task, std::move(heatmap)});
        out.truth.push_back(SynthTruth{id, has_lesion, finding, row, col, on_lesion});
    }
    return out;
}

void save_synth(const SynthDataset& data, const std::filesystem::path& jsonl) {
    save_dataset(data.samples, jsonl);
    std::string lines;
    for (const auto& t : data.truth) {
        const nlohmann::json j = {{"id", t.id},
                                  {"has_lesion", t.has_lesion},
                                  {"finding", synth_findings().at(t.finding)},
                                  {"center_row", t.center_row},
                                  {"center_col", t.center_col},
                                  {"heatmap_on_lesion", t.heatmap_on_lesion}};
        lines += j.dump() + "\n";
    }
    const auto dir = jsonl.has_parent_path() ? jsonl.parent_path() : std::filesystem::path(".");
    write_file(dir / "truth.jsonl", lines);
}

Dataset filter_task(const Dataset& dataset, Task task) {
    Dataset out;
    for (const auto& s : dataset) {
        if (s.task == task) out.push_back(s);
    }
    return out;
}

std::pair<Dataset, Dataset> split_every(const Dataset& dataset, std::size_t stride) {
    if (stride < 2) throw ValidationError("split stride must be >= 2");
    std::pair<Dataset, Dataset> out;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        (i % stride == stride - 1 ? out.second : out.first).push_back(dataset[i]);
    }
    return out;
}

}  // namespace mmedpo
