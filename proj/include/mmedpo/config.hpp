#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mmedpo/agents.hpp"
#include "mmedpo/dpo.hpp"
#include "mmedpo/noising.hpp"
#include "mmedpo/normalize.hpp"
#include "mmedpo/relevance.hpp"
#include "mmedpo/synth.hpp"

namespace mmedpo {

struct DataSettings {
    /// Dataset JSONL paths; both empty means "generate with [synth]".
    std::string train;
    std::string eval;
    /// With a single dataset (or synth), every stride-th sample is held out.
    std::size_t eval_stride = 5;
};

struct CurationSettings {
    /// text, visual or both.
    std::string mode = "both";
    std::size_t n = 5;
    AgentSpec generator{"generator", "stub:mutate", 0.7, 3, "", ""};
    AgentSpec judge{"judge", "stub:max-edit", 0.0, 3, "", ""};

    bool wants_text() const { return mode == "text" || mode == "both"; }
    bool wants_visual() const { return mode == "visual" || mode == "both"; }
};

struct ConsensusSettings {
    /// TOML file with [[agents]] tables; relative to the config file.
    std::string agents_file;
    /// Inline [[consensus.agents]]; used when agents_file is empty.
    std::vector<AgentSpec> agents;
    std::size_t round_cap = 5;
    double scale_low = 1.0;
    double scale_high = 5.0;
    bool show_ground_truth = true;
    /// Score with the first agent only (g = 1).
    bool single = false;
};

struct TrainSettings {
    TrainConfig preference{0.1, 0.05, 20, 16, 0, TrainMode::MMedPo};
    std::size_t embed_dim = 16;
    double init_scale = 0.05;
    /// Maximum-likelihood warm start on the training answers; the result is
    /// also the frozen reference. 0 skips it.
    std::size_t sft_epochs = 100;
    double sft_learning_rate = 0.5;
};

struct EvalSettings {
    std::size_t max_len = 64;
};

/// Everything a pipeline run depends on besides the code itself.
struct PipelineConfig {
    std::uint64_t seed = 0;
    DataSettings data;
    SynthConfig synth;
    CurationSettings curation;
    NoiseConfig noise;
    ConsensusSettings consensus;
    NormalizationConfig norm;
    TrainSettings train;
    EvalSettings eval;

    /// Directory relative paths in the file are resolved against.
    std::filesystem::path base_dir = ".";

    void validate() const;
    /// Every setting, defaults included, as written to the run manifest.
    nlohmann::json to_json() const;

    std::filesystem::path resolve(const std::string& p) const;
    /// Agents from agents_file or the inline list, or the built-in stub panel
    /// when neither is given. A named agents_file that does not exist is a
    /// ValidationError.
    std::vector<AgentSpec> scoring_agents() const;
    ConsensusConfig consensus_config() const;
};

/// Built-in offline rater panel: three rubric stubs, two with jitter.
std::vector<AgentSpec> default_agent_panel();

PipelineConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir = ".");
PipelineConfig load_config(const std::filesystem::path& path);

/// Applies `key=value` (e.g. "noise.mode=global"); the value is read as TOML
/// when it parses as one and as a bare string otherwise.
void apply_override(PipelineConfig& config, std::string_view assignment);

/// [[agents]] tables from a TOML file. `prompt_file` entries are resolved
/// relative to that file.
std::vector<AgentSpec> load_agents(const std::filesystem::path& path);

}  // namespace mmedpo
