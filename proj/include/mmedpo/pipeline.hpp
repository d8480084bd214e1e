#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>

#include <json.hpp>

#include "mmedpo/agents.hpp"
#include "mmedpo/config.hpp"
#include "mmedpo/policy.hpp"
#include "mmedpo/types.hpp"

namespace mmedpo {

/// Fraction of pairs for which the policy ranks the preferred response above
/// the dispreferred one: log pi(y_w | x) > log pi(y_l | x*).
double preference_accuracy(const PolicyModel& policy, std::span<const PreferencePair> pairs);

/// Vocabulary over every query, answer and dispreferred response the run
/// will train on.
Vocabulary build_vocabulary(const Dataset& dataset, std::span<const PreferencePair> pairs);

/// "run-YYYYmmdd-HHMMSS" in UTC.
std::string default_run_name();

struct RunResult {
    std::filesystem::path run_dir;
    nlohmann::json manifest;
};

/// Runs data -> curate -> score -> normalize -> warm start -> train -> eval
/// into `run_dir`. Every artifact is listed in manifest.json with its SHA-256;
/// the manifest holds no timestamps or absolute paths, so identical configs
/// give identical manifests. When a stage throws, the completed stages'
/// outputs stay on disk, manifest.json records the failing stage, and the
/// exception propagates. Configuration problems are reported before any file
/// is written.
RunResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& run_dir,
                       std::shared_ptr<Transport> transport = nullptr);

/// The 2x2x2 grid {mmedpo, dpo} x {multi, single agent} x {local, global
/// noise}, each cell a full pipeline run under `out_dir/cells/`. Writes and
/// returns `ablation.csv` (header plus 8 rows).
std::string run_ablation(const PipelineConfig& config, const std::filesystem::path& out_dir,
                         std::shared_ptr<Transport> transport = nullptr);

}  // namespace mmedpo
