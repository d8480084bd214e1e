// mmedpo: command-line front end for curation, scoring, training and
// evaluation.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mmedpo/config.hpp"
#include "mmedpo/curation.hpp"
#include "mmedpo/dpo.hpp"
#include "mmedpo/errors.hpp"
#include "mmedpo/hash.hpp"
#include "mmedpo/io.hpp"
#include "mmedpo/metrics.hpp"
#include "mmedpo/normalize.hpp"
#include "mmedpo/pipeline.hpp"
#include "mmedpo/relevance.hpp"
#include "mmedpo/synth.hpp"

namespace fs = std::filesystem;
using namespace mmedpo;

namespace {

enum Exit : int { kOk = 0, kOther = 1, kValidation = 2, kTransport = 3, kDivergence = 4 };

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config_path;
    std::string out_dir = "runs";
    std::vector<std::string> overrides;
};

PipelineConfig effective_config(const Globals& g) {
    PipelineConfig config = g.config_path.empty() ? PipelineConfig{} : load_config(g.config_path);
    for (const auto& o : g.overrides) apply_override(config, o);
    if (g.seed) config.seed = *g.seed;
    return config;
}

void note(const std::string& msg) { fmt::print(stderr, "{}\n", msg); }

void print_issues(const std::vector<CurationIssue>& issues) {
    for (const auto& i : issues) note(fmt::format("  skipped {}: {}", i.sample_id, i.message));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Clinically weighted preference optimisation for a toy vision-language policy"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Global seed (overrides the config file)");
    app.add_option("--config", g.config_path, "TOML configuration file")->check(CLI::ExistingFile);
    app.add_option("--out-dir", g.out_dir, "Directory for run outputs")->capture_default_str();
    app.add_option("--set", g.overrides, "Override a config key, e.g. --set noise.mode=global");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a planted-lesion dataset");
    std::optional<std::size_t> synth_n;
    std::string synth_task, synth_out;
    synth->add_option("--n", synth_n, "Number of samples");
    synth->add_option("--task", synth_task, "closed_qa, open_qa, report or mixed");
    synth->add_option("--out", synth_out, "Dataset JSONL path (default <out-dir>/synth/dataset.jsonl)");

    // curate
    auto* curate = app.add_subcommand("curate", "Build preference pairs from a dataset");
    std::string curate_dataset, curate_out, curate_mode, curate_noise;
    std::optional<std::size_t> curate_n;
    curate->add_option("--dataset", curate_dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
    curate->add_option("--out", curate_out, "Output pairs JSONL")->required();
    curate->add_option("--mode", curate_mode, "text, visual or both");
    curate->add_option("--noise.mode", curate_noise, "local or global");
    curate->add_option("--n", curate_n, "Candidates sampled per question");

    // score
    auto* score = app.add_subcommand("score", "Score text pairs by agent consensus");
    std::string score_pairs_path, score_agents, score_out, score_transcripts;
    std::optional<std::size_t> score_rounds;
    bool score_single = false;
    score->add_option("--pairs", score_pairs_path, "Input pairs JSONL")->required()->check(CLI::ExistingFile);
    score->add_option("--agents", score_agents, "Agents TOML ([[agents]] tables)");
    score->add_option("--rounds", score_rounds, "Round cap (full passes over the agents)");
    score->add_option("--out", score_out, "Scored pairs JSONL")->required();
    score->add_option("--transcripts", score_transcripts, "Directory for consensus transcripts");
    score->add_flag("--single", score_single, "Use only the first agent");

    // normalize
    auto* normalize = app.add_subcommand("normalize", "Turn raw scores into sample weights");
    std::string norm_pairs, norm_out, norm_mode;
    bool norm_unit = false;
    normalize->add_option("--pairs", norm_pairs, "Scored pairs JSONL")->required()->check(CLI::ExistingFile);
    normalize->add_option("--out", norm_out, "Weighted pairs JSONL")->required();
    normalize->add_option("--mode", norm_mode, "remap or literal");
    normalize->add_flag("--unit", norm_unit, "Set every weight to 1");

    // train
    auto* train_cmd = app.add_subcommand("train", "Preference (or supervised) training");
    std::string train_pairs, train_mode, train_out, train_trace, train_init, train_dataset;
    train_cmd->add_option("--pairs", train_pairs, "Weighted pairs JSONL")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--mode", train_mode, "dpo, mmedpo or sft");
    train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
    train_cmd->add_option("--trace", train_trace, "Loss trace CSV (default <out>.trace.csv)");
    train_cmd->add_option("--init", train_init, "Starting checkpoint, also used as the reference")
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--dataset", train_dataset, "Dataset for the warm start (default: the pairs' answers)")
        ->check(CLI::ExistingFile);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Greedy-decode a dataset and score it");
    std::string eval_ckpt, eval_dataset, eval_task, eval_out;
    eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--dataset", eval_dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--task", eval_task, "closed_qa, open_qa or report")->required();
    eval_cmd->add_option("--out", eval_out, "Report JSON (default: stdout)");

    // pipeline / ablate
    auto* pipeline = app.add_subcommand("pipeline", "Run every stage into a fresh run directory");
    std::string run_name;
    pipeline->add_option("--run-name", run_name, "Run directory name (default run-<UTC timestamp>)");
    auto* ablate = app.add_subcommand("ablate", "Run the weighting x agents x noise grid");
    std::string ablate_name;
    ablate->add_option("--run-name", ablate_name, "Output directory name (default ablate-<UTC timestamp>)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try {
        PipelineConfig config = effective_config(g);

        if (synth->parsed()) {
            if (synth_n) config.synth.n = *synth_n;
            if (!synth_task.empty()) config.synth.task = synth_task;
            const fs::path out = synth_out.empty() ? fs::path(g.out_dir) / "synth" / "dataset.jsonl" : fs::path(synth_out);
            Rng rng = Rng(config.seed).derive("synth");
            const auto data = synth_dataset(config.synth, rng);
            save_synth(data, out);
            note(fmt::format("wrote {} samples to {} (sha256 {})", data.samples.size(), out.string(),
                             sha256_file(out)));
        } else if (curate->parsed()) {
            if (!curate_mode.empty()) config.curation.mode = curate_mode;
            if (!curate_noise.empty()) config.noise.mode = parse_noise_mode(curate_noise);
            if (curate_n) config.curation.n = *curate_n;
            config.validate();
            const Dataset data = load_dataset(curate_dataset);
            const AgentClient client;
            const Rng root(config.seed);
            CurationResult text, visual;
            if (config.curation.wants_text()) {
                Rng rng = root.derive("curate-text");
                text = build_text_pairs(data, client, config.curation.generator, config.curation.judge,
                                        config.curation.n, rng);
            }
            if (config.curation.wants_visual()) {
                Rng rng = root.derive("curate-visual");
                const auto schedule = build_schedule(config.noise.steps, config.noise.xi_start, config.noise.xi_end);
                visual = build_visual_pairs(data, schedule, config.noise.k, config.noise.mode, rng);
            }
            print_issues(text.issues);
            print_issues(visual.issues);
            const auto pairs = merge(std::move(text.pairs), std::move(visual.pairs));
            save_pairs(pairs, curate_out);
            note(fmt::format("wrote {} pairs to {} ({} samples skipped)", pairs.size(), curate_out,
                             text.issues.size() + visual.issues.size()));
        } else if (score->parsed()) {
            if (!score_agents.empty()) config.consensus.agents_file = fs::absolute(score_agents).string();
            if (score_rounds) config.consensus.round_cap = *score_rounds;
            if (score_single) config.consensus.single = true;
            const auto consensus = config.consensus_config();
            consensus.validate();
            Rng rng = Rng(config.seed).derive("score");
            auto scored = score_pairs(AgentClient(), load_pairs(score_pairs_path), consensus, rng);
            print_issues(scored.issues);
            if (!score_transcripts.empty()) {
                std::string lines;
                for (std::size_t i = 0; i < scored.pairs.size(); ++i) {
                    if (scored.pairs[i].source != PairSource::TextHallucination) continue;
                    const auto& t = scored.transcripts[i];
                    nlohmann::json history = nlohmann::json::array();
                    for (const auto& e : t.history) {
                        history.push_back({{"agent", e.agent}, {"score", e.score}, {"decision", to_string(e.decision)}});
                    }
                    lines += nlohmann::json{{"sample_id", scored.pairs[i].sample_id},
                                            {"history", history},
                                            {"skipped", t.skipped},
                                            {"final", t.final_score},
                                            {"converged", t.converged}}
                                 .dump() +
                             "\n";
                }
                write_file(fs::path(score_transcripts) / "consensus.jsonl", lines);
            }
            std::vector<PreferencePair> kept;
            for (auto& p : scored.pairs) {
                if (p.raw_score) kept.push_back(std::move(p));
            }
            save_pairs(kept, score_out);
            note(fmt::format("scored {} pairs ({} failed)", kept.size(), scored.issues.size()));
        } else if (normalize->parsed()) {
            if (!norm_mode.empty()) config.norm.mode = parse_normalization_mode(norm_mode);
            auto pairs = load_pairs(norm_pairs);
            if (norm_unit) {
                attach_unit_weights(pairs);
            } else {
                attach_weights(pairs, config.norm);
            }
            save_pairs(pairs, norm_out);
            note(fmt::format("weighted {} pairs into {}", pairs.size(), norm_out));
        } else if (train_cmd->parsed()) {
            if (!train_mode.empty()) config.train.preference.mode = parse_train_mode(train_mode);
            const auto pairs = load_pairs(train_pairs);
            if (pairs.empty()) throw ValidationError("no pairs to train on");
            const Rng root(config.seed);
            PolicyModel start;
            if (!train_init.empty()) {
                start = load_checkpoint(train_init);
            } else {
                const Dataset data = train_dataset.empty() ? Dataset{} : load_dataset(train_dataset);
                Rng init_rng = root.derive("init");
                start = PolicyModel::random(build_vocabulary(data, pairs), config.train.embed_dim,
                                            pairs.front().input_image.channels(), init_rng, config.train.init_scale);
                if (config.train.sft_epochs > 0 && config.train.preference.mode != TrainMode::Sft) {
                    TrainConfig sft = config.train.preference;
                    sft.mode = TrainMode::Sft;
                    sft.epochs = config.train.sft_epochs;
                    sft.learning_rate = config.train.sft_learning_rate;
                    Rng sft_rng = root.derive("sft");
                    const auto examples =
                        data.empty() ? supervised_from_pairs(pairs) : supervised_from_dataset(data);
                    start = train_sft(std::move(start), examples, sft, sft_rng).policy;
                }
            }
            const PolicyModel reference = freeze_reference(start);
            TrainConfig tc = config.train.preference;
            tc.seed = root.derive_seed("train");
            Rng rng(tc.seed);
            const auto result = train(start, reference, pairs, tc, rng);
            save_checkpoint(result.policy, train_out);
            const fs::path trace = train_trace.empty() ? fs::path(train_out + ".trace.csv") : fs::path(train_trace);
            write_file(trace, trace_csv(result.trace));
            note(fmt::format("loss {:.6f} -> {:.6f}; checkpoint {}", result.trace.front().loss,
                             result.trace.back().loss, train_out));
        } else if (eval_cmd->parsed()) {
            const auto model = load_checkpoint(eval_ckpt);
            const auto data = load_dataset(eval_dataset);
            const auto report = evaluate(model, data, parse_task(eval_task));
            if (eval_out.empty()) {
                fmt::print("{}", report.to_json());
            } else {
                write_file(eval_out, report.to_json());
            }
            for (const auto& [name, v] : report.means) note(fmt::format("{} {:.2f}", name, v));
        } else if (pipeline->parsed()) {
            const fs::path dir = fs::path(g.out_dir) / (run_name.empty() ? default_run_name() : run_name);
            const auto run = run_pipeline(config, dir);
            note(fmt::format("run written to {}", run.run_dir.string()));
            note(fmt::format("manifest sha256 {}", sha256_file(run.run_dir / "manifest.json")));
        } else if (ablate->parsed()) {
            const fs::path dir = fs::path(g.out_dir) /
                                 (ablate_name.empty() ? "ablate-" + default_run_name().substr(4) : ablate_name);
            fmt::print("{}", run_ablation(config, dir));
            note(fmt::format("grid written to {}", (dir / "ablation.csv").string()));
        }
    } catch (const TrainingError& e) {
        note(fmt::format("training diverged: {}", e.what()));
        return kDivergence;
    } catch (const TransportError& e) {
        note(fmt::format("transport error: {}", e.what()));
        return kTransport;
    } catch (const ProtocolError& e) {
        note(fmt::format("protocol error: {}", e.what()));
        return kTransport;
    } catch (const ValidationError& e) {
        note(fmt::format("invalid input: {}", e.what()));
        return kValidation;
    } catch (const FormatError& e) {
        note(fmt::format("malformed input: {}", e.what()));
        return kValidation;
    } catch (const std::exception& e) {
        note(fmt::format("error: {}", e.what()));
        return kOther;
    }
    return kOk;
}
