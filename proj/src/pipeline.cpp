#include "mmedpo/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <limits>

#include <fmt/format.h>

#include "mmedpo/curation.hpp"
#include "mmedpo/dpo.hpp"
#include "mmedpo/errors.hpp"
#include "mmedpo/hash.hpp"
#include "mmedpo/io.hpp"
#include "mmedpo/metrics.hpp"
#include "mmedpo/normalize.hpp"
#include "mmedpo/relevance.hpp"
#include "mmedpo/synth.hpp"

namespace mmedpo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kManifestFormat = "mmedpo-run";
constexpr int kManifestVersion = 1;

/// Tracks written artifacts by run-relative path.
class ArtifactLog {
public:
    explicit ArtifactLog(fs::path root) : root_(std::move(root)) {}

    fs::path path(std::string_view rel) const { return root_ / rel; }

    void text(std::string_view rel, std::string_view bytes) {
        write_file(path(rel), bytes);
        hashes_[std::string(rel)] = sha256_hex(bytes);
    }
    void pairs(std::string_view rel, const std::vector<PreferencePair>& pairs) {
        save_pairs(pairs, path(rel));
        add_tree(path(rel).parent_path());
    }
    void dataset(std::string_view rel, const Dataset& data) {
        save_dataset(data, path(rel));
        add_tree(path(rel).parent_path());
    }
    void checkpoint(std::string_view rel, const PolicyModel& model) { text(rel, encode_checkpoint(model)); }
    /// Hashes every regular file under `dir` (used after helpers that write
    /// side files such as tensors).
    void add_tree(const fs::path& dir) {
        for (const auto& entry : fs::recursive_directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            const auto rel = fs::relative(entry.path(), root_).generic_string();
            hashes_[rel] = sha256_file(entry.path());
        }
    }

    json to_json() const { return json(hashes_); }

private:
    fs::path root_;
    std::map<std::string, std::string> hashes_;
};

std::string issues_jsonl(const std::vector<CurationIssue>& issues) {
    std::string out;
    for (const auto& i : issues) out += json{{"sample_id", i.sample_id}, {"message", i.message}}.dump() + "\n";
    return out;
}

std::string transcripts_jsonl(const ScoredPairs& scored) {
    std::string out;
    for (std::size_t i = 0; i < scored.pairs.size(); ++i) {
        const auto& p = scored.pairs[i];
        if (p.source != PairSource::TextHallucination) continue;
        const auto& t = scored.transcripts[i];
        json history = json::array();
        for (const auto& e : t.history) {
            history.push_back({{"agent", e.agent}, {"score", e.score}, {"decision", std::string(to_string(e.decision))}});
        }
        out += json{{"sample_id", p.sample_id},
                    {"history", history},
                    {"skipped", t.skipped},
                    {"final", t.final_score},
                    {"converged", t.converged},
                    {"evaluations", t.evaluations}}
                   .dump() +
               "\n";
    }
    return out;
}

std::string weights_csv(const std::vector<PreferencePair>& pairs) {
    std::string out = "sample_id,source,raw_score,weight\n";
    for (const auto& p : pairs) {
        out += fmt::format("{},{},{},{}\n", p.sample_id, to_string(p.source), p.raw_score.value_or(std::nan("")),
                           p.weight.value_or(std::nan("")));
    }
    return out;
}

json weight_summary(const std::vector<PreferencePair>& pairs) {
    if (pairs.empty()) return json::object();
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
    for (const auto& p : pairs) {
        const double w = p.weight.value_or(1.0);
        lo = std::min(lo, w);
        hi = std::max(hi, w);
        sum += w;
    }
    return {{"min", lo}, {"max", hi}, {"mean", sum / static_cast<double>(pairs.size())}};
}

/// Text and visual pairs for `data` under `config`.
CurationResult curate(const PipelineConfig& config, const Dataset& data, const AgentClient& client, const Rng& root,
                      std::string_view tag) {
    CurationResult all;
    CurationResult text, visual;
    if (config.curation.wants_text()) {
        Rng rng = root.derive(fmt::format("{}-text", tag));
        text = build_text_pairs(data, client, config.curation.generator, config.curation.judge, config.curation.n,
                                rng);
    }
    if (config.curation.wants_visual()) {
        Rng rng = root.derive(fmt::format("{}-visual", tag));
        const auto schedule = build_schedule(config.noise.steps, config.noise.xi_start, config.noise.xi_end);
        Dataset with_maps;
        for (const auto& s : data) {
            if (config.noise.mode == NoiseMode::Global || s.heatmap) {
                with_maps.push_back(s);
            } else {
                visual.issues.push_back({s.id, "no heatmap for local noising"});
            }
        }
        if (!with_maps.empty()) {
            auto built = build_visual_pairs(with_maps, schedule, config.noise.k, config.noise.mode, rng);
            visual.pairs = std::move(built.pairs);
            visual.issues.insert(visual.issues.end(), built.issues.begin(), built.issues.end());
        }
    }
    all.pairs = merge(std::move(text.pairs), std::move(visual.pairs));
    all.issues = std::move(text.issues);
    all.issues.insert(all.issues.end(), visual.issues.begin(), visual.issues.end());
    return all;
}

std::vector<Task> tasks_in(const Dataset& data) {
    std::vector<Task> tasks;
    for (Task t : {Task::ClosedQa, Task::OpenQa, Task::Report}) {
        if (std::any_of(data.begin(), data.end(), [t](const MedicalSample& s) { return s.task == t; })) {
            tasks.push_back(t);
        }
    }
    return tasks;
}

MetricReport evaluate_with(const PolicyModel& model, const Dataset& data, Task task, std::size_t max_len) {
    return evaluate([&](const MedicalSample& s) { return greedy_decode(model, s.image, s.query_tokens(), max_len); },
                    data, task);
}

}  // namespace

double preference_accuracy(const PolicyModel& policy, std::span<const PreferencePair> pairs) {
    if (pairs.empty()) return 0.0;
    std::size_t wins = 0;
    for (const auto& p : pairs) {
        const double w = log_prob(policy, p.input_image, p.query, p.preferred);
        const double l = log_prob(policy, p.dispreferred_input(), p.query, p.dispreferred);
        wins += w > l;
    }
    return static_cast<double>(wins) / static_cast<double>(pairs.size());
}

Vocabulary build_vocabulary(const Dataset& dataset, std::span<const PreferencePair> pairs) {
    std::vector<Tokens> texts;
    for (const auto& s : dataset) {
        texts.push_back(s.query_tokens());
        texts.push_back(s.answer_tokens());
    }
    for (const auto& p : pairs) {
        texts.push_back(p.query);
        texts.push_back(p.dispreferred);
    }
    return Vocabulary::from_corpus(texts);
}

std::string default_run_name() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "run-%Y%m%d-%H%M%S", &utc);
    return buf;
}

RunResult run_pipeline(const PipelineConfig& config, const fs::path& run_dir, std::shared_ptr<Transport> transport) {
    config.validate();
    ConsensusConfig consensus;
    if (config.curation.wants_text()) consensus = config.consensus_config();

    fs::create_directories(run_dir);
    ArtifactLog log(run_dir);
    json manifest = {{"format", kManifestFormat},
                     {"version", kManifestVersion},
                     {"code_version", MMEDPO_VERSION},
                     {"seed", config.seed},
                     {"config", config.to_json()}};
    if (!consensus.agents.empty()) {
        json agents = json::array();
        for (const auto& a : consensus.agents) agents.push_back({{"name", a.name}, {"endpoint", a.endpoint}});
        manifest["scoring_agents"] = agents;
    }
    std::string stage = "data";
    const auto finish = [&] {
        manifest["artifacts"] = log.to_json();
        write_file(run_dir / "manifest.json", manifest.dump(2) + "\n");
    };

    try {
        const Rng root(config.seed);
        const AgentClient client = transport ? AgentClient(std::move(transport)) : AgentClient();

        Dataset train_set, eval_set;
        if (config.data.train.empty()) {
            Rng rng = root.derive("synth");
            auto synth = synth_dataset(config.synth, rng);
            std::tie(train_set, eval_set) = split_every(synth.samples, config.data.eval_stride);
            std::string truth;
            for (const auto& t : synth.truth) {
                truth += json{{"id", t.id},
                              {"has_lesion", t.has_lesion},
                              {"finding", synth_findings().at(t.finding)},
                              {"center_row", t.center_row},
                              {"center_col", t.center_col},
                              {"heatmap_on_lesion", t.heatmap_on_lesion}}
                             .dump() +
                         "\n";
            }
            log.text("data/truth.jsonl", truth);
        } else {
            train_set = load_dataset(config.resolve(config.data.train));
            if (config.data.eval.empty()) {
                std::tie(train_set, eval_set) = split_every(train_set, config.data.eval_stride);
            } else {
                eval_set = load_dataset(config.resolve(config.data.eval));
            }
        }
        if (train_set.empty()) throw ValidationError("training split is empty");
        log.dataset("data/train.jsonl", train_set);
        log.dataset("data/eval.jsonl", eval_set);
        manifest["counts"] = {{"train_samples", train_set.size()}, {"eval_samples", eval_set.size()}};

        stage = "curate";
        auto curated = curate(config, train_set, client, root, "curate");
        log.pairs("pairs/curated/pairs.jsonl", curated.pairs);
        log.text("pairs/curated/issues.jsonl", issues_jsonl(curated.issues));
        auto held_out = curate(config, eval_set, client, root, "heldout");
        log.pairs("pairs/heldout/pairs.jsonl", held_out.pairs);
        manifest["counts"]["curated_pairs"] = curated.pairs.size();
        manifest["counts"]["curation_issues"] = curated.issues.size();
        manifest["counts"]["heldout_pairs"] = held_out.pairs.size();

        stage = "score";
        Rng score_rng = root.derive("score");
        auto scored = score_pairs(client, std::move(curated.pairs), consensus, score_rng);
        log.text("transcripts/consensus.jsonl", transcripts_jsonl(scored));
        log.text("pairs/scored/issues.jsonl", issues_jsonl(scored.issues));
        std::vector<PreferencePair> pairs;
        for (auto& p : scored.pairs) {
            if (p.raw_score) pairs.push_back(std::move(p));
        }
        log.pairs("pairs/scored/pairs.jsonl", pairs);
        manifest["counts"]["scored_pairs"] = pairs.size();
        if (pairs.empty()) throw ValidationError("no pairs survived curation and scoring");

        stage = "normalize";
        if (config.train.preference.mode == TrainMode::MMedPo) {
            attach_weights(pairs, config.norm);
        } else {
            attach_unit_weights(pairs);
        }
        log.pairs("pairs/weighted/pairs.jsonl", pairs);
        log.text("weights.csv", weights_csv(pairs));
        manifest["weights"] = weight_summary(pairs);

        stage = "warm_start";
        Rng init_rng = root.derive("init");
        PolicyModel initial = PolicyModel::random(build_vocabulary(train_set, pairs), config.train.embed_dim,
                                                  train_set.front().image.channels(), init_rng,
                                                  config.train.init_scale);
        if (config.train.sft_epochs > 0) {
            TrainConfig sft = config.train.preference;
            sft.mode = TrainMode::Sft;
            sft.epochs = config.train.sft_epochs;
            sft.learning_rate = config.train.sft_learning_rate;
            Rng sft_rng = root.derive("sft");
            auto warm = train_sft(std::move(initial), supervised_from_dataset(train_set), sft, sft_rng);
            initial = std::move(warm.policy);
            log.text("traces/sft.csv", trace_csv(warm.trace));
        }
        const PolicyModel reference = freeze_reference(initial);
        log.checkpoint("checkpoints/reference.ckpt", reference);

        stage = "train";
        TrainConfig train_config = config.train.preference;
        train_config.seed = root.derive_seed("train");
        Rng train_rng(train_config.seed);
        auto trained = train(initial, reference, pairs, train_config, train_rng);
        log.checkpoint("checkpoints/policy.ckpt", trained.policy);
        log.text("traces/train.csv", trace_csv(trained.trace));
        manifest["final_loss"] = trained.trace.back().loss;

        stage = "eval";
        json metrics = json::object();
        for (Task task : tasks_in(eval_set)) {
            const Dataset subset = filter_task(eval_set, task);
            const auto name = std::string(to_string(task));
            const auto policy_report = evaluate_with(trained.policy, subset, task, config.eval.max_len);
            const auto reference_report = evaluate_with(reference, subset, task, config.eval.max_len);
            log.text(fmt::format("reports/{}.json", name), policy_report.to_json());
            log.text(fmt::format("reports/{}.reference.json", name), reference_report.to_json());
            metrics[name] = {{"policy", json(policy_report.means)}, {"reference", json(reference_report.means)}};
        }
        if (!held_out.pairs.empty()) {
            metrics["preference_accuracy"] = {{"policy", preference_accuracy(trained.policy, held_out.pairs)},
                                              {"reference", preference_accuracy(reference, held_out.pairs)},
                                              {"pairs", held_out.pairs.size()}};
        }
        log.text("reports/metrics.json", metrics.dump(2) + "\n");
        manifest["metrics"] = metrics;
    } catch (const std::exception& e) {
        manifest["error"] = {{"stage", stage}, {"message", e.what()}};
        finish();
        throw;
    }
    finish();
    return {run_dir, manifest};
}

std::string run_ablation(const PipelineConfig& config, const fs::path& out_dir, std::shared_ptr<Transport> transport) {
    config.validate();
    const auto metric = [](const json& m, const char* task, const char* name) -> std::string {
        if (!m.contains(task)) return "";
        const auto& means = m[task]["policy"];
        return means.contains(name) ? fmt::format("{:.4f}", means[name].get<double>()) : "";
    };
    std::string csv =
        "train_mode,agents,noise_mode,pairs,weight_min,weight_mean,weight_max,preference_accuracy,"
        "closed_accuracy,open_recall,report_bleu_avg,report_rouge_l,report_meteor\n";
    for (const auto mode : {TrainMode::MMedPo, TrainMode::Dpo}) {
        for (const bool single : {false, true}) {
            for (const auto noise : {NoiseMode::Local, NoiseMode::Global}) {
                PipelineConfig cell = config;
                cell.train.preference.mode = mode;
                cell.consensus.single = single;
                cell.noise.mode = noise;
                const std::string name =
                    fmt::format("{}-{}-{}", to_string(mode), single ? "single" : "multi", to_string(noise));
                const auto run = run_pipeline(cell, out_dir / "cells" / name, transport);
                const auto& m = run.manifest;
                const auto& w = m["weights"];
                const auto& metrics = m["metrics"];
                csv += fmt::format(
                    "{},{},{},{},{:.4f},{:.4f},{:.4f},{},{},{},{},{},{}\n", to_string(mode),
                    single ? "single" : "multi", to_string(noise), m["counts"]["scored_pairs"].get<std::size_t>(),
                    w["min"].get<double>(), w["mean"].get<double>(), w["max"].get<double>(),
                    metrics.contains("preference_accuracy")
                        ? fmt::format("{:.4f}", metrics["preference_accuracy"]["policy"].get<double>())
                        : "",
                    metric(metrics, "closed_qa", "accuracy"), metric(metrics, "open_qa", "recall"),
                    metric(metrics, "report", "bleu_avg"), metric(metrics, "report", "rouge_l"),
                    metric(metrics, "report", "meteor"));
            }
        }
    }
    write_file(out_dir / "ablation.csv", csv);
    return csv;
}

}  // namespace mmedpo
