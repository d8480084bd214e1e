#include <doctest.h>

#include <map>
#include <sstream>

#include "helpers.hpp"
#include "mmedpo/config.hpp"
#include "mmedpo/errors.hpp"
#include "mmedpo/hash.hpp"
#include "mmedpo/io.hpp"
#include "mmedpo/pipeline.hpp"
#include "mmedpo/synth.hpp"

using namespace mmedpo;

namespace {

PipelineConfig quick(std::uint64_t seed = 3) {
    PipelineConfig c;
    c.seed = seed;
    c.synth.n = 60;
    c.train.sft_epochs = 20;
    c.train.preference.epochs = 4;
    return c;
}

}  // namespace

TEST_CASE("config defaults and parsing") {
    const auto c = parse_config("seed = 9\n[noise]\nmode = \"global\"\n[train]\nmode = \"dpo\"\nalpha = 0.2\n");
    CHECK(c.seed == 9);
    CHECK(c.noise.mode == NoiseMode::Global);
    CHECK(c.train.preference.mode == TrainMode::Dpo);
    CHECK(c.train.preference.alpha == 0.2);
    CHECK(c.noise.k == 400);
    CHECK(c.norm.clip_low == 0.75);
    CHECK_THROWS_AS(parse_config("[noise]\nbogus = 1\n"), ValidationError);
    CHECK_THROWS_AS(parse_config("seed = \"x\"\n"), ValidationError);
    CHECK_THROWS(parse_config("[[[ not toml"));
}

TEST_CASE("overrides") {
    PipelineConfig c;
    apply_override(c, "noise.mode=global");
    apply_override(c, "train.epochs=3");
    apply_override(c, "curation.generator=stub:copy");
    CHECK(c.noise.mode == NoiseMode::Global);
    CHECK(c.train.preference.epochs == 3);
    CHECK(c.curation.generator.endpoint == "stub:copy");
    CHECK_THROWS_AS(apply_override(c, "no-equals"), ValidationError);
    CHECK_THROWS_AS(apply_override(c, "train.unknown=1"), ValidationError);
}

TEST_CASE("config json lists every default") {
    const auto j = PipelineConfig{}.to_json();
    CHECK(j["noise"]["xi_start"] == 0.9999);
    CHECK(j["norm"]["mode"] == "remap");
    CHECK(j["consensus"]["round_cap"] == 5);
    CHECK(j.contains("seed"));
}

TEST_CASE("agents file with prompt files") {
    testing::TempDir dir("cfg-agents");
    write_file(dir / "prompts" / "rate.txt", "Rate {candidate}");
    write_file(dir / "agents.toml",
               "[[agents]]\nname = \"x\"\nendpoint = \"stub:echo-score:2\"\nprompt_file = \"prompts/rate.txt\"\n"
               "[[agents]]\nname = \"y\"\nendpoint = \"http://localhost:8000/v1\"\ntemperature = 0.5\n");
    const auto agents = load_agents(dir / "agents.toml");
    REQUIRE(agents.size() == 2);
    CHECK(agents[0].prompt_template == "Rate {candidate}");
    CHECK(agents[1].temperature == 0.5);

    write_file(dir / "run.toml", "[consensus]\nagents_file = \"agents.toml\"\nsingle = true\n");
    const auto c = load_config(dir / "run.toml");
    CHECK(c.scoring_agents().size() == 1);
    CHECK(c.scoring_agents()[0].name == "x");

    write_file(dir / "bad.toml", "[[agents]]\nname = \"x\"\nendpoint = \"stub:copy\"\ncolour = 1\n");
    CHECK_THROWS_AS(load_agents(dir / "bad.toml"), ValidationError);
}

TEST_CASE("default panel when no agents are configured") {
    const PipelineConfig c;
    CHECK(c.scoring_agents().size() == default_agent_panel().size());
    CHECK(c.scoring_agents().size() == 3);
}

TEST_CASE("missing agents file fails before any work") {
    testing::TempDir dir("pipe-missing");
    auto c = quick();
    c.consensus.agents_file = (dir / "nowhere.toml").string();
    CHECK_THROWS_AS(run_pipeline(c, dir / "run"), ValidationError);
    CHECK(!std::filesystem::exists(dir / "run"));

    c.curation.mode = "visual";
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("synthetic lesions") {
    SynthConfig sc;
    sc.n = 90;
    sc.miss_rate = 0.0;
    Rng r(7);
    const auto data = synth_dataset(sc, r);
    REQUIRE(data.samples.size() == 90);
    const auto k = synth_findings().size();
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        const auto& s = data.samples[i];
        const auto& t = data.truth[i];
        REQUIRE(s.heatmap);
        if (!t.has_lesion) {
            CHECK(s.heatmap->all_zero());
            continue;
        }
        // The mask is the planted disk: lesion channel is raised exactly where the mask is on.
        for (std::size_t p = 0; p < s.image.pixels(); ++p) {
            const float v = s.image.data()[p * (k + 1) + t.finding];
            if (s.heatmap->mask[p] > 0) CHECK(v > 2.0f);
            else CHECK(v < 1.0f);
        }
    }
    Rng again(7);
    CHECK(synth_dataset(sc, again).samples[5].image == data.samples[5].image);
}

TEST_CASE("image-blind majority baseline is near chance") {
    for (const char* task : {"closed_qa", "open_qa"}) {
        SynthConfig sc;
        sc.n = 400;
        sc.task = task;
        Rng r(11);
        const auto data = synth_dataset(sc, r);
        std::map<std::string, int> counts;
        for (const auto& s : data.samples) ++counts[s.answer];
        int best = 0;
        for (const auto& [a, n] : counts) best = std::max(best, n);
        const double k = static_cast<double>(counts.size());
        CHECK(static_cast<double>(best) / sc.n <= 1.0 / k + 0.1);
    }
}

TEST_CASE("split and filter") {
    SynthConfig sc;
    sc.n = 10;
    Rng r(1);
    const auto data = synth_dataset(sc, r);
    const auto [train, eval] = split_every(data.samples, 5);
    CHECK(train.size() == 8);
    CHECK(eval.size() == 2);
    CHECK(eval[0].id == "synth-00004");
    CHECK(filter_task(data.samples, Task::ClosedQa).size() == 4);
    CHECK_THROWS_AS(split_every(data.samples, 1), ValidationError);
}

TEST_CASE("pipeline is deterministic and complete") {
    testing::TempDir dir("pipe-det");
    const auto c = quick();
    const auto a = run_pipeline(c, dir / "a");
    const auto b = run_pipeline(c, dir / "b");
    CHECK(read_file(dir / "a" / "manifest.json") == read_file(dir / "b" / "manifest.json"));
    const auto& m = a.manifest;
    CHECK(m["format"] == "mmedpo-run");
    CHECK(m["artifacts"].contains("checkpoints/policy.ckpt"));
    CHECK(m["artifacts"].contains("reports/metrics.json"));
    CHECK(m["metrics"].contains("closed_qa"));
    CHECK(m["metrics"]["preference_accuracy"]["pairs"].get<int>() > 0);
    for (const auto& [rel, hash] : m["artifacts"].items()) {
        CHECK(sha256_file(dir / "a" / rel) == hash.get<std::string>());
    }

    const auto other = run_pipeline(quick(4), dir / "c");
    CHECK(other.manifest["artifacts"]["data/train.jsonl"] != m["artifacts"]["data/train.jsonl"]);
}

TEST_CASE("literal and remap share pairs but not weights") {
    testing::TempDir dir("pipe-norm");
    auto c = quick();
    const auto remap = run_pipeline(c, dir / "remap").manifest;
    c.norm.mode = NormalizationMode::Literal;
    c.norm.clip_low = -10;
    c.norm.clip_high = 10;
    const auto literal = run_pipeline(c, dir / "literal").manifest;
    CHECK(remap["artifacts"]["pairs/scored/pairs.jsonl"] == literal["artifacts"]["pairs/scored/pairs.jsonl"]);
    CHECK(remap["artifacts"]["pairs/curated/pairs.jsonl"] == literal["artifacts"]["pairs/curated/pairs.jsonl"]);
    CHECK(remap["artifacts"]["weights.csv"] != literal["artifacts"]["weights.csv"]);
}

TEST_CASE("failing stage is recorded") {
    testing::TempDir dir("pipe-fail");
    auto c = quick();
    c.consensus.agents = {AgentSpec{"dead", "stub:fail", 0.0, 1, "", ""}};
    c.curation.mode = "text";
    CHECK_THROWS(run_pipeline(c, dir / "run"));
    const auto m = nlohmann::json::parse(read_file(dir / "run" / "manifest.json"));
    CHECK(m.contains("error"));
    CHECK(m["artifacts"].contains("data/train.jsonl"));
}

TEST_CASE("ablation grid") {
    testing::TempDir dir("pipe-ablate");
    auto c = quick();
    c.synth.n = 30;
    const std::string csv = run_ablation(c, dir.path());
    std::istringstream in(csv);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 9);
    CHECK(lines[0].rfind("train_mode,agents,noise_mode", 0) == 0);
    for (const auto& cell : std::filesystem::directory_iterator(dir / "cells")) {
        const auto m = nlohmann::json::parse(read_file(cell.path() / "manifest.json"));
        if (m["config"]["train"]["mode"] == "dpo") {
            CHECK(m["weights"]["min"] == 1.0);
            CHECK(m["weights"]["max"] == 1.0);
        }
    }
    const auto local = nlohmann::json::parse(read_file(dir / "cells" / "mmedpo-multi-local" / "manifest.json"));
    auto global = nlohmann::json::parse(read_file(dir / "cells" / "mmedpo-multi-global" / "manifest.json"));
    CHECK(local["config"]["noise"]["mode"] == "local");
    global["config"]["noise"]["mode"] = "local";
    CHECK(global["config"] == local["config"]);
}
