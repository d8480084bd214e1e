#include "mmedpo/config.hpp"

#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>
#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "mmedpo/errors.hpp"
#include "mmedpo/io.hpp"

namespace mmedpo {

using nlohmann::json;

namespace {

json toml_to_json(const toml::table& table) {
    std::ostringstream os;
    os << toml::json_formatter{table};
    return json::parse(os.str());
}

json parse_toml(std::string_view text, std::string_view origin) {
    try {
        return toml_to_json(toml::parse(text, origin));
    } catch (const toml::parse_error& e) {
        const auto& where = e.source().begin;
        throw ValidationError(
            fmt::format("{}:{}:{}: {}", origin, where.line, where.column, std::string(e.description())));
    }
}

[[noreturn]] void type_error(std::string_view key, std::string_view want) {
    throw ValidationError(fmt::format("config key '{}' must be {}", key, want));
}

std::size_t as_size(const json& v, std::string_view key) {
    if (!v.is_number_integer() || v.get<long long>() < 0) type_error(key, "a non-negative integer");
    return v.get<std::size_t>();
}

double as_double(const json& v, std::string_view key) {
    if (!v.is_number()) type_error(key, "a number");
    return v.get<double>();
}

std::string as_string(const json& v, std::string_view key) {
    if (!v.is_string()) type_error(key, "a string");
    return v.get<std::string>();
}

bool as_bool(const json& v, std::string_view key) {
    if (!v.is_boolean()) type_error(key, "a boolean");
    return v.get<bool>();
}

std::filesystem::path resolve_against(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

AgentSpec agent_from_json(const json& v, std::string_view key, const std::filesystem::path& base,
                          AgentSpec spec = {}) {
    if (v.is_string()) {
        spec.endpoint = v.get<std::string>();
        return spec;
    }
    if (!v.is_object()) type_error(key, "an endpoint string or an agent table");
    for (const auto& [k, item] : v.items()) {
        const std::string full = fmt::format("{}.{}", key, k);
        if (k == "name") {
            spec.name = as_string(item, full);
        } else if (k == "endpoint") {
            spec.endpoint = as_string(item, full);
        } else if (k == "temperature") {
            spec.temperature = as_double(item, full);
        } else if (k == "max_rounds_per_call") {
            spec.max_rounds_per_call = static_cast<int>(as_size(item, full));
        } else if (k == "prompt") {
            spec.prompt_template = as_string(item, full);
        } else if (k == "prompt_file") {
            spec.prompt_template = read_file(resolve_against(base, as_string(item, full)));
        } else if (k == "system_prompt") {
            spec.system_prompt = as_string(item, full);
        } else {
            throw ValidationError(fmt::format("unknown config key '{}'", full));
        }
    }
    return spec;
}

json agent_to_json(const AgentSpec& a) {
    json j = {{"name", a.name},
              {"endpoint", a.endpoint},
              {"temperature", a.temperature},
              {"max_rounds_per_call", a.max_rounds_per_call}};
    if (!a.prompt_template.empty()) j["prompt"] = a.prompt_template;
    if (!a.system_prompt.empty()) j["system_prompt"] = a.system_prompt;
    return j;
}

using Setter = std::function<void(PipelineConfig&, const json&, const std::string&)>;

const std::map<std::string, Setter, std::less<>>& setters() {
    static const std::map<std::string, Setter, std::less<>> table = {
        {"seed", [](auto& c, const json& v, const auto& k) { c.seed = as_size(v, k); }},

        {"data.train", [](auto& c, const json& v, const auto& k) { c.data.train = as_string(v, k); }},
        {"data.eval", [](auto& c, const json& v, const auto& k) { c.data.eval = as_string(v, k); }},
        {"data.eval_stride", [](auto& c, const json& v, const auto& k) { c.data.eval_stride = as_size(v, k); }},

        {"synth.n", [](auto& c, const json& v, const auto& k) { c.synth.n = as_size(v, k); }},
        {"synth.task", [](auto& c, const json& v, const auto& k) { c.synth.task = as_string(v, k); }},
        {"synth.size", [](auto& c, const json& v, const auto& k) { c.synth.size = as_size(v, k); }},
        {"synth.radius", [](auto& c, const json& v, const auto& k) { c.synth.radius = as_double(v, k); }},
        {"synth.amplitude", [](auto& c, const json& v, const auto& k) { c.synth.amplitude = as_double(v, k); }},
        {"synth.noise_sd", [](auto& c, const json& v, const auto& k) { c.synth.noise_sd = as_double(v, k); }},
        {"synth.anatomy_level",
         [](auto& c, const json& v, const auto& k) { c.synth.anatomy_level = as_double(v, k); }},
        {"synth.miss_rate", [](auto& c, const json& v, const auto& k) { c.synth.miss_rate = as_double(v, k); }},

        {"curation.mode", [](auto& c, const json& v, const auto& k) { c.curation.mode = as_string(v, k); }},
        {"curation.n", [](auto& c, const json& v, const auto& k) { c.curation.n = as_size(v, k); }},
        {"curation.generator",
         [](auto& c, const json& v, const auto& k) {
             c.curation.generator = agent_from_json(v, k, c.base_dir, c.curation.generator);
         }},
        {"curation.judge",
         [](auto& c, const json& v, const auto& k) {
             c.curation.judge = agent_from_json(v, k, c.base_dir, c.curation.judge);
         }},

        {"noise.steps", [](auto& c, const json& v, const auto& k) { c.noise.steps = as_size(v, k); }},
        {"noise.xi_start", [](auto& c, const json& v, const auto& k) { c.noise.xi_start = as_double(v, k); }},
        {"noise.xi_end", [](auto& c, const json& v, const auto& k) { c.noise.xi_end = as_double(v, k); }},
        {"noise.k", [](auto& c, const json& v, const auto& k) { c.noise.k = as_size(v, k); }},
        {"noise.mode",
         [](auto& c, const json& v, const auto& k) { c.noise.mode = parse_noise_mode(as_string(v, k)); }},

        {"consensus.agents_file",
         [](auto& c, const json& v, const auto& k) { c.consensus.agents_file = as_string(v, k); }},
        {"consensus.agents",
         [](auto& c, const json& v, const auto& k) {
             if (!v.is_array()) type_error(k, "an array of agent tables");
             c.consensus.agents.clear();
             for (std::size_t i = 0; i < v.size(); ++i) {
                 c.consensus.agents.push_back(agent_from_json(v[i], fmt::format("{}[{}]", k, i), c.base_dir));
             }
         }},
        {"consensus.round_cap",
         [](auto& c, const json& v, const auto& k) { c.consensus.round_cap = as_size(v, k); }},
        {"consensus.scale_low",
         [](auto& c, const json& v, const auto& k) { c.consensus.scale_low = as_double(v, k); }},
        {"consensus.scale_high",
         [](auto& c, const json& v, const auto& k) { c.consensus.scale_high = as_double(v, k); }},
        {"consensus.show_ground_truth",
         [](auto& c, const json& v, const auto& k) { c.consensus.show_ground_truth = as_bool(v, k); }},
        {"consensus.single", [](auto& c, const json& v, const auto& k) { c.consensus.single = as_bool(v, k); }},

        {"norm.mode",
         [](auto& c, const json& v, const auto& k) { c.norm.mode = parse_normalization_mode(as_string(v, k)); }},
        {"norm.mu", [](auto& c, const json& v, const auto& k) { c.norm.target_mean = as_double(v, k); }},
        {"norm.var", [](auto& c, const json& v, const auto& k) { c.norm.target_var = as_double(v, k); }},
        {"norm.clip_low", [](auto& c, const json& v, const auto& k) { c.norm.clip_low = as_double(v, k); }},
        {"norm.clip_high", [](auto& c, const json& v, const auto& k) { c.norm.clip_high = as_double(v, k); }},

        {"train.mode",
         [](auto& c, const json& v, const auto& k) { c.train.preference.mode = parse_train_mode(as_string(v, k)); }},
        {"train.alpha", [](auto& c, const json& v, const auto& k) { c.train.preference.alpha = as_double(v, k); }},
        {"train.learning_rate",
         [](auto& c, const json& v, const auto& k) { c.train.preference.learning_rate = as_double(v, k); }},
        {"train.epochs", [](auto& c, const json& v, const auto& k) { c.train.preference.epochs = as_size(v, k); }},
        {"train.batch_size",
         [](auto& c, const json& v, const auto& k) { c.train.preference.batch_size = as_size(v, k); }},
        {"train.embed_dim", [](auto& c, const json& v, const auto& k) { c.train.embed_dim = as_size(v, k); }},
        {"train.init_scale", [](auto& c, const json& v, const auto& k) { c.train.init_scale = as_double(v, k); }},
        {"train.sft_epochs", [](auto& c, const json& v, const auto& k) { c.train.sft_epochs = as_size(v, k); }},
        {"train.sft_learning_rate",
         [](auto& c, const json& v, const auto& k) { c.train.sft_learning_rate = as_double(v, k); }},

        {"eval.max_len", [](auto& c, const json& v, const auto& k) { c.eval.max_len = as_size(v, k); }},
    };
    return table;
}

bool is_section(std::string_view name) {
    static constexpr std::string_view sections[] = {"data",      "synth", "curation", "noise", "consensus",
                                                    "norm",      "train", "eval"};
    for (auto s : sections) {
        if (s == name) return true;
    }
    return false;
}

void apply_json(PipelineConfig& config, const json& doc) {
    const auto& table = setters();
    const auto set = [&](const std::string& key, const json& value) {
        auto it = table.find(key);
        if (it == table.end()) throw ValidationError(fmt::format("unknown config key '{}'", key));
        it->second(config, value, key);
    };
    for (const auto& [name, value] : doc.items()) {
        if (is_section(name)) {
            if (!value.is_object()) type_error(name, "a table");
            for (const auto& [k, v] : value.items()) set(name + "." + k, v);
        } else {
            set(name, value);
        }
    }
}

}  // namespace

std::vector<AgentSpec> default_agent_panel() {
    return {
        AgentSpec{"rater-a", "stub:rubric", 0.0, 3, "", ""},
        AgentSpec{"rater-b", "stub:rubric-noisy:0.2", 0.0, 3, "", ""},
        AgentSpec{"rater-c", "stub:rubric-noisy:0.2", 0.0, 3, "", ""},
    };
}

std::filesystem::path PipelineConfig::resolve(const std::string& p) const { return resolve_against(base_dir, p); }

std::vector<AgentSpec> PipelineConfig::scoring_agents() const {
    std::vector<AgentSpec> agents;
    if (!consensus.agents_file.empty()) {
        const auto path = resolve(consensus.agents_file);
        if (!std::filesystem::exists(path)) {
            throw ValidationError(fmt::format("agents file '{}' does not exist", path.string()));
        }
        agents = load_agents(path);
    } else if (!consensus.agents.empty()) {
        agents = consensus.agents;
    } else {
        agents = default_agent_panel();
    }
    if (consensus.single && agents.size() > 1) agents.resize(1);
    return agents;
}

ConsensusConfig PipelineConfig::consensus_config() const {
    ConsensusConfig c;
    c.agents = scoring_agents();
    c.round_cap = consensus.round_cap;
    c.scale = ScoreScale{consensus.scale_low, consensus.scale_high, true};
    c.show_ground_truth = consensus.show_ground_truth;
    return c;
}

void PipelineConfig::validate() const {
    const bool have_data = !data.train.empty();
    if (!have_data && !data.eval.empty()) throw ValidationError("data.eval needs data.train");
    if (data.eval.empty() && data.eval_stride < 2) throw ValidationError("data.eval_stride must be >= 2");
    if (!have_data) synth.validate();
    if (curation.mode != "text" && curation.mode != "visual" && curation.mode != "both") {
        throw ValidationError(fmt::format("curation.mode '{}' must be text, visual or both", curation.mode));
    }
    if (curation.n == 0) throw ValidationError("curation.n must be >= 1");
    if (curation.wants_text()) {
        curation.generator.validate();
        curation.judge.validate();
        consensus_config().validate();
    }
    if (curation.wants_visual()) {
        build_schedule(noise.steps, noise.xi_start, noise.xi_end);
        if (noise.k >= noise.steps) {
            throw ValidationError(fmt::format("noise.k = {} must be below noise.steps = {}", noise.k, noise.steps));
        }
    }
    norm.validate();
    train.preference.validate();
    if (train.embed_dim == 0) throw ValidationError("train.embed_dim must be >= 1");
    if (!(train.init_scale >= 0.0)) throw ValidationError("train.init_scale must be >= 0");
    if (train.sft_epochs > 0 && !(train.sft_learning_rate > 0.0)) {
        throw ValidationError("train.sft_learning_rate must be > 0");
    }
    if (eval.max_len == 0) throw ValidationError("eval.max_len must be >= 1");
}

json PipelineConfig::to_json() const {
    json agents = json::array();
    for (const auto& a : consensus.agents) agents.push_back(agent_to_json(a));
    return {
        {"seed", seed},
        {"data", {{"train", data.train}, {"eval", data.eval}, {"eval_stride", data.eval_stride}}},
        {"synth",
         {{"n", synth.n},
          {"task", synth.task},
          {"size", synth.size},
          {"radius", synth.radius},
          {"amplitude", synth.amplitude},
          {"noise_sd", synth.noise_sd},
          {"anatomy_level", synth.anatomy_level},
          {"miss_rate", synth.miss_rate}}},
        {"curation",
         {{"mode", curation.mode},
          {"n", curation.n},
          {"generator", agent_to_json(curation.generator)},
          {"judge", agent_to_json(curation.judge)}}},
        {"noise",
         {{"steps", noise.steps},
          {"xi_start", noise.xi_start},
          {"xi_end", noise.xi_end},
          {"k", noise.k},
          {"mode", std::string(to_string(noise.mode))}}},
        {"consensus",
         {{"agents_file", consensus.agents_file},
          {"agents", agents},
          {"round_cap", consensus.round_cap},
          {"scale_low", consensus.scale_low},
          {"scale_high", consensus.scale_high},
          {"show_ground_truth", consensus.show_ground_truth},
          {"single", consensus.single}}},
        {"norm",
         {{"mode", std::string(to_string(norm.mode))},
          {"mu", norm.target_mean},
          {"var", norm.target_var},
          {"clip_low", norm.clip_low},
          {"clip_high", norm.clip_high}}},
        {"train",
         {{"mode", std::string(to_string(train.preference.mode))},
          {"alpha", train.preference.alpha},
          {"learning_rate", train.preference.learning_rate},
          {"epochs", train.preference.epochs},
          {"batch_size", train.preference.batch_size},
          {"embed_dim", train.embed_dim},
          {"init_scale", train.init_scale},
          {"sft_epochs", train.sft_epochs},
          {"sft_learning_rate", train.sft_learning_rate}}},
        {"eval", {{"max_len", eval.max_len}}},
    };
}

PipelineConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir) {
    PipelineConfig config;
    config.base_dir = base_dir;
    apply_json(config, parse_toml(toml_text, "config"));
    return config;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw ValidationError(fmt::format("config file '{}' does not exist", path.string()));
    }
    PipelineConfig config;
    config.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    apply_json(config, parse_toml(read_file(path), path.string()));
    return config;
}

void apply_override(PipelineConfig& config, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ValidationError(fmt::format("override '{}' is not key=value", assignment));
    }
    const std::string key(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    json value;
    try {
        value = toml_to_json(toml::parse("v = " + raw))["v"];
    } catch (const toml::parse_error&) {
        value = raw;
    }
    const auto dot = key.find('.');
    json doc;
    if (dot == std::string::npos) {
        doc[key] = value;
    } else {
        doc[key.substr(0, dot)][key.substr(dot + 1)] = value;
    }
    apply_json(config, doc);
}

std::vector<AgentSpec> load_agents(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw ValidationError(fmt::format("agents file '{}' does not exist", path.string()));
    }
    const json doc = parse_toml(read_file(path), path.string());
    const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    for (const auto& [k, v] : doc.items()) {
        if (k != "agents") throw ValidationError(fmt::format("{}: unknown key '{}'", path.string(), k));
    }
    if (!doc.contains("agents") || !doc["agents"].is_array() || doc["agents"].empty()) {
        throw ValidationError(fmt::format("{}: expected one or more [[agents]] tables", path.string()));
    }
    std::vector<AgentSpec> agents;
    for (std::size_t i = 0; i < doc["agents"].size(); ++i) {
        AgentSpec spec = agent_from_json(doc["agents"][i], fmt::format("agents[{}]", i), base);
        spec.validate();
        agents.push_back(std::move(spec));
    }
    return agents;
}

}  // namespace mmedpo
