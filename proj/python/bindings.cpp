#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mmedpo/agents.hpp"
#include "mmedpo/config.hpp"
#include "mmedpo/dpo.hpp"
#include "mmedpo/errors.hpp"
#include "mmedpo/hash.hpp"
#include "mmedpo/metrics.hpp"
#include "mmedpo/noising.hpp"
#include "mmedpo/normalize.hpp"
#include "mmedpo/pipeline.hpp"
#include "mmedpo/relevance.hpp"

namespace py = pybind11;
using namespace mmedpo;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

ImageTensor to_tensor(const FloatArray& a) {
    if (a.ndim() != 3) throw ValidationError("image must be a (height, width, channels) array");
    const auto* p = a.data();
    return ImageTensor(a.shape(0), a.shape(1), a.shape(2), std::vector<float>(p, p + a.size()));
}

py::array_t<float> to_array(const ImageTensor& t) {
    py::array_t<float> out({t.height(), t.width(), t.channels()});
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

NoiseSchedule schedule_from(const NoiseConfig& c) { return build_schedule(c.steps, c.xi_start, c.xi_end); }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Preference-data curation, relevance scoring and weighted preference training";
    m.attr("__version__") = MMEDPO_VERSION;

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<TransportError>(m, "TransportError", base.ptr());
    py::register_exception<ProtocolError>(m, "ProtocolError", base.ptr());
    py::register_exception<TrainingError>(m, "TrainingError", base.ptr());

    m.def("tokenize", &tokenize, py::arg("text"));
    m.def("sha256_hex", [](py::bytes b) { return sha256_hex(std::string(b)); }, py::arg("data"));

    // metrics
    m.def("closed_correct", &closed_correct, py::arg("prediction"), py::arg("reference"));
    m.def("open_recall", &open_recall, py::arg("prediction"), py::arg("reference"));
    m.def("bleu_n", &bleu_n, py::arg("prediction"), py::arg("reference"), py::arg("n"));
    m.def("bleu_avg", &bleu_avg, py::arg("prediction"), py::arg("reference"));
    m.def("rouge_l", &rouge_l, py::arg("prediction"), py::arg("reference"));
    m.def("meteor", &meteor, py::arg("prediction"), py::arg("reference"));

    // normalization
    m.def(
        "normalize_scores",
        [](const std::vector<double>& raw, double target_mean, double target_var, double clip_low, double clip_high,
           const std::string& mode) {
            NormalizationConfig c{target_mean, target_var, clip_low, clip_high, parse_normalization_mode(mode)};
            c.validate();
            return normalize_scores(raw, c);
        },
        py::arg("raw"), py::arg("target_mean") = 1.0, py::arg("target_var") = 0.1, py::arg("clip_low") = 0.75,
        py::arg("clip_high") = 1.25, py::arg("mode") = "remap");

    // noising
    py::class_<NoiseConfig>(m, "NoiseConfig")
        .def(py::init<>())
        .def_readwrite("steps", &NoiseConfig::steps)
        .def_readwrite("xi_start", &NoiseConfig::xi_start)
        .def_readwrite("xi_end", &NoiseConfig::xi_end)
        .def_readwrite("k", &NoiseConfig::k);
    m.def(
        "cumulative_schedule", [](const NoiseConfig& c) { return schedule_from(c).cumulative; },
        py::arg("config") = NoiseConfig{});
    m.def(
        "noise_image",
        [](const FloatArray& image, const FloatArray& mask, const NoiseConfig& c, std::uint64_t seed) {
            const auto img = to_tensor(image);
            if (mask.ndim() != 2) throw ValidationError("mask must be a (height, width) array");
            LesionHeatmap h{static_cast<std::size_t>(mask.shape(0)), static_cast<std::size_t>(mask.shape(1)),
                            std::vector<float>(mask.data(), mask.data() + mask.size()), 1.0f};
            Rng rng(seed);
            return to_array(noise_image(img, h, schedule_from(c), c.k, rng));
        },
        py::arg("image"), py::arg("mask"), py::arg("config") = NoiseConfig{}, py::arg("seed") = 0);
    m.def(
        "noise_image_global",
        [](const FloatArray& image, const NoiseConfig& c, std::uint64_t seed) {
            Rng rng(seed);
            return to_array(noise_image_global(to_tensor(image), schedule_from(c), c.k, rng));
        },
        py::arg("image"), py::arg("config") = NoiseConfig{}, py::arg("seed") = 0);

    // agents and consensus
    py::class_<AgentSpec>(m, "AgentSpec")
        .def(py::init([](std::string name, std::string endpoint, double temperature, int max_retries,
                         std::string prompt_template, std::string system_prompt) {
                 return AgentSpec{std::move(name),          std::move(endpoint),     temperature, max_retries,
                                  std::move(prompt_template), std::move(system_prompt)};
             }),
             py::arg("name"), py::arg("endpoint"), py::arg("temperature") = 0.0, py::arg("max_retries") = 3,
             py::arg("prompt_template") = "", py::arg("system_prompt") = "")
        .def_readwrite("name", &AgentSpec::name)
        .def_readwrite("endpoint", &AgentSpec::endpoint)
        .def_readwrite("temperature", &AgentSpec::temperature);

    py::class_<ConsensusEntry>(m, "ConsensusEntry")
        .def_readonly("agent", &ConsensusEntry::agent)
        .def_readonly("score", &ConsensusEntry::score)
        .def_property_readonly("decision", [](const ConsensusEntry& e) { return std::string(to_string(e.decision)); });
    py::class_<ConsensusTranscript>(m, "ConsensusTranscript")
        .def_readonly("history", &ConsensusTranscript::history)
        .def_readonly("skipped", &ConsensusTranscript::skipped)
        .def_readonly("final_score", &ConsensusTranscript::final_score)
        .def_readonly("converged", &ConsensusTranscript::converged)
        .def_readonly("evaluations", &ConsensusTranscript::evaluations);

    m.def(
        "consensus_score",
        [](const std::vector<AgentSpec>& agents, const std::string& dispreferred, const std::string& query,
           const std::string& ground_truth, std::size_t round_cap, std::uint64_t seed) {
            ConsensusConfig c;
            c.agents = agents;
            c.round_cap = round_cap;
            c.validate();
            AgentClient client;
            Rng rng(seed);
            py::gil_scoped_release release;
            return consensus_score(client, c, tokenize(dispreferred), {tokenize(query), tokenize(ground_truth)}, rng);
        },
        py::arg("agents"), py::arg("dispreferred"), py::arg("query"), py::arg("ground_truth"),
        py::arg("round_cap") = 5, py::arg("seed") = 0);

    // preference objective on precomputed log-probabilities
    m.def(
        "margin",
        [](double policy_preferred, double reference_preferred, double policy_dispreferred,
           double reference_dispreferred, double alpha) {
            return margin_from_log_probs(
                {policy_preferred, reference_preferred, policy_dispreferred, reference_dispreferred}, alpha);
        },
        py::arg("policy_preferred"), py::arg("reference_preferred"), py::arg("policy_dispreferred"),
        py::arg("reference_dispreferred"), py::arg("alpha") = 0.1);
    m.def("neg_log_sigmoid", &neg_log_sigmoid, py::arg("d"));

    // pipeline
    m.def(
        "run_pipeline",
        [](const std::string& config_toml, const std::filesystem::path& run_dir,
           const std::vector<std::string>& overrides) {
            auto c = parse_config(config_toml);
            for (const auto& o : overrides) apply_override(c, o);
            py::gil_scoped_release release;
            return run_pipeline(c, run_dir).manifest.dump();
        },
        py::arg("config_toml"), py::arg("run_dir"), py::arg("overrides") = std::vector<std::string>{},
        "Runs the full pipeline and returns manifest.json as text.");
}
