#include "mmedpo/curation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <fmt/format.h>

#include "mmedpo/errors.hpp"

namespace mmedpo {

namespace {

bool is_no_conflict(std::string_view text) {
    std::string upper;
    for (char c : text) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    return upper.find(kNoConflict) != std::string::npos && !first_number(text);
}

std::string numbered(const std::vector<Tokens>& candidates) {
    std::string out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        out += fmt::format("{}. {}", i + 1, join_tokens(candidates[i]));
        if (i + 1 < candidates.size()) out += '\n';
    }
    return out;
}

}  // namespace

std::vector<Tokens> sample_candidates(const AgentClient& client, const AgentSpec& generator,
                                      const MedicalSample& sample, std::size_t n, Rng& rng) {
    if (n == 0) throw ValidationError("candidate count must be at least 1");
    std::vector<Tokens> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const PromptFields fields = {{"query", sample.query},
                                     {"ground_truth", sample.answer},
                                     {"sample_index", std::to_string(i)}};
        try {
            AgentSpec spec = generator;
            if (spec.prompt_template.empty()) spec.prompt_template = prompts::kGenerator;
            out.push_back(tokenize(client.call(spec, fields, rng).text));
        } catch (const TransportError& e) {
            throw TransportError(fmt::format("sample '{}': {}", sample.id, e.what()), e.attempts());
        } catch (const ProtocolError& e) {
            throw ProtocolError(fmt::format("sample '{}': {}", sample.id, e.what()), e.status());
        } catch (const Error& e) {
            throw FormatError(fmt::format("sample '{}': {}", sample.id, e.what()));
        }
    }
    return out;
}

Tokens select_dispreferred(const AgentClient& client, const AgentSpec& judge, const std::vector<Tokens>& candidates,
                           const Tokens& ground_truth, const Tokens& query, Rng& rng,
                           std::string_view generate_template) {
    if (candidates.empty()) throw ValidationError("select_dispreferred needs at least one candidate");
    std::string list;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (i) list += '\n';
        list += join_tokens(candidates[i]);
    }
    PromptFields fields = {{"query", join_tokens(query)},
                           {"ground_truth", join_tokens(ground_truth)},
                           {"candidate", numbered(candidates)},
                           {"candidate_list", list},
                           {"mode", "select"}};
    AgentSpec select = judge;
    if (select.prompt_template.empty()) select.prompt_template = prompts::kJudgeSelect;
    const AgentReply reply = client.call(select, fields, rng);

    Tokens chosen;
    if (is_no_conflict(reply.text)) {
        AgentSpec generate = judge;
        generate.prompt_template = std::string(generate_template);
        fields["mode"] = "generate";
        chosen = tokenize(client.call(generate, fields, rng).text);
    } else {
        const auto index = first_number(reply.text);
        if (!index || *index < 1 || *index > static_cast<double>(candidates.size()) || *index != std::floor(*index)) {
            throw FormatError(fmt::format("judge '{}' reply '{}' names no candidate in 1..{}", judge.name,
                                          reply.text.substr(0, 60), candidates.size()));
        }
        chosen = candidates[static_cast<std::size_t>(*index) - 1];
    }
    if (chosen.empty() || chosen == ground_truth) {
        throw ValidationError(fmt::format("judge '{}' produced a dispreferred answer equal to the ground truth",
                                          judge.name));
    }
    return chosen;
}

CurationResult build_text_pairs(const Dataset& dataset, const AgentClient& client, const AgentSpec& generator,
                                const AgentSpec& judge, std::size_t n, Rng& rng) {
    if (dataset.empty()) throw ValidationError("cannot build text pairs from an empty dataset");
    const Rng base(rng.next_u64());
    CurationResult result;
    for (const auto& sample : dataset) {
        Rng local = base.derive(sample.id);
        try {
            const auto candidates = sample_candidates(client, generator, sample, n, local);
            const Tokens gt = sample.answer_tokens();
            PreferencePair p;
            p.sample_id = sample.id;
            p.input_image = sample.image;
            p.query = sample.query_tokens();
            p.preferred = gt;
            p.dispreferred = select_dispreferred(client, judge, candidates, gt, p.query, local);
            p.source = PairSource::TextHallucination;
            p.validate();
            result.pairs.push_back(std::move(p));
        } catch (const Error& e) {
            result.issues.push_back({sample.id, e.what()});
        }
    }
    return result;
}

CurationResult build_visual_pairs(const Dataset& dataset, const NoiseSchedule& schedule, std::size_t k,
                                  NoiseMode mode, Rng& rng) {
    const Rng base(rng.next_u64());
    CurationResult result;
    for (const auto& sample : dataset) {
        Rng local = base.derive(sample.id);
        try {
            PreferencePair p;
            p.sample_id = sample.id;
            p.input_image = sample.image;
            p.query = sample.query_tokens();
            p.preferred = sample.answer_tokens();
            p.dispreferred = p.preferred;
            p.source = PairSource::LesionNoise;
            if (mode == NoiseMode::Local) {
                if (!sample.heatmap) throw ValidationError("local noising requires a heatmap");
                if (sample.heatmap->all_zero()) {
                    result.issues.push_back({sample.id, "degenerate pair: heatmap mask is all zero, pair dropped"});
                    continue;
                }
                p.dispreferred_image = noise_image(sample.image, *sample.heatmap, schedule, k, local);
                p.raw_score = sample.heatmap->confidence;
            } else {
                p.dispreferred_image = noise_image_global(sample.image, schedule, k, local);
                p.raw_score = 1.0;
            }
            p.validate();
            result.pairs.push_back(std::move(p));
        } catch (const Error& e) {
            result.issues.push_back({sample.id, e.what()});
        }
    }
    return result;
}

std::vector<PreferencePair> merge(std::vector<PreferencePair> d_t, std::vector<PreferencePair> d_v) {
    d_t.reserve(d_t.size() + d_v.size());
    std::move(d_v.begin(), d_v.end(), std::back_inserter(d_t));
    return d_t;
}

}  // namespace mmedpo
