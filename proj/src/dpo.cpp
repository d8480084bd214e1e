#include "mmedpo/dpo.hpp"

#include <cmath>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

#include "mmedpo/errors.hpp"

namespace mmedpo {

std::string_view to_string(TrainMode mode) noexcept {
    switch (mode) {
        case TrainMode::Dpo: return "dpo";
        case TrainMode::MMedPo: return "mmedpo";
        case TrainMode::Sft: return "sft";
    }
    return "dpo";
}

TrainMode parse_train_mode(std::string_view name) {
    if (name == "dpo") return TrainMode::Dpo;
    if (name == "mmedpo") return TrainMode::MMedPo;
    if (name == "sft") return TrainMode::Sft;
    throw ValidationError(fmt::format("unknown training mode '{}' (valid: dpo, mmedpo, sft)", name));
}

void TrainConfig::validate() const {
    if (!(alpha > 0.0)) throw ValidationError("alpha must be positive");
    if (!(learning_rate >= 0.0)) throw ValidationError("learning rate must be non-negative");
    if (epochs == 0) throw ValidationError("epochs must be positive");
    if (batch_size == 0) throw ValidationError("batch size must be positive");
}

double margin_from_log_probs(const PairLogProbs& lp, double alpha) noexcept {
    return alpha * (lp.policy_preferred - lp.reference_preferred) -
           alpha * (lp.policy_dispreferred - lp.reference_dispreferred);
}

PairLogProbs pair_log_probs(const PolicyModel& policy, const PolicyModel& reference, const PreferencePair& pair) {
    if (pair.source == PairSource::LesionNoise && !pair.dispreferred_image) {
        throw ValidationError(fmt::format("lesion pair '{}' has no noised image", pair.sample_id));
    }
    const ImageTensor& x = pair.input_image;
    const ImageTensor& xs = pair.dispreferred_input();
    return {log_prob(policy, x, pair.query, pair.preferred), log_prob(reference, x, pair.query, pair.preferred),
            log_prob(policy, xs, pair.query, pair.dispreferred), log_prob(reference, xs, pair.query, pair.dispreferred)};
}

double pair_margin(const PolicyModel& policy, const PolicyModel& reference, const PreferencePair& pair, double alpha) {
    return margin_from_log_probs(pair_log_probs(policy, reference, pair), alpha);
}

double neg_log_sigmoid(double d) noexcept {
    return d > 0.0 ? std::log1p(std::exp(-d)) : -d + std::log1p(std::exp(d));
}

double sigmoid(double d) noexcept {
    if (d >= 0.0) return 1.0 / (1.0 + std::exp(-d));
    const double e = std::exp(d);
    return e / (1.0 + e);
}

namespace {

double pair_weight(const PreferencePair& p, bool weighted) {
    if (!weighted) return 1.0;
    if (!p.weight) throw ValidationError(fmt::format("pair '{}' has no weight", p.sample_id));
    return *p.weight;
}

struct ReferenceLogProbs {
    double preferred;
    double dispreferred;
};

/// Loss (and optionally gradient and per-pair margins) for a batch.
double objective(const PolicyModel& policy, const PolicyModel& reference, std::span<const PreferencePair> batch,
                 double alpha, bool weighted, std::span<double> grad, const std::vector<ReferenceLogProbs>* ref_cache,
                 std::vector<double>* margins) {
    if (batch.empty()) throw ValidationError("preference loss needs a non-empty batch");
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& p = batch[i];
        const double w = pair_weight(p, weighted);
        if (p.source == PairSource::LesionNoise && !p.dispreferred_image) {
            throw ValidationError(fmt::format("lesion pair '{}' has no noised image", p.sample_id));
        }
        const ImageTensor& x = p.input_image;
        const ImageTensor& xs = p.dispreferred_input();
        ReferenceLogProbs ref;
        if (ref_cache) {
            ref = (*ref_cache)[i];
        } else {
            ref = {log_prob(reference, x, p.query, p.preferred), log_prob(reference, xs, p.query, p.dispreferred)};
        }
        // The gradient coefficient depends on d, so the forward pass runs
        // before the sequence gradients are accumulated.
        const double pol_w = log_prob(policy, x, p.query, p.preferred);
        const double pol_l = log_prob(policy, xs, p.query, p.dispreferred);
        const double d = margin_from_log_probs({pol_w, ref.preferred, pol_l, ref.dispreferred}, alpha);
        loss += w * neg_log_sigmoid(d) * inv_n;
        if (margins) margins->push_back(d);
        if (!grad.empty()) {
            const double coef = -w * alpha * sigmoid(-d) * inv_n;
            accumulate_log_prob_grad(policy, x, p.query, p.preferred, coef, grad);
            accumulate_log_prob_grad(policy, xs, p.query, p.dispreferred, -coef, grad);
        }
    }
    return loss;
}

std::vector<ReferenceLogProbs> reference_cache(const PolicyModel& reference, std::span<const PreferencePair> pairs) {
    std::vector<ReferenceLogProbs> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        out.push_back({log_prob(reference, p.input_image, p.query, p.preferred),
                       log_prob(reference, p.dispreferred_input(), p.query, p.dispreferred)});
    }
    return out;
}

bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

Tokens with_eos(const Tokens& t) {
    Tokens out = t;
    out.push_back("<eos>");
    return out;
}

}  // namespace

double dpo_loss(const PolicyModel& policy, const PolicyModel& reference, std::span<const PreferencePair> batch,
                const TrainConfig& config) {
    return objective(policy, reference, batch, config.alpha, false, {}, nullptr, nullptr);
}

double mmedpo_loss(const PolicyModel& policy, const PolicyModel& reference, std::span<const PreferencePair> batch,
                   const TrainConfig& config) {
    return objective(policy, reference, batch, config.alpha, true, {}, nullptr, nullptr);
}

double preference_loss(const PolicyModel& policy, const PolicyModel& reference, std::span<const PreferencePair> batch,
                       const TrainConfig& config) {
    return objective(policy, reference, batch, config.alpha, config.weighted(), {}, nullptr, nullptr);
}

std::vector<double> loss_grad(const PolicyModel& policy, const PolicyModel& reference,
                              std::span<const PreferencePair> batch, const TrainConfig& config) {
    std::vector<double> grad(policy.num_params(), 0.0);
    objective(policy, reference, batch, config.alpha, config.weighted(), grad, nullptr, nullptr);
    return grad;
}

TrainResult train(PolicyModel policy, const PolicyModel& reference, std::span<const PreferencePair> pairs,
                  const TrainConfig& config, Rng& rng) {
    config.validate();
    if (config.mode == TrainMode::Sft) return train_sft(std::move(policy), supervised_from_pairs(pairs), config, rng);
    if (pairs.empty()) throw ValidationError("no preference pairs to train on");
    const bool weighted = config.weighted();
    if (weighted) {
        for (const auto& p : pairs) pair_weight(p, true);
    }
    const auto ref_all = reference_cache(reference, pairs);

    TrainResult result;
    auto record = [&](std::size_t epoch) {
        std::vector<double> margins;
        const double loss = objective(policy, reference, pairs, config.alpha, weighted, {}, &ref_all, &margins);
        const double mean_margin = std::accumulate(margins.begin(), margins.end(), 0.0) / margins.size();
        if (!std::isfinite(loss)) throw TrainingError("non-finite loss", static_cast<int>(epoch), -1);
        result.trace.push_back({epoch, loss, mean_margin});
    };
    record(0);

    std::vector<PreferencePair> batch;
    std::vector<ReferenceLogProbs> batch_ref;
    std::vector<double> grad(policy.num_params());
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto order = shuffled(pairs.size(), rng);
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            batch.clear();
            batch_ref.clear();
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(pairs[order[i]]);
                batch_ref.push_back(ref_all[order[i]]);
            }
            std::fill(grad.begin(), grad.end(), 0.0);
            const double loss = objective(policy, reference, batch, config.alpha, weighted, grad, &batch_ref, nullptr);
            if (!std::isfinite(loss) || !all_finite(grad)) {
                throw TrainingError("non-finite loss or gradient", static_cast<int>(epoch), static_cast<int>(batch_index));
            }
            auto params = policy.params();
            for (std::size_t j = 0; j < params.size(); ++j) params[j] -= config.learning_rate * grad[j];
            if (!all_finite(policy.params())) {
                throw TrainingError("parameters diverged", static_cast<int>(epoch), static_cast<int>(batch_index));
            }
        }
        record(epoch);
    }
    result.policy = std::move(policy);
    return result;
}

std::vector<SupervisedExample> supervised_from_pairs(std::span<const PreferencePair> pairs) {
    std::vector<SupervisedExample> out;
    std::unordered_set<std::string> seen;
    for (const auto& p : pairs) {
        if (!seen.insert(p.sample_id).second) continue;
        out.push_back({p.input_image, p.query, p.preferred});
    }
    return out;
}

std::vector<SupervisedExample> supervised_from_dataset(const Dataset& dataset) {
    std::vector<SupervisedExample> out;
    out.reserve(dataset.size());
    for (const auto& s : dataset) out.push_back({s.image, s.query_tokens(), s.answer_tokens()});
    return out;
}

double sft_loss(const PolicyModel& policy, std::span<const SupervisedExample> examples) {
    if (examples.empty()) throw ValidationError("no supervised examples");
    double total = 0.0;
    for (const auto& e : examples) total -= log_prob(policy, e.image, e.query, with_eos(e.response));
    return total / static_cast<double>(examples.size());
}

TrainResult train_sft(PolicyModel policy, std::span<const SupervisedExample> examples, const TrainConfig& config,
                      Rng& rng) {
    config.validate();
    if (examples.empty()) throw ValidationError("no supervised examples");
    TrainResult result;
    result.trace.push_back({0, sft_loss(policy, examples), 0.0});
    std::vector<double> grad(policy.num_params());
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto order = shuffled(examples.size(), rng);
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const double scale = -1.0 / static_cast<double>(end - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t i = start; i < end; ++i) {
                const auto& e = examples[order[i]];
                accumulate_log_prob_grad(policy, e.image, e.query, with_eos(e.response), scale, grad);
            }
            if (!all_finite(grad)) {
                throw TrainingError("non-finite gradient", static_cast<int>(epoch), static_cast<int>(batch_index));
            }
            auto params = policy.params();
            for (std::size_t j = 0; j < params.size(); ++j) params[j] -= config.learning_rate * grad[j];
        }
        const double loss = sft_loss(policy, examples);
        if (!std::isfinite(loss)) throw TrainingError("non-finite loss", static_cast<int>(epoch), -1);
        result.trace.push_back({epoch, loss, 0.0});
    }
    result.policy = std::move(policy);
    return result;
}

std::string trace_csv(const std::vector<EpochStats>& trace) {
    std::string out = "epoch,loss,mean_margin\n";
    for (const auto& row : trace) out += fmt::format("{},{:.17g},{:.17g}\n", row.epoch, row.loss, row.mean_margin);
    return out;
}

}  // namespace mmedpo
