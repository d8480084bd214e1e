#include "mmedpo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "mmedpo/errors.hpp"

namespace mmedpo {

using nlohmann::json;

namespace {

constexpr double kBleuFloor = 1e-9;
constexpr double kRougeBeta = 1.2;

std::string polarity(const std::string& reference) {
    const Tokens t = tokenize(reference);
    if (t.size() != 1 || (t[0] != "yes" && t[0] != "no")) {
        throw ValidationError(fmt::format("closed-ended reference '{}' is not yes/no", reference));
    }
    return t[0];
}

}  // namespace

bool closed_correct(const std::string& prediction, const std::string& reference) {
    const std::string want = polarity(reference);
    const std::string other = want == "yes" ? "no" : "yes";
    const Tokens t = tokenize(prediction);
    const std::set<std::string> words(t.begin(), t.end());
    return words.contains(want) && !words.contains(other);
}

double closed_accuracy(std::span<const std::string> predictions, std::span<const std::string> references) {
    if (predictions.size() != references.size()) {
        throw ValidationError(fmt::format("{} predictions for {} references", predictions.size(), references.size()));
    }
    if (references.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < references.size(); ++i) correct += closed_correct(predictions[i], references[i]);
    return static_cast<double>(correct) / static_cast<double>(references.size());
}

double open_recall(const std::string& prediction, const std::string& reference) {
    const Tokens ref = tokenize(reference);
    if (ref.empty()) throw ValidationError("open-ended reference is empty");
    const Tokens pred = tokenize(prediction);
    const std::set<std::string> ref_set(ref.begin(), ref.end());
    const std::set<std::string> pred_set(pred.begin(), pred.end());
    std::size_t hit = 0;
    for (const auto& t : ref_set) hit += pred_set.contains(t);
    return static_cast<double>(hit) / static_cast<double>(ref_set.size());
}

double bleu_n(const Tokens& prediction, const Tokens& reference, int n) {
    if (n < 1 || n > 4) throw ValidationError(fmt::format("BLEU order {} outside 1..4", n));
    if (prediction.empty()) return 0.0;
    double log_sum = 0.0;
    for (int k = 1; k <= n; ++k) {
        std::map<std::vector<std::string>, std::size_t> ref_counts, pred_counts;
        const auto count = [k](const Tokens& t, auto& into) {
            for (std::size_t i = 0; i + k <= t.size(); ++i) ++into[Tokens(t.begin() + i, t.begin() + i + k)];
        };
        count(reference, ref_counts);
        count(prediction, pred_counts);
        // Neither side is long enough for this order: nothing to compare.
        if (pred_counts.empty() && ref_counts.empty()) continue;
        std::size_t total = 0, clipped = 0;
        for (const auto& [gram, c] : pred_counts) {
            total += c;
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) clipped += std::min(c, it->second);
        }
        const double precision =
            clipped == 0 || total == 0 ? kBleuFloor : static_cast<double>(clipped) / static_cast<double>(total);
        log_sum += std::log(precision);
    }
    const double pred_len = static_cast<double>(prediction.size());
    const double ref_len = static_cast<double>(reference.size());
    const double brevity = pred_len < ref_len ? std::exp(1.0 - ref_len / pred_len) : 1.0;
    return std::clamp(brevity * std::exp(log_sum / n), 0.0, 1.0);
}

double bleu_avg(const Tokens& prediction, const Tokens& reference) {
    double s = 0.0;
    for (int n = 1; n <= 4; ++n) s += bleu_n(prediction, reference, n);
    return s / 4.0;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(const Tokens& prediction, const Tokens& reference) {
    if (prediction.empty() || reference.empty()) return 0.0;
    const auto lcs = static_cast<double>(lcs_length(prediction, reference));
    if (lcs == 0.0) return 0.0;
    const double r = lcs / static_cast<double>(reference.size());
    const double p = lcs / static_cast<double>(prediction.size());
    const double b2 = kRougeBeta * kRougeBeta;
    return (1.0 + b2) * r * p / (r + b2 * p);
}

namespace {

/// Memoised search over prediction positions. The state is the position, the
/// reference index matched by the previous prediction token (or none), and
/// which reference positions are taken among tokens still ahead; positions
/// of tokens that no longer occur can never be reused, so they drop out of
/// the key.
class AlignmentSearch {
public:
    AlignmentSearch(const Tokens& pred, const Tokens& ref) : pred_(pred), ref_(ref), used_(ref.size(), false) {
        for (std::size_t j = 0; j < ref.size(); ++j) positions_[ref[j]].push_back(j);
        // remaining_[i]: set of tokens in pred[i..]
        remaining_.resize(pred.size() + 1);
        for (std::size_t i = pred.size(); i-- > 0;) {
            remaining_[i] = remaining_[i + 1];
            remaining_[i].insert(pred[i]);
        }
    }

    UnigramAlignment run() {
        const auto best = solve(0, kNone);
        return {best.matches, best.chunks};
    }

private:
    static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

    struct Value {
        std::size_t matches = 0;
        std::size_t chunks = 0;
        bool better_than(const Value& o) const {
            return matches != o.matches ? matches > o.matches : chunks < o.chunks;
        }
    };

    std::string key(std::size_t i, std::size_t prev) const {
        std::string k = fmt::format("{}:{}:", i, prev == kNone ? -1 : static_cast<long long>(prev));
        for (const auto& tok : remaining_[i]) {
            auto it = positions_.find(tok);
            if (it == positions_.end()) continue;
            for (std::size_t j : it->second) k.push_back(used_[j] ? '1' : '0');
            k.push_back('|');
        }
        return k;
    }

    Value solve(std::size_t i, std::size_t prev) {
        if (i == pred_.size()) return {};
        const std::string k = key(i, prev);
        if (auto it = memo_.find(k); it != memo_.end()) return it->second;

        Value best = solve(i + 1, kNone);
        if (auto it = positions_.find(pred_[i]); it != positions_.end()) {
            for (std::size_t j : it->second) {
                if (used_[j]) continue;
                used_[j] = true;
                Value v = solve(i + 1, j);
                used_[j] = false;
                v.matches += 1;
                v.chunks += (prev != kNone && j == prev + 1) ? 0 : 1;
                if (v.better_than(best)) best = v;
            }
        }
        memo_.emplace(k, best);
        return best;
    }

    const Tokens& pred_;
    const Tokens& ref_;
    std::vector<bool> used_;
    std::unordered_map<std::string, std::vector<std::size_t>> positions_;
    std::vector<std::set<std::string>> remaining_;
    std::unordered_map<std::string, Value> memo_;
};

}  // namespace

UnigramAlignment align_unigrams(const Tokens& prediction, const Tokens& reference) {
    return AlignmentSearch(prediction, reference).run();
}

double meteor(const Tokens& prediction, const Tokens& reference) {
    if (prediction.empty() || reference.empty()) return 0.0;
    const auto a = align_unigrams(prediction, reference);
    if (a.matches == 0) return 0.0;
    const auto m = static_cast<double>(a.matches);
    const double p = m / static_cast<double>(prediction.size());
    const double r = m / static_cast<double>(reference.size());
    const double f = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(a.chunks) / m;
    return f * (1.0 - 0.5 * frag * frag * frag);
}

std::string MetricReport::to_json() const {
    json rows_json = json::array();
    for (const auto& r : rows) {
        rows_json.push_back(
            {{"id", r.id}, {"prediction", r.prediction}, {"reference", r.reference}, {"scores", r.scores}});
    }
    const json doc = {{"task", std::string(to_string(task))}, {"means_x100", means}, {"rows", rows_json}};
    return doc.dump(2) + "\n";
}

MetricReport evaluate(const Responder& respond, const Dataset& dataset, Task task) {
    MetricReport report;
    report.task = task;
    for (const auto& s : dataset) {
        if (s.task != task) {
            throw ValidationError(fmt::format("sample '{}' has task {} but evaluation is for {}", s.id,
                                              to_string(s.task), to_string(task)));
        }
    }
    for (const auto& s : dataset) {
        const Tokens pred = respond(s);
        MetricRow row{s.id, join_tokens(pred), s.answer, {}};
        const Tokens ref = s.answer_tokens();
        switch (task) {
            case Task::ClosedQa: row.scores["accuracy"] = closed_correct(row.prediction, s.answer) ? 1.0 : 0.0; break;
            case Task::OpenQa: row.scores["recall"] = open_recall(row.prediction, s.answer); break;
            case Task::Report:
                for (int n = 1; n <= 4; ++n) row.scores[fmt::format("bleu{}", n)] = bleu_n(pred, ref, n);
                row.scores["bleu_avg"] = bleu_avg(pred, ref);
                row.scores["rouge_l"] = rouge_l(pred, ref);
                row.scores["meteor"] = meteor(pred, ref);
                break;
        }
        for (const auto& [name, v] : row.scores) report.means[name] += v;
        report.rows.push_back(std::move(row));
    }
    if (!report.rows.empty()) {
        for (auto& [name, v] : report.means) v = 100.0 * v / static_cast<double>(report.rows.size());
    }
    return report;
}

MetricReport evaluate(const PolicyModel& policy, const Dataset& dataset, Task task) {
    return evaluate([&policy](const MedicalSample& s) { return greedy_decode(policy, s.image, s.query_tokens(), 64); },
                    dataset, task);
}

}  // namespace mmedpo
