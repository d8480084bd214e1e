#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmedpo/policy.hpp"
#include "mmedpo/types.hpp"

namespace mmedpo {

/// True when the prediction's token set holds the reference polarity
/// ("yes"/"no") and not the opposite one.
bool closed_correct(const std::string& prediction, const std::string& reference);
double closed_accuracy(std::span<const std::string> predictions, std::span<const std::string> references);

/// Fraction of the reference's unique tokens that occur in the prediction.
double open_recall(const std::string& prediction, const std::string& reference);

/// Cumulative BLEU-n with uniform weights over 1..n-gram modified
/// precisions, brevity penalty exp(1 - |ref|/|pred|) for short predictions,
/// and zero-match precisions floored at 1e-9. An order for which neither
/// sentence has any n-gram counts as precision 1.
double bleu_n(const Tokens& prediction, const Tokens& reference, int n);
/// Mean of BLEU-1..4.
double bleu_avg(const Tokens& prediction, const Tokens& reference);

std::size_t lcs_length(const Tokens& a, const Tokens& b);
/// LCS F-measure with beta = 1.2.
double rouge_l(const Tokens& prediction, const Tokens& reference);

struct UnigramAlignment {
    std::size_t matches = 0;
    std::size_t chunks = 0;
};
/// Exact-match alignment with the most matches, ties broken by fewest chunks.
UnigramAlignment align_unigrams(const Tokens& prediction, const Tokens& reference);
/// METEOR (exact matches only): F = 10PR/(R+9P), penalty 0.5 (chunks/m)^3.
double meteor(const Tokens& prediction, const Tokens& reference);

struct MetricRow {
    std::string id;
    std::string prediction;
    std::string reference;
    std::map<std::string, double> scores;
};

struct MetricReport {
    Task task = Task::ClosedQa;
    std::vector<MetricRow> rows;
    /// Corpus means scaled by 100.
    std::map<std::string, double> means;

    std::string to_json() const;
};

/// Produces a response for one sample.
using Responder = std::function<Tokens(const MedicalSample&)>;

/// Scores every sample with the task's metrics: accuracy for closed QA,
/// recall for open QA, BLEU-1..4/avg, ROUGE-L and METEOR for reports.
MetricReport evaluate(const Responder& respond, const Dataset& dataset, Task task);
/// Greedy decoding (cap 64 tokens) with `policy`.
MetricReport evaluate(const PolicyModel& policy, const Dataset& dataset, Task task);

}  // namespace mmedpo
