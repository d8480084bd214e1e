#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmedpo/rng.hpp"
#include "mmedpo/types.hpp"

namespace mmedpo {

/// Token <-> index table. Indices 0..2 are reserved for <unk>, <bos>, <eos>.
class Vocabulary {
public:
    static constexpr std::size_t kUnk = 0;
    static constexpr std::size_t kBos = 1;
    static constexpr std::size_t kEos = 2;

    Vocabulary();
    /// Specials followed by the given tokens, deduplicated, in first-seen order.
    explicit Vocabulary(std::span<const std::string> tokens);
    /// Specials followed by the sorted set of every token in `texts`.
    static Vocabulary from_corpus(std::span<const Tokens> texts);

    std::size_t size() const noexcept { return tokens_.size(); }
    std::size_t id(const std::string& token) const;
    const std::string& token(std::size_t id) const { return tokens_.at(id); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    void add(const std::string& token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Single-layer conditional next-token model:
///
///   hidden_t = tanh(W_t e(prev_t) + W_v pool(image) + b)
///   logits_t = U hidden_t
///
/// where pool is the per-channel pixel mean and prev_0 is the last query
/// token (<bos> for an empty query). All parameters live in one flat vector
/// in the order E, W_v, W_t, b, U so gradients, updates and checkpoints can
/// treat them uniformly.
class PolicyModel {
public:
    struct Layout {
        std::size_t vocab, dim, channels;
        std::size_t embed() const { return 0; }                           // E: vocab x dim
        std::size_t image_proj() const { return vocab * dim; }            // W_v: dim x channels
        std::size_t transition() const { return image_proj() + dim * channels; }  // W_t: dim x dim
        std::size_t bias() const { return transition() + dim * dim; }     // b: dim
        std::size_t output() const { return bias() + dim; }               // U: vocab x dim
        std::size_t total() const { return output() + vocab * dim; }
    };

    PolicyModel() = default;
    /// Parameters uniform in [-init_scale, init_scale] drawn from `rng`.
    static PolicyModel random(Vocabulary vocab, std::size_t embed_dim, std::size_t channels, Rng& rng,
                              double init_scale = 0.05);
    /// All-zero parameters (uniform next-token distribution).
    static PolicyModel zeros(Vocabulary vocab, std::size_t embed_dim, std::size_t channels);

    const Vocabulary& vocab() const noexcept { return vocab_; }
    std::size_t embed_dim() const noexcept { return layout_.dim; }
    std::size_t channels() const noexcept { return layout_.channels; }
    const Layout& layout() const noexcept { return layout_; }
    std::uint64_t seed() const noexcept { return seed_; }

    std::span<const double> params() const noexcept { return params_; }
    std::span<double> params() noexcept { return params_; }
    std::size_t num_params() const noexcept { return params_.size(); }

    /// Throws ValidationError if any parameter is non-finite.
    void check_finite() const;

    bool operator==(const PolicyModel& other) const {
        return vocab_ == other.vocab_ && layout_.dim == other.layout_.dim &&
               layout_.channels == other.layout_.channels && params_ == other.params_;
    }

private:
    PolicyModel(Vocabulary vocab, std::size_t dim, std::size_t channels, std::uint64_t seed);

    Vocabulary vocab_;
    Layout layout_{0, 0, 0};
    std::uint64_t seed_ = 0;
    std::vector<double> params_;

    friend PolicyModel load_checkpoint(const std::filesystem::path& path);
    friend PolicyModel decode_checkpoint(std::string_view bytes);
};

/// Sum over response tokens of log softmax(logits_t)[response_t].
double log_prob(const PolicyModel& model, const ImageTensor& image, const Tokens& query, const Tokens& response);

/// Exact gradient of log_prob with respect to every parameter.
std::vector<double> log_prob_grad(const PolicyModel& model, const ImageTensor& image, const Tokens& query,
                                  const Tokens& response);

/// Adds `scale * d log_prob / d params` into `grad` and returns log_prob.
double accumulate_log_prob_grad(const PolicyModel& model, const ImageTensor& image, const Tokens& query,
                                const Tokens& response, double scale, std::span<double> grad);

/// Log-probabilities of every vocabulary entry after `prev` (a token id).
std::vector<double> next_token_log_probs(const PolicyModel& model, const ImageTensor& image, std::size_t prev);

/// Argmax decoding until <eos> or `max_len` tokens.
Tokens greedy_decode(const PolicyModel& model, const ImageTensor& image, const Tokens& query,
                     std::size_t max_len = 64);

/// Independent deep copy used as the frozen reference policy.
PolicyModel freeze_reference(const PolicyModel& model);

/// Checkpoint: little-endian u64 header length, a JSON header (vocab, dims,
/// seed, tensor table, dtype), then the parameter tensors as little-endian
/// f64 in declared order.
std::string encode_checkpoint(const PolicyModel& model);
PolicyModel decode_checkpoint(std::string_view bytes);
void save_checkpoint(const PolicyModel& model, const std::filesystem::path& path);
PolicyModel load_checkpoint(const std::filesystem::path& path);

}  // namespace mmedpo
