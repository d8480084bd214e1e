#include "mmedpo/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "mmedpo/errors.hpp"
#include "mmedpo/io.hpp"

namespace mmedpo {

using nlohmann::json;

Vocabulary::Vocabulary() {
    add("<unk>");
    add("<bos>");
    add("<eos>");
}

Vocabulary::Vocabulary(std::span<const std::string> tokens) : Vocabulary() {
    for (const auto& t : tokens) add(t);
}

Vocabulary Vocabulary::from_corpus(std::span<const Tokens> texts) {
    std::set<std::string> unique;
    for (const auto& t : texts) unique.insert(t.begin(), t.end());
    std::vector<std::string> sorted(unique.begin(), unique.end());
    return Vocabulary(sorted);
}

void Vocabulary::add(const std::string& token) {
    if (index_.contains(token)) return;
    index_.emplace(token, tokens_.size());
    tokens_.push_back(token);
}

std::size_t Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

PolicyModel::PolicyModel(Vocabulary vocab, std::size_t dim, std::size_t channels, std::uint64_t seed)
    : vocab_(std::move(vocab)), layout_{vocab_.size(), dim, channels}, seed_(seed) {
    if (dim == 0 || channels == 0) throw ValidationError("policy dimensions must be positive");
    params_.assign(layout_.total(), 0.0);
}

PolicyModel PolicyModel::random(Vocabulary vocab, std::size_t embed_dim, std::size_t channels, Rng& rng,
                                double init_scale) {
    PolicyModel m(std::move(vocab), embed_dim, channels, rng.seed());
    for (double& p : m.params_) p = rng.uniform(-init_scale, init_scale);
    return m;
}

PolicyModel PolicyModel::zeros(Vocabulary vocab, std::size_t embed_dim, std::size_t channels) {
    return PolicyModel(std::move(vocab), embed_dim, channels, 0);
}

void PolicyModel::check_finite() const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!std::isfinite(params_[i])) throw ValidationError(fmt::format("policy parameter {} is not finite", i));
    }
}

namespace {

struct Encoded {
    std::vector<double> pooled;
    std::size_t first_prev;
    std::vector<std::size_t> targets;
};

Encoded encode(const PolicyModel& model, const ImageTensor& image, const Tokens& query, const Tokens& response) {
    if (response.empty()) throw ValidationError("log_prob needs a non-empty response");
    if (image.channels() != model.channels()) {
        throw ValidationError(
            fmt::format("image has {} channels but the policy expects {}", image.channels(), model.channels()));
    }
    Encoded e;
    e.pooled = image.channel_means();
    e.first_prev = query.empty() ? Vocabulary::kBos : model.vocab().id(query.back());
    e.targets.reserve(response.size());
    for (const auto& t : response) e.targets.push_back(t == "<eos>" ? Vocabulary::kEos : model.vocab().id(t));
    return e;
}

/// W_v pool + b, shared by every step of one sequence.
std::vector<double> image_term(const PolicyModel& model, const std::vector<double>& pooled) {
    const auto& L = model.layout();
    const auto p = model.params();
    std::vector<double> out(L.dim);
    for (std::size_t d = 0; d < L.dim; ++d) {
        double acc = p[L.bias() + d];
        for (std::size_t c = 0; c < L.channels; ++c) acc += p[L.image_proj() + d * L.channels + c] * pooled[c];
        out[d] = acc;
    }
    return out;
}

void hidden_state(const PolicyModel& model, const std::vector<double>& img, std::size_t prev, std::vector<double>& h) {
    const auto& L = model.layout();
    const auto p = model.params();
    const double* e = &p[L.embed() + prev * L.dim];
    h.resize(L.dim);
    for (std::size_t d = 0; d < L.dim; ++d) {
        double acc = img[d];
        const double* row = &p[L.transition() + d * L.dim];
        for (std::size_t j = 0; j < L.dim; ++j) acc += row[j] * e[j];
        h[d] = std::tanh(acc);
    }
}

/// Log-softmax of U h, written into `out`.
void log_softmax_logits(const PolicyModel& model, const std::vector<double>& h, std::vector<double>& out) {
    const auto& L = model.layout();
    const auto p = model.params();
    out.resize(L.vocab);
    double mx = -INFINITY;
    for (std::size_t v = 0; v < L.vocab; ++v) {
        const double* row = &p[L.output() + v * L.dim];
        double acc = 0.0;
        for (std::size_t d = 0; d < L.dim; ++d) acc += row[d] * h[d];
        out[v] = acc;
        mx = std::max(mx, acc);
    }
    double sum = 0.0;
    for (double z : out) sum += std::exp(z - mx);
    const double lse = mx + std::log(sum);
    for (double& z : out) z -= lse;
}

}  // namespace

double log_prob(const PolicyModel& model, const ImageTensor& image, const Tokens& query, const Tokens& response) {
    const Encoded e = encode(model, image, query, response);
    const auto img = image_term(model, e.pooled);
    std::vector<double> h, lp;
    double total = 0.0;
    std::size_t prev = e.first_prev;
    for (std::size_t target : e.targets) {
        hidden_state(model, img, prev, h);
        log_softmax_logits(model, h, lp);
        total += lp[target];
        prev = target;
    }
    return total;
}

double accumulate_log_prob_grad(const PolicyModel& model, const ImageTensor& image, const Tokens& query,
                                const Tokens& response, double scale, std::span<double> grad) {
    const auto& L = model.layout();
    if (grad.size() != L.total()) throw ValidationError("gradient buffer does not match the parameter count");
    const Encoded e = encode(model, image, query, response);
    const auto p = model.params();
    const auto img = image_term(model, e.pooled);
    std::vector<double> h, lp, dh(L.dim), da(L.dim);
    double total = 0.0;
    std::size_t prev = e.first_prev;
    for (std::size_t target : e.targets) {
        hidden_state(model, img, prev, h);
        log_softmax_logits(model, h, lp);
        total += lp[target];

        // d lp[target] / d logits = onehot(target) - softmax
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t v = 0; v < L.vocab; ++v) {
            const double g = scale * ((v == target ? 1.0 : 0.0) - std::exp(lp[v]));
            const double* u = &p[L.output() + v * L.dim];
            double* gu = &grad[L.output() + v * L.dim];
            for (std::size_t d = 0; d < L.dim; ++d) {
                gu[d] += g * h[d];
                dh[d] += g * u[d];
            }
        }
        for (std::size_t d = 0; d < L.dim; ++d) da[d] = dh[d] * (1.0 - h[d] * h[d]);

        const double* emb = &p[L.embed() + prev * L.dim];
        double* g_emb = &grad[L.embed() + prev * L.dim];
        for (std::size_t d = 0; d < L.dim; ++d) {
            const double* wt = &p[L.transition() + d * L.dim];
            double* g_wt = &grad[L.transition() + d * L.dim];
            for (std::size_t j = 0; j < L.dim; ++j) {
                g_wt[j] += da[d] * emb[j];
                g_emb[j] += da[d] * wt[j];
            }
            for (std::size_t c = 0; c < L.channels; ++c) grad[L.image_proj() + d * L.channels + c] += da[d] * e.pooled[c];
            grad[L.bias() + d] += da[d];
        }
        prev = target;
    }
    return total;
}

std::vector<double> log_prob_grad(const PolicyModel& model, const ImageTensor& image, const Tokens& query,
                                  const Tokens& response) {
    std::vector<double> grad(model.num_params(), 0.0);
    accumulate_log_prob_grad(model, image, query, response, 1.0, grad);
    return grad;
}

std::vector<double> next_token_log_probs(const PolicyModel& model, const ImageTensor& image, std::size_t prev) {
    if (image.channels() != model.channels()) throw ValidationError("image channel count does not match the policy");
    if (prev >= model.vocab().size()) throw ValidationError("previous token id out of range");
    const auto img = image_term(model, image.channel_means());
    std::vector<double> h, lp;
    hidden_state(model, img, prev, h);
    log_softmax_logits(model, h, lp);
    return lp;
}

Tokens greedy_decode(const PolicyModel& model, const ImageTensor& image, const Tokens& query, std::size_t max_len) {
    if (image.channels() != model.channels()) throw ValidationError("image channel count does not match the policy");
    const auto img = image_term(model, image.channel_means());
    std::size_t prev = query.empty() ? Vocabulary::kBos : model.vocab().id(query.back());
    Tokens out;
    std::vector<double> h, lp;
    while (out.size() < max_len) {
        hidden_state(model, img, prev, h);
        log_softmax_logits(model, h, lp);
        const auto best = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
        if (best == Vocabulary::kEos) break;
        out.push_back(model.vocab().token(best));
        prev = best;
    }
    return out;
}

PolicyModel freeze_reference(const PolicyModel& model) { return model; }

std::string encode_checkpoint(const PolicyModel& model) {
    const auto& L = model.layout();
    const json header = {
        {"format", "mmedpo-policy"},
        {"version", 1},
        {"dtype", "f64"},
        {"vocab", model.vocab().tokens()},
        {"embed_dim", L.dim},
        {"channels", L.channels},
        {"seed", model.seed()},
        {"tensors",
         json::array({{{"name", "E"}, {"shape", {L.vocab, L.dim}}},
                      {{"name", "W_v"}, {"shape", {L.dim, L.channels}}},
                      {{"name", "W_t"}, {"shape", {L.dim, L.dim}}},
                      {{"name", "b"}, {"shape", {L.dim}}},
                      {{"name", "U"}, {"shape", {L.vocab, L.dim}}}})},
    };
    const std::string text = header.dump();
    std::string out;
    out.reserve(8 + text.size() + 8 * model.num_params());
    const auto put_u64 = [&out](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    };
    put_u64(text.size());
    out += text;
    for (double v : model.params()) put_u64(std::bit_cast<std::uint64_t>(v));
    return out;
}

PolicyModel decode_checkpoint(std::string_view bytes) {
    const auto get_u64 = [&bytes](std::size_t off) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
        return v;
    };
    if (bytes.size() < 8) throw FormatError("checkpoint is truncated");
    const std::uint64_t header_len = get_u64(0);
    if (header_len > bytes.size() - 8) throw FormatError("checkpoint header length exceeds file size");
    json header;
    try {
        header = json::parse(bytes.substr(8, header_len));
    } catch (const json::parse_error& e) {
        throw FormatError(fmt::format("checkpoint header is not JSON: {}", e.what()));
    }
    if (header.value("format", "") != "mmedpo-policy" || header.value("dtype", "") != "f64") {
        throw FormatError("not an f64 mmedpo-policy checkpoint");
    }
    std::vector<std::string> tokens = header.at("vocab").get<std::vector<std::string>>();
    if (tokens.size() < 3 || tokens[0] != "<unk>" || tokens[1] != "<bos>" || tokens[2] != "<eos>") {
        throw FormatError("checkpoint vocabulary lacks the reserved tokens");
    }
    Vocabulary vocab(std::span<const std::string>(tokens).subspan(3));
    if (vocab.size() != tokens.size()) throw FormatError("checkpoint vocabulary has duplicates");
    PolicyModel m(std::move(vocab), header.at("embed_dim").get<std::size_t>(), header.at("channels").get<std::size_t>(),
                  header.at("seed").get<std::uint64_t>());
    const std::size_t payload = 8 + header_len;
    if (bytes.size() != payload + 8 * m.num_params()) {
        throw FormatError(fmt::format("checkpoint payload has {} bytes, expected {}", bytes.size() - payload,
                                      8 * m.num_params()));
    }
    for (std::size_t i = 0; i < m.num_params(); ++i) m.params_[i] = std::bit_cast<double>(get_u64(payload + 8 * i));
    m.check_finite();
    return m;
}

void save_checkpoint(const PolicyModel& model, const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(model));
}

PolicyModel load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace mmedpo
