#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ted/corpus.hpp"
#include "ted/model.hpp"
#include "ted/ops.hpp"
#include "ted/rng.hpp"
#include "ted/special_tokens.hpp"

namespace ted {

inline constexpr double kMaskedLogit = -1e9;

// Ids never produced by generation; [EOS] is additionally banned when a minimum length applies.
inline std::vector<bool> generation_mask(std::size_t vocab, bool ban_eos) {
    std::vector<bool> mask(vocab, false);
    for (TokenId id : {kPad, kStart, kSep, kCls}) mask[static_cast<std::size_t>(id)] = true;
    if (ban_eos) mask[static_cast<std::size_t>(kEos)] = true;
    return mask;
}

struct GumbelDraw {
    TokenId hard = 0;
    Tensor soft;  // 1 x vocab
};

// Gumbel(0, 1) noise, with the uniform draw clamped away from 0 and 1.
inline std::vector<double> gumbel_noise(std::size_t n, Rng& rng) {
    std::vector<double> g(n);
    for (auto& x : g) {
        const double u = std::clamp(rng.uniform(), 1e-12, 1.0 - 1e-12);
        x = -std::log(-std::log(u));
    }
    return g;
}

// Straight-through Gumbel-softmax over one logit row: hard = argmax(log pi + g),
// soft = softmax((log pi + g) / tau). Masked entries are excluded from both.
inline GumbelDraw gumbel_softmax(const Tensor& logits, double tau, Rng& rng, const std::vector<bool>* mask = nullptr) {
    if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax temperature must be positive");
    if (logits.dim() != 2 || logits.rows() != 1) throw std::invalid_argument("gumbel_softmax expects a 1 x V row");
    const std::size_t v = logits.size();
    Tensor row = mask ? masked_fill(logits, *mask, kMaskedLogit) : logits;
    const auto g = gumbel_noise(v, rng);
    Tensor perturbed = add(log_softmax(row), Tensor({1, v}, g));
    const auto pd = perturbed.data();
    std::size_t best = 0;
    for (std::size_t i = 1; i < v; ++i)
        if (pd[i] > pd[best]) best = i;
    return {static_cast<TokenId>(best), softmax(scale(perturbed, 1.0 / tau))};
}

struct GumbelSample {
    std::vector<TokenId> hard_ids;  // generated tokens, [EOS] excluded
    Tensor soft_dists;              // hard_ids.size() x vocab
    double tau = 0.1;
    bool ended_with_eos = false;
};

// Autoregressive straight-through sampling from [START]; stops at max_len or [EOS].
inline GumbelSample generate_differentiable(const Transformer& model, const Encoded& enc, std::size_t max_len,
                                            double tau, Rng& rng, const ForwardContext& ctx = {}) {
    if (max_len == 0) throw std::invalid_argument("max_len must be at least 1");
    const std::size_t vocab = model.config().vocab_size;
    const auto first_mask = generation_mask(vocab, true);
    const auto mask = generation_mask(vocab, false);
    GumbelSample out;
    out.tau = tau;
    std::vector<TokenId> prefix = {kStart};
    std::vector<Tensor> rows;
    while (out.hard_ids.size() < max_len && prefix.size() < model.config().max_positions) {
        Tensor logits = model.decode_logits(enc, prefix, ctx);
        auto draw = gumbel_softmax(slice_rows(logits, logits.rows() - 1, 1), tau, rng,
                                   out.hard_ids.empty() ? &first_mask : &mask);
        if (draw.hard == kEos) {
            out.ended_with_eos = true;
            break;
        }
        out.hard_ids.push_back(draw.hard);
        rows.push_back(draw.soft);
        prefix.push_back(draw.hard);
    }
    out.soft_dists = rows.size() == 1 ? rows[0] : concat_rows(rows);
    return out;
}

inline GumbelSample generate_differentiable(const Transformer& model, std::span<const TokenId> article,
                                            std::size_t max_len, double tau, Rng& rng, const ForwardContext& ctx = {}) {
    return generate_differentiable(model, model.encode(article, ctx), max_len, tau, rng, ctx);
}

// Cross-entropy of the theme classifier on one packed pair against label (1 = similar).
inline Tensor theme_term(const Transformer& model, std::span<const TokenId> a, std::span<const TokenId> b, TokenId label,
                         const ForwardContext& ctx = {}) {
    const auto packed = pack_pair(a, b);
    const std::array<TokenId, 1> target = {label};
    return cross_entropy(model.theme_logits(packed.ids, packed.segments, ctx), target, std::nullopt);
}

// Summary/article pair: the summary enters as straight-through rows whose forward
// value is the hard embedding and whose gradient flows through soft_dists * V.
inline Tensor summary_theme_term(const Transformer& model, const GumbelSample& summary, std::span<const TokenId> article,
                                 const ForwardContext& ctx = {}) {
    const std::size_t m = summary.hard_ids.size();
    if (m == 0) throw std::invalid_argument("summary must contain at least one token");
    const std::size_t limit = model.config().max_positions;
    if (m + 2 > limit) throw std::invalid_argument("summary too long to pack with its article");
    const std::size_t keep = std::min(article.size(), limit - m - 2);
    const auto packed = pack_pair(article.first(keep), summary.hard_ids);
    const Tensor& v = model.embeddings();
    std::vector<TokenId> head(packed.ids.begin(), packed.ids.begin() + static_cast<std::ptrdiff_t>(keep + 2));
    Tensor hard_rows = embedding_lookup(v, summary.hard_ids).detach();
    Tensor soft_rows = matmul(summary.soft_dists, v);
    Tensor rows = concat_rows({embedding_lookup(v, head), straight_through(hard_rows, soft_rows)});
    Encoded enc = model.encode_rows(model.embed_rows(rows, packed.segments), Transformer::padding_of(packed.ids), ctx);
    const std::array<TokenId, 1> target = {1};
    return cross_entropy(model.theme_logits(enc, ctx), target, std::nullopt);
}

struct ThemeLoss {
    Tensor total;
    std::array<double, 3> terms{};  // (a1,a2) similar, (d,s) similar, (a1,b1) distinct
};

inline ThemeLoss theme_loss(const Transformer& model, const ThemeSample& pairs, const GumbelSample& summary,
                            std::span<const TokenId> article, const ForwardContext& ctx = {}) {
    Tensor t1 = theme_term(model, pairs.a1, pairs.a2, 1, ctx);
    Tensor t2 = summary_theme_term(model, summary, article, ctx);
    Tensor t3 = theme_term(model, pairs.a1, pairs.b1, 0, ctx);
    return {add(add(t1, t2), t3), {t1.item(), t2.item(), t3.item()}};
}

// Reconstruct x from its corruption; the decoder is teacher-forced with [START] + x[..-1].
inline Tensor denoise_loss(const Transformer& model, std::span<const TokenId> x, std::span<const TokenId> noised,
                           const ForwardContext& ctx = {}) {
    if (x.empty() || noised.empty()) throw std::invalid_argument("denoise_loss needs non-empty sequences");
    std::vector<TokenId> input = {kStart};
    input.insert(input.end(), x.begin(), x.end() - 1);
    return cross_entropy(model.decode_logits(model.encode(noised, ctx), input, ctx), x);
}

// Predict lead + [EOS] from the body alone.
inline Tensor pretrain_loss(const Transformer& model, std::span<const TokenId> body, std::span<const TokenId> lead,
                            const ForwardContext& ctx = {}) {
    if (body.empty() || lead.empty()) throw std::invalid_argument("pretrain_loss needs non-empty body and lead");
    std::vector<TokenId> input = {kStart};
    input.insert(input.end(), lead.begin(), lead.end());
    std::vector<TokenId> target(lead.begin(), lead.end());
    target.push_back(kEos);
    return cross_entropy(model.decode_logits(model.encode(body, ctx), input, ctx), target);
}

inline Tensor combined_loss(const Tensor& theme, const Tensor& denoise) {
    if (!std::isfinite(theme.item()) || !std::isfinite(denoise.item()))
        throw std::invalid_argument("combined_loss requires finite inputs");
    return scale(add(theme, denoise), 0.5);
}

}  // namespace ted
