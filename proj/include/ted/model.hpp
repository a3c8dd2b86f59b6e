#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ted/errors.hpp"
#include "ted/ops.hpp"
#include "ted/rng.hpp"
#include "ted/special_tokens.hpp"
#include "ted/tensor.hpp"

namespace ted {

struct ModelConfig {
    std::size_t num_layers = 4;
    std::size_t num_heads = 4;
    std::size_t hidden_size = 512;
    std::size_t ff_inner_size = 0;  // 0 selects 4 * hidden_size
    std::size_t max_positions = 512;
    std::size_t vocab_size = 0;
    double dropout = 0.3;
    double positional_scale = 0.01;

    std::size_t ff_size() const { return ff_inner_size ? ff_inner_size : 4 * hidden_size; }

    void validate() const {
        if (num_layers == 0) throw ConfigError("num_layers must be at least 1");
        if (num_heads == 0 || hidden_size == 0) throw ConfigError("num_heads and hidden_size must be positive");
        if (hidden_size % num_heads != 0)
            throw ConfigError("hidden_size " + std::to_string(hidden_size) + " is not divisible by num_heads " +
                              std::to_string(num_heads));
        if (max_positions < 2) throw ConfigError("max_positions must be at least 2");
        if (vocab_size <= kNumSpecials) throw ConfigError("vocab_size must exceed the reserved special ids");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
        if (!(positional_scale > 0.0)) throw ConfigError("positional_scale must be positive");
    }

    bool operator==(const ModelConfig&) const = default;
};

// Closed-form trainable parameter count; see docs/formats.md.
inline std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t n = c.hidden_size, f = c.ff_size(), l = c.num_layers;
    const std::size_t enc_layer = 4 * n * n + 2 * n * f + 9 * n + f;
    const std::size_t dec_layer = 8 * n * n + 2 * n * f + 15 * n + f;
    return c.vocab_size * n + 2 * n + l * enc_layer + l * dec_layer + n * n + 3 * n + 2;
}

// Options for a single forward pass.
struct ForwardContext {
    bool training = false;
    Rng* rng = nullptr;
    // When set, receives one (queries x keys) probability matrix per attention head, in call order.
    std::vector<Tensor>* attention_trace = nullptr;
};

struct Encoded {
    Tensor states;
    std::vector<bool> key_padding;
};

class Transformer {
public:
    Transformer(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        init(seed);
    }

    Transformer(const Transformer&) = delete;
    Transformer& operator=(const Transformer&) = delete;
    Transformer(Transformer&&) = default;
    Transformer& operator=(Transformer&&) = default;

    // Deep copy; the default copy is disabled because parameters are shared handles.
    Transformer clone() const {
        Transformer out(cfg_, 0);
        for (std::size_t i = 0; i < params_.size(); ++i) out.set_parameter(params_[i].first, params_[i].second.data());
        return out;
    }

    const ModelConfig& config() const { return cfg_; }

    void set_parameter(const std::string& name, std::span<const double> values) {
        auto it = index_.find(name);
        if (it == index_.end()) throw DataError("unknown parameter " + name);
        auto dst = params_[it->second].second.mutable_data();
        if (dst.size() != values.size())
            throw DataError("parameter " + name + " expects " + std::to_string(dst.size()) + " values, got " +
                            std::to_string(values.size()));
        std::copy(values.begin(), values.end(), dst.begin());
    }

    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const { return params_; }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (const auto& [name, t] : params_) out.push_back(t);
        return out;
    }

    const Tensor& param(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
        return params_[it->second].second;
    }

    std::size_t num_parameters() const {
        std::size_t total = 0;
        for (const auto& [name, t] : params_) total += t.size();
        return total;
    }

    const Tensor& embeddings() const { return param("tok_emb"); }

    // First len rows of the fixed sinusoidal table, already scaled.
    Tensor positions(std::size_t len) const {
        if (len > cfg_.max_positions)
            throw std::invalid_argument("sequence of length " + std::to_string(len) + " exceeds max_positions " +
                                        std::to_string(cfg_.max_positions));
        const std::size_t n = cfg_.hidden_size;
        return Tensor({len, n}, std::vector<double>(pos_table_.begin(), pos_table_.begin() + static_cast<std::ptrdiff_t>(len * n)));
    }

    // Token rows plus positions, plus segment rows when segments are given.
    Tensor embed_rows(const Tensor& token_rows, std::optional<std::span<const TokenId>> segments = std::nullopt) const {
        Tensor x = add(token_rows, positions(token_rows.rows()));
        if (segments) {
            if (segments->size() != token_rows.rows()) throw std::invalid_argument("segment ids do not match sequence length");
            for (auto s : *segments)
                if (s != 0 && s != 1) throw std::invalid_argument("segment ids must be 0 or 1");
            x = add(x, embedding_lookup(param("seg_emb"), *segments));
        }
        return x;
    }

    Tensor embed(std::span<const TokenId> ids, std::optional<std::span<const TokenId>> segments = std::nullopt) const {
        check_length(ids.size());
        return embed_rows(embedding_lookup(embeddings(), ids), segments);
    }

    Encoded encode_rows(const Tensor& x, std::vector<bool> key_padding, const ForwardContext& ctx) const {
        check_length(x.rows());
        if (key_padding.size() != x.rows()) throw std::invalid_argument("padding mask does not match sequence length");
        bool any = false;
        for (bool p : key_padding) any = any || !p;
        if (!any) throw std::invalid_argument("cannot encode a sequence made only of padding");
        Tensor h = drop(x, ctx);
        const auto mask = attention_mask(x.rows(), key_padding, false);
        for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
            const std::string p = "enc." + std::to_string(l) + ".";
            h = layer_norm(add(h, drop(attention(p + "attn.", h, h, mask, ctx), ctx)), param(p + "ln1.gain"),
                           param(p + "ln1.bias"));
            h = layer_norm(add(h, drop(feed_forward(p + "ff.", h, ctx), ctx)), param(p + "ln2.gain"),
                           param(p + "ln2.bias"));
        }
        return {h, std::move(key_padding)};
    }

    Encoded encode(std::span<const TokenId> ids, const ForwardContext& ctx = {},
                   std::optional<std::span<const TokenId>> segments = std::nullopt) const {
        if (ids.empty()) throw std::invalid_argument("cannot encode an empty sequence");
        return encode_rows(embed(ids, segments), padding_of(ids), ctx);
    }

    // Logits (prefix length x vocab) from decoder input rows (embedded prefix, no positions).
    Tensor decode_rows(const Encoded& enc, const Tensor& prefix_rows, const ForwardContext& ctx) const {
        const std::size_t k = prefix_rows.rows();
        if (k == 0) throw std::invalid_argument("decoder prefix must not be empty");
        Tensor h = drop(embed_rows(prefix_rows), ctx);
        const auto self_mask = attention_mask(k, std::vector<bool>(k, false), true);
        std::vector<bool> cross_mask(k * enc.key_padding.size());
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < enc.key_padding.size(); ++j) cross_mask[i * enc.key_padding.size() + j] = enc.key_padding[j];
        for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
            const std::string p = "dec." + std::to_string(l) + ".";
            h = layer_norm(add(h, drop(attention(p + "self.", h, h, self_mask, ctx), ctx)), param(p + "ln1.gain"),
                           param(p + "ln1.bias"));
            h = layer_norm(add(h, drop(attention(p + "cross.", h, enc.states, cross_mask, ctx), ctx)),
                           param(p + "ln2.gain"), param(p + "ln2.bias"));
            h = layer_norm(add(h, drop(feed_forward(p + "ff.", h, ctx), ctx)), param(p + "ln3.gain"),
                           param(p + "ln3.bias"));
        }
        return matmul_transposed(h, embeddings());
    }

    Tensor decode_logits(const Encoded& enc, std::span<const TokenId> prefix, const ForwardContext& ctx = {}) const {
        if (prefix.empty()) throw std::invalid_argument("decoder prefix must not be empty");
        check_length(prefix.size());
        return decode_rows(enc, embedding_lookup(embeddings(), prefix), ctx);
    }

    // Two-class logits [distinct, similar] from the [CLS] output of an encoded pair.
    Tensor theme_logits(const Encoded& enc, const ForwardContext& ctx = {}) const {
        Tensor cls = slice_rows(enc.states, 0, 1);
        Tensor hidden = relu(add_row_vector(matmul(cls, param("theme.1.weight")), param("theme.1.bias")));
        return add_row_vector(matmul(drop(hidden, ctx), param("theme.2.weight")), param("theme.2.bias"));
    }

    Tensor theme_logits(std::span<const TokenId> packed, std::span<const TokenId> segments,
                        const ForwardContext& ctx = {}) const {
        if (packed.empty() || packed[0] != kCls) throw std::invalid_argument("theme input must begin with [CLS]");
        return theme_logits(encode(packed, ctx, segments), ctx);
    }

    // Probabilities indexed by label: [0] = distinct, [1] = similar.
    Tensor theme_classify(std::span<const TokenId> packed, std::span<const TokenId> segments) const {
        return softmax(theme_logits(packed, segments));
    }

    static std::vector<bool> padding_of(std::span<const TokenId> ids) {
        std::vector<bool> pad(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) pad[i] = ids[i] == kPad;
        return pad;
    }

private:
    void check_length(std::size_t len) const {
        if (len > cfg_.max_positions)
            throw std::invalid_argument("sequence of length " + std::to_string(len) + " exceeds max_positions " +
                                        std::to_string(cfg_.max_positions));
    }

    void add_param(const std::string& name, Shape shape, Rng& rng, double fill) {
        Tensor t = Tensor::zeros(std::move(shape), true);
        auto d = t.mutable_data();
        if (std::isnan(fill))
            for (auto& x : d) x = rng.normal(0.0, 0.02);
        else
            std::fill(d.begin(), d.end(), fill);
        index_.emplace(name, params_.size());
        params_.emplace_back(name, std::move(t));
    }

    void add_linear(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
        add_param(prefix + "weight", {in, out}, rng, std::nan(""));
        add_param(prefix + "bias", {out}, rng, 0.0);
    }

    void add_norm(const std::string& prefix, std::size_t n, Rng& rng) {
        add_param(prefix + "gain", {n}, rng, 1.0);
        add_param(prefix + "bias", {n}, rng, 0.0);
    }

    void add_attention(const std::string& prefix, std::size_t n, Rng& rng) {
        for (const char* m : {"q.", "k.", "v.", "o."}) add_linear(prefix + m, n, n, rng);
    }

    void init(std::uint64_t seed) {
        Rng rng(seed);
        const std::size_t n = cfg_.hidden_size, f = cfg_.ff_size();
        add_param("tok_emb", {cfg_.vocab_size, n}, rng, std::nan(""));
        add_param("seg_emb", {2, n}, rng, std::nan(""));
        for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
            const std::string p = "enc." + std::to_string(l) + ".";
            add_attention(p + "attn.", n, rng);
            add_norm(p + "ln1.", n, rng);
            add_linear(p + "ff.1.", n, f, rng);
            add_linear(p + "ff.2.", f, n, rng);
            add_norm(p + "ln2.", n, rng);
        }
        for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
            const std::string p = "dec." + std::to_string(l) + ".";
            add_attention(p + "self.", n, rng);
            add_norm(p + "ln1.", n, rng);
            add_attention(p + "cross.", n, rng);
            add_norm(p + "ln2.", n, rng);
            add_linear(p + "ff.1.", n, f, rng);
            add_linear(p + "ff.2.", f, n, rng);
            add_norm(p + "ln3.", n, rng);
        }
        add_linear("theme.1.", n, n, rng);
        add_linear("theme.2.", n, 2, rng);

        pos_table_.assign(cfg_.max_positions * n, 0.0);
        for (std::size_t pos = 0; pos < cfg_.max_positions; ++pos)
            for (std::size_t i = 0; i < n; ++i) {
                const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(n));
                const double angle = static_cast<double>(pos) * freq;
                pos_table_[pos * n + i] = cfg_.positional_scale * (i % 2 == 0 ? std::sin(angle) : std::cos(angle));
            }
    }

    Tensor linear(const std::string& prefix, const Tensor& x) const {
        return add_row_vector(matmul(x, param(prefix + "weight")), param(prefix + "bias"));
    }

    Tensor drop(const Tensor& x, const ForwardContext& ctx) const {
        if (!ctx.training || cfg_.dropout == 0.0) return x;
        if (!ctx.rng) throw std::invalid_argument("training forward pass requires an rng for dropout");
        return dropout(x, cfg_.dropout, *ctx.rng, true);
    }

    Tensor feed_forward(const std::string& prefix, const Tensor& x, const ForwardContext& ctx) const {
        return linear(prefix + "2.", drop(relu(linear(prefix + "1.", x)), ctx));
    }

    static std::vector<bool> attention_mask(std::size_t q, const std::vector<bool>& key_padding, bool causal) {
        const std::size_t k = key_padding.size();
        std::vector<bool> mask(q * k);
        for (std::size_t i = 0; i < q; ++i)
            for (std::size_t j = 0; j < k; ++j) mask[i * k + j] = key_padding[j] || (causal && j > i);
        return mask;
    }

    Tensor attention(const std::string& prefix, const Tensor& queries, const Tensor& keys, const std::vector<bool>& mask,
                     const ForwardContext& ctx) const {
        const std::size_t heads = cfg_.num_heads, dh = cfg_.hidden_size / heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        Tensor q = linear(prefix + "q.", queries);
        Tensor k = linear(prefix + "k.", keys);
        Tensor v = linear(prefix + "v.", keys);
        std::vector<Tensor> outs;
        outs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
            Tensor kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
            Tensor vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
            Tensor probs = softmax(masked_fill(scale(matmul_transposed(qh, kh), inv_sqrt), mask, -1e9));
            if (ctx.attention_trace) ctx.attention_trace->push_back(probs.detach());
            outs.push_back(matmul(drop(probs, ctx), vh));
        }
        return linear(prefix + "o.", heads == 1 ? outs[0] : concat_cols(outs));
    }

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::map<std::string, std::size_t> index_;
    std::vector<double> pos_table_;
};

}  // namespace ted
