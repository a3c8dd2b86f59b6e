#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ted/checkpoint.hpp"
#include "ted/corpus.hpp"
#include "ted/errors.hpp"
#include "ted/metrics.hpp"
#include "ted/model.hpp"
#include "ted/objectives.hpp"
#include "ted/optimizer.hpp"
#include "ted/search.hpp"

namespace ted {

struct TrainConfig {
    double lr = 1e-4;
    std::size_t batch_size = 16;
    std::size_t epochs = 10;
    double dropout = 0.3;
    std::uint64_t seed = 1;
    std::size_t max_gen_len = 60;   // differentiable generation cap while finetuning
    std::size_t val_max_len = 60;   // greedy decoding cap for validation
    double tau = 0.1;
    bool rectify = true;
    double clip_norm = 1.0;
    std::size_t max_steps = 0;      // 0: run all epochs
    std::size_t theme_window = 32;  // tokens per theme-pair window
    std::size_t denoise_len = 0;    // 0: largest span whose corruption fits the encoder
    std::size_t eval_every = 1;     // validation interval in epochs; the last epoch is always validated

    static TrainConfig pretrain_defaults() { return {}; }
    static TrainConfig finetune_defaults() {
        TrainConfig c;
        c.lr = 2e-4;
        c.epochs = 1;
        return c;
    }

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
        if (!(tau > 0.0)) throw ConfigError("tau must be positive");
        if (max_gen_len == 0 || val_max_len == 0) throw ConfigError("generation caps must be at least 1");
        if (theme_window == 0) throw ConfigError("theme_window must be at least 1");
        if (eval_every == 0) throw ConfigError("eval_every must be at least 1");
    }

    OptimizerConfig optimizer() const {
        OptimizerConfig o;
        o.lr = lr;
        o.rectify = rectify;
        o.clip_norm = clip_norm;
        return o;
    }
};

struct PretrainExample {
    std::vector<TokenId> body;
    std::vector<TokenId> lead;
};

using MetricsSink = std::function<void(const nlohmann::json&)>;
using Detokenizer = std::function<std::string(std::span<const TokenId>)>;

// Space-separated decimal ids: scores id sequences directly as words.
inline std::string ids_as_words(std::span<const TokenId> ids) {
    std::string out;
    for (auto id : ids) {
        if (!out.empty()) out += ' ';
        out += std::to_string(id);
    }
    return out;
}

namespace detail {

inline std::vector<TokenId> clip(std::span<const TokenId> ids, std::size_t limit) {
    return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), limit))};
}

inline void require_finite_parameters(const Transformer& model, std::uint64_t step) {
    for (const auto& [name, t] : model.named_parameters())
        for (double x : t.data())
            if (!std::isfinite(x))
                throw InvariantError("non-finite value in parameter " + name + " after step " + std::to_string(step));
}

inline void emit(const MetricsSink& sink, nlohmann::json record) {
    if (sink) sink(record);
}

}  // namespace detail

// Encoder inputs must never start with the lead they are trained to produce.
inline void require_lead_removed(const PretrainExample& ex) {
    if (ex.body.size() >= ex.lead.size() && std::equal(ex.lead.begin(), ex.lead.end(), ex.body.begin()))
        throw InvariantError("pretraining encoder input begins with its own lead");
}

// Greedy-decodes every validation body and returns mean ROUGE-L F1 against its lead.
inline double validation_rouge_l(const Transformer& model, const std::vector<PretrainExample>& val, std::size_t max_len,
                                 const Detokenizer& detok = ids_as_words) {
    if (val.empty()) throw ConfigError("validation set is empty");
    double total = 0.0;
    const std::size_t limit = model.config().max_positions;
    for (const auto& ex : val) {
        const auto body = detail::clip(ex.body, limit);
        total += rouge_l(detok(greedy_decode(model, body, max_len)), detok(ex.lead)).f1;
    }
    return total / static_cast<double>(val.size());
}

// Teacher-forced pretraining loss without dropout, averaged over examples.
inline double mean_pretrain_loss(const Transformer& model, const std::vector<PretrainExample>& data) {
    NoGradGuard no_grad;
    const std::size_t limit = model.config().max_positions;
    double total = 0.0;
    for (const auto& ex : data)
        total += pretrain_loss(model, detail::clip(ex.body, limit), detail::clip(ex.lead, limit - 1)).item();
    return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

struct PretrainResult {
    Checkpoint best;
    Checkpoint last;
    std::vector<double> step_losses;
    std::uint64_t steps = 0;
};

inline PretrainResult pretrain(const ModelConfig& model_cfg, const std::vector<PretrainExample>& train,
                               const std::vector<PretrainExample>& val, const TrainConfig& cfg,
                               const MetricsSink& sink = {}, const Detokenizer& detok = ids_as_words) {
    cfg.validate();
    if (train.empty()) throw ConfigError("pretraining set is empty");
    if (val.empty()) throw ConfigError("validation set is empty");
    ModelConfig mc = model_cfg;
    mc.dropout = cfg.dropout;
    Transformer model(mc, cfg.seed);
    RAdam opt(model.parameters(), cfg.optimizer());
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const std::size_t limit = mc.max_positions;

    PretrainResult result;
    auto evaluate = [&](std::size_t epoch) {
        const double score = validation_rouge_l(model, val, cfg.val_max_len, detok);
        detail::emit(sink, {{"phase", "pretrain"}, {"step", result.steps}, {"epoch", epoch}, {"val_rougeL", score}});
        if (!result.best.best_metric || score > *result.best.best_metric) {
            result.best = capture(model, result.steps, &opt);
            result.best.best_metric = score;
        }
    };
    evaluate(0);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    bool done = cfg.max_steps != 0 && result.steps >= cfg.max_steps;
    for (std::size_t epoch = 1; epoch <= cfg.epochs && !done; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size() && !done; start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double inv = 1.0 / static_cast<double>(end - start);
            opt.zero_grad();
            double batch_loss = 0.0;
            ForwardContext ctx{true, &rng, nullptr};
            for (std::size_t i = start; i < end; ++i) {
                const auto& ex = train[order[i]];
                require_lead_removed(ex);
                Tensor loss = pretrain_loss(model, detail::clip(ex.body, limit), detail::clip(ex.lead, limit - 1), ctx);
                if (!std::isfinite(loss.item())) throw InvariantError("non-finite pretraining loss");
                backward(scale(loss, inv));
                batch_loss += loss.item() * inv;
            }
            opt.step();
            ++result.steps;
            detail::require_finite_parameters(model, result.steps);
            result.step_losses.push_back(batch_loss);
            detail::emit(sink, {{"phase", "pretrain"},
                                {"step", result.steps},
                                {"epoch", epoch},
                                {"loss", batch_loss},
                                {"grad_norm", opt.last_grad_norm()}});
            done = cfg.max_steps != 0 && result.steps >= cfg.max_steps;
        }
        if (done || epoch == cfg.epochs || epoch % cfg.eval_every == 0) evaluate(epoch);
    }
    result.last = capture(model, result.steps, &opt);
    result.last.best_metric = result.best.best_metric;
    return result;
}

struct FinetuneStep {
    double loss = 0.0;
    double theme = 0.0;
    double denoise = 0.0;
};

struct FinetuneResult {
    Checkpoint final;
    std::vector<FinetuneStep> steps;
};

// Unsupervised finetuning on raw article token sequences (no reference summaries).
inline FinetuneResult finetune(const std::vector<std::vector<TokenId>>& articles, const Checkpoint& pretrained,
                               const TrainConfig& cfg, const CorruptionSpec& corruption = {},
                               const std::optional<ModelConfig>& expected = std::nullopt, const MetricsSink& sink = {}) {
    cfg.validate();
    corruption.validate();
    if (expected) require_compatible(pretrained, *expected);
    std::vector<std::vector<TokenId>> usable;
    for (const auto& a : articles)
        if (a.size() >= 2) usable.push_back(a);
    if (usable.size() < 2) throw ConfigError("finetuning needs at least two articles of two or more tokens");

    Transformer model = restore_model(pretrained, cfg.dropout);
    RAdam opt(model.parameters(), cfg.optimizer());
    Rng rng(cfg.seed ^ 0x51ed27a3c0ffeeULL);
    const std::size_t limit = model.config().max_positions;
    const std::size_t gen_cap = std::min(cfg.max_gen_len, limit - 2);
    const std::size_t window = std::min(cfg.theme_window, (limit - 2) / 2);
    const std::size_t denoise_cap = cfg.denoise_len ? std::min(cfg.denoise_len, limit * 2 / 3) : limit * 2 / 3;
    std::vector<TokenId> noise_pool;
    for (const auto& a : usable) noise_pool.insert(noise_pool.end(), a.begin(), a.end());

    FinetuneResult result;
    std::vector<std::size_t> order(usable.size());
    std::iota(order.begin(), order.end(), 0);
    std::uint64_t step = 0;
    bool done = cfg.max_steps != 0 && step >= cfg.max_steps;
    for (std::size_t epoch = 1; epoch <= cfg.epochs && !done; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size() && !done; start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double inv = 1.0 / static_cast<double>(end - start);
            opt.zero_grad();
            FinetuneStep rec;
            ForwardContext ctx{true, &rng, nullptr};
            for (std::size_t i = start; i < end; ++i) {
                const auto d = detail::clip(usable[order[i]], limit);
                const auto summary = generate_differentiable(model, d, gen_cap, cfg.tau, rng, ctx);
                const auto pairs = sample_theme_pairs(usable, order[i], window, rng);
                const auto theme = theme_loss(model, pairs, summary, d, ctx);

                const std::size_t len = std::min(d.size(), denoise_cap);
                const std::size_t offset = rng.between(0, d.size() - len);
                const std::span<const TokenId> x(d.data() + offset, len);
                const auto noised = corrupt(x, noise_pool, corruption, rng);
                Tensor denoise = denoise_loss(model, x, noised, ctx);

                Tensor loss = combined_loss(theme.total, denoise);
                backward(scale(loss, inv));
                rec.loss += loss.item() * inv;
                rec.theme += theme.total.item() * inv;
                rec.denoise += denoise.item() * inv;
            }
            opt.step();
            ++step;
            detail::require_finite_parameters(model, step);
            result.steps.push_back(rec);
            detail::emit(sink, {{"phase", "finetune"},
                                {"step", step},
                                {"epoch", epoch},
                                {"loss", rec.loss},
                                {"theme", rec.theme},
                                {"denoise", rec.denoise},
                                {"grad_norm", opt.last_grad_norm()}});
            done = cfg.max_steps != 0 && step >= cfg.max_steps;
        }
    }
    result.final = capture(model, pretrained.step + step, &opt);
    result.final.tokenizer = pretrained.tokenizer;
    return result;
}

// Mean of consecutive non-overlapping windows.
inline std::vector<double> window_means(std::span<const double> values, std::size_t window) {
    std::vector<double> out;
    for (std::size_t i = 0; i + window <= values.size(); i += window)
        out.push_back(std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(i),
                                      values.begin() + static_cast<std::ptrdiff_t>(i + window), 0.0) /
                      static_cast<double>(window));
    return out;
}

}  // namespace ted
