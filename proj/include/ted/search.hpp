#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "ted/model.hpp"
#include "ted/objectives.hpp"
#include "ted/special_tokens.hpp"

namespace ted {

// Returns next-token log-probabilities given the tokens generated so far
// ([START] excluded). Disallowed ids carry -infinity.
using NextTokenScorer = std::function<std::vector<double>(std::span<const TokenId>)>;

struct BeamHypothesis {
    std::vector<TokenId> tokens;  // [EOS] excluded
    double log_prob = 0.0;        // includes the [EOS] step when finished by [EOS]
    std::size_t steps = 0;        // scored tokens, [EOS] included
    bool finished = false;

    double normalized_score() const { return steps ? log_prob / static_cast<double>(steps) : 0.0; }
};

struct BeamResult {
    BeamHypothesis best;
    std::vector<BeamHypothesis> finished;
};

namespace detail {

inline std::size_t argmax_finite(const std::vector<double>& logp) {
    std::size_t best = logp.size();
    for (std::size_t i = 0; i < logp.size(); ++i)
        if (std::isfinite(logp[i]) && (best == logp.size() || logp[i] > logp[best])) best = i;
    if (best == logp.size()) throw std::runtime_error("scorer allowed no token");
    return best;
}

}  // namespace detail

inline std::vector<TokenId> greedy_decode(const NextTokenScorer& scorer, std::size_t max_len) {
    if (max_len == 0) throw std::invalid_argument("max_len must be at least 1");
    std::vector<TokenId> out;
    while (out.size() < max_len) {
        const auto id = static_cast<TokenId>(detail::argmax_finite(scorer(out)));
        if (id == kEos) break;
        out.push_back(id);
    }
    return out;
}

// Length-capped beam search. Candidates are ranked by cumulative log-probability
// (ties: earlier beam, then lower id); the answer is the finished hypothesis with
// the highest log-probability per scored token.
inline BeamResult beam_search(const NextTokenScorer& scorer, std::size_t beam_width, std::size_t max_len) {
    if (beam_width == 0) throw std::invalid_argument("beam width must be at least 1");
    if (max_len == 0) throw std::invalid_argument("max_len must be at least 1");
    struct Candidate {
        double log_prob;
        std::size_t beam;
        TokenId id;
    };
    std::vector<BeamHypothesis> live = {BeamHypothesis{}};
    BeamResult result;
    while (!live.empty()) {
        std::vector<Candidate> cands;
        for (std::size_t b = 0; b < live.size(); ++b) {
            const auto logp = scorer(live[b].tokens);
            for (std::size_t id = 0; id < logp.size(); ++id)
                if (std::isfinite(logp[id])) cands.push_back({live[b].log_prob + logp[id], b, static_cast<TokenId>(id)});
        }
        if (cands.empty()) throw std::runtime_error("scorer allowed no token");
        const std::size_t keep = std::min(beam_width, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Candidate& a, const Candidate& b) {
                              if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                              if (a.beam != b.beam) return a.beam < b.beam;
                              return a.id < b.id;
                          });
        std::vector<BeamHypothesis> next;
        for (std::size_t i = 0; i < keep; ++i) {
            const auto& c = cands[i];
            BeamHypothesis h = live[c.beam];
            h.log_prob = c.log_prob;
            ++h.steps;
            if (c.id == kEos) {
                h.finished = true;
                result.finished.push_back(std::move(h));
                continue;
            }
            h.tokens.push_back(c.id);
            if (h.tokens.size() >= max_len) {
                h.finished = true;
                result.finished.push_back(std::move(h));
            } else {
                next.push_back(std::move(h));
            }
        }
        live = std::move(next);
    }
    result.best = *std::max_element(result.finished.begin(), result.finished.end(),
                                    [](const BeamHypothesis& a, const BeamHypothesis& b) {
                                        return a.normalized_score() < b.normalized_score();
                                    });
    return result;
}

// Scorer backed by the model's decoder over a fixed encoding. Specials other than
// [EOS] are never produced, and [EOS] is not allowed as the first token.
inline NextTokenScorer model_scorer(const Transformer& model, const Encoded& enc) {
    const std::size_t vocab = model.config().vocab_size;
    return [&model, &enc, first = generation_mask(vocab, true), rest = generation_mask(vocab, false)](
               std::span<const TokenId> tokens) {
        NoGradGuard no_grad;
        std::vector<TokenId> prefix = {kStart};
        prefix.insert(prefix.end(), tokens.begin(), tokens.end());
        Tensor logits = model.decode_logits(enc, prefix);
        Tensor logp = log_softmax(slice_rows(logits, logits.rows() - 1, 1));
        const auto& mask = tokens.empty() ? first : rest;
        std::vector<double> out(logp.data().begin(), logp.data().end());
        for (std::size_t i = 0; i < out.size(); ++i)
            if (mask[i]) out[i] = -std::numeric_limits<double>::infinity();
        return out;
    };
}

// Caps max_len so [START] + tokens fits the decoder's positions.
inline std::size_t decodable_length(const Transformer& model, std::size_t max_len) {
    return std::min(max_len, model.config().max_positions - 1);
}

inline std::vector<TokenId> greedy_decode(const Transformer& model, std::span<const TokenId> article, std::size_t max_len) {
    NoGradGuard no_grad;
    const Encoded enc = model.encode(article);
    return greedy_decode(model_scorer(model, enc), decodable_length(model, max_len));
}

inline std::vector<TokenId> beam_decode(const Transformer& model, std::span<const TokenId> article, std::size_t beam_width,
                                        std::size_t max_len) {
    NoGradGuard no_grad;
    const Encoded enc = model.encode(article);
    return beam_search(model_scorer(model, enc), beam_width, decodable_length(model, max_len)).best.tokens;
}

}  // namespace ted
