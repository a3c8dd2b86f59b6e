#pragma once

#include <vector>

#include "ted/rng.hpp"
#include "ted/special_tokens.hpp"
#include "ted/trainer.hpp"

namespace ted::synth {

// Articles over `content` non-special ids; the lead is every third body token.
inline std::vector<PretrainExample> synthetic_pretrain_corpus(std::size_t articles, std::size_t body_len,
                                                             std::size_t content, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<PretrainExample> out;
    for (std::size_t a = 0; a < articles; ++a) {
        PretrainExample ex;
        for (std::size_t i = 0; i < body_len; ++i)
            ex.body.push_back(static_cast<TokenId>(kNumSpecials + static_cast<TokenId>(rng.index(content))));
        for (std::size_t i = 0; i < body_len; i += 3) ex.lead.push_back(ex.body[i]);
        out.push_back(std::move(ex));
    }
    return out;
}

// Topic-structured articles: each article draws most tokens from its own topic's
// slice of the vocabulary, so windows of one article resemble each other more
// than windows of another.
inline std::vector<std::vector<TokenId>> synthetic_topic_articles(std::size_t articles, std::size_t len,
                                                                  std::size_t topics, std::size_t per_topic,
                                                                  std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<TokenId>> out;
    for (std::size_t a = 0; a < articles; ++a) {
        const std::size_t topic = a % topics;
        std::vector<TokenId> art;
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t t = rng.uniform() < 0.85 ? topic : rng.index(topics);
            art.push_back(static_cast<TokenId>(kNumSpecials + static_cast<TokenId>(t * per_topic + rng.index(per_topic))));
        }
        out.push_back(std::move(art));
    }
    return out;
}

}  // namespace ted::synth
