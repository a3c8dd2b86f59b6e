#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ted/text.hpp"

namespace ted {

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool empty_reference = false;

    static RougeScore from_counts(double overlap, double candidate_total, double reference_total) {
        RougeScore s;
        s.precision = candidate_total > 0 ? overlap / candidate_total : 0.0;
        s.recall = reference_total > 0 ? overlap / reference_total : 0.0;
        s.f1 = (s.precision + s.recall) > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
        return s;
    }
};

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& words,
                                                                    std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    if (words.size() < n) return counts;
    for (std::size_t i = 0; i + n <= words.size(); ++i)
        ++counts[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(i),
                                          words.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace detail

// Clipped n-gram overlap over lowercased alphanumeric words, no stemming.
inline RougeScore rouge_n(std::string_view candidate, std::string_view reference, std::size_t n) {
    if (n == 0) throw std::invalid_argument("rouge_n requires n >= 1");
    const auto cand = detail::ngram_counts(normalized_words(candidate), n);
    const auto ref = detail::ngram_counts(normalized_words(reference), n);
    std::size_t cand_total = 0, ref_total = 0, overlap = 0;
    for (const auto& [g, c] : cand) cand_total += c;
    for (const auto& [g, c] : ref) {
        ref_total += c;
        if (auto it = cand.find(g); it != cand.end()) overlap += std::min(c, it->second);
    }
    auto s = RougeScore::from_counts(static_cast<double>(overlap), static_cast<double>(cand_total),
                                     static_cast<double>(ref_total));
    s.empty_reference = normalized_words(reference).empty();
    return s;
}

// LCS over the flattened word sequences.
inline RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
    const auto cand = normalized_words(candidate);
    const auto ref = normalized_words(reference);
    auto s = RougeScore::from_counts(static_cast<double>(detail::lcs_length(cand, ref)),
                                     static_cast<double>(cand.size()), static_cast<double>(ref.size()));
    s.empty_reference = ref.empty();
    return s;
}

// Fraction of summary n-grams (with multiplicity) absent from the source.
// Undefined when the summary has fewer than n words.
inline std::optional<double> novel_ngram_proportion(std::string_view summary, std::string_view source, std::size_t n) {
    if (n == 0) throw std::invalid_argument("novel_ngram_proportion requires n >= 1");
    const auto sum_words = normalized_words(summary);
    if (sum_words.size() < n) return std::nullopt;
    const auto src = detail::ngram_counts(normalized_words(source), n);
    std::size_t total = 0, novel = 0;
    for (const auto& [g, c] : detail::ngram_counts(sum_words, n)) {
        total += c;
        if (!src.contains(g)) novel += c;
    }
    return static_cast<double>(novel) / static_cast<double>(total);
}

inline std::string lead_x(const std::vector<std::string>& sentences, std::size_t x) {
    if (x == 0) throw std::invalid_argument("lead_x requires x >= 1");
    const std::size_t k = std::min(x, sentences.size());
    return join({sentences.begin(), sentences.begin() + static_cast<std::ptrdiff_t>(k)}, " ");
}

// Per-example scores for an evaluation report row.
struct ExampleScores {
    RougeScore rouge1, rouge2, rougeL;
    std::array<std::optional<double>, 4> novel;  // n = 1..4
};

inline ExampleScores score_example(std::string_view summary, std::string_view reference, std::string_view source) {
    ExampleScores s;
    s.rouge1 = rouge_n(summary, reference, 1);
    s.rouge2 = rouge_n(summary, reference, 2);
    s.rougeL = rouge_l(summary, reference);
    for (std::size_t n = 1; n <= 4; ++n) s.novel[n - 1] = novel_ngram_proportion(summary, source, n);
    return s;
}

// Corpus scores are arithmetic means of per-example values; undefined novel
// fractions are skipped.
struct CorpusScores {
    std::size_t count = 0;
    double rouge1_f1 = 0.0, rouge2_f1 = 0.0, rougeL_f1 = 0.0;
    std::array<double, 4> novel{};
    std::array<std::size_t, 4> novel_count{};
};

inline CorpusScores aggregate(const std::vector<ExampleScores>& examples) {
    CorpusScores c;
    c.count = examples.size();
    for (const auto& e : examples) {
        c.rouge1_f1 += e.rouge1.f1;
        c.rouge2_f1 += e.rouge2.f1;
        c.rougeL_f1 += e.rougeL.f1;
        for (std::size_t n = 0; n < 4; ++n)
            if (e.novel[n]) {
                c.novel[n] += *e.novel[n];
                ++c.novel_count[n];
            }
    }
    if (c.count) {
        const double k = static_cast<double>(c.count);
        c.rouge1_f1 /= k;
        c.rouge2_f1 /= k;
        c.rougeL_f1 /= k;
    }
    for (std::size_t n = 0; n < 4; ++n)
        if (c.novel_count[n]) c.novel[n] /= static_cast<double>(c.novel_count[n]);
    return c;
}

}  // namespace ted
