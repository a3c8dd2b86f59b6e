#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <optional>
#include <regex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "ted/rng.hpp"
#include "ted/special_tokens.hpp"
#include "ted/text.hpp"

namespace ted {

// ==================== Cleaning ====================

namespace detail {

inline const std::vector<std::regex>& prefix_patterns() {
    static const std::string kMonth =
        "(?:Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|June?|July?|Aug(?:ust)?|Sep(?:t(?:ember)?)?|"
        "Oct(?:ober)?|Nov(?:ember)?|Dec(?:ember)?)\\.?";
    static const std::string kName = "[A-Z][A-Za-z.'\\-]+(?:\\s+[A-Z][A-Za-z.'\\-]+){0,3}";
    static const std::string kDate = kMonth + "\\s+\\d{1,2}(?:st|nd|rd|th)?,?\\s+\\d{4}";
    static const std::vector<std::regex> patterns = {
        // "New York (CNN) --", "LONDON, England (Reuters) --"
        std::regex("^\\s*[A-Z][A-Za-z.'\\- ]{0,40}(?:,\\s*[A-Z][A-Za-z.'\\- ]{0,30})?\\s*\\([A-Za-z.&' ]{1,30}\\)\\s*"
                   "(?:--|\xE2\x80\x94|:)\\s*"),
        // "(CNN) --"
        std::regex("^\\s*\\([A-Za-z.&' ]{1,30}\\)\\s*(?:--|\xE2\x80\x94|:)\\s*"),
        // "Adam Smith, June 3rd 2018:"
        std::regex("^\\s*" + kName + ",\\s*" + kDate + "\\s*(?::|--|\xE2\x80\x94)\\s*"),
        // "June 3rd 2018 --"
        std::regex("^\\s*" + kDate + "\\s*(?::|--|\xE2\x80\x94)\\s*"),
        // "By Adam Smith --"
        std::regex("^\\s*By\\s+" + kName + "\\s*(?:--|\xE2\x80\x94|\\|)\\s*"),
    };
    return patterns;
}

}  // namespace detail

// Strips leading media, byline and date prefixes. Patterns are applied until
// none matches, which makes the function idempotent.
inline std::string clean_article(std::string_view raw) {
    std::string text = trim(raw);
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& re : detail::prefix_patterns()) {
            std::smatch m;
            if (std::regex_search(text, m, re, std::regex_constants::match_continuous) && m.length(0) > 0 &&
                static_cast<std::size_t>(m.length(0)) < text.size()) {
                text = trim(std::string_view(text).substr(static_cast<std::size_t>(m.length(0))));
                changed = true;
            }
        }
    }
    return text;
}

// ==================== Sentence splitting ====================

namespace detail {

inline const std::unordered_set<std::string>& abbreviations() {
    static const std::unordered_set<std::string> abbrevs = {
        "mr",  "mrs", "ms",   "dr",   "prof", "st",   "jr",   "sr",   "gen",  "gov", "sen",  "rep",
        "lt",  "col", "sgt",  "capt", "cmdr", "adm",  "maj",  "pres", "rev",  "hon", "inc",  "corp",
        "co",  "ltd", "vs",   "no",   "jan",  "feb",  "mar",  "apr",  "jun",  "jul", "aug",  "sep",
        "sept", "oct", "nov", "dec",  "mt",   "ft",   "ave",  "blvd", "dept", "univ", "approx", "e.g",
        "i.e", "fig",
    };
    return abbrevs;
}

inline bool is_closing(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }
inline bool is_opening(char c) { return c == '"' || c == '\'' || c == '(' || c == '['; }

inline bool ends_sentence(const std::string& word) {
    std::size_t e = word.size();
    while (e > 0 && is_closing(word[e - 1])) --e;
    if (e == 0) return false;
    const char last = word[e - 1];
    if (last != '.' && last != '!' && last != '?') return false;
    if (last != '.') return true;
    // Strip the final period and any leading opening punctuation.
    std::size_t b = 0;
    while (b < e && is_opening(word[b])) ++b;
    std::string stem = word.substr(b, e - 1 - b);
    if (stem.empty()) return true;
    // Single-letter initials ("A.") and dotted acronyms ("U.S.").
    if (stem.size() == 1 && std::isalpha(static_cast<unsigned char>(stem[0]))) return false;
    if (stem.find('.') != std::string::npos) {
        bool dotted = true;
        for (std::size_t i = 0; i < stem.size(); ++i) {
            const bool expect_letter = i % 2 == 0;
            if (expect_letter != static_cast<bool>(std::isalpha(static_cast<unsigned char>(stem[i])))) dotted = false;
            if (!expect_letter && stem[i] != '.') dotted = false;
        }
        if (dotted) return false;
    }
    std::string lower;
    for (char c : stem) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return !abbreviations().contains(lower);
}

inline bool starts_sentence(const std::string& word) {
    std::size_t b = 0;
    while (b < word.size() && is_opening(word[b])) ++b;
    if (b == word.size()) return false;
    const auto c = static_cast<unsigned char>(word[b]);
    return std::isupper(c) || std::isdigit(c);
}

}  // namespace detail

// Splits on terminal punctuation followed by whitespace and a capitalised (or
// numeric) word, except after initials, dotted acronyms and listed
// abbreviations. Sentences are the input words joined by single spaces.
inline std::vector<std::string> split_sentences(std::string_view text) {
    const auto words = split_whitespace(text);
    std::vector<std::string> sentences;
    std::vector<std::string> current;
    for (std::size_t i = 0; i < words.size(); ++i) {
        current.push_back(words[i]);
        const bool last = i + 1 == words.size();
        if (last || (detail::ends_sentence(words[i]) && detail::starts_sentence(words[i + 1]))) {
            sentences.push_back(join(current, " "));
            current.clear();
        }
    }
    return sentences;
}

// ==================== Filtering ====================

struct FilterConfig {
    std::size_t lead_min_words = 10;
    std::size_t lead_max_words = 150;
    std::size_t body_min_words = 150;
    std::size_t body_max_words = 1200;
    double overlap_threshold = 0.65;
    std::size_t lead_sentence_count = 3;

    void validate() const {
        if (lead_min_words >= lead_max_words) throw std::invalid_argument("lead_min_words must be < lead_max_words");
        if (body_min_words >= body_max_words) throw std::invalid_argument("body_min_words must be < body_max_words");
        if (!(overlap_threshold >= 0.0 && overlap_threshold <= 1.0))
            throw std::invalid_argument("overlap_threshold must lie in [0, 1]");
        if (lead_sentence_count == 0) throw std::invalid_argument("lead_sentence_count must be positive");
    }
};

enum class Verdict { Pending, Accepted, TooFewSentences, TooFewLeadWords, TooManyLeadWords, BodyOutOfRange, LowOverlap };

inline const char* verdict_code(Verdict v) {
    switch (v) {
        case Verdict::Pending: return "Pending";
        case Verdict::Accepted: return "Accepted";
        case Verdict::TooFewSentences: return "TooFewSentences";
        case Verdict::TooFewLeadWords: return "TooFewLeadWords";
        case Verdict::TooManyLeadWords: return "TooManyLeadWords";
        case Verdict::BodyOutOfRange: return "BodyOutOfRange";
        case Verdict::LowOverlap: return "LowOverlap";
    }
    return "Unknown";
}

inline constexpr std::array<Verdict, 6> kAllVerdicts = {Verdict::Accepted,         Verdict::TooFewSentences,
                                                         Verdict::TooFewLeadWords,  Verdict::TooManyLeadWords,
                                                         Verdict::BodyOutOfRange,   Verdict::LowOverlap};

struct ArticleRecord {
    std::string id;
    std::string raw;
    std::string cleaned;
    std::vector<std::string> sentences;
    std::string lead;
    std::string body;
    Verdict verdict = Verdict::Pending;
    double overlap = 0.0;
};

// Cleans, splits and partitions an article into lead and body.
inline ArticleRecord make_record(std::string id, std::string raw, std::size_t lead_sentence_count = 3) {
    ArticleRecord rec;
    rec.id = std::move(id);
    rec.raw = std::move(raw);
    rec.cleaned = clean_article(rec.raw);
    rec.sentences = split_sentences(rec.cleaned);
    const std::size_t k = std::min(lead_sentence_count, rec.sentences.size());
    rec.lead = join({rec.sentences.begin(), rec.sentences.begin() + static_cast<std::ptrdiff_t>(k)}, " ");
    rec.body = join({rec.sentences.begin() + static_cast<std::ptrdiff_t>(k), rec.sentences.end()}, " ");
    return rec;
}

struct OverlapResult {
    double ratio = 0.0;
    bool degenerate = false;  // lead had no non-stopword types
};

// Fraction of unique non-stopword lead word types that also occur in the body.
inline OverlapResult overlap_ratio(std::string_view lead, std::string_view body,
                                   const std::unordered_set<std::string>& stopwords) {
    std::unordered_set<std::string> lead_types;
    for (auto& w : normalized_words(lead))
        if (!stopwords.contains(w)) lead_types.insert(std::move(w));
    if (lead_types.empty()) return {0.0, true};
    std::unordered_set<std::string> body_types;
    for (auto& w : normalized_words(body)) body_types.insert(std::move(w));
    std::size_t shared = 0;
    for (const auto& w : lead_types) shared += body_types.contains(w) ? 1 : 0;
    return {static_cast<double>(shared) / static_cast<double>(lead_types.size()), false};
}

// Applies the pretraining filter rules and records the first failing one.
// Sentence count is checked first: without a body the remaining rules are moot.
inline ArticleRecord filter_article(ArticleRecord rec, const FilterConfig& cfg,
                                    const std::unordered_set<std::string>& stopwords) {
    const std::size_t lead_words = count_words(rec.lead);
    const std::size_t body_words = count_words(rec.body);
    rec.overlap = overlap_ratio(rec.lead, rec.body, stopwords).ratio;
    if (rec.sentences.size() < cfg.lead_sentence_count + 1)
        rec.verdict = Verdict::TooFewSentences;
    else if (lead_words < cfg.lead_min_words)
        rec.verdict = Verdict::TooFewLeadWords;
    else if (lead_words > cfg.lead_max_words)
        rec.verdict = Verdict::TooManyLeadWords;
    else if (body_words < cfg.body_min_words || body_words > cfg.body_max_words)
        rec.verdict = Verdict::BodyOutOfRange;
    else if (!(rec.overlap > cfg.overlap_threshold))
        rec.verdict = Verdict::LowOverlap;
    else
        rec.verdict = Verdict::Accepted;
    return rec;
}

// ==================== Denoising corruption ====================

struct CorruptionSpec {
    double insertion_low = 0.40;
    double insertion_high = 0.50;
    double shuffle_fraction = 0.20;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(insertion_low >= 0.0 && insertion_low <= insertion_high))
            throw std::invalid_argument("insertion bounds must satisfy 0 <= low <= high");
        if (!(shuffle_fraction >= 0.0 && shuffle_fraction <= 1.0))
            throw std::invalid_argument("shuffle_fraction must lie in [0, 1]");
    }

    // Allowed corrupted length [lo, hi] for an input of n tokens. Falls back to
    // max(n + 1, lo) when rounding leaves the band empty (n = 1 or 3 at the
    // default rates).
    std::pair<std::size_t, std::size_t> length_band(std::size_t n) const {
        const double x = static_cast<double>(n);
        auto lo = static_cast<std::size_t>(std::ceil(x * (1.0 + insertion_low) - 1e-9));
        auto hi = static_cast<std::size_t>(std::floor(x * (1.0 + insertion_high) + 1e-9));
        lo = std::max(lo, n + 1);
        hi = std::max(hi, lo);
        return {lo, hi};
    }

    // Maximum displacement k, computed from the original length.
    std::size_t displacement_bound(std::size_t n) const {
        const auto k = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * shuffle_fraction - 1e-9));
        return std::max<std::size_t>(1, k);
    }
};

struct CorruptionTrace {
    std::vector<TokenId> noised;       // after insertion, before shuffling
    std::vector<bool> inserted;        // per position of `noised`
    std::vector<std::size_t> source;   // output[j] = noised[source[j]]
    std::vector<TokenId> output;
};

// Permutation with |source[j] - j| <= k: sort positions by i + U(0, k + 1),
// resampling if the bound is ever violated.
inline std::vector<std::size_t> bounded_shuffle(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::vector<double> keys(n);
    for (;;) {
        for (std::size_t i = 0; i < n; ++i) {
            order[i] = i;
            keys[i] = static_cast<double>(i) + rng.uniform(0.0, static_cast<double>(k) + 1.0);
        }
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
        bool ok = true;
        for (std::size_t j = 0; j < n && ok; ++j)
            ok = (order[j] > j ? order[j] - j : j - order[j]) <= k;
        if (ok) return order;
    }
}

inline CorruptionTrace corrupt_traced(std::span<const TokenId> tokens, std::span<const TokenId> noise_pool,
                                      const CorruptionSpec& spec, Rng& rng) {
    if (tokens.empty()) throw std::invalid_argument("corrupt: empty input sequence");
    if (noise_pool.empty()) throw std::invalid_argument("corrupt: empty noise pool");
    spec.validate();
    const std::size_t n = tokens.size();
    const auto [lo, hi] = spec.length_band(n);
    const std::size_t total = rng.between(lo, hi);

    // Choose which of the `total` slots hold noise, uniformly.
    std::vector<std::size_t> slots(total);
    for (std::size_t i = 0; i < total; ++i) slots[i] = i;
    rng.shuffle(slots.begin(), slots.end());
    CorruptionTrace trace;
    trace.inserted.assign(total, false);
    for (std::size_t i = 0; i < total - n; ++i) trace.inserted[slots[i]] = true;
    trace.noised.reserve(total);
    std::size_t next = 0;
    for (std::size_t i = 0; i < total; ++i)
        trace.noised.push_back(trace.inserted[i] ? noise_pool[rng.index(noise_pool.size())] : tokens[next++]);

    trace.source = bounded_shuffle(total, spec.displacement_bound(n), rng);
    trace.output.reserve(total);
    for (std::size_t j = 0; j < total; ++j) trace.output.push_back(trace.noised[trace.source[j]]);
    return trace;
}

inline std::vector<TokenId> corrupt(std::span<const TokenId> tokens, std::span<const TokenId> noise_pool,
                                    const CorruptionSpec& spec, Rng& rng) {
    return corrupt_traced(tokens, noise_pool, spec, rng).output;
}

// ==================== Theme pairs ====================

struct ThemeSample {
    std::vector<TokenId> a1, a2, b1;
    std::size_t article_a = 0, article_b = 0;
    std::size_t start_a = 0, start_b = 0;
};

// Two adjacent windows from `article` and one window from a different article.
inline ThemeSample sample_theme_pairs(const std::vector<std::vector<TokenId>>& dataset, std::size_t article,
                                      std::size_t window, Rng& rng) {
    if (dataset.size() < 2) throw std::invalid_argument("theme pairs need at least two articles");
    if (window == 0) throw std::invalid_argument("theme pair window must be positive");
    const auto& a = dataset.at(article);
    if (a.size() < 2) throw std::invalid_argument("article too short for two consecutive windows");
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (i != article && !dataset[i].empty()) others.push_back(i);
    if (others.empty()) throw std::invalid_argument("no other non-empty article for the negative window");

    ThemeSample s;
    s.article_a = article;
    const std::size_t wa = std::min(window, a.size() / 2);
    s.start_a = rng.between(0, a.size() - 2 * wa);
    s.a1.assign(a.begin() + static_cast<std::ptrdiff_t>(s.start_a), a.begin() + static_cast<std::ptrdiff_t>(s.start_a + wa));
    s.a2.assign(a.begin() + static_cast<std::ptrdiff_t>(s.start_a + wa),
                a.begin() + static_cast<std::ptrdiff_t>(s.start_a + 2 * wa));

    s.article_b = others[rng.index(others.size())];
    const auto& b = dataset[s.article_b];
    const std::size_t wb = std::min(window, b.size());
    s.start_b = rng.between(0, b.size() - wb);
    s.b1.assign(b.begin() + static_cast<std::ptrdiff_t>(s.start_b), b.begin() + static_cast<std::ptrdiff_t>(s.start_b + wb));
    return s;
}

// Picks the source article uniformly among those long enough.
inline ThemeSample sample_theme_pairs(const std::vector<std::vector<TokenId>>& dataset, std::size_t window, Rng& rng) {
    if (dataset.size() < 2) throw std::invalid_argument("theme pairs need at least two articles");
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (dataset[i].size() >= 2) eligible.push_back(i);
    if (eligible.empty()) throw std::invalid_argument("no article long enough for two consecutive windows");
    return sample_theme_pairs(dataset, eligible[rng.index(eligible.size())], window, rng);
}

struct PackedPair {
    std::vector<TokenId> ids;
    std::vector<TokenId> segments;
};

// [CLS] a [SEP] b with segment 0 over [CLS] a [SEP] and segment 1 over b.
inline PackedPair pack_pair(std::span<const TokenId> a, std::span<const TokenId> b) {
    PackedPair p;
    p.ids.reserve(a.size() + b.size() + 2);
    p.ids.push_back(kCls);
    p.ids.insert(p.ids.end(), a.begin(), a.end());
    p.ids.push_back(kSep);
    p.ids.insert(p.ids.end(), b.begin(), b.end());
    p.segments.assign(a.size() + 2, 0);
    p.segments.resize(p.ids.size(), 1);
    return p;
}

}  // namespace ted
