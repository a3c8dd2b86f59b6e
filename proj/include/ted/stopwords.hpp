#pragma once

#include <array>
#include <string>
#include <string_view>
#include <unordered_set>

namespace ted {

// Fixed English stopword list used by the lead/body overlap filter.
inline constexpr std::array<std::string_view, 150> kEnglishStopwords = {
    "a",       "about",   "above",   "after",   "again",   "against", "all",     "also",    "am",
    "an",      "and",     "any",     "are",     "as",      "at",      "be",      "because", "been",
    "before",  "being",   "below",   "between", "both",    "but",     "by",      "can",     "could",
    "did",     "do",      "does",    "doing",   "down",    "during",  "each",    "even",    "ever",
    "few",     "for",     "from",    "further", "had",     "has",     "have",    "having",  "he",
    "her",     "here",    "hers",    "herself", "him",     "himself", "his",     "how",     "however",
    "i",       "if",      "in",      "into",    "is",      "it",      "its",     "itself",  "just",
    "last",    "least",   "less",    "like",    "many",    "may",     "me",      "might",   "more",
    "most",    "much",    "must",    "my",      "myself",  "never",   "no",      "nor",     "not",
    "now",     "of",      "off",     "on",      "once",    "one",     "only",    "or",      "other",
    "our",     "ours",    "out",     "over",    "own",     "per",     "said",    "same",    "say",
    "says",    "she",     "should",  "since",   "so",      "some",    "still",   "such",    "than",
    "that",    "the",     "their",   "theirs",  "them",    "then",    "there",   "these",   "they",
    "this",    "those",   "though",  "through", "to",      "too",     "under",   "until",   "up",
    "upon",    "us",      "very",    "was",     "we",      "were",    "what",    "when",    "where",
    "which",   "while",   "who",     "whom",    "why",     "will",    "with",    "would",   "yet",
    "you",     "your",    "yours",   "yourself", "yourselves", "within",
};

inline std::unordered_set<std::string> english_stopwords() {
    std::unordered_set<std::string> out;
    for (auto w : kEnglishStopwords) out.emplace(w);
    return out;
}

}  // namespace ted
