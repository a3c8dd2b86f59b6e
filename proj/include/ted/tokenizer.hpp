#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ted/errors.hpp"
#include "ted/io.hpp"
#include "ted/special_tokens.hpp"

namespace ted {

// Splits text into merge units. A single space attaches to the following run
// of non-space bytes (" word"); any other whitespace forms its own unit. The
// concatenation of the units is the input, byte for byte.
inline std::vector<std::string_view> pretokenize(std::string_view text) {
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    std::vector<std::string_view> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        std::size_t j = i;
        if (text[i] == ' ' && i + 1 < n && !is_space(text[i + 1])) {
            j = i + 1;
            while (j < n && !is_space(text[j])) ++j;
        } else if (is_space(text[i])) {
            while (j < n && is_space(text[j]) && !(text[j] == ' ' && j + 1 < n && !is_space(text[j + 1]))) ++j;
            if (j == i) ++j;
        } else {
            while (j < n && !is_space(text[j])) ++j;
        }
        out.push_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

// Byte-level merge vocabulary. Ids 0..4 are the reserved specials, the next
// 256 ids are single-byte fallback pieces, then learned merges follow.
class TokenizerModel {
public:
    enum class PieceKind { Special, Byte, Merged };

    struct Merge {
        TokenId left;
        TokenId right;
        TokenId result;
    };

    static constexpr TokenId kFirstByteId = kNumSpecials;
    static constexpr std::size_t kBaseVocab = kNumSpecials + 256;

    TokenizerModel() {
        for (TokenId id = 0; id < kNumSpecials; ++id) add_piece(std::string(kSpecialNames[id]), PieceKind::Special);
        for (int b = 0; b < 256; ++b) add_piece(std::string(1, static_cast<char>(b)), PieceKind::Byte);
    }

    std::size_t vocab_size() const { return pieces_.size(); }
    const std::string& piece(TokenId id) const { return pieces_.at(static_cast<std::size_t>(id)); }
    PieceKind kind(TokenId id) const { return kinds_.at(static_cast<std::size_t>(id)); }
    const std::vector<Merge>& merges() const { return merges_; }
    // False when training stopped before the requested vocabulary size.
    bool reached_target() const { return reached_target_; }

    // Greedy pair-frequency training. Deterministic: pair ties go to the
    // lexicographically smaller (left, right) piece pair.
    static TokenizerModel train(const std::vector<std::string>& corpus, std::size_t target_vocab_size) {
        if (corpus.empty()) throw std::invalid_argument("tokenizer training corpus is empty");
        if (target_vocab_size <= kBaseVocab)
            throw std::invalid_argument("target vocabulary size must exceed " + std::to_string(kBaseVocab));
        TokenizerModel model;
        std::map<std::string, std::int64_t> unit_counts;
        for (const auto& doc : corpus)
            for (auto unit : pretokenize(doc)) ++unit_counts[std::string(unit)];

        std::vector<std::vector<TokenId>> words;
        std::vector<std::int64_t> counts;
        for (const auto& [unit, count] : unit_counts) {
            std::vector<TokenId> syms;
            for (unsigned char c : unit) syms.push_back(byte_id(c));
            words.push_back(std::move(syms));
            counts.push_back(count);
        }

        while (model.vocab_size() < target_vocab_size) {
            std::map<std::pair<TokenId, TokenId>, std::int64_t> pair_counts;
            for (std::size_t w = 0; w < words.size(); ++w)
                for (std::size_t i = 0; i + 1 < words[w].size(); ++i)
                    pair_counts[{words[w][i], words[w][i + 1]}] += counts[w];
            const std::pair<TokenId, TokenId>* best = nullptr;
            std::int64_t best_count = 0;
            for (const auto& [pair, count] : pair_counts) {
                if (count > best_count ||
                    (count == best_count && best && model.pair_less(pair, *best))) {
                    best = &pair;
                    best_count = count;
                }
            }
            if (!best || best_count < 2) break;
            const auto [left, right] = *best;
            std::string merged = model.piece(left) + model.piece(right);
            TokenId result;
            if (auto it = model.index_.find(merged); it != model.index_.end() && model.kind(it->second) != PieceKind::Special)
                result = it->second;
            else
                result = model.add_piece(std::move(merged), PieceKind::Merged);
            model.add_merge({left, right, result});
            for (auto& word : words) apply_merge(word, left, right, result);
        }
        model.reached_target_ = model.vocab_size() >= target_vocab_size;
        return model;
    }

    std::vector<TokenId> encode(std::string_view text) const {
        std::vector<TokenId> out;
        for (auto unit : pretokenize(text)) {
            std::vector<TokenId> syms;
            syms.reserve(unit.size());
            for (unsigned char c : unit) syms.push_back(byte_id(c));
            while (syms.size() > 1) {
                std::size_t best_rank = merges_.size();
                for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                    auto it = merge_rank_.find(pair_key(syms[i], syms[i + 1]));
                    if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
                }
                if (best_rank == merges_.size()) break;
                const auto& m = merges_[best_rank];
                apply_merge(syms, m.left, m.right, m.result);
            }
            out.insert(out.end(), syms.begin(), syms.end());
        }
        return out;
    }

    // Concatenates piece bytes; special tokens contribute nothing.
    std::string decode(const std::vector<TokenId>& ids) const {
        std::string out;
        for (TokenId id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size())
                throw std::invalid_argument("token id " + std::to_string(id) + " outside vocabulary of " +
                                            std::to_string(pieces_.size()));
            if (kinds_[static_cast<std::size_t>(id)] == PieceKind::Special) continue;
            out += pieces_[static_cast<std::size_t>(id)];
        }
        return out;
    }

    // ==================== Persistence ====================

    // Visible form of a piece: space is written as U+2581, printable ASCII
    // other than backslash is literal, every other byte is \xHH.
    static std::string escape_piece(std::string_view bytes) {
        static constexpr char kHex[] = "0123456789ABCDEF";
        std::string out;
        for (unsigned char c : bytes) {
            if (c == ' ') {
                out += "\xE2\x96\x81";
            } else if (c == '\\') {
                out += "\\\\";
            } else if (c > 0x20 && c < 0x7F) {
                out += static_cast<char>(c);
            } else {
                out += "\\x";
                out += kHex[c >> 4];
                out += kHex[c & 0xF];
            }
        }
        return out;
    }

    static std::string unescape_piece(std::string_view text) {
        auto hex = [](char c) -> int {
            if (c >= '0' && c <= '9') return c - '0';
            if (c >= 'A' && c <= 'F') return c - 'A' + 10;
            if (c >= 'a' && c <= 'f') return c - 'a' + 10;
            return -1;
        };
        std::string out;
        for (std::size_t i = 0; i < text.size();) {
            if (text.substr(i, 3) == "\xE2\x96\x81") {
                out += ' ';
                i += 3;
            } else if (text[i] == '\\') {
                if (i + 1 < text.size() && text[i + 1] == '\\') {
                    out += '\\';
                    i += 2;
                } else if (i + 3 < text.size() && text[i + 1] == 'x' && hex(text[i + 2]) >= 0 && hex(text[i + 3]) >= 0) {
                    out += static_cast<char>(hex(text[i + 2]) * 16 + hex(text[i + 3]));
                    i += 4;
                } else {
                    throw DataError("malformed escape in tokenizer piece: " + std::string(text));
                }
            } else {
                out += text[i++];
            }
        }
        return out;
    }

    std::string serialize() const {
        std::ostringstream os;
        os << "ted-tokenizer 1 " << pieces_.size() << ' ' << merges_.size() << '\n';
        for (std::size_t id = 0; id < pieces_.size(); ++id) {
            switch (kinds_[id]) {
                case PieceKind::Special: os << "special " << pieces_[id]; break;
                case PieceKind::Byte: os << "byte " << escape_piece(pieces_[id]); break;
                case PieceKind::Merged: os << "piece " << escape_piece(pieces_[id]); break;
            }
            os << '\n';
        }
        for (const auto& m : merges_) os << m.left << ' ' << m.right << ' ' << m.result << '\n';
        return os.str();
    }

    static TokenizerModel deserialize(const std::string& text) {
        std::istringstream is(text);
        std::string line;
        if (!std::getline(is, line)) throw DataError("tokenizer file is empty");
        std::istringstream header(line);
        std::string magic;
        int version = 0;
        std::size_t vocab = 0, num_merges = 0;
        if (!(header >> magic >> version >> vocab >> num_merges) || magic != "ted-tokenizer")
            throw DataError("tokenizer file has a malformed header: " + line);
        if (version != 1) throw DataError("unsupported tokenizer file version " + std::to_string(version));
        if (vocab < kBaseVocab) throw DataError("tokenizer vocabulary smaller than the reserved base");

        TokenizerModel model;
        for (std::size_t id = 0; id < vocab; ++id) {
            if (!std::getline(is, line)) throw DataError("tokenizer file truncated in piece table");
            const auto space = line.find(' ');
            if (space == std::string::npos) throw DataError("malformed piece line: " + line);
            const std::string kind = line.substr(0, space);
            const std::string body = line.substr(space + 1);
            if (id < kBaseVocab) {
                const std::string expected = id < static_cast<std::size_t>(kNumSpecials)
                                                 ? "special " + std::string(kSpecialNames[id])
                                                 : "byte " + escape_piece(model.pieces_[id]);
                if (line != expected) throw DataError("reserved piece " + std::to_string(id) + " mismatch: " + line);
                continue;
            }
            if (kind != "piece") throw DataError("unexpected piece kind '" + kind + "' at id " + std::to_string(id));
            model.add_piece(unescape_piece(body), PieceKind::Merged);
        }
        for (std::size_t k = 0; k < num_merges; ++k) {
            if (!std::getline(is, line)) throw DataError("tokenizer file truncated in merge table");
            std::istringstream ms(line);
            Merge m{};
            if (!(ms >> m.left >> m.right >> m.result)) throw DataError("malformed merge line: " + line);
            auto valid = [&](TokenId id) { return id >= kFirstByteId && static_cast<std::size_t>(id) < vocab; };
            if (!valid(m.left) || !valid(m.right) || !valid(m.result) ||
                model.piece(m.left) + model.piece(m.right) != model.piece(m.result))
                throw DataError("inconsistent merge rule: " + line);
            model.add_merge(m);
        }
        return model;
    }

    void save(const std::string& path) const { write_file_atomic(path, serialize()); }

    static TokenizerModel load(const std::string& path) { return deserialize(read_file(path)); }

    friend bool operator==(const TokenizerModel& a, const TokenizerModel& b) {
        if (a.pieces_ != b.pieces_ || a.kinds_ != b.kinds_ || a.merges_.size() != b.merges_.size()) return false;
        for (std::size_t i = 0; i < a.merges_.size(); ++i) {
            const auto &x = a.merges_[i], &y = b.merges_[i];
            if (x.left != y.left || x.right != y.right || x.result != y.result) return false;
        }
        return true;
    }

private:
    static TokenId byte_id(unsigned char c) { return kFirstByteId + static_cast<TokenId>(c); }

    static std::uint64_t pair_key(TokenId a, TokenId b) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
    }

    bool pair_less(const std::pair<TokenId, TokenId>& x, const std::pair<TokenId, TokenId>& y) const {
        const auto& xl = piece(x.first);
        const auto& yl = piece(y.first);
        if (xl != yl) return xl < yl;
        return piece(x.second) < piece(y.second);
    }

    // Replaces non-overlapping (left, right) occurrences scanning left to right.
    static void apply_merge(std::vector<TokenId>& syms, TokenId left, TokenId right, TokenId result) {
        std::size_t w = 0;
        for (std::size_t r = 0; r < syms.size();) {
            if (r + 1 < syms.size() && syms[r] == left && syms[r + 1] == right) {
                syms[w++] = result;
                r += 2;
            } else {
                syms[w++] = syms[r++];
            }
        }
        syms.resize(w);
    }

    TokenId add_piece(std::string bytes, PieceKind kind) {
        const auto id = static_cast<TokenId>(pieces_.size());
        if (kind != PieceKind::Special) index_.emplace(bytes, id);
        pieces_.push_back(std::move(bytes));
        kinds_.push_back(kind);
        return id;
    }

    void add_merge(const Merge& m) {
        merge_rank_.emplace(pair_key(m.left, m.right), merges_.size());
        merges_.push_back(m);
    }

    std::vector<std::string> pieces_;
    std::vector<PieceKind> kinds_;
    std::unordered_map<std::string, TokenId> index_;
    std::vector<Merge> merges_;
    std::unordered_map<std::uint64_t, std::size_t> merge_rank_;
    bool reached_target_ = true;
};

}  // namespace ted
