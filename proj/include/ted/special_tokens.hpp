#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace ted {

using TokenId = std::int32_t;

// Reserved ids shared by the tokenizer, the model and generation.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kStart = 1;
inline constexpr TokenId kSep = 2;
inline constexpr TokenId kCls = 3;
inline constexpr TokenId kEos = 4;
inline constexpr TokenId kNumSpecials = 5;

inline constexpr std::array<std::string_view, kNumSpecials> kSpecialNames = {
    "[PAD]", "[START]", "[SEP]", "[CLS]", "[EOS]"};

inline constexpr bool is_special(TokenId id) { return id >= 0 && id < kNumSpecials; }

}  // namespace ted
