#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "phonodec/error.hpp"

namespace phonodec {

// The 11 imagined-speech prompts: 7 phonemes/syllables and 4 words.
enum class Token : int { IY, UW, PIY, TIY, DIY, M, N, PAT, POT, KNEW, GNAW };
inline constexpr std::size_t kNumTokens = 11;

inline constexpr std::array<Token, kNumTokens> kAllTokens = {
    Token::IY, Token::UW, Token::PIY, Token::TIY, Token::DIY, Token::M,
    Token::N,  Token::PAT, Token::POT, Token::KNEW, Token::GNAW};

// Declaration order is the row order of every latent stack.
enum class PhonCategory : int { Bilabial, Nasal, ConsonantPresent, HighBackUw, HighFrontIy, Voiced };
inline constexpr std::size_t kNumCategories = 6;

inline constexpr std::array<PhonCategory, kNumCategories> kAllCategories = {
    PhonCategory::Bilabial,   PhonCategory::Nasal,       PhonCategory::ConsonantPresent,
    PhonCategory::HighBackUw, PhonCategory::HighFrontIy, PhonCategory::Voiced};

inline constexpr std::array<std::string_view, kNumTokens> kTokenNames = {
    "iy", "uw", "piy", "tiy", "diy", "m", "n", "pat", "pot", "knew", "gnaw"};

inline constexpr std::array<std::string_view, kNumCategories> kCategoryNames = {
    "bilabial", "nasal", "consonant", "high_back_uw", "high_front_iy", "voiced"};

inline std::string_view token_name(Token t) { return kTokenNames[static_cast<std::size_t>(t)]; }
inline std::string_view category_name(PhonCategory c) { return kCategoryNames[static_cast<std::size_t>(c)]; }
inline std::size_t index_of(Token t) { return static_cast<std::size_t>(t); }
inline std::size_t index_of(PhonCategory c) { return static_cast<std::size_t>(c); }

inline Token token_from_index(std::size_t i) {
  if (i >= kNumTokens) throw ValidationError("token index out of range: " + std::to_string(i));
  return kAllTokens[i];
}

// Accepts "pat", "PAT", "/iy/" and similar spellings.
inline std::optional<Token> parse_token(std::string_view s) {
  std::string key;
  for (char c : s) {
    if (c == '/' || std::isspace(static_cast<unsigned char>(c))) continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  for (std::size_t i = 0; i < kNumTokens; ++i) {
    if (kTokenNames[i] == key) return kAllTokens[i];
  }
  return std::nullopt;
}

inline std::optional<PhonCategory> parse_category(std::string_view s) {
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    if (kCategoryNames[i] == s) return kAllCategories[i];
  }
  return std::nullopt;
}

using PhonLabels = std::array<bool, kNumCategories>;

// Presence of each category in each prompt, columns in PhonCategory order.
// Voicing follows the onset: p/t onsets are voiceless, everything else voiced.
inline constexpr std::array<PhonLabels, kNumTokens> kPhonTable = {{
    /* iy   */ {false, false, false, false, true, true},
    /* uw   */ {false, false, false, true, false, true},
    /* piy  */ {true, false, true, false, true, false},
    /* tiy  */ {false, false, true, false, true, false},
    /* diy  */ {false, false, true, false, true, true},
    /* m    */ {true, true, true, false, false, true},
    /* n    */ {false, true, true, false, false, true},
    /* pat  */ {true, false, true, false, false, false},
    /* pot  */ {true, false, true, false, false, false},
    /* knew */ {false, true, true, true, false, true},
    /* gnaw */ {false, true, true, false, false, true},
}};

inline const PhonLabels& derive_phonological_labels(Token t) { return kPhonTable[index_of(t)]; }

inline bool has_category(Token t, PhonCategory c) { return derive_phonological_labels(t)[index_of(c)]; }

}  // namespace phonodec
