#pragma once

// Narration tokenization and category-to-token matching.

#include <algorithm>
#include <cctype>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cobe {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// Splits on whitespace and ASCII punctuation; apostrophes and hyphens inside
/// a word are kept ("don't", "stir-fry").
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    while (!cur.empty() && (cur.back() == '\'' || cur.back() == '-')) cur.pop_back();
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    const bool inner = (ch == '\'' || ch == '-') && !cur.empty();
    if (std::isspace(c) || (std::ispunct(c) && !inner))
      flush();
    else
      cur.push_back(ch);
  }
  flush();
  return out;
}

namespace detail {

// A word together with its forms after dropping a trailing "s" or "es".
inline bool same_word(const std::string& a, const std::string& b, bool plural_stripping) {
  if (a == b) return true;
  if (!plural_stripping) return false;
  auto forms = [](const std::string& w) {
    std::vector<std::string> f{w};
    if (w.size() > 1 && w.back() == 's') f.push_back(w.substr(0, w.size() - 1));
    if (w.size() > 2 && w.ends_with("es")) f.push_back(w.substr(0, w.size() - 2));
    return f;
  };
  for (const auto& x : forms(a))
    for (const auto& y : forms(b))
      if (x == y) return true;
  return false;
}

}  // namespace detail

/// Position of the first token where the (possibly multi-word) category occurs
/// as a contiguous run of whole tokens, compared case-insensitively.
inline std::optional<std::size_t> find_token_match(std::string_view category,
                                                   std::span<const std::string> narration_tokens,
                                                   bool plural_stripping) {
  std::vector<std::string> cat;
  for (auto& w : tokenize(category)) cat.push_back(to_lower(w));
  if (cat.empty() || narration_tokens.size() < cat.size()) return std::nullopt;
  for (std::size_t start = 0; start + cat.size() <= narration_tokens.size(); ++start) {
    bool ok = true;
    for (std::size_t k = 0; ok && k < cat.size(); ++k)
      ok = detail::same_word(cat[k], to_lower(narration_tokens[start + k]), plural_stripping);
    if (ok) return start;
  }
  return std::nullopt;
}

/// Number of tokens the category spans once tokenized.
inline std::size_t category_length(std::string_view category) { return tokenize(category).size(); }

inline bool token_match(std::string_view category, std::span<const std::string> narration_tokens,
                        bool plural_stripping) {
  return find_token_match(category, narration_tokens, plural_stripping).has_value();
}

}  // namespace cobe
