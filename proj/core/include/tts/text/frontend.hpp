#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tts::text {

class TextError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::int64_t kPadId = 0;
inline constexpr std::int64_t kUnkId = 1;
inline constexpr std::int64_t kEosId = 2;
inline constexpr std::string_view kPad = "<pad>";
inline constexpr std::string_view kUnk = "<unk>";
inline constexpr std::string_view kEos = "<eos>";
// Word boundary for phoneme streams; the space character is stored as "<space>" in files.
inline constexpr std::string_view kWordBoundary = "<sp>";
inline constexpr std::string_view kSpaceToken = "<space>";

// Token table with <pad>=0, <unk>=1, <eos>=2 followed by user tokens in file order.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::int64_t add(const std::string& token);
  // Id of `token`, or kUnkId when absent.
  std::int64_t id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(std::int64_t id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // One token per line after the reserved ids; a line "<space>" denotes ' '.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  // User tokens only (reserved ids excluded), in id order.
  std::vector<std::string> user_tokens() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> index_;
};

enum class OovPolicy { char_fallback, unk };

struct Lexicon {
  std::map<std::string, std::vector<std::string>> entries;
  OovPolicy oov = OovPolicy::char_fallback;

  // "WORD PH1 PH2 ..." per line; words are lower-cased on load.
  static Lexicon load(const std::filesystem::path& path, OovPolicy oov = OovPolicy::char_fallback);
};

struct TokenSequence {
  std::vector<std::int64_t> ids;
  std::size_t length() const { return ids.size(); }
};

// Splits UTF-8 into code-point strings; throws TextError on malformed input.
std::vector<std::string> utf8_chars(std::string_view s);

// ASCII lower-casing, whitespace runs collapsed to one space, ends trimmed.
std::string normalize_text(std::string_view raw);

TokenSequence tokenize_chars(std::string_view normalized, const Vocabulary& vocab);
TokenSequence lexicon_g2p(std::string_view normalized, const Lexicon& lexicon, const Vocabulary& phn_vocab);

// Inverse of tokenize_chars for sequences without <unk>; a trailing <eos> is dropped.
std::string detokenize_chars(const TokenSequence& seq, const Vocabulary& vocab);

// Character vocabulary covering every code point in `texts` (sorted).
Vocabulary build_char_vocabulary(const std::vector<std::string>& texts);

}  // namespace tts::text
