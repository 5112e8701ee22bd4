#include "tts/text/frontend.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace tts::text {
namespace {

std::string file_token(const std::string& tok) { return tok == " " ? std::string(kSpaceToken) : tok; }
std::string memory_token(const std::string& line) { return line == kSpaceToken ? std::string(" ") : line; }

}  // namespace

Vocabulary::Vocabulary() {
  for (auto r : {kPad, kUnk, kEos}) add(std::string(r));
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
  for (const auto& t : tokens) add(t);
}

std::int64_t Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) {
    throw TextError("duplicate vocabulary token '" + token + "'");
  }
  const auto id = static_cast<std::int64_t>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::int64_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw TextError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocabulary::user_tokens() const { return {tokens_.begin() + 3, tokens_.end()}; }

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw TextError("cannot open vocabulary file " + path.string());
  Vocabulary v;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    v.add(memory_token(line));
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw TextError("cannot write vocabulary file " + path.string());
  for (const auto& t : user_tokens()) os << file_token(t) << '\n';
}

Lexicon Lexicon::load(const std::filesystem::path& path, OovPolicy oov) {
  std::ifstream is(path);
  if (!is) throw TextError("cannot open lexicon file " + path.string());
  Lexicon lex;
  lex.oov = oov;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    std::vector<std::string> phones;
    for (std::string ph; ls >> ph;) phones.push_back(ph);
    if (phones.empty()) throw TextError(path.string() + ":" + std::to_string(lineno) + ": entry without phonemes");
    lex.entries[normalize_text(word)] = std::move(phones);
  }
  return lex;
}

std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    if (c < 0x80) len = 1;
    else if ((c >> 5) == 0x6) len = 2;
    else if ((c >> 4) == 0xe) len = 3;
    else if ((c >> 3) == 0x1e) len = 4;
    else throw TextError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    if (i + len > s.size()) throw TextError("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) {
        throw TextError("invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
      }
    }
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::string normalize_text(std::string_view raw) {
  utf8_chars(raw);  // validates
  std::string out;
  bool pending_space = false;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : ch);
  }
  if (out.empty()) throw TextError("text is empty after normalization");
  return out;
}

TokenSequence tokenize_chars(std::string_view normalized, const Vocabulary& vocab) {
  if (normalized.empty()) throw TextError("cannot tokenize empty text");
  TokenSequence seq;
  for (const auto& ch : utf8_chars(normalized)) seq.ids.push_back(vocab.id(ch));
  seq.ids.push_back(kEosId);
  return seq;
}

TokenSequence lexicon_g2p(std::string_view normalized, const Lexicon& lexicon, const Vocabulary& phn_vocab) {
  if (normalized.empty()) throw TextError("cannot convert empty text");
  // Reserved ids guarantee <unk> exists, so the unk policy never lacks a target id.
  TokenSequence seq;
  std::istringstream words{std::string(normalized)};
  bool first = true;
  for (std::string w; words >> w;) {
    if (!first) seq.ids.push_back(phn_vocab.id(std::string(kWordBoundary)));
    first = false;
    if (auto it = lexicon.entries.find(w); it != lexicon.entries.end()) {
      for (const auto& ph : it->second) seq.ids.push_back(phn_vocab.id(ph));
    } else if (lexicon.oov == OovPolicy::char_fallback) {
      for (const auto& ch : utf8_chars(w)) seq.ids.push_back(phn_vocab.id(ch));
    } else {
      seq.ids.push_back(kUnkId);
    }
  }
  seq.ids.push_back(kEosId);
  return seq;
}

std::string detokenize_chars(const TokenSequence& seq, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (seq.ids[i] == kEosId && i + 1 == seq.ids.size()) break;
    out += vocab.token(seq.ids[i]);
  }
  return out;
}

Vocabulary build_char_vocabulary(const std::vector<std::string>& texts) {
  std::set<std::string> chars;
  for (const auto& t : texts)
    for (auto& c : utf8_chars(t)) chars.insert(c);
  return Vocabulary(std::vector<std::string>(chars.begin(), chars.end()));
}

}  // namespace tts::text
