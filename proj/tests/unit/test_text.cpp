#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "tts/text/frontend.hpp"

namespace fs = std::filesystem;
using namespace tts::text;

namespace {

std::vector<std::int64_t> ids(const Vocabulary& v, std::initializer_list<const char*> toks) {
  std::vector<std::int64_t> out;
  for (const char* t : toks) out.push_back(v.id(t));
  return out;
}

fs::path temp_file(const std::string& name, const std::string& body) {
  const auto p = fs::temp_directory_path() / ("tts_text_test_" + name);
  std::ofstream(p, std::ios::binary) << body;
  return p;
}

}  // namespace

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize_text("Hello  World"), "hello world");
  EXPECT_EQ(normalize_text("A"), "a");
  EXPECT_EQ(normalize_text("  Mixed\tCASE  text "), "mixed case text");
  EXPECT_EQ(normalize_text("Dr. Smith, 42!"), "dr. smith, 42!");
  EXPECT_EQ(normalize_text("line\none\r\n"), "line one");
}

TEST(Normalize, EmptyAfterNormalizationIsAnError) {
  EXPECT_THROW(normalize_text(""), TextError);
  EXPECT_THROW(normalize_text(" \t\n "), TextError);
}

TEST(Normalize, NonAsciiPassesThrough) {
  EXPECT_EQ(normalize_text("Caf\xC3\xA9  OK"), "caf\xC3\xA9 ok");
  EXPECT_THROW(utf8_chars("\xC3"), TextError);
  EXPECT_EQ(utf8_chars("a\xC3\xA9z").size(), 3u);
}

TEST(Vocabulary, ReservedIdsAndLookup) {
  const Vocabulary v({"a", "b"});
  EXPECT_EQ(v.id(std::string(kPad)), kPadId);
  EXPECT_EQ(v.id(std::string(kUnk)), kUnkId);
  EXPECT_EQ(v.id(std::string(kEos)), kEosId);
  EXPECT_EQ(v.id("a"), 3);
  EXPECT_EQ(v.id("zz"), kUnkId);
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(v.size()); ++i) EXPECT_EQ(v.id(v.token(i)), i);
  EXPECT_THROW(Vocabulary({"a", "a"}), TextError);
}

TEST(Vocabulary, FileRoundTripWithSpace) {
  const Vocabulary v({" ", "a", "'"});
  const auto p = fs::temp_directory_path() / "tts_text_test_vocab.txt";
  v.save(p);
  std::ifstream in(p);
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first, std::string(kSpaceToken));
  const auto back = Vocabulary::load(p);
  EXPECT_EQ(back.tokens(), v.tokens());
  EXPECT_EQ(back.user_tokens(), (std::vector<std::string>{" ", "a", "'"}));
}

TEST(TokenizeChars, Examples) {
  const Vocabulary v({"a", "b"});
  EXPECT_EQ(tokenize_chars("ab", v).ids, ids(v, {"a", "b", "<eos>"}));
  EXPECT_EQ(tokenize_chars("a#b", v).ids, (std::vector<std::int64_t>{v.id("a"), 1, v.id("b"), kEosId}));
  EXPECT_THROW(tokenize_chars("", v), TextError);
}

TEST(TokenizeChars, RoundTripAndMonotoneLength) {
  std::mt19937_64 rng(3);
  const std::string alphabet = "abcdefgh ',.";
  std::vector<std::string> texts;
  for (int i = 0; i < 200; ++i) {
    std::string s;
    const int n = 1 + static_cast<int>(rng() % 30);
    for (int k = 0; k < n; ++k) s.push_back(alphabet[rng() % alphabet.size()]);
    try {
      texts.push_back(normalize_text(s));
    } catch (const TextError&) {
    }
  }
  const auto v = build_char_vocabulary(texts);
  for (const auto& t : texts) {
    const auto seq = tokenize_chars(t, v);
    EXPECT_EQ(seq.ids.back(), kEosId);
    EXPECT_EQ(seq.length(), utf8_chars(t).size() + 1);
    for (auto id : seq.ids) EXPECT_LT(id, static_cast<std::int64_t>(v.size()));
    EXPECT_EQ(detokenize_chars(seq, v), t);
    EXPECT_GE(tokenize_chars(t + "a", v).length(), seq.length());
  }
}

TEST(CharVocabulary, SortedAndComplete) {
  const auto v = build_char_vocabulary({"ba c", "cab"});
  EXPECT_EQ(v.user_tokens(), (std::vector<std::string>{" ", "a", "b", "c"}));
}

TEST(Lexicon, LookupAndBoundaries) {
  Lexicon lex;
  lex.entries["cat"] = {"K", "AE", "T"};
  const Vocabulary phn({"K", "AE", "T", std::string(kWordBoundary), "z", "o", "r", "p"});
  EXPECT_EQ(lexicon_g2p("cat", lex, phn).ids, ids(phn, {"K", "AE", "T", "<eos>"}));
  EXPECT_EQ(lexicon_g2p("cat cat", lex, phn).ids, ids(phn, {"K", "AE", "T", "<sp>", "K", "AE", "T", "<eos>"}));
  EXPECT_EQ(lexicon_g2p("zorp", lex, phn).ids, ids(phn, {"z", "o", "r", "p", "<eos>"}));
}

TEST(Lexicon, UnkPolicyAndFile) {
  const auto p = temp_file("lex.txt", "CAT K AE T\nDog D AO G\n\n");
  auto lex = Lexicon::load(p, OovPolicy::unk);
  ASSERT_EQ(lex.entries.count("dog"), 1u);
  EXPECT_EQ(lex.entries.at("dog"), (std::vector<std::string>{"D", "AO", "G"}));
  const Vocabulary phn({"K", "AE", "T", "D", "AO", "G", std::string(kWordBoundary)});
  EXPECT_EQ(lexicon_g2p("cat zorp", lex, phn).ids, (std::vector<std::int64_t>{phn.id("K"), phn.id("AE"), phn.id("T"),
                                                                              phn.id("<sp>"), kUnkId, kEosId}));
  EXPECT_THROW(lexicon_g2p("", lex, phn), TextError);
}
