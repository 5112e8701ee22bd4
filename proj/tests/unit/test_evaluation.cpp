#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>

#include "edit_oracle.hpp"
#include "tts/eval/evaluation.hpp"

namespace {

using namespace tts;
using eval::EditStats;

TEST(Cer, SpecExamples) {
  EXPECT_EQ(eval::cer("hello world", "hello world"), (EditStats{0, 0, 0, 11}));
  EXPECT_EQ(eval::cer("abc", "axc"), (EditStats{1, 0, 0, 3}));
  EXPECT_NEAR(eval::cer("abc", "axc").cer(), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(eval::cer("ab", "aab"), (EditStats{0, 0, 1, 2}));
  EXPECT_DOUBLE_EQ(eval::cer("ab", "aab").cer(), 0.5);
}

TEST(Cer, NormalizesAndCountsSpaces) {
  EXPECT_EQ(eval::cer("  Hello   World ", "hello world"), (EditStats{0, 0, 0, 11}));
  EXPECT_EQ(eval::cer("a b", "ab"), (EditStats{0, 1, 0, 3}));
  EXPECT_THROW(eval::cer("   ", "x"), std::invalid_argument);
  EXPECT_EQ(eval::cer("ab", " "), (EditStats{0, 2, 0, 2}));
}

TEST(Cer, CanExceedOne) {
  const auto s = eval::cer("a", "bcd");
  EXPECT_EQ(s, (EditStats{1, 0, 2, 1}));
  EXPECT_DOUBLE_EQ(s.cer(), 3.0);
}

TEST(Cer, PrefersSubstitutionAtEqualCost) {
  // "ab" -> "ba": two substitutions, or a deletion plus an insertion.
  EXPECT_EQ(eval::cer("ab", "ba"), (EditStats{2, 0, 0, 2}));
  EXPECT_EQ(eval::cer("abc", "b"), (EditStats{0, 2, 0, 3}));
  EXPECT_EQ(eval::cer("b", "abc"), (EditStats{0, 0, 2, 1}));
}

TEST(Cer, Utf8CountsCodePoints) { EXPECT_EQ(eval::cer("caf\xc3\xa9", "cafe"), (EditStats{1, 0, 0, 4})); }

TEST(Cer, MatchesExhaustiveEnumerationUpToLengthFive) {
  // The acceptance binary covers length 6; five keeps the unit suite quick.
  const auto strings = fixtures::all_strings("abc", 5);
  for (const auto& r : strings) {
    for (const auto& h : strings) {
      const auto want = fixtures::pick_preferred(fixtures::all_alignments(r, h), r.size());
      ASSERT_EQ(eval::edit_stats(fixtures::chars(r), fixtures::chars(h)), want) << r << " / " << h;
    }
  }
}

TEST(Cer, TotalEqualsLevenshtein) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> len(0, 40), sym(0, 4);
  for (int k = 0; k < 500; ++k) {
    std::string a(static_cast<std::size_t>(len(rng)), 'a'), b(static_cast<std::size_t>(len(rng)), 'a');
    for (auto& c : a) c = static_cast<char>('a' + sym(rng));
    for (auto& c : b) c = static_cast<char>('a' + sym(rng));
    const auto s = eval::edit_stats(fixtures::chars(a), fixtures::chars(b));
    ASSERT_EQ(s.errors(), fixtures::levenshtein(a, b));
    ASSERT_EQ(static_cast<long>(s.del) - static_cast<long>(s.ins), static_cast<long>(a.size()) - static_cast<long>(b.size()));
  }
}

TEST(Cer, IdenticalSuffixLeavesCountsUnchanged) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(1, 12), sym(0, 2);
  for (int k = 0; k < 200; ++k) {
    std::string a(static_cast<std::size_t>(len(rng)), 'a'), b(static_cast<std::size_t>(len(rng)), 'a'),
        suf(static_cast<std::size_t>(len(rng)), 'a');
    for (auto* s : {&a, &b, &suf})
      for (auto& c : *s) c = static_cast<char>('a' + sym(rng));
    const auto base = eval::edit_stats(fixtures::chars(a), fixtures::chars(b));
    const auto ext = eval::edit_stats(fixtures::chars(a + suf), fixtures::chars(b + suf));
    ASSERT_EQ(base.errors(), ext.errors()) << a << " " << b << " " << suf;
    ASSERT_EQ(ext.ref_len, base.ref_len + suf.size());
  }
}

TEST(DetectFailure, RepetitionOutlier) {
  const auto l = eval::detect_failure({0, 0, 36, 1000}, 0.02, 0.02);
  EXPECT_EQ(l.kind, eval::FailureKind::repetition);
  EXPECT_TRUE(l.repetition);
  EXPECT_FALSE(l.deletion);
  EXPECT_DOUBLE_EQ(l.ins_rate, 0.036);
}

TEST(DetectFailure, NominalRowsAndZeroStats) {
  EXPECT_EQ(eval::detect_failure({0, 0, 0, 10}).kind, eval::FailureKind::none);
  EXPECT_EQ(eval::detect_failure({5, 9, 18, 1000}).kind, eval::FailureKind::none);
  // Exactly at threshold does not fire.
  EXPECT_EQ(eval::detect_failure({0, 2, 0, 100}).kind, eval::FailureKind::none);
}

TEST(DetectFailure, DominantKindAndTie) {
  auto both = eval::detect_failure({0, 5, 5, 100});
  EXPECT_TRUE(both.deletion);
  EXPECT_TRUE(both.repetition);
  EXPECT_EQ(both.kind, eval::FailureKind::deletion);
  EXPECT_EQ(eval::detect_failure({0, 5, 7, 100}).kind, eval::FailureKind::repetition);
  EXPECT_EQ(eval::detect_failure({0, 8, 7, 100}).kind, eval::FailureKind::deletion);
  EXPECT_THROW(eval::detect_failure({0, 0, 0, 1}, 0.0, 0.02), std::invalid_argument);
}

// Returns the given timestamps in order.
eval::Clock scripted_clock(std::vector<double> ticks) {
  auto state = std::make_shared<std::pair<std::vector<double>, std::size_t>>(std::move(ticks), 0);
  return [state] { return state->first.at(state->second++); };
}

TEST(Rtf, PaperArithmetic) {
  const auto r = eval::measure_rtf({"u"}, [](const std::string&) { return 10.0; }, scripted_clock({0.0, 2.16}));
  ASSERT_EQ(r.rtf.size(), 1u);
  EXPECT_NEAR(r.rtf[0], 0.216, 1e-12);
  EXPECT_NEAR(r.mean, 0.216, 1e-12);
  EXPECT_EQ(r.sd, 0.0);
}

TEST(Rtf, ZeroElapsedGivesZero) {
  const auto r = eval::measure_rtf({"a", "b"}, [](const std::string&) { return 1.5; }, [] { return 7.0; });
  EXPECT_EQ(r.rtf, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(r.mean, 0.0);
}

TEST(Rtf, FixedIncrementsMatchClosedForm) {
  // Each call advances 1 s; audio 1, 2, 4 s -> RTF 1, 0.5, 0.25.
  double now = 0.0;
  std::map<std::string, double> audio{{"a", 1.0}, {"b", 2.0}, {"c", 4.0}};
  const auto r = eval::measure_rtf(
      {"a", "b", "c"}, [&](const std::string& id) { return audio.at(id); }, [&] { return now += 0.5; });
  ASSERT_EQ(r.rtf.size(), 3u);
  EXPECT_DOUBLE_EQ(r.rtf[0], 0.5);
  EXPECT_DOUBLE_EQ(r.rtf[1], 0.25);
  EXPECT_DOUBLE_EQ(r.rtf[2], 0.125);
  const double mean = 0.875 / 3.0;
  const double var = ((0.5 - mean) * (0.5 - mean) + (0.25 - mean) * (0.25 - mean) + (0.125 - mean) * (0.125 - mean)) / 2.0;
  EXPECT_NEAR(r.mean, mean, 1e-15);
  EXPECT_NEAR(r.sd, std::sqrt(var), 1e-15);
}

TEST(Rtf, ZeroLengthExcludedAndReported) {
  const auto r = eval::measure_rtf(
      {"a", "b"}, [](const std::string& id) { return id == "a" ? 0.0 : 2.0; }, scripted_clock({0, 1, 1, 2}));
  EXPECT_EQ(r.ids, (std::vector<std::string>{"b"}));
  EXPECT_EQ(r.excluded, (std::vector<std::string>{"a"}));
  EXPECT_DOUBLE_EQ(r.mean, 0.5);
  EXPECT_THROW(eval::measure_rtf({}, [](const std::string&) { return 1.0; }), std::invalid_argument);
}

TEST(Mos, Examples) {
  const auto flat = eval::mos_aggregate({4, 4, 4});
  EXPECT_DOUBLE_EQ(flat.mean, 4.0);
  ASSERT_TRUE(flat.ci95.has_value());
  EXPECT_EQ(*flat.ci95, 0.0);
  const auto spread = eval::mos_aggregate({3, 4, 5});
  EXPECT_DOUBLE_EQ(spread.mean, 4.0);
  EXPECT_NEAR(*spread.ci95, 1.96 / std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(*spread.ci95, 1.1316, 1e-4);
  const auto single = eval::mos_aggregate({5});
  EXPECT_DOUBLE_EQ(single.mean, 5.0);
  EXPECT_FALSE(single.ci95.has_value());
}

TEST(Mos, RejectsOutOfRange) {
  EXPECT_THROW(eval::mos_aggregate({0, 3}), std::invalid_argument);
  EXPECT_THROW(eval::mos_aggregate({6}), std::invalid_argument);
  EXPECT_THROW(eval::mos_aggregate({}), std::invalid_argument);
}

TEST(Mos, IntervalShrinksAsInverseSqrtN) {
  std::vector<int> base{2, 3, 4, 5};
  std::vector<int> four;
  for (int k = 0; k < 4; ++k) four.insert(four.end(), base.begin(), base.end());
  const double ci1 = *eval::mos_aggregate(base).ci95;
  const double ci4 = *eval::mos_aggregate(four).ci95;
  // Same empirical distribution; s changes only through the n-1 denominator.
  const double s1 = std::sqrt(5.0 / 3.0), s4 = std::sqrt(20.0 / 15.0);
  EXPECT_NEAR(ci1, 1.96 * s1 / 2.0, 1e-12);
  EXPECT_NEAR(ci4, 1.96 * s4 / 4.0, 1e-12);
}

std::vector<std::pair<std::string, std::string>> ten_refs() {
  std::vector<std::pair<std::string, std::string>> refs;
  for (int i = 0; i < 10; ++i) refs.emplace_back("utt" + std::to_string(i), std::string(static_cast<std::size_t>(5 + i), 'a' + i));
  return refs;
}

TEST(EvaluateCorpus, IdenticalTranscriptsGiveZero) {
  const auto refs = ten_refs();
  const auto rep = eval::evaluate_corpus(refs, [&](const std::string& id) -> std::optional<std::string> {
    for (const auto& [k, v] : refs)
      if (k == id) return v;
    return std::nullopt;
  });
  EXPECT_EQ(rep.pooled.errors(), 0u);
  EXPECT_EQ(rep.pooled.cer(), 0.0);
  EXPECT_TRUE(rep.missing.empty());
}

TEST(EvaluateCorpus, MissingTranscriptIsFullDeletion) {
  const auto refs = ten_refs();
  const auto dir = std::filesystem::temp_directory_path() / "tts_eval_missing";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  for (const auto& [id, text] : refs) {
    if (id == "utt3") continue;
    std::ofstream(dir / (id + ".txt")) << text << "\n";
  }
  const auto rep = eval::evaluate_corpus(refs, dir);
  std::size_t pooled = 0;
  for (const auto& [id, text] : refs) pooled += text.size();
  EXPECT_EQ(rep.missing, (std::vector<std::string>{"utt3"}));
  EXPECT_EQ(rep.pooled.del, 8u);
  EXPECT_EQ(rep.pooled.errors(), 8u);
  EXPECT_DOUBLE_EQ(rep.pooled.cer(), 8.0 / static_cast<double>(pooled));
  EXPECT_TRUE(rep.utterances[3].missing);
  EXPECT_EQ(rep.utterances[3].label.kind, eval::FailureKind::deletion);
  EXPECT_EQ(rep.deletions_flagged, 1u);
}

// Errors injected at known positions are recovered exactly and pooled, not averaged.
TEST(EvaluateCorpus, InjectedErrorsAreRecovered) {
  std::mt19937_64 rng(23);
  std::vector<std::pair<std::string, std::string>> refs;
  std::map<std::string, std::string> hyps;
  EditStats injected;
  double mean_per_utt = 0.0;
  for (int u = 0; u < 20; ++u) {
    // Distinct symbols so every injected edit is unambiguous.
    std::string ref;
    const std::size_t n = 10 + static_cast<std::size_t>(u);
    for (std::size_t k = 0; k < n; ++k) ref.push_back(static_cast<char>('a' + k % 26));
    std::string hyp = ref;
    const std::size_t subs = static_cast<std::size_t>(u % 3), dels = static_cast<std::size_t>(u % 2);
    const std::size_t ins = static_cast<std::size_t>(u % 4 == 0);
    for (std::size_t s = 0; s < subs; ++s) hyp[2 * s] = '0';
    if (dels) hyp.erase(hyp.size() - 1);
    if (ins) hyp.insert(hyp.begin() + 5, '9');
    const std::string id = "u" + std::to_string(100 + u);
    refs.emplace_back(id, ref);
    hyps[id] = hyp;
    injected += EditStats{subs, dels, ins, n};
    mean_per_utt += static_cast<double>(subs + dels + ins) / static_cast<double>(n) / 20.0;
  }
  const auto rep = eval::evaluate_corpus(refs, [&](const std::string& id) { return std::optional<std::string>(hyps.at(id)); });
  EXPECT_EQ(rep.pooled, injected);
  EXPECT_DOUBLE_EQ(rep.pooled.cer(), static_cast<double>(injected.errors()) / static_cast<double>(injected.ref_len));
  EXPECT_NE(rep.pooled.cer(), mean_per_utt);
  double lo = 1e9, hi = 0;
  for (const auto& u : rep.utterances) {
    lo = std::min(lo, u.stats.cer());
    hi = std::max(hi, u.stats.cer());
  }
  EXPECT_GE(rep.pooled.cer(), lo);
  EXPECT_LE(rep.pooled.cer(), hi);
}

TEST(EvaluateCorpus, TableAndJson) {
  eval::CorpusReport rep;
  rep.pooled = {4, 14, 36, 1000};
  const std::string table = eval::format_table(rep, "Tacotron2.v2");
  EXPECT_NE(table.find("Sub"), std::string::npos);
  EXPECT_NE(table.find("0.4"), std::string::npos);
  EXPECT_NE(table.find("1.4"), std::string::npos);
  EXPECT_NE(table.find("3.6"), std::string::npos);
  EXPECT_NE(table.find("5.4"), std::string::npos);
  const auto j = eval::to_json(rep);
  EXPECT_EQ(j["corpus"]["ins"], 36);
  EXPECT_DOUBLE_EQ(j["corpus"]["cer"].get<double>(), 0.054);
}

}  // namespace
