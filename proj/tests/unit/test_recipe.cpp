#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "micro.hpp"
#include "tts/eval/evaluation.hpp"
#include "tts/nn/container.hpp"
#include "tts/recipe/recipe.hpp"
#include "tts/recipe/synthetic.hpp"

namespace fs = std::filesystem;
using namespace tts;
using recipe::RecipeError;
using recipe::StageStatus;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tts_recipe_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

// A pipeline small enough to run in seconds.
recipe::RecipeConfig tiny_config(const fs::path& exp) {
  return recipe::parse_config(R"(
    seed = 3
    corpus.n_train = 6
    corpus.n_valid = 2
    corpus.n_eval = 2
    model.embed_dim = 8
    model.encoder_units = 8
    model.decoder_units = 8
    model.prenet_units = 8
    model.att_dim = 8
    model.att_conv_channels = 2
    model.att_conv_kernel = 5
    model.postnet.layers = 1
    model.postnet.channels = 8
    train.epochs = 1
    synth.gl_iters = 4
    synth.maxlenratio = 3
    synth.minlenratio = 1
  )", {"exp_dir=" + exp.string()});
}

}  // namespace

// ---------------------------------------------------------------- data directories

TEST(DataDir, ParsesConsistentDirectory) {
  const auto d = fresh_dir("dd_ok");
  put(d / "text", "utt2 second one\nutt1 first\n");
  put(d / "wav.scp", "utt1 a.wav\nutt2 /abs/b.wav\n");
  const auto dd = recipe::parse_data_dir(d);
  ASSERT_EQ(dd.size(), 2u);
  EXPECT_EQ(dd.entries[0].id, "utt1");
  EXPECT_EQ(dd.entries[1].text, "second one");
  EXPECT_EQ(dd.entries[0].wav, d / "a.wav");
  EXPECT_EQ(dd.entries[1].wav, fs::path("/abs/b.wav"));
  EXPECT_FALSE(dd.has_spk_emb);
}

TEST(DataDir, MismatchNamesTheUtterance) {
  const auto d = fresh_dir("dd_mismatch");
  put(d / "text", "utt1 a\nutt2 b\nutt3 c\n");
  put(d / "wav.scp", "utt1 a.wav\nutt2 b.wav\n");
  const auto msg = error_of([&] { recipe::parse_data_dir(d); });
  EXPECT_NE(msg.find("utt3"), std::string::npos) << msg;
}

TEST(DataDir, DuplicateAndMissingFile) {
  const auto d = fresh_dir("dd_dup");
  put(d / "text", "utt1 a\nutt1 b\n");
  put(d / "wav.scp", "utt1 a.wav\n");
  EXPECT_NE(error_of([&] { recipe::parse_data_dir(d); }).find("utt1"), std::string::npos);
  fs::remove(d / "wav.scp");
  EXPECT_NE(error_of([&] { recipe::parse_data_dir(d); }).find("wav.scp"), std::string::npos);
  EXPECT_THROW(recipe::parse_data_dir(d / "nope"), RecipeError);
}

TEST(DataDir, SpeakerEmbeddingsMustCoverEveryUtterance) {
  const auto d = fresh_dir("dd_spk");
  put(d / "text", "a x\nb y\n");
  put(d / "wav.scp", "a a.wav\nb b.wav\n");
  put(d / "spk_emb.scp", "a a.emb\n");
  EXPECT_NE(error_of([&] { recipe::parse_data_dir(d); }).find("'b'"), std::string::npos);
  put(d / "spk_emb.scp", "a a.emb\nb b.emb\n");
  put(d / "a.emb", "0.5 -1 2e-1\n");
  const auto dd = recipe::parse_data_dir(d);
  EXPECT_TRUE(dd.has_spk_emb);
  EXPECT_EQ(recipe::read_embedding(*dd.entries[0].spk_emb), (std::vector<double>{0.5, -1.0, 0.2}));
  put(d / "b.emb", "0.5 oops\n");
  EXPECT_THROW(recipe::read_embedding(d / "b.emb"), RecipeError);
}

TEST(DataDir, LjspeechSplitSizes) {
  const auto root = fresh_dir("dd_lj");
  const std::pair<const char*, std::size_t> splits[] = {{"train", 12600}, {"valid", 250}, {"eval", 250}};
  std::size_t next = 1;
  for (const auto& [name, n] : splits) {
    std::vector<recipe::DataEntry> es;
    for (std::size_t i = 0; i < n; ++i, ++next) {
      char id[32];
      std::snprintf(id, sizeof id, "LJ%05zu", next);
      es.push_back({id, "printing in the only sense", fs::path("wavs") / (std::string(id) + ".wav"), std::nullopt});
    }
    recipe::write_data_dir(root / name, es);
  }
  EXPECT_EQ(recipe::parse_data_dir(root / "train").size(), 12600u);
  EXPECT_EQ(recipe::parse_data_dir(root / "valid").size(), 250u);
  EXPECT_EQ(recipe::parse_data_dir(root / "eval").size(), 250u);
}

TEST(DataDir, WriteSortsAndRejectsDuplicates) {
  const auto d = fresh_dir("dd_write");
  recipe::write_data_dir(d, {{"b", "two", "b.wav", std::nullopt}, {"a", "one", "a.wav", std::nullopt}});
  EXPECT_EQ(slurp(d / "text"), "a one\nb two\n");
  EXPECT_EQ(slurp(d / "wav.scp"), "a a.wav\nb b.wav\n");
  EXPECT_THROW(recipe::write_data_dir(d, {{"a", "x", "a.wav", std::nullopt}, {"a", "y", "b.wav", std::nullopt}}),
               RecipeError);
}

// ---------------------------------------------------------------- configuration

TEST(Config, ParsesFileAndOverrides) {
  const auto c = recipe::parse_config("seed = 7  # comment\n\ntrain.epochs=3\nmodel.postnet.layers = 1\n",
                                      {"train.epochs=5", "model_kind=transformer"});
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.epochs, 5u);
  EXPECT_EQ(c.model_kind, models::ModelKind::transformer);
  const auto j = c.model_json(11);
  EXPECT_EQ(j.at("postnet").at("layers"), 1);
  EXPECT_EQ(j.at("postnet").at("channels"), models::PostnetConfig{}.channels);
  EXPECT_EQ(j.at("vocab_size"), 11);
  EXPECT_EQ(j.at("n_mels"), c.mel.n_mels);
}

TEST(Config, RejectsUnknownAndMalformed) {
  EXPECT_NE(error_of([] { recipe::parse_config("trian.epochs = 3\n"); }).find("trian.epochs"), std::string::npos);
  EXPECT_NE(error_of([] { recipe::parse_config("model.decoder_unit = 3\n"); }).find("model.decoder_unit"),
            std::string::npos);
  EXPECT_THROW(recipe::parse_config("train.epochs = three\n"), RecipeError);
  EXPECT_THROW(recipe::parse_config("train.epochs = -1\n"), RecipeError);
  EXPECT_THROW(recipe::parse_config("just words\n"), RecipeError);
  EXPECT_THROW(recipe::parse_config("stage_start = -2\n"), RecipeError);
  EXPECT_THROW(recipe::parse_config("stage_end = 6\n"), RecipeError);
  EXPECT_THROW(recipe::parse_config("stage_start = 3\nstage_end = 2\n"), RecipeError);
  EXPECT_THROW(recipe::parse_config("model_kind = wavenet\n"), RecipeError);
  EXPECT_THROW(recipe::parse_config("data_source = datadir\n"), RecipeError);
}

TEST(Config, HashIgnoresStageRangeAndLocation) {
  const auto a = recipe::parse_config("");
  const auto b = recipe::parse_config("stage_start = 2\nstage_end = 3\nexp_dir = elsewhere\n");
  const auto c = recipe::parse_config("seed = 2\n");
  const auto d = recipe::parse_config("model.att_dim = 7\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_NE(a.hash(), d.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  // canonical() reparses to the same configuration.
  EXPECT_EQ(recipe::parse_config(d.canonical()).canonical(), d.canonical());
}

TEST(Config, Fnv1aReferenceValues) {
  // Published FNV-1a 64-bit test vectors.
  EXPECT_EQ(recipe::fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(recipe::fnv1a_hex("a"), "af63dc4c8601ec8c");
  EXPECT_EQ(recipe::fnv1a_hex("foobar"), "85944171f73967e8");
}

// ---------------------------------------------------------------- synthetic corpus

TEST(Synthetic, DeterministicAndDurationsConsistent) {
  recipe::SyntheticCorpusConfig cc;
  cc.n_train = 4;
  cc.n_valid = cc.n_eval = 1;
  const auto a = recipe::generate_corpus(cc), b = recipe::generate_corpus(cc);
  ASSERT_EQ(a.train.size(), 4u);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].text, b.train[i].text);
    EXPECT_EQ(a.train[i].wave.samples, b.train[i].wave.samples);
    const auto& u = a.train[i];
    ASSERT_EQ(u.char_samples.size(), u.text.size());
    const std::size_t total = std::accumulate(u.char_samples.begin(), u.char_samples.end(), std::size_t{0});
    EXPECT_EQ(u.wave.samples.size(), total + cc.hop / 2);
    for (std::size_t k = 0; k < u.text.size(); ++k) {
      const auto base = static_cast<double>(recipe::synthetic_voices(cc).at(u.text[k]).hops * cc.hop);
      EXPECT_LE(std::abs(static_cast<double>(u.char_samples[k]) - base), cc.jitter * cc.hop + 1.0);
    }
  }
  EXPECT_EQ(a.train[0].id, "syn_train_0001");
  EXPECT_EQ(a.eval[0].id, "syn_eval_0001");
  cc.seed = 2;
  EXPECT_NE(recipe::generate_corpus(cc).train[0].wave.samples, a.train[0].wave.samples);
}

TEST(Synthetic, TranscriberReadsCleanAudio) {
  recipe::SyntheticCorpusConfig cc;
  cc.n_train = 0;
  cc.n_valid = 0;
  cc.n_eval = 20;
  cc.min_words = 4;
  cc.max_words = 6;
  const auto corpus = recipe::generate_corpus(cc);
  const dsp::StftConfig sc{256, 64, 256};
  const dsp::MelConfig mc{20, 0.0, 4000.0, 8000, 256, 1e-10};
  const recipe::TemplateTranscriber asr(cc, sc, mc);
  eval::EditStats pooled;
  for (const auto& u : corpus.eval) pooled += eval::cer(u.text, asr.transcribe(u.wave));
  EXPECT_LT(pooled.cer(), 0.05);
  dsp::Waveform silence;
  silence.sample_rate = 8000;
  silence.samples.assign(4000, 0.0);
  EXPECT_EQ(asr.transcribe(silence), "");
}

// ---------------------------------------------------------------- stages

TEST(Stages, TrainWithoutFeaturesNamesStatsFile) {
  const auto exp = fresh_dir("no_feats");
  const auto r = recipe::run_stage(tiny_config(exp), 3);
  EXPECT_EQ(r.status, StageStatus::failed);
  EXPECT_NE(r.message.find("stats.ctr"), std::string::npos) << r.message;
  EXPECT_FALSE(fs::exists(recipe::marker_path(tiny_config(exp), 3)));
}

TEST(Stages, OutOfRangeStageFails) {
  const auto exp = fresh_dir("range");
  EXPECT_EQ(recipe::run_stage(tiny_config(exp), 6).status, StageStatus::failed);
  EXPECT_EQ(recipe::run_stage(tiny_config(exp), -2).status, StageStatus::failed);
}

TEST(Stages, SingleStageRangeGivesOneResult) {
  const auto exp = fresh_dir("single");
  auto cfg = tiny_config(exp);
  cfg.stage_start = cfg.stage_end = 2;
  const auto rs = recipe::run_stages(cfg);
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_EQ(rs[0].stage, 2);
  EXPECT_EQ(rs[0].status, StageStatus::failed);  // nothing upstream yet
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    exp_ = new fs::path(fresh_dir("pipeline"));
    results_ = new std::vector<recipe::StageResult>(recipe::run_stages(tiny_config(*exp_)));
  }
  static void TearDownTestSuite() {
    delete exp_;
    delete results_;
  }
  static fs::path* exp_;
  static std::vector<recipe::StageResult>* results_;
};
fs::path* Pipeline::exp_ = nullptr;
std::vector<recipe::StageResult>* Pipeline::results_ = nullptr;

TEST_F(Pipeline, AllStagesOkWithArtifacts) {
  ASSERT_EQ(results_->size(), 7u);
  for (const auto& r : *results_) {
    EXPECT_EQ(r.status, StageStatus::ok) << "stage " << r.stage << ": " << r.message;
    for (const auto& a : r.artifacts) EXPECT_TRUE(fs::exists(a)) << a;
    EXPECT_TRUE(fs::exists(recipe::marker_path(tiny_config(*exp_), r.stage)));
  }
  const fs::path& e = *exp_;
  EXPECT_EQ(recipe::parse_data_dir(e / "data" / "train").size(), 6u);
  EXPECT_TRUE(fs::exists(e / "synth" / "wav" / "syn_eval_0001.wav"));
  EXPECT_TRUE(fs::exists(e / "eval" / "transcripts" / "syn_eval_0002.txt"));
  const auto report = nlohmann::json::parse(slurp(e / "eval" / "report.json"));
  EXPECT_EQ(report.at("utterances").size(), 2u);
  EXPECT_TRUE(report.contains("corpus"));
  EXPECT_NE(slurp(e / "eval" / "report.txt").find("| CER"), std::string::npos);
  const auto marker = nlohmann::json::parse(slurp(recipe::marker_path(tiny_config(e), 3)));
  for (const char* k : {"config_hash", "input_hashes", "timestamp", "artifacts"}) EXPECT_TRUE(marker.contains(k)) << k;
}

TEST_F(Pipeline, FeaturesAreNormalizedWithTrainStats) {
  const auto feats = nn::read_container(*exp_ / "dump" / "train" / "feats.ctr");
  ASSERT_EQ(feats.arrays.size(), 6u);
  const std::size_t bins = feats.arrays.begin()->second.cols();
  std::vector<double> sum(bins, 0.0);
  std::size_t frames = 0;
  for (const auto& [id, m] : feats.arrays) {
    for (std::size_t t = 0; t < m.rows(); ++t) {
      for (std::size_t b = 0; b < bins; ++b) sum[b] += m(t, b);
    }
    frames += m.rows();
  }
  // float32 storage
  for (double s : sum) EXPECT_NEAR(s / static_cast<double>(frames), 0.0, 1e-4);
}

TEST_F(Pipeline, RerunSkipsAndConfigChangeRerunsOnlyAffectedStages) {
  const auto again = recipe::run_stages(tiny_config(*exp_));
  ASSERT_EQ(again.size(), 7u);
  for (const auto& r : again) EXPECT_EQ(r.status, StageStatus::skipped) << "stage " << r.stage;

  auto cfg = tiny_config(*exp_);
  cfg.set("synth.gl_iters", "5");
  const auto changed = recipe::run_stages(cfg);
  ASSERT_EQ(changed.size(), 7u);
  for (int s = -1; s <= 3; ++s) EXPECT_EQ(changed[static_cast<std::size_t>(s + 1)].status, StageStatus::skipped);
  EXPECT_EQ(changed[5].status, StageStatus::ok);  // synthesis
  EXPECT_EQ(changed[6].status, StageStatus::ok);  // its inputs changed

  const auto restored = recipe::run_stages(tiny_config(*exp_));
  EXPECT_EQ(restored[3].status, StageStatus::skipped);
  EXPECT_EQ(restored[5].status, StageStatus::ok);
}

TEST_F(Pipeline, SecondExperimentIsBitIdentical) {
  const auto other = fresh_dir("pipeline_twin");
  for (const auto& r : recipe::run_stages(tiny_config(other))) ASSERT_EQ(r.status, StageStatus::ok) << r.message;
  for (const char* f : {"train/metrics.jsonl", "eval/report.json", "eval/report.txt", "synth/outputs.json",
                        "dump/stats.ctr", "dump/train/feats.ctr", "data/lang/tokens.txt", "train/model.loss.best"}) {
    EXPECT_EQ(slurp(*exp_ / f), slurp(other / f)) << f;
  }
  EXPECT_EQ(recipe::hash_path(*exp_ / "synth" / "wav"), recipe::hash_path(other / "synth" / "wav"));
}

TEST_F(Pipeline, SynthesizeFromCheckpoint) {
  const fs::path ckpt = *exp_ / "train" / "model.loss.best";
  const fs::path out = *exp_ / "cli" / "hello.wav";
  recipe::SynthesizeOptions o;
  o.gl_iters = 4;
  o.decode.maxlenratio = 3.0;
  o.decode.minlenratio = 1.0;
  o.dump_align = true;
  const auto rep = recipe::cli_synthesize("Abc  de", ckpt, out, o);
  EXPECT_TRUE(fs::exists(out));
  ASSERT_TRUE(rep.alignment.has_value());
  EXPECT_EQ(rep.alignment->filename(), "hello.align.ctr");
  const auto al = nn::read_container(*rep.alignment);
  ASSERT_TRUE(al.contains("align.0"));
  EXPECT_EQ(al.at("align.0").cols(), 7u);  // "abc de" + <eos>
  EXPECT_GT(rep.frames, 0u);
  EXPECT_TRUE(rep.stopped || rep.hit_maxlen || rep.frames > 0);

  o.vocab = *exp_ / "data" / "lang" / "tokens.txt";
  EXPECT_NO_THROW(recipe::cli_synthesize("abc", ckpt, out, o));
  put(*exp_ / "cli" / "other_tokens.txt", "x\ny\n");
  o.vocab = *exp_ / "cli" / "other_tokens.txt";
  EXPECT_NE(error_of([&] { recipe::cli_synthesize("abc", ckpt, out, o); }).find("does not match"), std::string::npos);
}

TEST(Synthesize, EmptyTextFailsBeforeLoadingTheModel) {
  // The checkpoint does not exist, so only the text check can produce this message.
  const auto msg = error_of([] { recipe::cli_synthesize("   ", "/nonexistent/model", "/tmp/x.wav"); });
  EXPECT_NE(msg.find("empty"), std::string::npos) << msg;
  EXPECT_NE(error_of([] { recipe::cli_synthesize("abc", "/nonexistent/model", "/tmp/x.wav"); }).find("does not exist"),
            std::string::npos);
}

TEST(TeacherDurations, SumToFrameCount) {
  std::mt19937_64 rng(5);
  for (std::size_t r : {1u, 2u, 3u}) {
    auto cfg = fixtures::micro_tacotron2(9, 4);
    cfg.reduction_factor = r;
    const models::Tacotron2 teacher(cfg, 11);
    for (std::size_t T : {5u, 8u, 13u}) {
      const auto tokens = fixtures::random_tokens(4, 9, rng);
      const auto mel = fixtures::random_tensor(T, 4, rng);
      const auto d = recipe::teacher_durations(teacher, tokens, mel);
      ASSERT_EQ(d.size(), tokens.length());
      EXPECT_EQ(std::accumulate(d.begin(), d.end(), std::size_t{0}), T) << "r=" << r << " T=" << T;
    }
  }
}
