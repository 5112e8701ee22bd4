#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "micro.hpp"
#include "tts/attention/attention.hpp"
#include "tts/models/models.hpp"
#include "tts/nn/gradcheck.hpp"

namespace {

using namespace tts;
using models::DurationSequence;
using nn::Tensor;

constexpr std::size_t kVocab = 8;
constexpr std::size_t kMels = 3;

text::TokenSequence four_tokens() { return text::TokenSequence{{3, 4, 5, text::kEosId}}; }

Tensor targets(std::size_t frames, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  return fixtures::random_tensor(frames, kMels, rng);
}

void expect_stochastic(const Tensor& a) { EXPECT_NO_THROW(attention::check_alignment(a, 1e-6)); }

// Squared error on both mel outputs plus a random linear functional of every alignment,
// so attention parameters receive non-trivial gradients.
nn::Var probe_loss(nn::Tape& t, const models::ForwardGraph& g, const Tensor& y) {
  nn::Var target = t.constant(y);
  nn::Var l = nn::add(nn::mean(nn::square(nn::sub(g.mel_before, target))),
                      nn::mean(nn::square(nn::sub(g.mel_after, target))));
  if (g.stop_logits.valid()) l = nn::add(l, nn::mean(nn::square(g.stop_logits)));
  std::mt19937_64 rng(99);
  for (const auto& a : g.alignments) {
    Tensor w = fixtures::random_tensor(a.rows(), a.cols(), rng);
    l = nn::add(l, nn::sum(nn::mul(a, t.constant(w))));
  }
  if (g.log_durations.valid()) l = nn::add(l, nn::mean(nn::square(g.log_durations)));
  return l;
}

TEST(Tacotron2, ShapesAndStochasticAlignment) {
  models::Tacotron2 m(fixtures::micro_tacotron2(kVocab, kMels), 3);
  const auto out = models::tacotron2_forward(m.config(), m.params(), four_tokens(), targets(8));
  EXPECT_EQ(out.mel_before.rows(), 8u);
  EXPECT_EQ(out.mel_before.cols(), kMels);
  EXPECT_EQ(out.mel_after.shape(), out.mel_before.shape());
  EXPECT_EQ(out.stop_logits.size(), 8u);
  ASSERT_EQ(out.alignments.size(), 1u);
  EXPECT_EQ(out.alignments[0].rows(), 8u);
  EXPECT_EQ(out.alignments[0].cols(), 4u);
  expect_stochastic(out.alignments[0]);
}

TEST(Tacotron2, ReductionFactorShapes) {
  auto cfg = fixtures::micro_tacotron2(kVocab, kMels);
  cfg.reduction_factor = 2;
  models::Tacotron2 m(cfg, 3);
  const auto out = models::tacotron2_forward(cfg, m.params(), four_tokens(), targets(8));
  EXPECT_EQ(out.mel_before.rows(), 8u);
  EXPECT_EQ(out.stop_logits.size(), 4u);
  EXPECT_EQ(out.alignments[0].rows(), 4u);
  EXPECT_THROW(models::tacotron2_forward(cfg, m.params(), four_tokens(), targets(7)), nn::ShapeError);
}

TEST(Tacotron2, ForwardAttentionKindsKeepRowsStochastic) {
  for (auto kind : {attention::AttentionKind::forward, attention::AttentionKind::forward_ta}) {
    auto cfg = fixtures::micro_tacotron2(kVocab, kMels);
    cfg.attention = kind;
    models::Tacotron2 m(cfg, 5);
    const auto out = models::tacotron2_forward(cfg, m.params(), four_tokens(), targets(8));
    expect_stochastic(out.alignments[0]);
  }
}

TEST(Tacotron2, ZeroParametersStayFinite) {
  models::Tacotron2 m(fixtures::micro_tacotron2(kVocab, kMels), 3);
  for (auto& [name, p] : m.params()) std::fill(p.values().begin(), p.values().end(), 0.0);
  const auto out = models::tacotron2_forward(m.config(), m.params(), four_tokens(), targets(8));
  EXPECT_TRUE(out.mel_after.all_finite());
  EXPECT_TRUE(out.mel_before.all_finite());
  for (double s : out.stop_logits) EXPECT_TRUE(std::isfinite(s));
}

TEST(Tacotron2, FixedSeedIsBitReproducible) {
  const auto cfg = fixtures::micro_tacotron2(kVocab, kMels);
  const auto a = models::tacotron2_forward(cfg, models::init_tacotron2(cfg, 11), four_tokens(), targets(8));
  const auto b = models::tacotron2_forward(cfg, models::init_tacotron2(cfg, 11), four_tokens(), targets(8));
  EXPECT_EQ(a.mel_after.values(), b.mel_after.values());
  EXPECT_EQ(a.stop_logits, b.stop_logits);
  EXPECT_EQ(a.alignments[0].values(), b.alignments[0].values());
}

TEST(Tacotron2, RejectsOutOfRangeTokens) {
  models::Tacotron2 m(fixtures::micro_tacotron2(kVocab, kMels), 3);
  EXPECT_THROW(models::tacotron2_forward(m.config(), m.params(), text::TokenSequence{{3, 8}}, targets(4)),
               std::out_of_range);
  EXPECT_THROW(models::tacotron2_forward(m.config(), m.params(), text::TokenSequence{{-1}}, targets(4)),
               std::out_of_range);
}

TEST(Tacotron2, SpeakerEmbeddingShiftsOutputs) {
  auto cfg = fixtures::micro_tacotron2(kVocab, kMels);
  cfg.spk_embed_dim = 3;
  models::Tacotron2 m(cfg, 3);
  const models::SpeakerEmbedding s1{1.0, 0.0, -1.0}, s2{0.0, 2.0, 0.5};
  const auto a = models::tacotron2_forward(cfg, m.params(), four_tokens(), targets(8), &s1);
  const auto b = models::tacotron2_forward(cfg, m.params(), four_tokens(), targets(8), &s2);
  EXPECT_NE(a.mel_after.values(), b.mel_after.values());
  EXPECT_THROW(models::tacotron2_forward(cfg, m.params(), four_tokens(), targets(8)), std::invalid_argument);
  const models::SpeakerEmbedding wrong{1.0};
  EXPECT_THROW(models::tacotron2_forward(cfg, m.params(), four_tokens(), targets(8), &wrong), std::invalid_argument);
}

TEST(Tacotron2, GradientCheck) {
  auto cfg = fixtures::micro_tacotron2(kVocab, kMels);
  models::Tacotron2 m(cfg, 7);
  fixtures::jitter(m.params(), 8);
  const auto tokens = four_tokens();
  const auto y = targets(5);
  ASSERT_LT(m.params().parameter_count(), 5000u);
  auto report = nn::finite_diff_check(
      [&](nn::Tape& t, const nn::ParamStore& p) { return probe_loss(t, models::tacotron2_graph(t, cfg, p, {&tokens, &y}), y); },
      m.params());
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param;
}

TEST(Tacotron2, ForwardTransitionAgentGradientCheck) {
  auto cfg = fixtures::micro_tacotron2(kVocab, kMels);
  cfg.attention = attention::AttentionKind::forward_ta;
  models::Tacotron2 m(cfg, 7);
  fixtures::jitter(m.params(), 8);
  const auto tokens = four_tokens();
  const auto y = targets(5);
  auto report = nn::finite_diff_check(
      [&](nn::Tape& t, const nn::ParamStore& p) { return probe_loss(t, models::tacotron2_graph(t, cfg, p, {&tokens, &y}), y); },
      m.params());
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param;
}

TEST(TransformerTts, ShapesAndDeterminism) {
  const auto cfg = fixtures::micro_transformer(kVocab, kMels);
  const auto p = models::init_transformer_tts(cfg, 4);
  const auto out = models::transformer_tts_forward(cfg, p, four_tokens(), targets(8));
  EXPECT_EQ(out.mel_before.rows(), 8u);
  EXPECT_EQ(out.mel_after.shape(), out.mel_before.shape());
  EXPECT_EQ(out.stop_logits.size(), 8u);
  ASSERT_EQ(out.alignments.size(), cfg.decoder_layers * cfg.heads);
  for (const auto& a : out.alignments) {
    EXPECT_EQ(a.rows(), 8u);
    EXPECT_EQ(a.cols(), 4u);
    expect_stochastic(a);
  }
  const auto again = models::transformer_tts_forward(cfg, models::init_transformer_tts(cfg, 4), four_tokens(), targets(8));
  EXPECT_EQ(out.mel_after.values(), again.mel_after.values());
}

TEST(TransformerTts, CausalDecoder) {
  const auto cfg = fixtures::micro_transformer(kVocab, kMels);
  const auto p = models::init_transformer_tts(cfg, 4);
  const Tensor y = targets(8);
  const auto base = models::transformer_tts_forward(cfg, p, four_tokens(), y);
  for (std::size_t t = 0; t < 8; ++t) {
    Tensor changed = y;
    for (std::size_t c = 0; c < kMels; ++c) changed(t, c) += 3.0;
    const auto out = models::transformer_tts_forward(cfg, p, four_tokens(), changed);
    // Frame t feeds decoder step t+1, so every step up to t is untouched.
    for (std::size_t f = 0; f <= t; ++f) {
      for (std::size_t c = 0; c < kMels; ++c) EXPECT_EQ(out.mel_before(f, c), base.mel_before(f, c));
      EXPECT_EQ(out.stop_logits[f], base.stop_logits[f]);
    }
    if (t + 1 < 8) EXPECT_NE(out.mel_before(t + 1, 0), base.mel_before(t + 1, 0));
  }
}

TEST(TransformerTts, GradientCheck) {
  const auto cfg = fixtures::micro_transformer(kVocab, kMels);
  auto p = models::init_transformer_tts(cfg, 9);
  fixtures::jitter(p, 10);
  ASSERT_LT(p.parameter_count(), 5000u);
  const auto tokens = four_tokens();
  const auto y = targets(5);
  auto report = nn::finite_diff_check(
      [&](nn::Tape& t, const nn::ParamStore& q) { return probe_loss(t, models::transformer_tts_graph(t, cfg, q, {&tokens, &y}), y); },
      p);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param;
}

TEST(FastSpeech, TrainingFrameCountMatchesDurations) {
  const auto cfg = fixtures::micro_fastspeech(kVocab, kMels);
  const auto p = models::init_fastspeech(cfg, 2);
  const DurationSequence d{2, 0, 3, 1};
  const auto out = models::fastspeech_forward(cfg, p, four_tokens(), &d);
  EXPECT_EQ(out.mel_before.rows(), 6u);
  EXPECT_EQ(out.mel_after.shape(), out.mel_before.shape());
  EXPECT_TRUE(out.stop_logits.empty());
  EXPECT_EQ(out.log_durations.size(), 4u);
  ASSERT_EQ(out.alignments.size(), 1u);
  expect_stochastic(out.alignments[0]);
  EXPECT_EQ(models::extract_durations(out.alignments[0]), d);
}

TEST(FastSpeech, DegeneratePredictionsClampToOneFrame) {
  const auto cfg = fixtures::micro_fastspeech(kVocab, kMels);
  models::FastSpeech m(cfg, 2);
  m.params().at("dp.out.b")[0] = -10.0;
  for (auto& v : m.params().at("dp.out.w").values()) v = 0.0;
  m.set_trained(true);
  const auto out = m.synthesize(four_tokens(), {});
  EXPECT_EQ(out.mel_after.rows(), 1u);
  std::size_t total = 0;
  for (auto d : out.durations) total += d;
  EXPECT_EQ(total, 1u);
}

TEST(FastSpeech, UntrainedOrAbsentPredictorIsAnError) {
  const auto cfg = fixtures::micro_fastspeech(kVocab, kMels);
  models::FastSpeech m(cfg, 2);
  EXPECT_THROW(m.synthesize(four_tokens(), {}), std::logic_error);
  auto p = m.params();
  nn::ParamStore stripped;
  for (const auto& [name, t] : p)
    if (name.rfind("dp.", 0) != 0) stripped.add(name, t);
  EXPECT_THROW(models::fastspeech_forward(cfg, stripped, four_tokens(), nullptr), std::invalid_argument);
  const DurationSequence d{1, 1, 1, 1};
  models::TtsModel::SynthesisOptions opt;
  opt.durations = &d;
  EXPECT_EQ(m.synthesize(four_tokens(), opt).mel_after.rows(), 4u);
}

TEST(FastSpeech, DeterministicAndGradientCheck) {
  const auto cfg = fixtures::micro_fastspeech(kVocab, kMels);
  auto p = models::init_fastspeech(cfg, 6);
  ASSERT_LT(p.parameter_count(), 5000u);
  const DurationSequence d{1, 2, 1, 1};
  const auto a = models::fastspeech_forward(cfg, p, four_tokens(), &d);
  const auto b = models::fastspeech_forward(cfg, models::init_fastspeech(cfg, 6), four_tokens(), &d);
  EXPECT_EQ(a.mel_after.values(), b.mel_after.values());

  fixtures::jitter(p, 12);
  const auto tokens = four_tokens();
  const auto y = targets(5);
  nn::Tape t0(false);
  const Tensor frozen = models::fastspeech_graph(t0, cfg, p, {&tokens, nullptr, nullptr, &d}).encoder_out.value();
  models::ForwardOptions opt;
  opt.frozen_duration_input = &frozen;
  auto report = nn::finite_diff_check(
      [&](nn::Tape& t, const nn::ParamStore& q) {
        return probe_loss(t, models::fastspeech_graph(t, cfg, q, {&tokens, nullptr, nullptr, &d}, opt), y);
      },
      p);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param;
}

TEST(FastSpeech, DurationPredictorDoesNotTrainEncoder) {
  const auto cfg = fixtures::micro_fastspeech(kVocab, kMels);
  const auto p = models::init_fastspeech(cfg, 6);
  const DurationSequence d{1, 2, 1, 1};
  const auto tokens = four_tokens();
  nn::Tape t;
  auto g = models::fastspeech_graph(t, cfg, p, {&tokens, nullptr, nullptr, &d});
  t.backward(nn::sum(g.log_durations));
  auto grads = t.param_grads(p);
  for (double v : grads.at("embed").values()) EXPECT_EQ(v, 0.0);
  double dp = 0.0;
  for (double v : grads.at("dp.out.w").values()) dp += std::abs(v);
  EXPECT_GT(dp, 0.0);
}

// ---- duration machinery ----

TEST(Durations, IdentityAlignment) {
  Tensor a = Tensor::matrix(5, 5);
  for (std::size_t i = 0; i < 5; ++i) a(i, i) = 1.0;
  EXPECT_EQ(models::extract_durations(a), (DurationSequence{1, 1, 1, 1, 1}));
}

TEST(Durations, ArgmaxPattern) {
  const Tensor a = Tensor::from_rows({{0.9, 0.1}, {0.6, 0.4}, {0.2, 0.8}, {0.3, 0.7}});
  EXPECT_EQ(models::extract_durations(a), (DurationSequence{2, 2}));
}

TEST(Durations, TiesGoToSmallestIndex) {
  const Tensor a = Tensor::from_rows({{0.5, 0.5}, {0.25, 0.75}, {0.6, 0.4}});
  EXPECT_EQ(models::extract_durations(a), (DurationSequence{2, 1}));
}

TEST(Durations, BruteForceOracle) {
  std::mt19937_64 rng(5);
  const Tensor a = fixtures::random_alignment(7, 3, rng);
  DurationSequence expected(3, 0);
  for (std::size_t t = 0; t < 7; ++t) {
    // Count how many entries beat each column; the owner is the first with none strictly larger.
    for (std::size_t n = 0; n < 3; ++n) {
      bool owner = true;
      for (std::size_t m = 0; m < 3; ++m) {
        if (a(t, m) > a(t, n) || (a(t, m) == a(t, n) && m < n)) owner = false;
      }
      if (owner) ++expected[n];
    }
  }
  const auto d = models::extract_durations(a);
  EXPECT_EQ(d, expected);
  EXPECT_EQ(d[0] + d[1] + d[2], 7u);
}

TEST(LengthRegulate, RepeatsStatesInOrder) {
  const Tensor s = Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  EXPECT_EQ(models::length_regulate(s, {2, 1}).values(), (std::vector<double>{1, 2, 1, 2, 3, 4}));
  EXPECT_EQ(models::length_regulate(s, {0, 3}).values(), (std::vector<double>{3, 4, 3, 4, 3, 4}));
  EXPECT_THROW(models::length_regulate(s, {0, 0}), std::invalid_argument);
  EXPECT_THROW(models::length_regulate(s, {1}), nn::ShapeError);
}

TEST(LengthRegulate, RandomLengthProperty) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> n_dist(1, 12), d_dist(0, 6);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = n_dist(rng);
    DurationSequence d(n);
    std::size_t total = 0;
    for (auto& v : d) total += v = d_dist(rng);
    if (total == 0) d[0] = total = 1;
    const Tensor s = fixtures::random_tensor(n, 2, rng);
    EXPECT_EQ(models::length_regulate(s, d).rows(), total);
  }
}

TEST(Durations, FromLogPredictions) {
  EXPECT_EQ(models::durations_from_log({std::log(3.0), std::log(1.0), std::log(2.6)}), (DurationSequence{2, 0, 2}));
  EXPECT_EQ(models::durations_from_log({-5.0, -1.0, -3.0}), (DurationSequence{0, 1, 0}));
}

// ---- autoregressive decoding ----

class ConstantSession : public models::DecoderSession {
 public:
  ConstantSession(std::size_t n, std::size_t r, double stop) : n_(n), r_(r), stop_(stop) {}
  std::size_t input_length() const override { return n_; }
  std::size_t frames_per_step() const override { return r_; }
  models::DecoderStep step() override { return {Tensor::matrix(r_, 2, 0.5), stop_}; }
  models::SynthesisOutput finish(Tensor mel, std::vector<double> stops) override {
    models::SynthesisOutput o;
    o.mel_after = mel;
    o.mel_before = std::move(mel);
    o.stop_logits = std::move(stops);
    return o;
  }

 private:
  std::size_t n_, r_;
  double stop_;
};

TEST(DecodeAutoregressive, AlwaysStopHonoursMinimumLength) {
  const double inf = std::numeric_limits<double>::infinity();
  ConstantSession s(7, 1, inf);
  models::DecodeOptions opt;
  opt.minlenratio = 1.3;
  opt.maxlenratio = 5.0;
  const auto out = models::decode_autoregressive(s, opt);
  EXPECT_EQ(out.mel_before.rows(), static_cast<std::size_t>(std::ceil(1.3 * 7)));
  EXPECT_TRUE(out.stopped);
  EXPECT_FALSE(out.hit_maxlen);
}

TEST(DecodeAutoregressive, NeverStopHitsMaximumLength) {
  const double inf = std::numeric_limits<double>::infinity();
  ConstantSession s(7, 1, -inf);
  models::DecodeOptions opt;
  opt.minlenratio = 0.5;
  opt.maxlenratio = 2.3;
  const auto out = models::decode_autoregressive(s, opt);
  EXPECT_EQ(out.mel_before.rows(), static_cast<std::size_t>(std::floor(2.3 * 7)));
  EXPECT_TRUE(out.hit_maxlen);
  EXPECT_FALSE(out.stopped);
}

TEST(DecodeAutoregressive, ReductionFactorTruncatesAtMaximum) {
  ConstantSession s(5, 3, -std::numeric_limits<double>::infinity());
  models::DecodeOptions opt;
  opt.maxlenratio = 2.0;
  EXPECT_EQ(models::decode_autoregressive(s, opt).mel_before.rows(), 10u);
}

TEST(DecodeAutoregressive, RejectsBadOptions) {
  ConstantSession s(5, 1, 0.0);
  models::DecodeOptions opt;
  opt.threshold = 1.0;
  EXPECT_THROW(models::decode_autoregressive(s, opt), std::invalid_argument);
  opt.threshold = 0.5;
  opt.minlenratio = 3.0;
  opt.maxlenratio = 2.0;
  EXPECT_THROW(models::decode_autoregressive(s, opt), std::invalid_argument);
}

TEST(DecodeAutoregressive, RealModelsProduceStochasticAlignments) {
  models::Tacotron2 taco(fixtures::micro_tacotron2(kVocab, kMels), 1);
  models::TransformerTts tr(fixtures::micro_transformer(kVocab, kMels), 1);
  models::TtsModel::SynthesisOptions opt;
  opt.decode.minlenratio = 2.0;
  opt.decode.maxlenratio = 2.0;
  for (const models::TtsModel* m : {static_cast<const models::TtsModel*>(&taco), static_cast<const models::TtsModel*>(&tr)}) {
    const auto out = m->synthesize(four_tokens(), opt);
    EXPECT_EQ(out.mel_before.rows(), 8u);
    EXPECT_EQ(out.mel_after.shape(), out.mel_before.shape());
    ASSERT_FALSE(out.alignments.empty());
    for (const auto& a : out.alignments) {
      EXPECT_EQ(a.rows(), 8u);
      expect_stochastic(a);
    }
  }
}

TEST(Checkpoint, RoundTripPreservesModel) {
  const auto path = std::filesystem::temp_directory_path() / "tts_models_ckpt_test.bin";
  models::Tacotron2 m(fixtures::micro_tacotron2(kVocab, kMels), 3);
  models::save_checkpoint(path, m, {{"note", "x"}});
  auto ck = models::load_checkpoint(path);
  EXPECT_EQ(ck.model->kind(), models::ModelKind::tacotron2);
  EXPECT_EQ(ck.extra.at("note"), "x");
  for (const auto& [name, p] : m.params()) {
    const auto& q = ck.model->params().at(name);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(q[i], static_cast<double>(static_cast<float>(p[i])));
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, AllKindsRebuildFromContainers) {
  std::vector<std::unique_ptr<models::TtsModel>> ms;
  ms.push_back(std::make_unique<models::Tacotron2>(fixtures::micro_tacotron2(kVocab, kMels), 1));
  ms.push_back(std::make_unique<models::TransformerTts>(fixtures::micro_transformer(kVocab, kMels), 1));
  ms.push_back(std::make_unique<models::FastSpeech>(fixtures::micro_fastspeech(kVocab, kMels), 1));
  for (const auto& m : ms) {
    auto back = models::model_from_container(nn::decode_container(nn::encode_container(models::model_to_container(*m))));
    EXPECT_EQ(back->kind(), m->kind());
    EXPECT_EQ(back->params().names(), m->params().names());
  }
  nn::Container bad;
  bad.config = {{"model_kind", "wavenet"}, {"model", nlohmann::json::object()}};
  EXPECT_THROW(models::model_from_container(bad), std::invalid_argument);
}

}  // namespace
