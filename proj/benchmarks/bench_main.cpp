#include <cmath>
#include <numbers>
#include <random>

#include <benchmark/benchmark.h>

#include "micro.hpp"
#include "tts/dsp/dsp.hpp"
#include "tts/eval/evaluation.hpp"
#include "tts/nn/layers.hpp"

using namespace tts;

namespace {

dsp::Waveform sine(double seconds, int sr) {
  dsp::Waveform w;
  w.sample_rate = sr;
  w.samples.resize(static_cast<std::size_t>(seconds * sr));
  for (std::size_t n = 0; n < w.samples.size(); ++n) w.samples[n] = 0.5 * std::sin(2 * std::numbers::pi * 440.0 * n / sr);
  return w;
}

void BM_Stft(benchmark::State& st) {
  const auto w = sine(1.0, 22050);
  dsp::StftConfig cfg{static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(0)) / 4,
                      static_cast<std::size_t>(st.range(0))};
  for (auto _ : st) benchmark::DoNotOptimize(dsp::stft(w, cfg));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(w.samples.size()));
}
BENCHMARK(BM_Stft)->Arg(256)->Arg(1024);

void BM_Logmel(benchmark::State& st) {
  const auto w = sine(1.0, 22050);
  dsp::StftConfig sc;
  dsp::MelConfig mc;
  for (auto _ : st) benchmark::DoNotOptimize(dsp::extract_logmel(w, sc, mc));
}
BENCHMARK(BM_Logmel);

void BM_GriffinLim(benchmark::State& st) {
  const auto w = sine(1.0, 22050);
  dsp::StftConfig sc;
  const auto mag = dsp::magnitude(dsp::stft(w, sc));
  dsp::GriffinLimOptions g;
  g.iterations = static_cast<std::size_t>(st.range(0));
  for (auto _ : st) benchmark::DoNotOptimize(dsp::griffin_lim(mag, sc, g, 22050));
}
BENCHMARK(BM_GriffinLim)->Arg(8)->Arg(32);

void BM_LstmStep(benchmark::State& st) {
  const auto hid = static_cast<std::size_t>(st.range(0));
  nn::ParamStore p;
  nn::Initializer init(1);
  init.lstm(p, "l", hid, hid);
  std::mt19937_64 rng(2);
  const auto x = fixtures::random_tensor(1, hid, rng);
  for (auto _ : st) {
    nn::Tape t(false);
    nn::LstmState s{t.constant(nn::Tensor::matrix(1, hid)), t.constant(nn::Tensor::matrix(1, hid))};
    s = nn::lstm_step(t, p, "l", t.constant(x), s);
    benchmark::DoNotOptimize(s.h.value());
  }
}
BENCHMARK(BM_LstmStep)->Arg(32)->Arg(128);

// Inference on a random 32-token input with micro models; arg 0/1/2 selects
// FastSpeech / Tacotron 2 / Transformer.
void BM_Inference(benchmark::State& st) {
  constexpr std::size_t kVocab = 12, kMels = 20, kTokens = 32;
  std::unique_ptr<models::TtsModel> m;
  switch (st.range(0)) {
    case 0: m = std::make_unique<models::FastSpeech>(fixtures::micro_fastspeech(kVocab, kMels), 1); break;
    case 1: m = std::make_unique<models::Tacotron2>(fixtures::micro_tacotron2(kVocab, kMels), 1); break;
    default: m = std::make_unique<models::TransformerTts>(fixtures::micro_transformer(kVocab, kMels), 1); break;
  }
  std::mt19937_64 rng(3);
  const auto tokens = fixtures::random_tokens(kTokens, kVocab, rng);
  const models::DurationSequence dur(kTokens, 4);
  models::TtsModel::SynthesisOptions opt;
  opt.decode.minlenratio = 4.0;  // always decode the full length
  opt.decode.maxlenratio = 4.0;
  opt.durations = &dur;
  for (auto _ : st) benchmark::DoNotOptimize(m->synthesize(tokens, opt));
  st.SetLabel(models::to_string(m->kind()));
}
BENCHMARK(BM_Inference)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_Cer(benchmark::State& st) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> ch('a', 'd');
  std::string a, b;
  for (int i = 0; i < st.range(0); ++i) {
    a.push_back(static_cast<char>(ch(rng)));
    b.push_back(static_cast<char>(ch(rng)));
  }
  for (auto _ : st) benchmark::DoNotOptimize(eval::cer(a, b));
}
BENCHMARK(BM_Cer)->Arg(64)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
