#include "tts/recipe/synthetic.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace tts::recipe {

std::map<char, TokenVoice> synthetic_voices(const SyntheticCorpusConfig& cfg) {
  if (cfg.alphabet.empty()) throw std::invalid_argument("synthetic corpus: empty alphabet");
  if (cfg.min_token_hops == 0 || cfg.max_token_hops < cfg.min_token_hops) {
    throw std::invalid_argument("synthetic corpus: bad token duration range");
  }
  std::mt19937_64 rng(cfg.seed * 7919 + 17);
  const double nyq = 0.5 * static_cast<double>(cfg.sample_rate);
  std::uniform_real_distribution<double> gain(0.6, 1.0), phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_int_distribution<std::size_t> hops(cfg.min_token_hops, cfg.max_token_hops);
  std::map<char, TokenVoice> voices;
  std::string symbols = cfg.alphabet + " ";
  const std::size_t n = symbols.size();
  for (std::size_t i = 0; i < n; ++i) {
    TokenVoice v;
    // One pitch period per hop keeps every interior frame of a token identical.
    v.f0 = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.hop);
    // Spread first formants over the band so characters are spectrally distinct.
    const double lo = 0.08 * nyq, hi = 0.85 * nyq;
    const double f1 = lo + (hi - lo) * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double f2 = lo + std::fmod(f1 - lo + 0.45 * (hi - lo), hi - lo);
    v.formants = {f1, f2};
    v.bandwidth = 0.06 * nyq;
    v.gain = gain(rng);
    v.hops = hops(rng);
    for (double f = v.f0; f < 0.95 * nyq; f += v.f0) v.phases.push_back(phase(rng));
    voices.emplace(symbols[i], v);
  }
  return voices;
}

std::string random_sentence(const SyntheticCorpusConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> words(cfg.min_words, cfg.max_words);
  std::uniform_int_distribution<std::size_t> len(cfg.min_word_len, cfg.max_word_len);
  std::uniform_int_distribution<std::size_t> ch(0, cfg.alphabet.size() - 1);
  std::string s;
  const std::size_t nw = words(rng);
  for (std::size_t w = 0; w < nw; ++w) {
    if (w) s.push_back(' ');
    const std::size_t nl = len(rng);
    for (std::size_t k = 0; k < nl; ++k) s.push_back(cfg.alphabet[ch(rng)]);
  }
  return s;
}

SyntheticUtterance render_utterance(const std::string& id, const std::string& text,
                                    const std::map<char, TokenVoice>& voices, const SyntheticCorpusConfig& cfg,
                                    std::mt19937_64& rng) {
  const double sr = static_cast<double>(cfg.sample_rate);
  const auto hop = static_cast<double>(cfg.hop);
  std::uniform_real_distribution<double> jit(-cfg.jitter * hop, cfg.jitter * hop);

  SyntheticUtterance u;
  u.id = id;
  u.text = text;
  u.wave.sample_rate = static_cast<int>(cfg.sample_rate);
  const std::size_t fade = cfg.hop / 2;
  double t0 = 0.0;
  for (char c : text) {
    auto it = voices.find(c);
    if (it == voices.end()) throw std::invalid_argument(std::string("synthetic corpus: no voice for '") + c + "'");
    const TokenVoice& v = it->second;
    const auto len = static_cast<std::size_t>(std::max(hop, static_cast<double>(v.hops) * hop + jit(rng)));
    u.char_samples.push_back(len);
    std::vector<double> amp;
    for (std::size_t k = 0; k < v.phases.size(); ++k) {
      const double f = v.f0 * static_cast<double>(k + 1);
      double a = 0.04;
      for (double fc : v.formants) a += std::exp(-0.5 * (f - fc) * (f - fc) / (v.bandwidth * v.bandwidth));
      amp.push_back(a);
    }
    double norm = 0.0;
    for (double a : amp) norm += 0.5 * a * a;
    const double scale = 0.2 * v.gain / std::sqrt(norm);
    // Overlap-add each tone with raised-cosine edges of `fade` samples.
    const std::size_t start = static_cast<std::size_t>(t0) >= fade ? static_cast<std::size_t>(t0) - fade : 0;
    const std::size_t stop = static_cast<std::size_t>(t0) + len + fade;
    if (u.wave.samples.size() < stop) u.wave.samples.resize(stop, 0.0);
    for (std::size_t s = start; s < stop; ++s) {
      const double rel = static_cast<double>(s) - t0;
      double env = 1.0;
      if (rel < static_cast<double>(fade)) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (rel + static_cast<double>(fade)) / (2.0 * static_cast<double>(fade)));
      const double tail = static_cast<double>(len) - rel;
      if (tail < static_cast<double>(fade)) env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi * (tail + static_cast<double>(fade)) / (2.0 * static_cast<double>(fade))));
      env = std::clamp(env, 0.0, 1.0);
      const double time = static_cast<double>(s) / sr;
      double x = 0.0;
      for (std::size_t k = 0; k < amp.size(); ++k) {
        x += amp[k] * std::sin(2.0 * std::numbers::pi * v.f0 * static_cast<double>(k + 1) * (time - t0 / sr) + v.phases[k]);
      }
      u.wave.samples[s] += env * scale * x;
    }
    t0 += static_cast<double>(len);
  }
  u.wave.samples.resize(static_cast<std::size_t>(t0) + fade, 0.0);
  return u;
}

SyntheticCorpus generate_corpus(const SyntheticCorpusConfig& cfg) {
  const auto voices = synthetic_voices(cfg);
  std::mt19937_64 rng(cfg.seed);
  SyntheticCorpus corpus;
  auto make = [&](const std::string& prefix, std::size_t count, std::vector<SyntheticUtterance>& out) {
    for (std::size_t i = 0; i < count; ++i) {
      char id[64];
      std::snprintf(id, sizeof id, "%s_%04zu", prefix.c_str(), i + 1);
      const std::string text = random_sentence(cfg, rng);
      out.push_back(render_utterance(id, text, voices, cfg, rng));
    }
  };
  make("syn_train", cfg.n_train, corpus.train);
  make("syn_valid", cfg.n_valid, corpus.valid);
  make("syn_eval", cfg.n_eval, corpus.eval);
  return corpus;
}

namespace {

std::vector<double> centered_row(const nn::Tensor& m, std::size_t t) {
  std::vector<double> v(m.cols());
  double mean = 0.0;
  for (std::size_t b = 0; b < m.cols(); ++b) mean += (v[b] = m(t, b));
  mean /= static_cast<double>(m.cols());
  for (auto& x : v) x -= mean;
  return v;
}

}  // namespace

TemplateTranscriber::TemplateTranscriber(const SyntheticCorpusConfig& corpus, const dsp::StftConfig& stft,
                                         const dsp::MelConfig& mel)
    : voices_(synthetic_voices(corpus)), stft_(stft), mel_(mel) {
  SyntheticCorpusConfig steady = corpus;
  steady.jitter = 0.0;
  std::mt19937_64 rng(0);
  for (const auto& [c, v] : voices_) {
    // A long steady rendering; the middle frame is free of edge effects.
    TokenVoice held = v;
    held.hops = 4 * stft.win_length / stft.hop_length + 4;
    const auto u = render_utterance("template", std::string(1, c), {{c, held}}, steady, rng);
    const auto m = dsp::extract_logmel(u.wave, stft, mel);
    symbols_.push_back(c);
    templates_.push_back(centered_row(m, m.rows() / 2));
    double e = 0.0;
    for (std::size_t b = 0; b < m.cols(); ++b) e += m(m.rows() / 2, b);
    quietest_ = std::min(quietest_, e / static_cast<double>(m.cols()));
  }
}

std::string TemplateTranscriber::transcribe(const dsp::Waveform& wave) const {
  return transcribe(dsp::extract_logmel(wave, stft_, mel_));
}

std::string TemplateTranscriber::transcribe(const nn::Tensor& logmel) const {
  const std::size_t T = logmel.rows();
  if (T == 0) return {};
  std::vector<double> energy(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < logmel.cols(); ++b) energy[t] += logmel(t, b);
    energy[t] /= static_cast<double>(logmel.cols());
  }
  const double loudest = *std::max_element(energy.begin(), energy.end());
  constexpr int kQuiet = -1;
  std::vector<int> label(T, kQuiet);
  for (std::size_t t = 0; t < T; ++t) {
    if (energy[t] < std::max(loudest, quietest_) - 6.0) continue;
    const auto row = centered_row(logmel, t);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < templates_.size(); ++k) {
      double d = 0.0;
      for (std::size_t b = 0; b < row.size(); ++b) d += (row[b] - templates_[k][b]) * (row[b] - templates_[k][b]);
      if (d < best) {
        best = d;
        label[t] = static_cast<int>(k);
      }
    }
  }
  std::string out;
  for (std::size_t t = 0; t < T;) {
    std::size_t e = t;
    while (e < T && label[e] == label[t]) ++e;
    const std::size_t run = e - t;
    if (label[t] != kQuiet && run >= 2) {
      const char c = symbols_[static_cast<std::size_t>(label[t])];
      const auto hops = static_cast<double>(voices_.at(c).hops);
      const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(run) / hops)));
      out.append(n, c);
    }
    t = e;
  }
  // Spaces at the edges are never transcribed.
  const auto b = out.find_first_not_of(' ');
  if (b == std::string::npos) return {};
  return out.substr(b, out.find_last_not_of(' ') - b + 1);
}

}  // namespace tts::recipe
