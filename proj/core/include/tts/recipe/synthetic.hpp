#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tts/dsp/dsp.hpp"

namespace tts::recipe {

// Deterministic toy "speech": every character owns a harmonic tone with a formant-shaped
// spectral envelope and a base duration; an utterance concatenates the tones of its
// characters with sub-hop timing jitter and short cross-fades.
struct SyntheticCorpusConfig {
  std::size_t n_train = 200;
  std::size_t n_valid = 20;
  std::size_t n_eval = 20;
  std::uint64_t seed = 1;
  std::size_t sample_rate = 8000;
  std::size_t hop = 64;
  std::string alphabet = "abcdefgh";
  std::size_t min_words = 2;
  std::size_t max_words = 3;
  std::size_t min_word_len = 2;
  std::size_t max_word_len = 4;
  std::size_t min_token_hops = 3;
  std::size_t max_token_hops = 5;
  double jitter = 0.15;  // max timing jitter per token, as a fraction of the hop
};

struct TokenVoice {
  double f0 = 0.0;
  std::vector<double> formants;  // centre frequencies, Hz
  double bandwidth = 0.0;
  double gain = 0.0;
  std::vector<double> phases;  // one per harmonic below 0.95 Nyquist
  std::size_t hops = 0;  // base duration
};

struct SyntheticUtterance {
  std::string id;
  std::string text;
  dsp::Waveform wave;
  std::vector<std::size_t> char_samples;  // samples spent on each character
};

// Voice table for the alphabet plus ' '.
std::map<char, TokenVoice> synthetic_voices(const SyntheticCorpusConfig& cfg);

std::string random_sentence(const SyntheticCorpusConfig& cfg, std::mt19937_64& rng);

SyntheticUtterance render_utterance(const std::string& id, const std::string& text,
                                    const std::map<char, TokenVoice>& voices, const SyntheticCorpusConfig& cfg,
                                    std::mt19937_64& rng);

struct SyntheticCorpus {
  std::vector<SyntheticUtterance> train, valid, eval;
};

SyntheticCorpus generate_corpus(const SyntheticCorpusConfig& cfg);

// Stand-in recognizer for the synthetic corpus: labels each frame with the nearest
// per-character log-mel template (gain removed by subtracting the frame mean), drops
// quiet frames (6 log units under the loudest frame, or under the softest template)
// and runs shorter than two frames, and expands each run into round(run / base
// duration) characters.
class TemplateTranscriber {
 public:
  TemplateTranscriber(const SyntheticCorpusConfig& corpus, const dsp::StftConfig& stft, const dsp::MelConfig& mel);
  std::string transcribe(const dsp::Waveform& wave) const;
  std::string transcribe(const nn::Tensor& logmel) const;

 private:
  std::map<char, TokenVoice> voices_;
  std::vector<char> symbols_;
  std::vector<std::vector<double>> templates_;
  double quietest_ = std::numeric_limits<double>::infinity();  // mean log-mel of the softest template
  dsp::StftConfig stft_;
  dsp::MelConfig mel_;
};

}  // namespace tts::recipe
