#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "tts/nn/tensor.hpp"

namespace tts::dsp {

class DspError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class WavFormatError : public DspError {
 public:
  using DspError::DspError;
};

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 22050;

  double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct StftConfig {
  std::size_t fft_size = 1024;
  std::size_t hop_length = 256;
  std::size_t win_length = 1024;

  void validate() const;
  std::size_t bins() const { return fft_size / 2 + 1; }
  // 1 + ceil(samples / hop)
  std::size_t frame_count(std::size_t samples) const;
};

struct MelConfig {
  std::size_t n_mels = 80;
  double fmin = 80.0;
  double fmax = 7600.0;
  int sample_rate = 22050;
  std::size_t fft_size = 1024;
  double log_floor = 1e-10;

  void validate() const;
};

// Frames x (fft_size/2+1) complex bins.
struct ComplexSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::complex<double>> values;

  std::complex<double>& at(std::size_t f, std::size_t k) { return values[f * bins + k]; }
  const std::complex<double>& at(std::size_t f, std::size_t k) const { return values[f * bins + k]; }
};

// Frames x bins magnitudes (>= 0).
using MagnitudeSpectrogram = nn::Tensor;
// Frames x n_mels natural-log mel magnitudes.
using MelSpectrogram = nn::Tensor;

// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

// Centered STFT: the signal is reflect-padded by fft_size/2 on both sides (zero-extended
// past that when the last frame needs it), windowed with a Hann window centered in each
// fft-sized frame, and transformed to the one-sided spectrum.
ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg);
// Least-squares inverse of stft(): overlap-add with squared-window normalization, padded
// samples folded back onto the samples they mirror. Returns `length` samples.
std::vector<double> istft(const ComplexSpectrogram& spec, const StftConfig& cfg, std::size_t length);

MagnitudeSpectrogram magnitude(const ComplexSpectrogram& spec);

// Triangular HTK-scale filterbank [n_mels, fft_size/2+1]; peak weight 1.
nn::Tensor mel_basis(const MelConfig& cfg);
double hz_to_mel(double hz);
double mel_to_hz(double mel);

MelSpectrogram logmel(const MagnitudeSpectrogram& mag, const MelConfig& cfg);
// exp -> pseudo-inverse of the mel basis -> clamp at 0.
MagnitudeSpectrogram mel_to_linear(const MelSpectrogram& mel, const MelConfig& cfg);

// Convenience: wave -> stft -> magnitude -> logmel.
MelSpectrogram extract_logmel(const Waveform& wave, const StftConfig& stft_cfg, const MelConfig& mel_cfg);

// phase_vocoder integrates interpolated peak frequencies over time (see griffin_lim).
enum class PhaseInit { zeros, random, phase_vocoder };

struct GriffinLimOptions {
  std::size_t iterations = 64;
  double momentum = 0.99;
  bool peak_normalize = true;
  PhaseInit init = PhaseInit::phase_vocoder;
  std::uint64_t seed = 0;  // random init only
  // Output length in samples; 0 selects (frames-1)*hop.
  std::size_t length = 0;
};

struct GriffinLimResult {
  Waveform wave;
  // Per iteration: ||(|STFT(ISTFT(Y))| - M)||, with one-sided bins weighted so the norm
  // equals the time-domain frame norm (interior bins count twice).
  std::vector<double> consistency;
};

// Fast Griffin-Lim: c_n = STFT(ISTFT(M * e^{i phase})), phase <- angle(c_n - m/(1+m) c_{n-1}).
// momentum 0 gives the classic alternating projection. Random starting phases stall on
// stationary tones, with frame regions locked to different phase offsets; the default
// phase-vocoder start avoids that.
GriffinLimResult griffin_lim(const MagnitudeSpectrogram& mag, const StftConfig& cfg, const GriffinLimOptions& opt,
                             int sample_rate = 22050);

// ||(|STFT(x)| - M)||_F / ||M||_F
double spectral_convergence(const Waveform& estimate, const MagnitudeSpectrogram& target, const StftConfig& cfg);

// RIFF/WAVE PCM16 mono.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& wave);
Waveform decode_wav(const std::string& bytes);
std::string encode_wav(const Waveform& wave);

}  // namespace tts::dsp
