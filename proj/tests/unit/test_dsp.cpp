#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "tts/dsp/dsp.hpp"

namespace fs = std::filesystem;
using namespace tts;
using namespace tts::dsp;

namespace {

constexpr double kPi = std::numbers::pi;

Waveform sine(double hz, std::size_t n, int sr, double amp = 0.5) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2 * kPi * hz * i / sr);
  return w;
}

Waveform noise(std::size_t n, std::uint64_t seed, int sr = 8000) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  Waveform w;
  w.sample_rate = sr;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(u(rng));
  return w;
}

// Direct DFT of frame f of a centered, reflect-padded, Hann-windowed analysis.
std::vector<std::complex<double>> dft_frame(const std::vector<double>& x, const StftConfig& cfg, std::size_t f) {
  const long n_fft = static_cast<long>(cfg.fft_size), pad = n_fft / 2, len = static_cast<long>(x.size());
  const long off = (n_fft - static_cast<long>(cfg.win_length)) / 2;
  std::vector<std::complex<double>> out(cfg.fft_size / 2 + 1);
  for (long n = 0; n < n_fft; ++n) {
    long j = static_cast<long>(f * cfg.hop_length) + n - pad;
    if (j < 0) j = -j;
    if (j >= len) j = 2 * (len - 1) - j;
    const long wn = n - off;
    const double w = (wn < 0 || wn >= static_cast<long>(cfg.win_length))
                         ? 0.0
                         : 0.5 - 0.5 * std::cos(2 * kPi * wn / static_cast<double>(cfg.win_length));
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] += x[j] * w * std::polar(1.0, -2 * kPi * static_cast<double>(k) * n / n_fft);
    }
  }
  return out;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::uint32_t u32(const std::string& b, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + at, 4);
  return v;
}

std::uint16_t u16(const std::string& b, std::size_t at) {
  std::uint16_t v;
  std::memcpy(&v, b.data() + at, 2);
  return v;
}

}  // namespace

// ---------------------------------------------------------------- STFT

TEST(Stft, FrameCountAndZeros) {
  const StftConfig cfg{64, 16, 64};
  Waveform w;
  w.samples.assign(100, 0.0);
  const auto s = stft(w, cfg);
  EXPECT_EQ(s.frames, 1 + (100 + 15) / 16);
  EXPECT_EQ(s.bins, 33u);
  for (const auto& v : s.values) EXPECT_EQ(std::abs(v), 0.0);
}

TEST(Stft, ShorterThanOneHopThrows) {
  Waveform w;
  w.samples.assign(15, 0.1);
  EXPECT_THROW(stft(w, StftConfig{64, 16, 64}), DspError);
  EXPECT_THROW(StftConfig({64, 0, 64}).validate(), DspError);
  EXPECT_THROW(StftConfig({64, 16, 128}).validate(), DspError);
}

TEST(Stft, DcLandsInBinZero) {
  const StftConfig cfg{64, 16, 64};
  Waveform w;
  w.samples.assign(400, 0.3);
  const auto mag = magnitude(stft(w, cfg));
  for (std::size_t f = 4; f + 4 < mag.rows(); ++f) {
    EXPECT_NEAR(mag(f, 0), 0.3 * 32, 1e-9);  // sum of the periodic Hann window is N/2
    for (std::size_t k = 2; k < mag.cols(); ++k) EXPECT_LT(mag(f, k), 1e-9);
  }
}

TEST(Stft, BinCentredSineMatchesDirectDft) {
  const StftConfig cfg{256, 64, 192};
  const int sr = 8000;
  const std::size_t k = 13;
  const auto w = sine(k * static_cast<double>(sr) / cfg.fft_size, sr, sr);
  const auto spec = stft(w, cfg);
  const auto mag = magnitude(spec);
  for (std::size_t f = 3; f + 3 < spec.frames; f += 7) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < spec.bins; ++b) {
      if (mag(f, b) > mag(f, best)) best = b;
    }
    EXPECT_EQ(best, k);
    const auto ref = dft_frame(w.samples, cfg, f);
    for (std::size_t b = 0; b < spec.bins; ++b) EXPECT_LT(std::abs(spec.at(f, b) - ref[b]), 1e-9);
  }
  // edge frames exercise the reflect padding
  for (std::size_t f : {std::size_t{0}, spec.frames - 1}) {
    const auto ref = dft_frame(w.samples, cfg, f);
    for (std::size_t b = 0; b < spec.bins; ++b) EXPECT_LT(std::abs(spec.at(f, b) - ref[b]), 1e-9);
  }
}

TEST(Istft, ReconstructsInterior) {
  for (const StftConfig cfg : {StftConfig{256, 64, 256}, StftConfig{512, 128, 256}, StftConfig{128, 64, 128}}) {
    const auto w = noise(3001, 5);
    const auto y = istft(stft(w, cfg), cfg, w.samples.size());
    ASSERT_EQ(y.size(), w.samples.size());
    double err = 0.0;
    for (std::size_t i = cfg.fft_size; i + cfg.fft_size < y.size(); ++i) err = std::max(err, std::abs(y[i] - w.samples[i]));
    EXPECT_LT(err, 1e-6);
  }
}

TEST(Stft, Deterministic) {
  const auto w = noise(2000, 9);
  const StftConfig s{256, 64, 256};
  const MelConfig m{20, 0, 4000, 8000, 256, 1e-10};
  const auto a = extract_logmel(w, s, m), b = extract_logmel(w, s, m);
  EXPECT_EQ(std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)), 0);
}

// ---------------------------------------------------------------- mel

TEST(Mel, ScaleRoundTrip) {
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-12);
  for (double hz : {0.0, 80.0, 1000.0, 7600.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-9);
}

TEST(Mel, FilterbankRowsArePositiveAndCompact) {
  const MelConfig cfg{40, 80, 7600, 22050, 1024, 1e-10};
  const auto b = mel_basis(cfg);
  ASSERT_EQ(b.rows(), 40u);
  ASSERT_EQ(b.cols(), 513u);
  for (std::size_t m = 0; m < b.rows(); ++m) {
    double sum = 0.0;
    std::size_t first = b.cols(), last = 0;
    for (std::size_t k = 0; k < b.cols(); ++k) {
      EXPECT_GE(b(m, k), 0.0);
      EXPECT_LE(b(m, k), 1.0 + 1e-12);
      if (b(m, k) > 0) {
        sum += b(m, k);
        first = std::min(first, k);
        last = k;
      }
    }
    EXPECT_GT(sum, 0.0);
    // support stays inside the triangle's neighbouring centres
    const double lo = mel_to_hz(hz_to_mel(80) + m * (hz_to_mel(7600) - hz_to_mel(80)) / 41);
    const double hi = mel_to_hz(hz_to_mel(80) + (m + 2) * (hz_to_mel(7600) - hz_to_mel(80)) / 41);
    EXPECT_GE(first * 22050.0 / 1024, lo - 1e-9);
    EXPECT_LE(last * 22050.0 / 1024, hi + 1e-9);
  }
}

TEST(Mel, ZeroMagnitudeHitsTheFloor) {
  const MelConfig cfg{20, 0, 4000, 8000, 256, 1e-10};
  const auto mel = logmel(nn::Tensor::matrix(3, 129), cfg);
  for (double v : mel.values()) EXPECT_EQ(v, std::log(1e-10));
}

TEST(Mel, SingleFilterOverFlatSpectrum) {
  // fmin 0, fmax 4000 at 8 kHz, fft 16: one triangle with feet at 0 and 4000 Hz and its
  // peak at the mel midpoint. Bins sit every 500 Hz.
  const MelConfig cfg{1, 0, 4000, 8000, 16, 1e-10};
  const double centre = mel_to_hz(hz_to_mel(4000) / 2);
  double dot = 0.0;
  for (int k = 0; k <= 8; ++k) {
    const double f = 500.0 * k;
    dot += 2.0 * (f <= centre ? f / centre : (4000 - f) / (4000 - centre));
  }
  const auto mel = logmel(nn::Tensor::matrix(2, 9, 2.0), cfg);
  EXPECT_NEAR(mel(0, 0), std::log(dot), 1e-12);
  EXPECT_NEAR(mel(1, 0), std::log(dot), 1e-12);
}

TEST(Mel, ConfigMismatchThrows) {
  const MelConfig cfg{20, 0, 4000, 8000, 256, 1e-10};
  EXPECT_THROW(logmel(nn::Tensor::matrix(3, 100), cfg), DspError);
  EXPECT_THROW(mel_to_linear(nn::Tensor::matrix(3, 19), cfg), DspError);
  EXPECT_THROW(MelConfig({20, 100, 50, 8000, 256, 1e-10}).validate(), DspError);
  EXPECT_THROW(MelConfig({20, 0, 5000, 8000, 256, 1e-10}).validate(), DspError);
}

TEST(Mel, InversionRoundTripInRowSpace) {
  const MelConfig cfg{20, 0, 4000, 8000, 256, 1e-10};
  const auto b = mel_basis(cfg);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  nn::Tensor mag = nn::Tensor::matrix(4, b.cols());
  for (std::size_t f = 0; f < 4; ++f) {
    for (std::size_t m = 0; m < b.rows(); ++m) {
      const double c = u(rng);
      for (std::size_t k = 0; k < b.cols(); ++k) mag(f, k) += c * b(m, k);
    }
  }
  const auto mel = logmel(mag, cfg);
  const auto lin = mel_to_linear(mel, cfg);
  for (double v : lin.values()) EXPECT_GE(v, 0.0);
  const auto again = logmel(lin, cfg);
  for (std::size_t i = 0; i < mel.size(); ++i) {
    EXPECT_NEAR(std::exp(again[i]), std::exp(mel[i]), 1e-3 * std::exp(mel[i]));
  }
}

TEST(Mel, FloorInvertsToNearZero) {
  const MelConfig cfg{20, 0, 4000, 8000, 256, 1e-10};
  const auto lin = mel_to_linear(nn::Tensor::matrix(2, 20, std::log(1e-10)), cfg);
  for (double v : lin.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1e-8);
  }
}

// ---------------------------------------------------------------- Griffin-Lim

TEST(GriffinLim, ZeroMagnitudeGivesSilence) {
  const StftConfig cfg{64, 16, 64};
  GriffinLimOptions opt;
  opt.iterations = 4;
  const auto r = griffin_lim(nn::Tensor::matrix(10, 33), cfg, opt, 8000);
  EXPECT_EQ(r.wave.samples.size(), 9u * 16);
  for (double v : r.wave.samples) EXPECT_EQ(v, 0.0);
}

TEST(GriffinLim, RejectsNonFinite) {
  auto m = nn::Tensor::matrix(10, 33, 1.0);
  m(3, 3) = std::nan("");
  EXPECT_THROW(griffin_lim(m, StftConfig{64, 16, 64}, GriffinLimOptions{}, 8000), DspError);
  GriffinLimOptions zero;
  zero.iterations = 0;
  EXPECT_THROW(griffin_lim(nn::Tensor::matrix(10, 33, 1.0), StftConfig{64, 16, 64}, zero, 8000), DspError);
}

TEST(GriffinLim, SineReconstruction) {
  const StftConfig cfg{1024, 256, 1024};
  const auto src = sine(440, 22050, 22050);
  const auto mag = magnitude(stft(src, cfg));
  GriffinLimOptions opt;
  opt.iterations = 64;
  opt.momentum = 0.99;
  opt.length = src.samples.size();
  opt.peak_normalize = false;  // keep the source scale so M is comparable
  EXPECT_LT(spectral_convergence(griffin_lim(mag, cfg, opt, 22050).wave, mag, cfg), 0.05);
  opt.peak_normalize = true;
  double peak = 0.0;
  for (double v : griffin_lim(mag, cfg, opt, 22050).wave.samples) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, 0.95, 1e-12);
}

TEST(GriffinLim, PlainIterationIsMonotone) {
  const StftConfig cfg{256, 64, 256};
  auto src = sine(300, 4000, 8000, 0.3);
  const auto n = noise(4000, 4);
  for (std::size_t i = 0; i < src.samples.size(); ++i) src.samples[i] += 0.2 * n.samples[i];
  GriffinLimOptions opt;
  opt.iterations = 40;
  opt.momentum = 0.0;
  const auto r = griffin_lim(magnitude(stft(src, cfg)), cfg, opt, 8000);
  ASSERT_EQ(r.consistency.size(), 40u);
  for (std::size_t i = 1; i < r.consistency.size(); ++i) EXPECT_LE(r.consistency[i], r.consistency[i - 1] * (1 + 1e-9));
  EXPECT_LT(r.consistency.back(), r.consistency.front());
}

TEST(GriffinLim, RandomInitFollowsSeed) {
  const StftConfig cfg{256, 64, 256};
  const auto mag = magnitude(stft(noise(1000, 2), cfg));
  GriffinLimOptions opt;
  opt.iterations = 3;
  opt.init = PhaseInit::random;
  opt.seed = 4;
  const auto a = griffin_lim(mag, cfg, opt, 8000).wave.samples;
  EXPECT_EQ(a, griffin_lim(mag, cfg, opt, 8000).wave.samples);
  opt.seed = 5;
  EXPECT_NE(a, griffin_lim(mag, cfg, opt, 8000).wave.samples);
}

TEST(GriffinLim, OutputLength) {
  const StftConfig cfg{256, 64, 256};
  const auto src = noise(1000, 1);
  const auto mag = magnitude(stft(src, cfg));
  GriffinLimOptions opt;
  opt.iterations = 2;
  const auto r = griffin_lim(mag, cfg, opt, 8000);
  EXPECT_EQ(r.wave.samples.size(), (mag.rows() - 1) * 64);
  EXPECT_LE(std::abs(static_cast<long>(r.wave.samples.size()) - 1000L), 64L);
}

// ---------------------------------------------------------------- WAV

TEST(Wav, RoundTripWithinQuantization) {
  const auto w = noise(5000, 3, 16000);
  const auto p = fs::temp_directory_path() / "tts_dsp_test_rt.wav";
  write_wav(p, w);
  const auto back = read_wav(p);
  EXPECT_EQ(back.sample_rate, 16000);
  ASSERT_EQ(back.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_LE(std::abs(back.samples[i] - w.samples[i]), 1.0 / 32768);
}

TEST(Wav, WriteClamps) {
  Waveform w;
  w.sample_rate = 8000;
  w.samples = {2.0, -3.0, 0.0};
  const auto back = decode_wav(encode_wav(w));
  EXPECT_NEAR(back.samples[0], 32767.0 / 32768, 1e-12);
  EXPECT_EQ(back.samples[1], -1.0);
  EXPECT_EQ(back.samples[2], 0.0);
}

TEST(Wav, OneSecondOfSilenceHeader) {
  Waveform w;
  w.sample_rate = 22050;
  w.samples.assign(22050, 0.0);
  const auto p = fs::temp_directory_path() / "tts_dsp_test_silence.wav";
  write_wav(p, w);
  const auto b = read_bytes(p);
  ASSERT_EQ(b.size(), 44u + 44100u);
  EXPECT_EQ(b.substr(0, 4), "RIFF");
  EXPECT_EQ(u32(b, 4), 36u + 44100u);
  EXPECT_EQ(b.substr(8, 8), "WAVEfmt ");
  EXPECT_EQ(u32(b, 16), 16u);
  EXPECT_EQ(u16(b, 20), 1u);
  EXPECT_EQ(u16(b, 22), 1u);
  EXPECT_EQ(u32(b, 24), 22050u);
  EXPECT_EQ(u32(b, 28), 44100u);
  EXPECT_EQ(u16(b, 32), 2u);
  EXPECT_EQ(u16(b, 34), 16u);
  EXPECT_EQ(b.substr(36, 4), "data");
  EXPECT_EQ(u32(b, 40), 44100u);
  const auto back = read_wav(p);
  EXPECT_EQ(back.samples.size(), 22050u);
  for (double v : back.samples) EXPECT_EQ(v, 0.0);
}

TEST(Wav, FormatErrors) {
  const auto empty = fs::temp_directory_path() / "tts_dsp_test_empty.wav";
  std::ofstream(empty, std::ios::binary).close();
  EXPECT_THROW(read_wav(empty), WavFormatError);
  EXPECT_THROW(read_wav(fs::temp_directory_path() / "tts_dsp_test_missing.wav"), WavFormatError);

  Waveform w;
  w.sample_rate = 8000;
  w.samples.assign(10, 0.1);
  const auto good = encode_wav(w);
  EXPECT_THROW(decode_wav(good.substr(0, good.size() - 4)), WavFormatError);
  auto stereo = good;
  stereo[22] = 2;
  EXPECT_THROW(decode_wav(stereo), WavFormatError);
  auto float32 = good;
  float32[20] = 3;
  EXPECT_THROW(decode_wav(float32), WavFormatError);
  auto bits8 = good;
  bits8[34] = 8;
  EXPECT_THROW(decode_wav(bits8), WavFormatError);
}
