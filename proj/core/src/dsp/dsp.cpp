#include "tts/dsp/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <tuple>

#include <Eigen/Dense>

#include "real_fft.hpp"

namespace tts::dsp {
namespace {

std::size_t reflect_index(std::ptrdiff_t i, std::size_t len) {
  if (len == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (len - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(len)) i = period - i;
  return static_cast<std::size_t>(i);
}

// Source sample of padded position j, or -1 for zero extension.
std::ptrdiff_t padded_source(std::size_t j, std::size_t pad, std::size_t len) {
  const auto i = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(pad);
  if (i >= 0 && i < static_cast<std::ptrdiff_t>(len)) return i;
  if (i < 0 && -i <= static_cast<std::ptrdiff_t>(pad)) return static_cast<std::ptrdiff_t>(reflect_index(i, len));
  if (i >= static_cast<std::ptrdiff_t>(len) && i < static_cast<std::ptrdiff_t>(len + pad)) {
    return static_cast<std::ptrdiff_t>(reflect_index(i, len));
  }
  return -1;
}

std::vector<double> frame_window(const StftConfig& cfg) {
  std::vector<double> w(cfg.fft_size, 0.0);
  const auto hann = hann_window(cfg.win_length);
  const std::size_t off = (cfg.fft_size - cfg.win_length) / 2;
  std::copy(hann.begin(), hann.end(), w.begin() + static_cast<std::ptrdiff_t>(off));
  return w;
}

ComplexSpectrogram stft_impl(const std::vector<double>& x, const StftConfig& cfg, detail::RealFft& fft,
                             const std::vector<double>& window) {
  const std::size_t len = x.size();
  const std::size_t frames = cfg.frame_count(len);
  const std::size_t pad = cfg.fft_size / 2;
  ComplexSpectrogram spec;
  spec.frames = frames;
  spec.bins = cfg.bins();
  spec.values.resize(frames * spec.bins);
  std::vector<double> buf(cfg.fft_size);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t n = 0; n < cfg.fft_size; ++n) {
      const auto src = padded_source(f * cfg.hop_length + n, pad, len);
      buf[n] = src < 0 ? 0.0 : x[static_cast<std::size_t>(src)] * window[n];
    }
    fft.forward(buf.data(), spec.values.data() + f * spec.bins);
  }
  return spec;
}

std::vector<double> istft_impl(const ComplexSpectrogram& spec, const StftConfig& cfg, std::size_t len,
                               detail::RealFft& fft, const std::vector<double>& window) {
  const std::size_t pad = cfg.fft_size / 2;
  const std::size_t padded = (spec.frames - 1) * cfg.hop_length + cfg.fft_size;
  std::vector<double> num(padded, 0.0), den(padded, 0.0), frame(cfg.fft_size);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    fft.inverse(spec.values.data() + f * spec.bins, frame.data());
    for (std::size_t n = 0; n < cfg.fft_size; ++n) {
      num[f * cfg.hop_length + n] += window[n] * frame[n];
      den[f * cfg.hop_length + n] += window[n] * window[n];
    }
  }
  std::vector<double> acc_num(len, 0.0), acc_den(len, 0.0);
  for (std::size_t j = 0; j < padded; ++j) {
    const auto src = padded_source(j, pad, len);
    if (src < 0) continue;
    acc_num[static_cast<std::size_t>(src)] += num[j];
    acc_den[static_cast<std::size_t>(src)] += den[j];
  }
  std::vector<double> out(len, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    if (acc_den[i] > 1e-12) out[i] = acc_num[i] / acc_den[i];
  }
  return out;
}

double weighted_consistency(const ComplexSpectrogram& c, const MagnitudeSpectrogram& mag) {
  double s = 0.0;
  const std::size_t bins = c.bins;
  const std::size_t last = bins - 1;
  for (std::size_t f = 0; f < c.frames; ++f) {
    for (std::size_t k = 0; k < bins; ++k) {
      const double d = std::abs(c.values[f * bins + k]) - mag[f * bins + k];
      const double w = (k == 0 || k == last) ? 1.0 : 2.0;
      s += w * d * d;
    }
  }
  return std::sqrt(s);
}

// Phase-vocoder start for Griffin-Lim. Each spectral peak gets a frequency from
// quadratic interpolation of the log magnitudes, and its phase advances by that
// frequency times the hop from the nearest peak of the previous frame (within two
// bins). Every bin takes the phase of its nearest peak, offset by pi per bin as a
// window centred in the frame would give.
std::size_t bin_distance(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

ComplexSpectrogram phase_vocoder_init(const MagnitudeSpectrogram& mag, const StftConfig& cfg) {
  const std::size_t frames = mag.rows(), bins = mag.cols();
  const double pi = std::numbers::pi;
  ComplexSpectrogram out{frames, bins, std::vector<std::complex<double>>(frames * bins, {1.0, 0.0})};
  struct Peak {
    std::size_t bin;
    double offset;  // fractional bin
    double omega;   // rad / sample
    double phase;
  };
  std::vector<Peak> prev, cur;
  for (std::size_t f = 0; f < frames; ++f) {
    cur.clear();
    double top = 0.0;
    for (std::size_t k = 0; k < bins; ++k) top = std::max(top, mag(f, k));
    const double floor = 1e-6 * top;
    const auto lm = [&](std::size_t k) { return std::log(mag(f, k) + 1e-12 * top + 1e-300); };
    for (std::size_t k = 1; k + 1 < bins; ++k) {
      const double m = mag(f, k);
      if (!(m > floor && m >= mag(f, k - 1) && m > mag(f, k + 1))) continue;
      const double a = lm(k - 1), b = lm(k), c = lm(k + 1), den = a - 2 * b + c;
      const double d = den < 0 ? 0.5 * (a - c) / den : 0.0;
      const double omega = 2 * pi * (static_cast<double>(k) + d) / static_cast<double>(cfg.fft_size);
      double phase = 0.0;
      const Peak* near = nullptr;
      for (const auto& q : prev) {
        if (bin_distance(q.bin, k) <= 2 && (!near || bin_distance(q.bin, k) < bin_distance(near->bin, k))) near = &q;
      }
      if (near) phase = near->phase + 0.5 * (near->omega + omega) * static_cast<double>(cfg.hop_length);
      cur.push_back({k, d, omega, phase});
    }
    if (!cur.empty()) {
      std::size_t j = 0;
      for (std::size_t k = 0; k < bins; ++k) {
        while (j + 1 < cur.size() && bin_distance(cur[j + 1].bin, k) < bin_distance(cur[j].bin, k)) ++j;
        const auto& p = cur[j];
        out.at(f, k) = std::polar(1.0, p.phase + pi * (static_cast<double>(p.bin) + p.offset - static_cast<double>(k)));
      }
    }
    std::swap(prev, cur);
  }
  return out;
}

}  // namespace

void StftConfig::validate() const {
  if (!(hop_length > 0 && hop_length <= win_length && win_length <= fft_size)) {
    throw DspError("invalid STFT config: require 0 < hop <= win <= fft (hop=" + std::to_string(hop_length) +
                   ", win=" + std::to_string(win_length) + ", fft=" + std::to_string(fft_size) + ")");
  }
}

std::size_t StftConfig::frame_count(std::size_t samples) const {
  return 1 + (samples + hop_length - 1) / hop_length;
}

void MelConfig::validate() const {
  if (n_mels < 1) throw DspError("n_mels must be >= 1");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
    throw DspError("invalid mel range: require 0 <= fmin < fmax <= sample_rate/2");
  }
  if (!(log_floor > 0.0)) throw DspError("log floor must be positive");
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg) {
  cfg.validate();
  if (wave.samples.size() < cfg.hop_length) {
    throw DspError("waveform of " + std::to_string(wave.samples.size()) + " samples is shorter than one hop (" +
                   std::to_string(cfg.hop_length) + ")");
  }
  detail::RealFft fft(cfg.fft_size);
  return stft_impl(wave.samples, cfg, fft, frame_window(cfg));
}

std::vector<double> istft(const ComplexSpectrogram& spec, const StftConfig& cfg, std::size_t length) {
  cfg.validate();
  if (spec.bins != cfg.bins()) throw DspError("istft: bin count does not match fft size");
  if (spec.frames == 0) throw DspError("istft: empty spectrogram");
  detail::RealFft fft(cfg.fft_size);
  return istft_impl(spec, cfg, length, fft, frame_window(cfg));
}

MagnitudeSpectrogram magnitude(const ComplexSpectrogram& spec) {
  nn::Tensor m = nn::Tensor::matrix(spec.frames, spec.bins);
  for (std::size_t i = 0; i < spec.values.size(); ++i) m[i] = std::abs(spec.values[i]);
  return m;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

nn::Tensor mel_basis(const MelConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.fft_size / 2 + 1;
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  nn::Tensor basis = nn::Tensor::matrix(cfg.n_mels, bins);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.fft_size);
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      basis(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return basis;
}

MelSpectrogram logmel(const MagnitudeSpectrogram& mag, const MelConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.fft_size / 2 + 1;
  if (mag.cols() != bins) {
    throw DspError("logmel: magnitude has " + std::to_string(mag.cols()) + " bins, config expects " + std::to_string(bins));
  }
  const auto basis = mel_basis(cfg);
  const std::size_t frames = mag.rows();
  nn::Tensor out = nn::Tensor::matrix(frames, cfg.n_mels);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double s = 0.0;
      for (std::size_t k = 0; k < bins; ++k) s += basis[m * bins + k] * mag[f * bins + k];
      out(f, m) = std::log(std::max(s, cfg.log_floor));
    }
  }
  return out;
}

namespace {

const Eigen::MatrixXd& cached_pinv(const MelConfig& cfg) {
  using Key = std::tuple<std::size_t, double, double, int, std::size_t>;
  static std::mutex mu;
  static std::map<Key, Eigen::MatrixXd> cache;
  const Key key{cfg.n_mels, cfg.fmin, cfg.fmax, cfg.sample_rate, cfg.fft_size};
  std::lock_guard lock(mu);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const auto basis = mel_basis(cfg);
  Eigen::MatrixXd b(basis.rows(), basis.cols());
  for (std::size_t i = 0; i < basis.rows(); ++i)
    for (std::size_t j = 0; j < basis.cols(); ++j) b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = basis(i, j);
  return cache.emplace(key, b.completeOrthogonalDecomposition().pseudoInverse()).first->second;
}

}  // namespace

MagnitudeSpectrogram mel_to_linear(const MelSpectrogram& mel, const MelConfig& cfg) {
  cfg.validate();
  if (mel.cols() != cfg.n_mels) {
    throw DspError("mel_to_linear: features have " + std::to_string(mel.cols()) + " bins, config expects " +
                   std::to_string(cfg.n_mels));
  }
  const auto& pinv = cached_pinv(cfg);  // [bins, n_mels]
  const std::size_t frames = mel.rows(), bins = static_cast<std::size_t>(pinv.rows());
  nn::Tensor out = nn::Tensor::matrix(frames, bins);
  std::vector<double> lin(cfg.n_mels);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t m = 0; m < cfg.n_mels; ++m) lin[m] = std::exp(mel(f, m));
    for (std::size_t k = 0; k < bins; ++k) {
      double s = 0.0;
      for (std::size_t m = 0; m < cfg.n_mels; ++m) s += pinv(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m)) * lin[m];
      out(f, k) = std::max(s, 0.0);
    }
  }
  return out;
}

MelSpectrogram extract_logmel(const Waveform& wave, const StftConfig& stft_cfg, const MelConfig& mel_cfg) {
  return logmel(magnitude(stft(wave, stft_cfg)), mel_cfg);
}

GriffinLimResult griffin_lim(const MagnitudeSpectrogram& mag, const StftConfig& cfg, const GriffinLimOptions& opt,
                             int sample_rate) {
  cfg.validate();
  if (opt.iterations < 1) throw DspError("griffin_lim: iterations must be >= 1");
  if (!(opt.momentum >= 0.0 && opt.momentum < 1.0)) throw DspError("griffin_lim: momentum must be in [0,1)");
  if (mag.cols() != cfg.bins()) throw DspError("griffin_lim: magnitude bin count does not match fft size");
  if (!mag.all_finite()) throw DspError("griffin_lim: magnitudes must be finite");
  const std::size_t frames = mag.rows();
  if (frames < 2) throw DspError("griffin_lim: need at least two frames");
  const std::size_t len = opt.length ? opt.length : (frames - 1) * cfg.hop_length;
  if (cfg.frame_count(len) != frames) throw DspError("griffin_lim: output length inconsistent with frame count");

  detail::RealFft fft(cfg.fft_size);
  const auto window = frame_window(cfg);
  const std::size_t bins = cfg.bins();

  ComplexSpectrogram angles{frames, bins, std::vector<std::complex<double>>(frames * bins, {1.0, 0.0})};
  if (opt.init == PhaseInit::random) {
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    for (auto& a : angles.values) a = std::polar(1.0, u(rng));
  } else if (opt.init == PhaseInit::phase_vocoder) {
    angles = phase_vocoder_init(mag, cfg);
  }
  ComplexSpectrogram spec{frames, bins, std::vector<std::complex<double>>(frames * bins)};
  ComplexSpectrogram prev{frames, bins, std::vector<std::complex<double>>(frames * bins)};
  const double beta = opt.momentum / (1.0 + opt.momentum);

  GriffinLimResult result;
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    for (std::size_t i = 0; i < spec.values.size(); ++i) spec.values[i] = mag[i] * angles.values[i];
    auto x = istft_impl(spec, cfg, len, fft, window);
    auto rebuilt = stft_impl(x, cfg, fft, window);
    result.consistency.push_back(weighted_consistency(rebuilt, mag));
    for (std::size_t i = 0; i < rebuilt.values.size(); ++i) {
      const auto a = rebuilt.values[i] - beta * prev.values[i];
      const double r = std::abs(a);
      angles.values[i] = r > 1e-16 ? a / r : std::complex<double>(1.0, 0.0);
    }
    prev = std::move(rebuilt);
  }
  for (std::size_t i = 0; i < spec.values.size(); ++i) spec.values[i] = mag[i] * angles.values[i];
  result.wave.samples = istft_impl(spec, cfg, len, fft, window);
  result.wave.sample_rate = sample_rate;
  if (opt.peak_normalize) {
    double peak = 0.0;
    for (double v : result.wave.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.0) {
      for (auto& v : result.wave.samples) v *= 0.95 / peak;
    }
  }
  return result;
}

double spectral_convergence(const Waveform& estimate, const MagnitudeSpectrogram& target, const StftConfig& cfg) {
  const auto est = magnitude(stft(estimate, cfg));
  if (est.rows() != target.rows() || est.cols() != target.cols()) {
    throw DspError("spectral_convergence: spectrogram shapes differ");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    num += (est[i] - target[i]) * (est[i] - target[i]);
    den += target[i] * target[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

// ---- WAV ----

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}
std::uint32_t get_u32(const std::string& s, std::size_t p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[p + i])) << (8 * i);
  return v;
}
std::uint16_t get_u16(const std::string& s, std::size_t p) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[p]) | (static_cast<unsigned char>(s[p + 1]) << 8));
}

}  // namespace

std::string encode_wav(const Waveform& wave) {
  if (wave.sample_rate <= 0) throw DspError("write_wav: sample rate must be positive");
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  std::string s;
  s.reserve(44 + 2 * n);
  s += "RIFF";
  put_u32(s, 36 + 2 * n);
  s += "WAVE";
  s += "fmt ";
  put_u32(s, 16);
  put_u16(s, 1);  // PCM
  put_u16(s, 1);  // mono
  put_u32(s, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(s, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put_u16(s, 2);
  put_u16(s, 16);
  s += "data";
  put_u32(s, 2 * n);
  for (double v : wave.samples) {
    if (!std::isfinite(v)) throw DspError("write_wav: non-finite sample");
    const double q = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
    put_u16(s, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return s;
}

Waveform decode_wav(const std::string& b) {
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) {
    throw WavFormatError("not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  Waveform w;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::string id = b.substr(pos, 4);
    const std::uint32_t size = get_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw WavFormatError("truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (size < 16) throw WavFormatError("fmt chunk too short");
      const auto format = get_u16(b, body);
      const auto channels = get_u16(b, body + 2);
      w.sample_rate = static_cast<int>(get_u32(b, body + 4));
      const auto bits = get_u16(b, body + 14);
      if (format != 1) throw WavFormatError("unsupported WAV encoding " + std::to_string(format) + " (need PCM)");
      if (channels != 1) throw WavFormatError("unsupported channel count " + std::to_string(channels) + " (need mono)");
      if (bits != 16) throw WavFormatError("unsupported sample width " + std::to_string(bits) + " bits (need 16)");
      if (w.sample_rate <= 0) throw WavFormatError("invalid sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw WavFormatError("data chunk precedes fmt chunk");
      if (size % 2) throw WavFormatError("odd data chunk length for PCM16");
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        w.samples[i] = static_cast<std::int16_t>(get_u16(b, body + 2 * i)) / 32768.0;
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw WavFormatError(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WavFormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return decode_wav(ss.str());
  } catch (const WavFormatError& e) {
    throw WavFormatError(path.string() + ": " + e.what());
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  const auto bytes = encode_wav(wave);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DspError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace tts::dsp
