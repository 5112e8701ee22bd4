#include "tts/models/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tts::models {

SynthesisOutput to_output(const ForwardGraph& g) {
  SynthesisOutput out;
  out.mel_before = g.mel_before.value();
  out.mel_after = g.mel_after.value();
  if (g.stop_logits.valid()) out.stop_logits = g.stop_logits.value().values();
  for (const auto& a : g.alignments) out.alignments.push_back(a.value());
  if (g.log_durations.valid()) out.log_durations = g.log_durations.value().values();
  out.durations = g.durations;
  return out;
}

DurationSequence extract_durations(const AlignmentMatrix& align) {
  DurationSequence d(align.cols(), 0);
  if (align.cols() == 0) return d;
  for (std::size_t t = 0; t < align.rows(); ++t) {
    std::size_t best = 0;
    for (std::size_t n = 1; n < align.cols(); ++n)
      if (align(t, n) > align(t, best)) best = n;
    ++d[best];
  }
  return d;
}

namespace {

std::vector<std::size_t> regulated_indices(const DurationSequence& durations) {
  std::vector<std::size_t> idx;
  for (std::size_t n = 0; n < durations.size(); ++n) idx.insert(idx.end(), durations[n], n);
  if (idx.empty()) throw std::invalid_argument("length_regulate: all durations are zero");
  return idx;
}

}  // namespace

Tensor length_regulate(const Tensor& states, const DurationSequence& durations) {
  if (durations.size() != states.rows()) {
    throw nn::ShapeError("length_regulate: " + std::to_string(durations.size()) + " durations for " +
                         std::to_string(states.rows()) + " states");
  }
  const auto idx = regulated_indices(durations);
  Tensor out = Tensor::matrix(idx.size(), states.cols());
  for (std::size_t t = 0; t < idx.size(); ++t)
    for (std::size_t c = 0; c < states.cols(); ++c) out(t, c) = states(idx[t], c);
  return out;
}

nn::Var length_regulate(nn::Var states, const DurationSequence& durations) {
  if (durations.size() != states.rows()) {
    throw nn::ShapeError("length_regulate: " + std::to_string(durations.size()) + " durations for " +
                         std::to_string(states.rows()) + " states");
  }
  return nn::gather_rows(states, regulated_indices(durations));
}

DurationSequence durations_from_log(const std::vector<double>& log_durations) {
  DurationSequence d(log_durations.size(), 0);
  std::size_t total = 0;
  for (std::size_t n = 0; n < log_durations.size(); ++n) {
    const double v = std::round(std::exp(log_durations[n]) - 1.0);
    d[n] = v > 0.0 && std::isfinite(v) ? static_cast<std::size_t>(v) : 0;
    total += d[n];
  }
  if (total == 0 && !d.empty()) {
    const auto best = std::max_element(log_durations.begin(), log_durations.end()) - log_durations.begin();
    d[static_cast<std::size_t>(best)] = 1;
  }
  return d;
}

AlignmentMatrix durations_to_alignment(const DurationSequence& durations) {
  std::size_t total = 0;
  for (auto v : durations) total += v;
  AlignmentMatrix a = Tensor::matrix(total, durations.size());
  std::size_t t = 0;
  for (std::size_t n = 0; n < durations.size(); ++n)
    for (std::size_t k = 0; k < durations[n]; ++k) a(t++, n) = 1.0;
  return a;
}

SynthesisOutput decode_autoregressive(DecoderSession& session, const DecodeOptions& opt) {
  if (!(opt.threshold > 0.0 && opt.threshold < 1.0)) throw std::invalid_argument("stop threshold must lie in (0,1)");
  if (opt.minlenratio < 0.0 || opt.maxlenratio < opt.minlenratio) {
    throw std::invalid_argument("need maxlenratio >= minlenratio >= 0");
  }
  const double n = static_cast<double>(session.input_length());
  // The 1e-9 slack keeps ratios such as L/N landing exactly on L frames.
  const auto minlen = static_cast<std::size_t>(std::max(0.0, std::ceil(opt.minlenratio * n - 1e-9)));
  const auto maxlen = static_cast<std::size_t>(std::floor(opt.maxlenratio * n + 1e-9));
  if (maxlen == 0) throw std::invalid_argument("maxlenratio * input length allows no frames");

  std::vector<std::vector<double>> rows;
  std::vector<double> stops;
  bool stopped = false, hit_max = false;
  while (true) {
    DecoderStep s = session.step();
    for (std::size_t i = 0; i < s.frames.rows(); ++i) rows.push_back(s.frames.row_values(i));
    stops.push_back(s.stop_logit);
    const double prob = 1.0 / (1.0 + std::exp(-s.stop_logit));
    if (prob > opt.threshold && rows.size() >= minlen) {
      stopped = true;
    }
    if (rows.size() >= maxlen) {
      if (!stopped) hit_max = true;
      if (rows.size() > maxlen) rows.resize(maxlen);
    }
    if (stopped || hit_max) break;
  }
  const std::size_t cols = rows.front().size();
  Tensor mel = Tensor::matrix(rows.size(), cols);
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t c = 0; c < cols; ++c) mel(t, c) = rows[t][c];
  SynthesisOutput out = session.finish(std::move(mel), std::move(stops));
  out.stopped = stopped;
  out.hit_maxlen = hit_max;
  return out;
}

std::unique_ptr<TtsModel> make_model(ModelKind kind, const nlohmann::json& cfg, std::uint64_t seed) {
  switch (kind) {
    case ModelKind::tacotron2: return std::make_unique<Tacotron2>(cfg.get<Tacotron2Config>(), seed);
    case ModelKind::transformer: return std::make_unique<TransformerTts>(cfg.get<TransformerTtsConfig>(), seed);
    case ModelKind::fastspeech: return std::make_unique<FastSpeech>(cfg.get<FastSpeechConfig>(), seed);
  }
  throw std::logic_error("unreachable model kind");
}

nn::Container model_to_container(const TtsModel& model, const nlohmann::json& extra) {
  nn::Container c;
  for (const auto& [name, tensor] : model.params()) c.arrays.emplace(name, tensor);
  c.config = {{"model_kind", to_string(model.kind())},
              {"model", model.config_json()},
              {"trained", model.trained()},
              {"extra", extra}};
  return c;
}

std::unique_ptr<TtsModel> model_from_container(const nn::Container& c) {
  if (!c.config.contains("model_kind") || !c.config.contains("model")) {
    throw nn::FormatError("checkpoint config lacks model_kind/model");
  }
  const ModelKind kind = parse_model_kind(c.config.at("model_kind").get<std::string>());
  nn::ParamStore params;
  for (const auto& [name, tensor] : c.arrays) params.add(name, tensor);
  std::unique_ptr<TtsModel> m;
  const auto& cfg = c.config.at("model");
  switch (kind) {
    case ModelKind::tacotron2: m = std::make_unique<Tacotron2>(cfg.get<Tacotron2Config>(), std::move(params)); break;
    case ModelKind::transformer:
      m = std::make_unique<TransformerTts>(cfg.get<TransformerTtsConfig>(), std::move(params));
      break;
    case ModelKind::fastspeech: m = std::make_unique<FastSpeech>(cfg.get<FastSpeechConfig>(), std::move(params)); break;
  }
  m->set_trained(c.config.value("trained", false));
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const TtsModel& model, const nlohmann::json& extra) {
  nn::write_container(path, model_to_container(model, extra));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto c = nn::read_container(path);
  Checkpoint ck;
  ck.model = model_from_container(c);
  ck.extra = c.config.value("extra", nlohmann::json::object());
  return ck;
}

}  // namespace tts::models
