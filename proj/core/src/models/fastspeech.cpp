#include <stdexcept>

#include "blocks.hpp"

namespace tts::models {

using detail::key;
using nn::Tape;
using nn::Var;

nn::ParamStore init_fastspeech(const FastSpeechConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::Initializer init(seed);
  nn::ParamStore s;
  const std::size_t d = cfg.model_dim;
  auto fft_block = [&](const std::string& prefix, std::size_t l) {
    init.layer_norm(s, key(prefix, l, "ln1"), d);
    attention::init_multi_head_attention(init, s, key(prefix, l, "att"), d);
    init.layer_norm(s, key(prefix, l, "ln2"), d);
    init.conv1d(s, key(prefix, l, "conv1"), cfg.ff_kernel, d, cfg.ff_dim);
    init.conv1d(s, key(prefix, l, "conv2"), cfg.ff_kernel, cfg.ff_dim, d);
  };
  init.embedding(s, "embed", cfg.vocab_size, d);
  s.add("enc.alpha", init.constant({1, 1}, 1.0));
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) fft_block("enc", l);
  init.layer_norm(s, "enc.ln", d);
  if (cfg.spk_embed_dim > 0) init.linear(s, "spk_proj", cfg.spk_embed_dim, d);
  for (std::size_t l = 0; l < cfg.duration_layers; ++l) {
    init.conv1d(s, key("dp", l, "conv"), cfg.duration_kernel, l == 0 ? d : cfg.duration_channels, cfg.duration_channels);
    init.layer_norm(s, key("dp", l, "ln"), cfg.duration_channels);
  }
  init.linear(s, "dp.out", cfg.duration_channels, 1);
  s.add("dec.alpha", init.constant({1, 1}, 1.0));
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) fft_block("dec", l);
  init.layer_norm(s, "dec.ln", d);
  init.linear(s, "feat_out", d, cfg.n_mels);
  detail::init_postnet(init, s, cfg.postnet, cfg.n_mels);
  return s;
}

namespace {

// Pre-norm feed-forward Transformer block with a convolutional position-wise network.
Var fft_block(Tape& t, const FastSpeechConfig& cfg, const nn::ParamStore& p, const std::string& prefix, std::size_t l,
              Var x, std::mt19937_64* rng) {
  Var h = nn::layer_norm(t, p, key(prefix, l, "ln1"), x);
  h = attention::multi_head_attention(t, p, key(prefix, l, "att"), h, h, h, cfg.heads).output;
  x = nn::add(x, detail::maybe_dropout(h, cfg.dropout, rng));
  h = nn::layer_norm(t, p, key(prefix, l, "ln2"), x);
  h = nn::conv1d_layer(t, p, key(prefix, l, "conv2"), nn::relu(nn::conv1d_layer(t, p, key(prefix, l, "conv1"), h)));
  return nn::add(x, detail::maybe_dropout(h, cfg.dropout, rng));
}

// Predicts log(1+d) per token from encoder states it cannot backpropagate into.
Var duration_predictor(Tape& t, const FastSpeechConfig& cfg, const nn::ParamStore& p, Var y, std::mt19937_64* rng) {
  for (std::size_t l = 0; l < cfg.duration_layers; ++l) {
    y = nn::layer_norm(t, p, key("dp", l, "ln"), nn::relu(nn::conv1d_layer(t, p, key("dp", l, "conv"), y)));
    y = detail::maybe_dropout(y, cfg.dropout, rng);
  }
  return nn::transpose(nn::linear(t, p, "dp.out", y));
}

}  // namespace

ForwardGraph fastspeech_graph(Tape& t, const FastSpeechConfig& cfg, const nn::ParamStore& p, const ModelInput& in,
                              const ForwardOptions& opt) {
  if (in.tokens == nullptr) throw std::invalid_argument("fastspeech: tokens required");
  if (!p.contains("dp.out.w")) throw std::invalid_argument("fastspeech: duration predictor parameters are absent");
  const auto idx = detail::token_indices(*in.tokens, cfg.vocab_size);
  Var x = nn::gather_rows(t.param(p, "embed"), idx);
  x = detail::add_positions(t, p, "enc.alpha", x);
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) x = fft_block(t, cfg, p, "enc", l, x, opt.rng);
  x = nn::layer_norm(t, p, "enc.ln", x);
  x = detail::add_speaker(t, p, x, in.spk, cfg.spk_embed_dim);

  ForwardGraph out;
  out.encoder_out = x;
  Var dp_in = opt.frozen_duration_input != nullptr ? t.constant(*opt.frozen_duration_input) : nn::stop_gradient(x);
  out.log_durations = duration_predictor(t, cfg, p, dp_in, opt.rng);
  if (in.durations != nullptr) {
    if (in.durations->size() != idx.size()) {
      throw std::invalid_argument("fastspeech: " + std::to_string(in.durations->size()) + " durations for " +
                                  std::to_string(idx.size()) + " tokens");
    }
    out.durations = *in.durations;
  } else {
    out.durations = durations_from_log(out.log_durations.value().values());
  }

  Var y = length_regulate(x, out.durations);
  y = detail::add_positions(t, p, "dec.alpha", y);
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) y = fft_block(t, cfg, p, "dec", l, y, opt.rng);
  y = nn::layer_norm(t, p, "dec.ln", y);
  out.mel_before = nn::linear(t, p, "feat_out", y);
  out.mel_after = detail::postnet(t, p, cfg.postnet, out.mel_before);
  out.alignments.push_back(t.constant(durations_to_alignment(out.durations)));
  return out;
}

SynthesisOutput fastspeech_forward(const FastSpeechConfig& cfg, const nn::ParamStore& p,
                                   const text::TokenSequence& tokens, const DurationSequence* durations,
                                   const SpeakerEmbedding* spk) {
  Tape t(false);
  return to_output(fastspeech_graph(t, cfg, p, {&tokens, nullptr, spk, durations}));
}

FastSpeech::FastSpeech(FastSpeechConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  params_ = init_fastspeech(cfg_, seed);
}

FastSpeech::FastSpeech(FastSpeechConfig cfg, nn::ParamStore params) : cfg_(std::move(cfg)) {
  const auto expected = init_fastspeech(cfg_, 0);
  for (const auto& name : expected.names()) {
    if (!params.contains(name)) throw std::invalid_argument("fastspeech parameters lack '" + name + "'");
    if (params.at(name).shape() != expected.at(name).shape()) {
      throw nn::ShapeError("parameter '" + name + "' has shape " + nn::shape_str(params.at(name).shape()) + ", expected " +
                           nn::shape_str(expected.at(name).shape()));
    }
  }
  params_ = std::move(params);
}

ForwardGraph FastSpeech::forward(Tape& t, const nn::ParamStore& p, const ModelInput& in, const ForwardOptions& opt) const {
  if (in.durations == nullptr) throw std::invalid_argument("fastspeech training requires teacher durations");
  return fastspeech_graph(t, cfg_, p, in, opt);
}

SynthesisOutput FastSpeech::synthesize(const text::TokenSequence& tokens, const SynthesisOptions& opt,
                                       const SpeakerEmbedding* spk) const {
  if (opt.durations == nullptr && !trained_) {
    throw std::logic_error("fastspeech: duration predictor is untrained; supply durations or train the model first");
  }
  return fastspeech_forward(cfg_, params_, tokens, opt.durations, spk);
}

}  // namespace tts::models
