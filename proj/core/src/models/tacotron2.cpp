#include <cmath>
#include <random>
#include <stdexcept>

#include "blocks.hpp"

namespace tts::models {

using detail::key;
using nn::Tape;
using nn::Var;

nn::ParamStore init_tacotron2(const Tacotron2Config& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::Initializer init(seed);
  nn::ParamStore s;
  init.embedding(s, "embed", cfg.vocab_size, cfg.embed_dim);
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    const std::size_t in = l == 0 ? cfg.embed_dim : cfg.encoder_dim();
    init.lstm(s, key("enc", l, "fwd"), in, cfg.encoder_units);
    init.lstm(s, key("enc", l, "bwd"), in, cfg.encoder_units);
  }
  if (cfg.spk_embed_dim > 0) init.linear(s, "spk_proj", cfg.spk_embed_dim, cfg.encoder_dim());

  attention::LocationAttentionConfig att{cfg.decoder_units, cfg.encoder_dim(), cfg.att_dim, cfg.att_conv_channels,
                                         cfg.att_conv_kernel};
  attention::init_location_attention(init, s, "att", att, cfg.attention == attention::AttentionKind::forward_ta);

  detail::init_prenet(init, s, cfg.n_mels, cfg.prenet_layers, cfg.prenet_units);
  const std::size_t prenet_out = cfg.prenet_layers > 0 ? cfg.prenet_units : cfg.n_mels;
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    const std::size_t in = l == 0 ? prenet_out + cfg.encoder_dim() : cfg.decoder_units;
    init.lstm(s, key("dec", l, "lstm"), in, cfg.decoder_units);
  }
  init.linear(s, "feat_out", cfg.decoder_units + cfg.encoder_dim(), cfg.n_mels * cfg.reduction_factor);
  init.linear(s, "prob_out", cfg.decoder_units + cfg.encoder_dim(), 1);
  detail::init_postnet(init, s, cfg.postnet, cfg.n_mels);
  return s;
}

namespace {

Var encode(Tape& t, const Tacotron2Config& cfg, const nn::ParamStore& p, const text::TokenSequence& tokens,
           const SpeakerEmbedding* spk) {
  Var x = nn::gather_rows(t.param(p, "embed"), detail::token_indices(tokens, cfg.vocab_size));
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    Var fwd = nn::lstm_sequence(t, p, key("enc", l, "fwd"), x);
    Var bwd = nn::lstm_sequence(t, p, key("enc", l, "bwd"), x, true);
    x = nn::concat_cols({fwd, bwd});
  }
  return detail::add_speaker(t, p, x, spk, cfg.spk_embed_dim);
}

struct DecoderState {
  std::vector<nn::LstmState> lstm;
  Var context;
  attention::AttentionState att;
};

DecoderState initial_decoder(Tape& t, const Tacotron2Config& cfg, const nn::ParamStore& p, Var keys) {
  DecoderState st;
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    st.lstm.push_back({t.constant(Tensor::matrix(1, cfg.decoder_units)), t.constant(Tensor::matrix(1, cfg.decoder_units))});
  }
  st.context = t.constant(Tensor::matrix(1, cfg.encoder_dim()));
  st.att = attention::initial_state(t, p, "att", keys, cfg.attention);
  return st;
}

struct StepVars {
  Var frames;  // [r,n_mels]
  Var stop;    // [1,1]
  Var align;   // [1,N]
};

// Attention reads the first decoder layer's previous state; the LSTM stack consumes
// [prenet(prev frame), context] and the projections read [top state, context].
StepVars decoder_step(Tape& t, const Tacotron2Config& cfg, const nn::ParamStore& p, Var keys, DecoderState& st,
                      Var prev_frame, std::mt19937_64* rng) {
  auto ar = attention::attend(t, p, "att", cfg.attention, st.lstm.front().h, keys, st.att);
  st.att = ar.state;
  st.context = ar.context;
  Var x = nn::concat_cols({detail::prenet(t, p, prev_frame, cfg.prenet_layers, cfg.prenet_dropout, rng), ar.context});
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    st.lstm[l] = nn::lstm_step(t, p, key("dec", l, "lstm"), x, st.lstm[l]);
    x = st.lstm[l].h;
  }
  Var zc = nn::concat_cols({x, ar.context});
  StepVars out;
  out.frames = nn::reshape(nn::linear(t, p, "feat_out", zc), {cfg.reduction_factor, cfg.n_mels});
  out.stop = nn::linear(t, p, "prob_out", zc);
  out.align = ar.alignment;
  return out;
}

class Tacotron2Session : public DecoderSession {
 public:
  Tacotron2Session(const Tacotron2Config& cfg, const nn::ParamStore& p, const text::TokenSequence& tokens,
                   const DecodeOptions& opt, const SpeakerEmbedding* spk)
      : cfg_(cfg), p_(p), tape_(false), rng_(opt.seed), dropout_(opt.prenet_dropout) {
    keys_ = encode(tape_, cfg_, p_, tokens, spk);
    st_ = initial_decoder(tape_, cfg_, p_, keys_);
    prev_ = tape_.constant(Tensor::matrix(1, cfg_.n_mels));
  }

  std::size_t input_length() const override { return keys_.rows(); }
  std::size_t frames_per_step() const override { return cfg_.reduction_factor; }

  DecoderStep step() override {
    StepVars v = decoder_step(tape_, cfg_, p_, keys_, st_, prev_, dropout_ ? &rng_ : nullptr);
    align_rows_.push_back(v.align.value().values());
    const std::size_t r = cfg_.reduction_factor;
    prev_ = nn::slice_rows(v.frames, r - 1, 1);
    return {v.frames.value(), v.stop.item()};
  }

  SynthesisOutput finish(Tensor mel_before, std::vector<double> stop_logits) override {
    SynthesisOutput out;
    Tape t(false);
    out.mel_after = detail::postnet(t, p_, cfg_.postnet, t.constant(mel_before)).value();
    out.mel_before = std::move(mel_before);
    out.stop_logits = std::move(stop_logits);
    AlignmentMatrix a = Tensor::matrix(align_rows_.size(), input_length());
    for (std::size_t g = 0; g < align_rows_.size(); ++g)
      for (std::size_t n = 0; n < input_length(); ++n) a(g, n) = align_rows_[g][n];
    out.alignments.push_back(std::move(a));
    return out;
  }

 private:
  const Tacotron2Config& cfg_;
  const nn::ParamStore& p_;
  Tape tape_;
  std::mt19937_64 rng_;
  bool dropout_;
  Var keys_;
  DecoderState st_;
  Var prev_;
  std::vector<std::vector<double>> align_rows_;
};

}  // namespace

ForwardGraph tacotron2_graph(Tape& t, const Tacotron2Config& cfg, const nn::ParamStore& p, const ModelInput& in,
                             const ForwardOptions& opt) {
  if (in.tokens == nullptr || in.targets == nullptr) throw std::invalid_argument("tacotron2: tokens and targets required");
  const Tensor& targets = *in.targets;
  detail::check_targets(targets, cfg.n_mels, cfg.reduction_factor);
  Var keys = encode(t, cfg, p, *in.tokens, in.spk);
  DecoderState st = initial_decoder(t, cfg, p, keys);

  const std::size_t r = cfg.reduction_factor;
  const std::size_t groups = targets.rows() / r;
  Tensor inputs = detail::shifted_decoder_inputs(targets, r);
  std::vector<Var> frames, stops, aligns;
  for (std::size_t g = 0; g < groups; ++g) {
    Var prev = t.constant(Tensor::row(inputs.row_values(g)));
    StepVars v = decoder_step(t, cfg, p, keys, st, prev, opt.rng);
    frames.push_back(v.frames);
    stops.push_back(v.stop);
    aligns.push_back(v.align);
  }
  ForwardGraph out;
  out.mel_before = nn::concat_rows(frames);
  out.mel_after = detail::postnet(t, p, cfg.postnet, out.mel_before);
  out.stop_logits = nn::concat_cols(stops);
  out.alignments.push_back(nn::concat_rows(aligns));
  return out;
}

SynthesisOutput tacotron2_forward(const Tacotron2Config& cfg, const nn::ParamStore& p, const text::TokenSequence& tokens,
                                  const Tensor& targets, const SpeakerEmbedding* spk) {
  Tape t(false);
  return to_output(tacotron2_graph(t, cfg, p, {&tokens, &targets, spk, nullptr}));
}

Tacotron2::Tacotron2(Tacotron2Config cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  params_ = init_tacotron2(cfg_, seed);
}

Tacotron2::Tacotron2(Tacotron2Config cfg, nn::ParamStore params) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto expected = init_tacotron2(cfg_, 0);
  for (const auto& name : expected.names()) {
    if (!params.contains(name)) throw std::invalid_argument("tacotron2 parameters lack '" + name + "'");
    if (params.at(name).shape() != expected.at(name).shape()) {
      throw nn::ShapeError("parameter '" + name + "' has shape " + nn::shape_str(params.at(name).shape()) + ", expected " +
                           nn::shape_str(expected.at(name).shape()));
    }
  }
  params_ = std::move(params);
}

ForwardGraph Tacotron2::forward(Tape& t, const nn::ParamStore& p, const ModelInput& in, const ForwardOptions& opt) const {
  return tacotron2_graph(t, cfg_, p, in, opt);
}

std::unique_ptr<DecoderSession> Tacotron2::start(const text::TokenSequence& tokens, const DecodeOptions& opt,
                                                 const SpeakerEmbedding* spk) const {
  return std::make_unique<Tacotron2Session>(cfg_, params_, tokens, opt, spk);
}

SynthesisOutput Tacotron2::synthesize(const text::TokenSequence& tokens, const SynthesisOptions& opt,
                                      const SpeakerEmbedding* spk) const {
  auto session = start(tokens, opt.decode, spk);
  return decode_autoregressive(*session, opt.decode);
}

}  // namespace tts::models
