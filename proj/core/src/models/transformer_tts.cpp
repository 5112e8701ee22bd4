#include <random>
#include <stdexcept>

#include "blocks.hpp"

namespace tts::models {

using detail::key;
using nn::Tape;
using nn::Var;

nn::ParamStore init_transformer_tts(const TransformerTtsConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::Initializer init(seed);
  nn::ParamStore s;
  const std::size_t d = cfg.model_dim;
  init.embedding(s, "embed", cfg.vocab_size, d);
  s.add("enc.alpha", init.constant({1, 1}, 1.0));
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    init.layer_norm(s, key("enc", l, "ln1"), d);
    attention::init_multi_head_attention(init, s, key("enc", l, "att"), d);
    init.layer_norm(s, key("enc", l, "ln2"), d);
    init.linear(s, key("enc", l, "ff1"), d, cfg.ff_dim);
    init.linear(s, key("enc", l, "ff2"), cfg.ff_dim, d);
  }
  init.layer_norm(s, "enc.ln", d);
  if (cfg.spk_embed_dim > 0) init.linear(s, "spk_proj", cfg.spk_embed_dim, d);

  detail::init_prenet(init, s, cfg.n_mels, cfg.prenet_layers, cfg.prenet_units);
  init.linear(s, "dec.in", cfg.prenet_layers > 0 ? cfg.prenet_units : cfg.n_mels, d);
  s.add("dec.alpha", init.constant({1, 1}, 1.0));
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    init.layer_norm(s, key("dec", l, "ln1"), d);
    attention::init_multi_head_attention(init, s, key("dec", l, "self"), d);
    init.layer_norm(s, key("dec", l, "ln2"), d);
    attention::init_multi_head_attention(init, s, key("dec", l, "src"), d);
    init.layer_norm(s, key("dec", l, "ln3"), d);
    init.linear(s, key("dec", l, "ff1"), d, cfg.ff_dim);
    init.linear(s, key("dec", l, "ff2"), cfg.ff_dim, d);
  }
  init.layer_norm(s, "dec.ln", d);
  init.linear(s, "feat_out", d, cfg.n_mels * cfg.reduction_factor);
  init.linear(s, "prob_out", d, 1);
  detail::init_postnet(init, s, cfg.postnet, cfg.n_mels);
  return s;
}

namespace {

Var feed_forward(Tape& t, const nn::ParamStore& p, const std::string& prefix, std::size_t l, Var x) {
  return nn::linear(t, p, key(prefix, l, "ff2"), nn::relu(nn::linear(t, p, key(prefix, l, "ff1"), x)));
}

// Pre-norm encoder over token embeddings; no encoder prenet.
Var encode(Tape& t, const TransformerTtsConfig& cfg, const nn::ParamStore& p, const text::TokenSequence& tokens,
           const SpeakerEmbedding* spk, std::mt19937_64* rng) {
  Var x = nn::gather_rows(t.param(p, "embed"), detail::token_indices(tokens, cfg.vocab_size));
  x = detail::add_positions(t, p, "enc.alpha", x);
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    Var h = nn::layer_norm(t, p, key("enc", l, "ln1"), x);
    h = attention::multi_head_attention(t, p, key("enc", l, "att"), h, h, h, cfg.heads).output;
    x = nn::add(x, detail::maybe_dropout(h, cfg.dropout, rng));
    h = feed_forward(t, p, "enc", l, nn::layer_norm(t, p, key("enc", l, "ln2"), x));
    x = nn::add(x, detail::maybe_dropout(h, cfg.dropout, rng));
  }
  x = nn::layer_norm(t, p, "enc.ln", x);
  return detail::add_speaker(t, p, x, spk, cfg.spk_embed_dim);
}

struct DecoderVars {
  Var frames;                // [G*r,n_mels]
  Var stops;                 // [1,G]
  std::vector<Var> aligns;   // per layer and head, [G,N]
};

// `inputs` [G,n_mels] are the previous frames for each decoder step.
DecoderVars decode(Tape& t, const TransformerTtsConfig& cfg, const nn::ParamStore& p, Var memory, Var inputs,
                   std::mt19937_64* prenet_rng, std::mt19937_64* rng) {
  const std::size_t groups = inputs.rows();
  Var x = detail::prenet(t, p, inputs, cfg.prenet_layers, cfg.prenet_dropout, prenet_rng);
  x = detail::add_positions(t, p, "dec.alpha", nn::linear(t, p, "dec.in", x));
  const auto mask = detail::causal_mask(groups);
  DecoderVars out;
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    Var h = nn::layer_norm(t, p, key("dec", l, "ln1"), x);
    h = attention::multi_head_attention(t, p, key("dec", l, "self"), h, h, h, cfg.heads, mask).output;
    x = nn::add(x, detail::maybe_dropout(h, cfg.dropout, rng));
    h = nn::layer_norm(t, p, key("dec", l, "ln2"), x);
    auto src = attention::multi_head_attention(t, p, key("dec", l, "src"), h, memory, memory, cfg.heads);
    out.aligns.insert(out.aligns.end(), src.alignments.begin(), src.alignments.end());
    x = nn::add(x, detail::maybe_dropout(src.output, cfg.dropout, rng));
    h = feed_forward(t, p, "dec", l, nn::layer_norm(t, p, key("dec", l, "ln3"), x));
    x = nn::add(x, detail::maybe_dropout(h, cfg.dropout, rng));
  }
  x = nn::layer_norm(t, p, "dec.ln", x);
  out.frames = nn::reshape(nn::linear(t, p, "feat_out", x), {groups * cfg.reduction_factor, cfg.n_mels});
  out.stops = nn::transpose(nn::linear(t, p, "prob_out", x));
  return out;
}

// Re-runs the whole decoder stack over every frame emitted so far at each step.
class TransformerSession : public DecoderSession {
 public:
  TransformerSession(const TransformerTtsConfig& cfg, const nn::ParamStore& p, const text::TokenSequence& tokens,
                     const DecodeOptions& opt, const SpeakerEmbedding* spk)
      : cfg_(cfg), p_(p), rng_(opt.seed), dropout_(opt.prenet_dropout) {
    Tape t(false);
    memory_ = encode(t, cfg_, p_, tokens, spk, nullptr).value();
    inputs_.push_back(std::vector<double>(cfg_.n_mels, 0.0));
  }

  std::size_t input_length() const override { return memory_.rows(); }
  std::size_t frames_per_step() const override { return cfg_.reduction_factor; }

  DecoderStep step() override {
    Tape t(false);
    DecoderVars v = run(t);
    const std::size_t g = inputs_.size() - 1, r = cfg_.reduction_factor;
    DecoderStep out;
    out.frames = Tensor::matrix(r, cfg_.n_mels);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t c = 0; c < cfg_.n_mels; ++c) out.frames(i, c) = v.frames.value()(g * r + i, c);
    out.stop_logit = v.stops.value()[g];
    inputs_.push_back(out.frames.row_values(r - 1));
    return out;
  }

  SynthesisOutput finish(Tensor mel_before, std::vector<double> stop_logits) override {
    SynthesisOutput out;
    Tape t(false);
    const std::size_t groups = stop_logits.size();
    inputs_.resize(groups);
    DecoderVars v = run(t);
    for (const auto& a : v.aligns) out.alignments.push_back(a.value());
    out.mel_after = detail::postnet(t, p_, cfg_.postnet, t.constant(mel_before)).value();
    out.mel_before = std::move(mel_before);
    out.stop_logits = std::move(stop_logits);
    return out;
  }

 private:
  DecoderVars run(Tape& t) {
    Tensor in = Tensor::matrix(inputs_.size(), cfg_.n_mels);
    for (std::size_t g = 0; g < inputs_.size(); ++g)
      for (std::size_t c = 0; c < cfg_.n_mels; ++c) in(g, c) = inputs_[g][c];
    return decode(t, cfg_, p_, t.constant(memory_), t.constant(std::move(in)), dropout_ ? &rng_ : nullptr, nullptr);
  }

  const TransformerTtsConfig& cfg_;
  const nn::ParamStore& p_;
  std::mt19937_64 rng_;
  bool dropout_;
  Tensor memory_;
  std::vector<std::vector<double>> inputs_;
};

}  // namespace

ForwardGraph transformer_tts_graph(Tape& t, const TransformerTtsConfig& cfg, const nn::ParamStore& p,
                                   const ModelInput& in, const ForwardOptions& opt) {
  if (in.tokens == nullptr || in.targets == nullptr) throw std::invalid_argument("transformer: tokens and targets required");
  detail::check_targets(*in.targets, cfg.n_mels, cfg.reduction_factor);
  Var memory = encode(t, cfg, p, *in.tokens, in.spk, opt.rng);
  Var inputs = t.constant(detail::shifted_decoder_inputs(*in.targets, cfg.reduction_factor));
  DecoderVars v = decode(t, cfg, p, memory, inputs, opt.rng, opt.rng);
  ForwardGraph out;
  out.mel_before = v.frames;
  out.mel_after = detail::postnet(t, p, cfg.postnet, v.frames);
  out.stop_logits = v.stops;
  out.alignments = std::move(v.aligns);
  return out;
}

SynthesisOutput transformer_tts_forward(const TransformerTtsConfig& cfg, const nn::ParamStore& p,
                                        const text::TokenSequence& tokens, const Tensor& targets,
                                        const SpeakerEmbedding* spk) {
  Tape t(false);
  return to_output(transformer_tts_graph(t, cfg, p, {&tokens, &targets, spk, nullptr}));
}

TransformerTts::TransformerTts(TransformerTtsConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  params_ = init_transformer_tts(cfg_, seed);
}

TransformerTts::TransformerTts(TransformerTtsConfig cfg, nn::ParamStore params) : cfg_(std::move(cfg)) {
  const auto expected = init_transformer_tts(cfg_, 0);
  for (const auto& name : expected.names()) {
    if (!params.contains(name)) throw std::invalid_argument("transformer parameters lack '" + name + "'");
    if (params.at(name).shape() != expected.at(name).shape()) {
      throw nn::ShapeError("parameter '" + name + "' has shape " + nn::shape_str(params.at(name).shape()) + ", expected " +
                           nn::shape_str(expected.at(name).shape()));
    }
  }
  params_ = std::move(params);
}

ForwardGraph TransformerTts::forward(Tape& t, const nn::ParamStore& p, const ModelInput& in,
                                     const ForwardOptions& opt) const {
  return transformer_tts_graph(t, cfg_, p, in, opt);
}

std::unique_ptr<DecoderSession> TransformerTts::start(const text::TokenSequence& tokens, const DecodeOptions& opt,
                                                      const SpeakerEmbedding* spk) const {
  return std::make_unique<TransformerSession>(cfg_, params_, tokens, opt, spk);
}

SynthesisOutput TransformerTts::synthesize(const text::TokenSequence& tokens, const SynthesisOptions& opt,
                                           const SpeakerEmbedding* spk) const {
  auto session = start(tokens, opt.decode, spk);
  return decode_autoregressive(*session, opt.decode);
}

}  // namespace tts::models
