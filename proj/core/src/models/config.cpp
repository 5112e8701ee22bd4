#include "tts/models/config.hpp"

#include <stdexcept>

namespace tts::models {
namespace {

void require_positive(std::size_t v, const char* name) {
  if (v == 0) throw std::invalid_argument(std::string(name) + " must be > 0");
}

template <typename T>
void get_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

ModelKind parse_model_kind(const std::string& s) {
  if (s == "tacotron2") return ModelKind::tacotron2;
  if (s == "transformer") return ModelKind::transformer;
  if (s == "fastspeech") return ModelKind::fastspeech;
  throw std::invalid_argument("unknown model kind '" + s + "' (expected tacotron2|transformer|fastspeech)");
}

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::tacotron2: return "tacotron2";
    case ModelKind::transformer: return "transformer";
    case ModelKind::fastspeech: return "fastspeech";
  }
  return "tacotron2";
}

void Tacotron2Config::validate() const {
  require_positive(vocab_size, "vocab_size");
  require_positive(embed_dim, "embed_dim");
  require_positive(encoder_layers, "encoder_layers");
  require_positive(encoder_units, "encoder_units");
  require_positive(decoder_layers, "decoder_layers");
  require_positive(decoder_units, "decoder_units");
  require_positive(att_dim, "att_dim");
  require_positive(att_conv_channels, "att_conv_channels");
  require_positive(reduction_factor, "reduction_factor");
  require_positive(n_mels, "n_mels");
  if (att_conv_kernel % 2 == 0) throw std::invalid_argument("att_conv_kernel must be odd");
  if (prenet_layers > 0) require_positive(prenet_units, "prenet_units");
  if (postnet.layers > 0 && postnet.kernel % 2 == 0) throw std::invalid_argument("postnet kernel must be odd");
}

void TransformerTtsConfig::validate() const {
  require_positive(vocab_size, "vocab_size");
  require_positive(model_dim, "model_dim");
  require_positive(heads, "heads");
  if (model_dim % heads != 0) throw std::invalid_argument("heads must divide model_dim");
  require_positive(encoder_layers, "encoder_layers");
  require_positive(decoder_layers, "decoder_layers");
  require_positive(ff_dim, "ff_dim");
  require_positive(reduction_factor, "reduction_factor");
  require_positive(n_mels, "n_mels");
  if (prenet_layers > 0) require_positive(prenet_units, "prenet_units");
  if (postnet.layers > 0 && postnet.kernel % 2 == 0) throw std::invalid_argument("postnet kernel must be odd");
}

void FastSpeechConfig::validate() const {
  require_positive(vocab_size, "vocab_size");
  require_positive(model_dim, "model_dim");
  require_positive(heads, "heads");
  if (model_dim % heads != 0) throw std::invalid_argument("heads must divide model_dim");
  require_positive(encoder_layers, "encoder_layers");
  require_positive(decoder_layers, "decoder_layers");
  require_positive(ff_dim, "ff_dim");
  require_positive(duration_layers, "duration_layers");
  require_positive(duration_channels, "duration_channels");
  require_positive(n_mels, "n_mels");
  if (ff_kernel % 2 == 0 || duration_kernel % 2 == 0) throw std::invalid_argument("conv kernels must be odd");
  if (postnet.layers > 0 && postnet.kernel % 2 == 0) throw std::invalid_argument("postnet kernel must be odd");
}

void to_json(nlohmann::json& j, const PostnetConfig& c) {
  j = {{"layers", c.layers}, {"channels", c.channels}, {"kernel", c.kernel}};
}
void from_json(const nlohmann::json& j, PostnetConfig& c) {
  get_opt(j, "layers", c.layers);
  get_opt(j, "channels", c.channels);
  get_opt(j, "kernel", c.kernel);
}

void to_json(nlohmann::json& j, const Tacotron2Config& c) {
  j = {{"vocab_size", c.vocab_size},       {"embed_dim", c.embed_dim},
       {"encoder_layers", c.encoder_layers}, {"encoder_units", c.encoder_units},
       {"decoder_layers", c.decoder_layers}, {"decoder_units", c.decoder_units},
       {"prenet_layers", c.prenet_layers},   {"prenet_units", c.prenet_units},
       {"prenet_dropout", c.prenet_dropout}, {"postnet", c.postnet},
       {"attention", attention::to_string(c.attention)},
       {"att_dim", c.att_dim},               {"att_conv_channels", c.att_conv_channels},
       {"att_conv_kernel", c.att_conv_kernel}, {"reduction_factor", c.reduction_factor},
       {"n_mels", c.n_mels},                 {"spk_embed_dim", c.spk_embed_dim}};
}
void from_json(const nlohmann::json& j, Tacotron2Config& c) {
  get_opt(j, "vocab_size", c.vocab_size);
  get_opt(j, "embed_dim", c.embed_dim);
  get_opt(j, "encoder_layers", c.encoder_layers);
  get_opt(j, "encoder_units", c.encoder_units);
  get_opt(j, "decoder_layers", c.decoder_layers);
  get_opt(j, "decoder_units", c.decoder_units);
  get_opt(j, "prenet_layers", c.prenet_layers);
  get_opt(j, "prenet_units", c.prenet_units);
  get_opt(j, "prenet_dropout", c.prenet_dropout);
  get_opt(j, "postnet", c.postnet);
  if (j.contains("attention")) c.attention = attention::parse_attention_kind(j.at("attention").get<std::string>());
  get_opt(j, "att_dim", c.att_dim);
  get_opt(j, "att_conv_channels", c.att_conv_channels);
  get_opt(j, "att_conv_kernel", c.att_conv_kernel);
  get_opt(j, "reduction_factor", c.reduction_factor);
  get_opt(j, "n_mels", c.n_mels);
  get_opt(j, "spk_embed_dim", c.spk_embed_dim);
}

void to_json(nlohmann::json& j, const TransformerTtsConfig& c) {
  j = {{"vocab_size", c.vocab_size},         {"model_dim", c.model_dim},
       {"heads", c.heads},                   {"encoder_layers", c.encoder_layers},
       {"decoder_layers", c.decoder_layers}, {"ff_dim", c.ff_dim},
       {"dropout", c.dropout},               {"prenet_layers", c.prenet_layers},
       {"prenet_units", c.prenet_units},     {"prenet_dropout", c.prenet_dropout},
       {"postnet", c.postnet},               {"reduction_factor", c.reduction_factor},
       {"n_mels", c.n_mels},                 {"spk_embed_dim", c.spk_embed_dim}};
}
void from_json(const nlohmann::json& j, TransformerTtsConfig& c) {
  get_opt(j, "vocab_size", c.vocab_size);
  get_opt(j, "model_dim", c.model_dim);
  get_opt(j, "heads", c.heads);
  get_opt(j, "encoder_layers", c.encoder_layers);
  get_opt(j, "decoder_layers", c.decoder_layers);
  get_opt(j, "ff_dim", c.ff_dim);
  get_opt(j, "dropout", c.dropout);
  get_opt(j, "prenet_layers", c.prenet_layers);
  get_opt(j, "prenet_units", c.prenet_units);
  get_opt(j, "prenet_dropout", c.prenet_dropout);
  get_opt(j, "postnet", c.postnet);
  get_opt(j, "reduction_factor", c.reduction_factor);
  get_opt(j, "n_mels", c.n_mels);
  get_opt(j, "spk_embed_dim", c.spk_embed_dim);
}

void to_json(nlohmann::json& j, const FastSpeechConfig& c) {
  j = {{"vocab_size", c.vocab_size},           {"model_dim", c.model_dim},
       {"heads", c.heads},                     {"encoder_layers", c.encoder_layers},
       {"decoder_layers", c.decoder_layers},   {"ff_dim", c.ff_dim},
       {"ff_kernel", c.ff_kernel},             {"duration_layers", c.duration_layers},
       {"duration_channels", c.duration_channels}, {"duration_kernel", c.duration_kernel},
       {"dropout", c.dropout},                 {"postnet", c.postnet},
       {"n_mels", c.n_mels},                   {"spk_embed_dim", c.spk_embed_dim}};
}
void from_json(const nlohmann::json& j, FastSpeechConfig& c) {
  get_opt(j, "vocab_size", c.vocab_size);
  get_opt(j, "model_dim", c.model_dim);
  get_opt(j, "heads", c.heads);
  get_opt(j, "encoder_layers", c.encoder_layers);
  get_opt(j, "decoder_layers", c.decoder_layers);
  get_opt(j, "ff_dim", c.ff_dim);
  get_opt(j, "ff_kernel", c.ff_kernel);
  get_opt(j, "duration_layers", c.duration_layers);
  get_opt(j, "duration_channels", c.duration_channels);
  get_opt(j, "duration_kernel", c.duration_kernel);
  get_opt(j, "dropout", c.dropout);
  get_opt(j, "postnet", c.postnet);
  get_opt(j, "n_mels", c.n_mels);
  get_opt(j, "spk_embed_dim", c.spk_embed_dim);
}

}  // namespace tts::models
