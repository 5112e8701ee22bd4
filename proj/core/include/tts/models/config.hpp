#pragma once

#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

#include "tts/attention/attention.hpp"

namespace tts::models {

enum class ModelKind { tacotron2, transformer, fastspeech };
ModelKind parse_model_kind(const std::string& s);
std::string to_string(ModelKind k);

struct PostnetConfig {
  std::size_t layers = 5;  // 0 disables the post-net
  std::size_t channels = 64;
  std::size_t kernel = 5;
};

struct Tacotron2Config {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t encoder_layers = 1;  // BLSTM layers
  std::size_t encoder_units = 32;  // per direction
  std::size_t decoder_layers = 1;
  std::size_t decoder_units = 64;
  std::size_t prenet_layers = 2;
  std::size_t prenet_units = 32;
  double prenet_dropout = 0.5;
  PostnetConfig postnet;
  attention::AttentionKind attention = attention::AttentionKind::location;
  std::size_t att_dim = 32;
  std::size_t att_conv_channels = 8;
  std::size_t att_conv_kernel = 15;
  std::size_t reduction_factor = 1;
  std::size_t n_mels = 80;
  std::size_t spk_embed_dim = 0;  // 0: no speaker conditioning

  void validate() const;
  std::size_t encoder_dim() const { return 2 * encoder_units; }
};

struct TransformerTtsConfig {
  std::size_t vocab_size = 0;
  std::size_t model_dim = 32;
  std::size_t heads = 2;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;
  std::size_t ff_dim = 64;
  double dropout = 0.1;
  std::size_t prenet_layers = 2;
  std::size_t prenet_units = 32;
  double prenet_dropout = 0.5;
  PostnetConfig postnet;
  std::size_t reduction_factor = 1;
  std::size_t n_mels = 80;
  std::size_t spk_embed_dim = 0;

  void validate() const;
};

struct FastSpeechConfig {
  std::size_t vocab_size = 0;
  std::size_t model_dim = 32;
  std::size_t heads = 2;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;
  std::size_t ff_dim = 64;
  std::size_t ff_kernel = 3;
  std::size_t duration_layers = 2;
  std::size_t duration_channels = 32;
  std::size_t duration_kernel = 3;
  double dropout = 0.1;
  PostnetConfig postnet{0, 64, 5};
  std::size_t n_mels = 80;
  std::size_t spk_embed_dim = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const PostnetConfig& c);
void from_json(const nlohmann::json& j, PostnetConfig& c);
void to_json(nlohmann::json& j, const Tacotron2Config& c);
void from_json(const nlohmann::json& j, Tacotron2Config& c);
void to_json(nlohmann::json& j, const TransformerTtsConfig& c);
void from_json(const nlohmann::json& j, TransformerTtsConfig& c);
void to_json(nlohmann::json& j, const FastSpeechConfig& c);
void from_json(const nlohmann::json& j, FastSpeechConfig& c);

}  // namespace tts::models
