#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "tts/attention/attention.hpp"
#include "tts/models/config.hpp"
#include "tts/nn/autograd.hpp"
#include "tts/nn/container.hpp"
#include "tts/text/frontend.hpp"

namespace tts::models {

using nn::Tensor;
using attention::AlignmentMatrix;
using SpeakerEmbedding = std::vector<double>;
using DurationSequence = std::vector<std::size_t>;

// Graph-level outputs of one forward pass, still attached to the tape.
struct ForwardGraph {
  nn::Var mel_before;               // [T,n_mels]
  nn::Var mel_after;                // [T,n_mels]
  nn::Var stop_logits;              // [1,T/r]; invalid for FastSpeech
  std::vector<nn::Var> alignments;  // each [T/r,N] (FastSpeech: hard [T,N])
  nn::Var log_durations;            // [1,N]; FastSpeech only
  nn::Var encoder_out;              // FastSpeech: duration predictor input
  DurationSequence durations;       // durations used by the length regulator
};

struct SynthesisOutput {
  Tensor mel_before;
  Tensor mel_after;
  std::vector<double> stop_logits;
  std::vector<AlignmentMatrix> alignments;
  std::vector<double> log_durations;
  DurationSequence durations;
  bool stopped = false;     // stop token fired
  bool hit_maxlen = false;  // decoding cut at maxlenratio * N
};

SynthesisOutput to_output(const ForwardGraph& g);

struct ForwardOptions {
  // Source for dropout masks; null disables every dropout layer.
  std::mt19937_64* rng = nullptr;
  // FastSpeech: constant input for the duration predictor. Its input is stop-gradient,
  // so a finite-difference check must hold it fixed to match the analytic gradient.
  const Tensor* frozen_duration_input = nullptr;
};

struct ModelInput {
  const text::TokenSequence* tokens = nullptr;
  const Tensor* targets = nullptr;            // teacher forcing (autoregressive models)
  const SpeakerEmbedding* spk = nullptr;
  const DurationSequence* durations = nullptr;  // FastSpeech: teacher or fixed durations
};

// ---- parameter construction ----
nn::ParamStore init_tacotron2(const Tacotron2Config& cfg, std::uint64_t seed);
nn::ParamStore init_transformer_tts(const TransformerTtsConfig& cfg, std::uint64_t seed);
nn::ParamStore init_fastspeech(const FastSpeechConfig& cfg, std::uint64_t seed);

// ---- differentiable forward passes ----
ForwardGraph tacotron2_graph(nn::Tape& t, const Tacotron2Config& cfg, const nn::ParamStore& p, const ModelInput& in,
                             const ForwardOptions& opt = {});
ForwardGraph transformer_tts_graph(nn::Tape& t, const TransformerTtsConfig& cfg, const nn::ParamStore& p,
                                   const ModelInput& in, const ForwardOptions& opt = {});
// Without durations, the predictor drives the length regulator (inference).
ForwardGraph fastspeech_graph(nn::Tape& t, const FastSpeechConfig& cfg, const nn::ParamStore& p, const ModelInput& in,
                              const ForwardOptions& opt = {});

// Value-level wrappers (no dropout, no gradient recording).
SynthesisOutput tacotron2_forward(const Tacotron2Config& cfg, const nn::ParamStore& p, const text::TokenSequence& tokens,
                                  const Tensor& targets, const SpeakerEmbedding* spk = nullptr);
SynthesisOutput transformer_tts_forward(const TransformerTtsConfig& cfg, const nn::ParamStore& p,
                                        const text::TokenSequence& tokens, const Tensor& targets,
                                        const SpeakerEmbedding* spk = nullptr);
SynthesisOutput fastspeech_forward(const FastSpeechConfig& cfg, const nn::ParamStore& p,
                                   const text::TokenSequence& tokens, const DurationSequence* durations,
                                   const SpeakerEmbedding* spk = nullptr);

// ---- duration machinery ----
// d[n] = number of rows whose argmax is n (ties toward the smallest index).
DurationSequence extract_durations(const AlignmentMatrix& align);
// Repeats row n of `states` d[n] times. Throws when every duration is zero.
Tensor length_regulate(const Tensor& states, const DurationSequence& durations);
nn::Var length_regulate(nn::Var states, const DurationSequence& durations);
// round(exp(log_d) - 1) clamped at 0; when everything rounds to 0 the largest
// prediction gets one frame.
DurationSequence durations_from_log(const std::vector<double>& log_durations);
// Hard [T,N] alignment with a one in column n for each frame owned by token n.
AlignmentMatrix durations_to_alignment(const DurationSequence& durations);

// ---- autoregressive decoding ----
struct DecodeOptions {
  double threshold = 0.5;
  double minlenratio = 0.0;
  double maxlenratio = 10.0;
  bool prenet_dropout = true;  // keep decoder prenet dropout on at inference
  std::uint64_t seed = 0;
};

struct DecoderStep {
  Tensor frames;  // [r,n_mels]
  double stop_logit = 0.0;
};

// One utterance's incremental decoder. step() emits the next r frames;
// finish() applies the post-net and collects alignments.
class DecoderSession {
 public:
  virtual ~DecoderSession() = default;
  virtual std::size_t input_length() const = 0;
  virtual std::size_t frames_per_step() const = 0;
  virtual DecoderStep step() = 0;
  virtual SynthesisOutput finish(Tensor mel_before, std::vector<double> stop_logits) = 0;
};

// Steps until sigmoid(stop) > threshold with at least ceil(minlenratio*N) frames, or
// until floor(maxlenratio*N) frames exist (output truncated to that length).
SynthesisOutput decode_autoregressive(DecoderSession& session, const DecodeOptions& opt);

// ---- model objects ----
class TtsModel {
 public:
  virtual ~TtsModel() = default;

  virtual ModelKind kind() const = 0;
  virtual std::size_t n_mels() const = 0;
  virtual std::size_t reduction_factor() const { return 1; }
  virtual std::size_t spk_embed_dim() const = 0;
  virtual nlohmann::json config_json() const = 0;
  bool autoregressive() const { return kind() != ModelKind::fastspeech; }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Teacher-forced graph over `p` (which may differ from params(), e.g. in gradient checks).
  virtual ForwardGraph forward(nn::Tape& t, const nn::ParamStore& p, const ModelInput& in,
                               const ForwardOptions& opt = {}) const = 0;

  struct SynthesisOptions {
    DecodeOptions decode;
    const DurationSequence* durations = nullptr;  // FastSpeech: bypass the predictor
  };
  virtual SynthesisOutput synthesize(const text::TokenSequence& tokens, const SynthesisOptions& opt,
                                     const SpeakerEmbedding* spk = nullptr) const = 0;

  // Marks that the model has received optimizer updates (FastSpeech refuses to predict
  // durations before that).
  bool trained() const { return trained_; }
  void set_trained(bool v) { trained_ = v; }

 protected:
  nn::ParamStore params_;
  bool trained_ = false;
};

class Tacotron2 : public TtsModel {
 public:
  Tacotron2(Tacotron2Config cfg, std::uint64_t seed);
  Tacotron2(Tacotron2Config cfg, nn::ParamStore params);
  const Tacotron2Config& config() const { return cfg_; }

  ModelKind kind() const override { return ModelKind::tacotron2; }
  std::size_t n_mels() const override { return cfg_.n_mels; }
  std::size_t reduction_factor() const override { return cfg_.reduction_factor; }
  std::size_t spk_embed_dim() const override { return cfg_.spk_embed_dim; }
  nlohmann::json config_json() const override { return cfg_; }
  ForwardGraph forward(nn::Tape& t, const nn::ParamStore& p, const ModelInput& in,
                       const ForwardOptions& opt = {}) const override;
  SynthesisOutput synthesize(const text::TokenSequence& tokens, const SynthesisOptions& opt,
                             const SpeakerEmbedding* spk = nullptr) const override;
  std::unique_ptr<DecoderSession> start(const text::TokenSequence& tokens, const DecodeOptions& opt,
                                        const SpeakerEmbedding* spk = nullptr) const;

 private:
  Tacotron2Config cfg_;
};

class TransformerTts : public TtsModel {
 public:
  TransformerTts(TransformerTtsConfig cfg, std::uint64_t seed);
  TransformerTts(TransformerTtsConfig cfg, nn::ParamStore params);
  const TransformerTtsConfig& config() const { return cfg_; }

  ModelKind kind() const override { return ModelKind::transformer; }
  std::size_t n_mels() const override { return cfg_.n_mels; }
  std::size_t reduction_factor() const override { return cfg_.reduction_factor; }
  std::size_t spk_embed_dim() const override { return cfg_.spk_embed_dim; }
  nlohmann::json config_json() const override { return cfg_; }
  ForwardGraph forward(nn::Tape& t, const nn::ParamStore& p, const ModelInput& in,
                       const ForwardOptions& opt = {}) const override;
  SynthesisOutput synthesize(const text::TokenSequence& tokens, const SynthesisOptions& opt,
                             const SpeakerEmbedding* spk = nullptr) const override;
  std::unique_ptr<DecoderSession> start(const text::TokenSequence& tokens, const DecodeOptions& opt,
                                        const SpeakerEmbedding* spk = nullptr) const;

 private:
  TransformerTtsConfig cfg_;
};

class FastSpeech : public TtsModel {
 public:
  FastSpeech(FastSpeechConfig cfg, std::uint64_t seed);
  FastSpeech(FastSpeechConfig cfg, nn::ParamStore params);
  const FastSpeechConfig& config() const { return cfg_; }

  ModelKind kind() const override { return ModelKind::fastspeech; }
  std::size_t n_mels() const override { return cfg_.n_mels; }
  std::size_t spk_embed_dim() const override { return cfg_.spk_embed_dim; }
  nlohmann::json config_json() const override { return cfg_; }
  ForwardGraph forward(nn::Tape& t, const nn::ParamStore& p, const ModelInput& in,
                       const ForwardOptions& opt = {}) const override;
  // Uses opt.durations when given; otherwise requires a trained duration predictor.
  SynthesisOutput synthesize(const text::TokenSequence& tokens, const SynthesisOptions& opt,
                             const SpeakerEmbedding* spk = nullptr) const override;

 private:
  FastSpeechConfig cfg_;
};

std::unique_ptr<TtsModel> make_model(ModelKind kind, const nlohmann::json& cfg, std::uint64_t seed);

// ---- checkpoints ----
// config block: {"model_kind", "model", "trained", "extra"}; arrays are the parameters.
nn::Container model_to_container(const TtsModel& model, const nlohmann::json& extra = nlohmann::json::object());
std::unique_ptr<TtsModel> model_from_container(const nn::Container& c);

void save_checkpoint(const std::filesystem::path& path, const TtsModel& model,
                     const nlohmann::json& extra = nlohmann::json::object());

struct Checkpoint {
  std::unique_ptr<TtsModel> model;
  nlohmann::json extra;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tts::models
