#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tts/attention/attention.hpp"
#include "tts/models/models.hpp"
#include "tts/nn/optim.hpp"

namespace tts::training {

using nn::Tensor;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double w_l1 = 1.0;
  double w_l2 = 1.0;
  double bce_pos_weight = 5.0;
  double lambda_ga = 1.0;
  double ga_sigma = 0.4;
  double w_dur = 1.0;

  void validate() const;
};

struct LossReport {
  double total = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double bce = 0.0;
  double guided = 0.0;
  double duration = 0.0;
  std::size_t frames = 0;  // valid frames pooled into the feature losses
};

// What one utterance's outputs are scored against.
struct LossTarget {
  const Tensor* mel = nullptr;           // [T,n_mels], possibly padded
  std::vector<std::uint8_t> frame_mask;  // T entries; empty = all frames valid
  const models::DurationSequence* durations = nullptr;  // FastSpeech
};

// 1 on the last valid frame and every padded frame after it, 0 before; one entry per
// decoder step (group of r frames).
std::vector<double> stop_targets(std::size_t frames, std::size_t valid_frames, std::size_t r);

struct LossGraph {
  nn::Var total;
  LossReport report;
};

// Pools over a batch of utterances:
//   l1, l2: sums over valid frames x bins of both mel_before and mel_after, divided by
//           (valid frames x bins);
//   bce:    weighted sigmoid cross-entropy over valid decoder steps, divided by their count;
//   guided: mean over utterances and attention modules of the guided-attention loss on
//           the valid part of each alignment;
//   duration: squared error between predicted log-durations and log(1+d), per token.
// total = w_l1 l1 + w_l2 l2 + bce + lambda_ga guided + w_dur duration.
LossGraph tts_loss(nn::Tape& t, const std::vector<models::ForwardGraph>& outs, const std::vector<LossTarget>& targets,
                   const LossWeights& w, std::size_t reduction_factor = 1);
LossGraph tts_loss(nn::Tape& t, const models::ForwardGraph& out, const LossTarget& target, const LossWeights& w,
                   std::size_t reduction_factor = 1);

struct BatchPlan {
  std::vector<std::vector<std::size_t>> batches;  // indices into the length list
  std::size_t budget = 0;
};

// Sorts by descending length (ties by index), packs greedily while
// (count+1) * max_len <= budget (singletons always allowed), then shuffles batch order.
BatchPlan make_dynamic_batches(const std::vector<std::size_t>& lengths, std::size_t budget, std::uint64_t shuffle_seed);

struct TrainerState {
  std::size_t epoch = 0;
  std::uint64_t global_step = 0;
  std::size_t k_cur = 0;
  nn::AdamState adam;
  nn::LrSchedule schedule;
  double clip_norm = 1.0;
  nn::ParamStore holding;
  double best_valid = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  std::size_t skipped_batches = 0;
  double last_grad_norm = 0.0;
};

// Adds `grads` to the holding buffer; on the accum_k-th call averages, clips by global
// norm, applies Adam at the scheduled rate and clears the buffer. Non-finite gradients
// are dropped with a warning and leave the counter unchanged. Returns true when the
// parameters were updated.
bool accumulate_and_step(TrainerState& state, nn::ParamStore& params, const nn::ParamStore& grads, std::size_t accum_k);

struct Utterance {
  std::string id;
  text::TokenSequence tokens;
  Tensor mel;  // normalized features
  std::optional<models::SpeakerEmbedding> spk;
  models::DurationSequence durations;  // FastSpeech teacher durations
};

struct TrainConfig {
  LossWeights weights;
  std::size_t batch_budget = 4000;  // frame-elements: batch size x longest target
  std::size_t accum_k = 1;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  nn::LrSchedule lr;
  double clip_norm = 1.0;
  std::size_t eval_interval = 0;  // optimizer steps between validations; 0 = per epoch only
  bool dropout = true;
  std::filesystem::path out_dir;
  nlohmann::json checkpoint_extra = nlohmann::json::object();
  // Optional per-evaluation callback (e.g. progress printing).
  std::function<void(const nlohmann::json&)> on_eval;
  // Optional: stop after the current evaluation when this returns true.
  std::function<bool(const nlohmann::json&)> stop_when;
};

struct EvalResult {
  LossReport loss;
  double diagonality = 0.0;
};

// Teacher-forced validation loss and mean diagonality (no dropout). For multi-head
// models an utterance's diagonality is that of its most diagonal head.
EvalResult evaluate(const models::TtsModel& model, const std::vector<Utterance>& data, const LossWeights& w);

// Teacher-forced loss graph for a batch of utterances (targets padded to a multiple of r).
LossGraph batch_loss(nn::Tape& t, const models::TtsModel& model, const nn::ParamStore& p,
                     const std::vector<const Utterance*>& batch, const LossWeights& w, std::mt19937_64* rng);

struct TrainResult {
  std::vector<nlohmann::json> metrics;  // one record per evaluation
  std::filesystem::path best_checkpoint;
  std::vector<std::filesystem::path> snapshots;
  TrainerState state;
  bool stopped_early = false;
};

// Writes snapshot.ep.N after every epoch (N = 0 before training), model.loss.best on
// validation improvement, and metrics.jsonl with one line per evaluation. Throws
// TrainingError when the validation loss is not finite.
TrainResult train_run(const TrainConfig& cfg, models::TtsModel& model, const std::vector<Utterance>& train,
                      const std::vector<Utterance>& valid);

nlohmann::json metrics_record(std::size_t epoch, std::uint64_t step, const EvalResult& e, double lr);

}  // namespace tts::training
