#include "tts/training/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

namespace tts::training {

using nn::Tape;
using nn::Var;

void LossWeights::validate() const {
  for (double v : {w_l1, w_l2, bce_pos_weight, lambda_ga, w_dur}) {
    if (!(v >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
  }
  if (!(w_l1 + w_l2 > 0.0)) throw std::invalid_argument("w_l1 + w_l2 must be positive");
  if (!(ga_sigma > 0.0)) throw std::invalid_argument("guided attention sigma must be positive");
}

std::vector<double> stop_targets(std::size_t frames, std::size_t valid_frames, std::size_t r) {
  if (r == 0 || frames % r != 0) throw std::invalid_argument("stop_targets: frame count not divisible by r");
  if (valid_frames == 0 || valid_frames > frames) throw std::invalid_argument("stop_targets: bad valid frame count");
  std::vector<double> s(frames / r, 0.0);
  for (std::size_t g = (valid_frames - 1) / r; g < s.size(); ++g) s[g] = 1.0;
  return s;
}

LossGraph tts_loss(Tape& t, const std::vector<models::ForwardGraph>& outs, const std::vector<LossTarget>& targets,
                   const LossWeights& w, std::size_t r) {
  w.validate();
  if (outs.empty() || outs.size() != targets.size()) throw std::invalid_argument("tts_loss: outputs and targets differ in count");
  auto zero = [&] { return t.constant(Tensor::scalar(0.0)); };
  Var l1 = zero(), l2 = zero(), bce = zero(), guided = zero(), dur = zero();
  std::size_t frames = 0, stop_steps = 0, guided_utts = 0, tokens = 0, n_mels = 0;

  for (std::size_t i = 0; i < outs.size(); ++i) {
    const auto& g = outs[i];
    const Tensor& y = *targets[i].mel;
    const std::size_t T = y.rows();
    if (g.mel_before.rows() != T || g.mel_before.cols() != y.cols() || g.mel_after.rows() != T) {
      throw nn::ShapeError("tts_loss: output has " + std::to_string(g.mel_before.rows()) + " frames, target has " +
                           std::to_string(T));
    }
    n_mels = y.cols();
    std::vector<std::uint8_t> mask = targets[i].frame_mask;
    if (mask.empty()) mask.assign(T, 1);
    if (mask.size() != T) throw nn::ShapeError("tts_loss: frame mask length differs from target frames");
    const std::size_t valid = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
    // Valid frames form a prefix; the decoder steps covering them are scored.
    std::size_t valid_prefix = 0;
    while (valid_prefix < T && mask[valid_prefix]) ++valid_prefix;
    if (valid_prefix != valid) throw std::invalid_argument("tts_loss: frame mask must mark a prefix of valid frames");
    if (valid == 0) continue;
    frames += valid;

    Var yv = t.constant(y);
    l1 = nn::add(l1, nn::add(nn::masked_abs_sum(g.mel_before, yv, mask), nn::masked_abs_sum(g.mel_after, yv, mask)));
    l2 = nn::add(l2, nn::add(nn::masked_sq_sum(g.mel_before, yv, mask), nn::masked_sq_sum(g.mel_after, yv, mask)));

    if (g.stop_logits.valid()) {
      const std::size_t steps = g.stop_logits.cols();
      if (steps * r != T) throw nn::ShapeError("tts_loss: stop logits do not cover the target frames");
      const std::size_t valid_steps = (valid + r - 1) / r;
      std::vector<std::uint8_t> stop_mask(steps, 0);
      std::fill(stop_mask.begin(), stop_mask.begin() + static_cast<std::ptrdiff_t>(valid_steps), 1);
      bce = nn::add(bce, nn::bce_with_logits_sum(g.stop_logits, stop_targets(T, valid, r), w.bce_pos_weight, stop_mask));
      stop_steps += valid_steps;

      if (!g.alignments.empty()) {
        attention::GuidedAttentionConfig gc{w.ga_sigma, 1.0};
        Var per = zero();
        for (const auto& a : g.alignments) {
          per = nn::add(per, attention::guided_attention_loss(nn::slice_rows(a, 0, valid_steps), gc));
        }
        guided = nn::add(guided, nn::scale(per, 1.0 / static_cast<double>(g.alignments.size())));
        ++guided_utts;
      }
    }

    if (g.log_durations.valid() && targets[i].durations != nullptr) {
      const auto& d = *targets[i].durations;
      if (d.size() != g.log_durations.cols()) throw nn::ShapeError("tts_loss: duration count differs from tokens");
      std::vector<double> logd(d.size());
      for (std::size_t n = 0; n < d.size(); ++n) logd[n] = std::log1p(static_cast<double>(d[n]));
      dur = nn::add(dur, nn::sum(nn::square(nn::sub(g.log_durations, t.constant(Tensor::row(logd))))));
      tokens += d.size();
    }
  }
  if (frames == 0) throw TrainingError("tts_loss: every frame in the batch is masked");

  const double denom = static_cast<double>(frames * n_mels);
  LossGraph out;
  Var l1m = nn::scale(l1, 1.0 / denom);
  Var l2m = nn::scale(l2, 1.0 / denom);
  Var bcem = stop_steps > 0 ? nn::scale(bce, 1.0 / static_cast<double>(stop_steps)) : bce;
  Var gm = guided_utts > 0 ? nn::scale(guided, 1.0 / static_cast<double>(guided_utts)) : guided;
  Var dm = tokens > 0 ? nn::scale(dur, 1.0 / static_cast<double>(tokens)) : dur;
  out.total = nn::add(nn::add(nn::add(nn::scale(l1m, w.w_l1), nn::scale(l2m, w.w_l2)), bcem),
                      nn::add(nn::scale(gm, w.lambda_ga), nn::scale(dm, w.w_dur)));
  out.report.total = out.total.item();
  out.report.l1 = l1m.item();
  out.report.l2 = l2m.item();
  out.report.bce = bcem.item();
  out.report.guided = gm.item();
  out.report.duration = dm.item();
  out.report.frames = frames;
  return out;
}

LossGraph tts_loss(Tape& t, const models::ForwardGraph& out, const LossTarget& target, const LossWeights& w,
                   std::size_t r) {
  return tts_loss(t, std::vector<models::ForwardGraph>{out}, std::vector<LossTarget>{target}, w, r);
}

BatchPlan make_dynamic_batches(const std::vector<std::size_t>& lengths, std::size_t budget, std::uint64_t shuffle_seed) {
  if (budget == 0) throw std::invalid_argument("batch budget must be >= 1");
  for (auto l : lengths)
    if (l == 0) throw std::invalid_argument("utterance lengths must be >= 1");
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] > lengths[b]; });

  BatchPlan plan;
  plan.budget = budget;
  std::vector<std::size_t> cur;
  std::size_t max_len = 0;
  for (std::size_t idx : order) {
    // Descending order: the first member sets the batch's longest target.
    if (!cur.empty() && cur.size() + 1 <= budget / max_len) {
      cur.push_back(idx);
      continue;
    }
    if (!cur.empty()) plan.batches.push_back(std::move(cur));
    cur = {idx};
    max_len = lengths[idx];
  }
  if (!cur.empty()) plan.batches.push_back(std::move(cur));
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(plan.batches.begin(), plan.batches.end(), rng);
  return plan;
}

bool accumulate_and_step(TrainerState& st, nn::ParamStore& params, const nn::ParamStore& grads, std::size_t accum_k) {
  if (accum_k == 0) throw std::invalid_argument("accum_k must be >= 1");
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) {
      ++st.skipped_batches;
      std::cerr << "warning: non-finite gradient in '" << name << "'; batch skipped\n";
      return false;
    }
  }
  if (st.holding.size() == 0) st.holding = grads.zeros_like();
  for (const auto& [name, g] : grads) {
    auto& h = st.holding.at(name);
    if (h.size() != g.size()) throw nn::ShapeError("gradient '" + name + "' changed shape between sub-batches");
    for (std::size_t i = 0; i < g.size(); ++i) h[i] += g[i];
  }
  if (++st.k_cur < accum_k) return false;

  const double inv = 1.0 / static_cast<double>(accum_k);
  for (auto& [name, h] : st.holding)
    for (auto& v : h.values()) v *= inv;
  st.last_grad_norm = nn::clip_global_norm(st.holding, st.clip_norm);
  st.adam.lr = nn::learning_rate(st.schedule, st.global_step + 1);
  nn::adam_step(st.adam, params, st.holding);
  st.holding = nn::ParamStore();
  st.k_cur = 0;
  ++st.global_step;
  return true;
}

namespace {

struct PreparedUtterance {
  Tensor mel;
  std::vector<std::uint8_t> mask;
};

// Pads to a multiple of r with copies of the utterance's minimum value (a log-floor stand-in).
PreparedUtterance prepare(const Utterance& u, std::size_t r) {
  PreparedUtterance p;
  const std::size_t T = u.mel.rows();
  if (T == 0) throw TrainingError("utterance '" + u.id + "' has no frames");
  const std::size_t padded = (T + r - 1) / r * r;
  if (padded == T) {
    p.mel = u.mel;
  } else {
    const double floor = *std::min_element(u.mel.values().begin(), u.mel.values().end());
    p.mel = Tensor::matrix(padded, u.mel.cols(), floor);
    std::copy(u.mel.values().begin(), u.mel.values().end(), p.mel.values().begin());
  }
  p.mask.assign(padded, 0);
  std::fill(p.mask.begin(), p.mask.begin() + static_cast<std::ptrdiff_t>(T), 1);
  return p;
}

void check_durations(const models::TtsModel& model, const Utterance& u) {
  if (model.autoregressive()) return;
  std::size_t total = 0;
  for (auto d : u.durations) total += d;
  if (total != u.mel.rows()) {
    throw TrainingError("utterance '" + u.id + "': durations sum to " + std::to_string(total) + ", features have " +
                        std::to_string(u.mel.rows()) + " frames");
  }
}

}  // namespace

LossGraph batch_loss(Tape& t, const models::TtsModel& model, const nn::ParamStore& p,
                     const std::vector<const Utterance*>& batch, const LossWeights& w, std::mt19937_64* rng) {
  const std::size_t r = model.reduction_factor();
  std::vector<PreparedUtterance> prepared;
  prepared.reserve(batch.size());
  std::vector<models::ForwardGraph> outs;
  std::vector<LossTarget> targets;
  models::ForwardOptions opt;
  opt.rng = rng;
  for (const Utterance* u : batch) {
    prepared.push_back(prepare(*u, r));
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Utterance& u = *batch[i];
    models::ModelInput in;
    in.tokens = &u.tokens;
    in.targets = &prepared[i].mel;
    in.spk = u.spk ? &*u.spk : nullptr;
    check_durations(model, u);
    if (!model.autoregressive()) in.durations = &u.durations;
    outs.push_back(model.forward(t, p, in, opt));
    targets.push_back({&prepared[i].mel, prepared[i].mask, model.autoregressive() ? nullptr : &u.durations});
  }
  return tts_loss(t, outs, targets, w, r);
}

EvalResult evaluate(const models::TtsModel& model, const std::vector<Utterance>& data, const LossWeights& w) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalResult res;
  Tape t(false);
  const std::size_t r = model.reduction_factor();

  std::vector<PreparedUtterance> prepared;
  std::vector<models::ForwardGraph> outs;
  std::vector<LossTarget> targets;
  for (const auto& u : data) {
    check_durations(model, u);
    prepared.push_back(prepare(u, r));
  }
  double diag = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Utterance& u = data[i];
    models::ModelInput in{&u.tokens, &prepared[i].mel, u.spk ? &*u.spk : nullptr,
                          model.autoregressive() ? nullptr : &u.durations};
    outs.push_back(model.forward(t, model.params(), in));
    targets.push_back({&prepared[i].mel, prepared[i].mask, model.autoregressive() ? nullptr : &u.durations});
    const std::size_t valid_steps = (u.mel.rows() + r - 1) / r;
    double best = 0.0;
    for (const auto& a : outs.back().alignments) {
      best = std::max(best, attention::diagonality(nn::slice_rows(a, 0, std::min(valid_steps, a.rows())).value()));
    }
    diag += best;
  }
  res.loss = tts_loss(t, outs, targets, w, r).report;
  res.diagonality = diag / static_cast<double>(data.size());
  return res;
}

nlohmann::json metrics_record(std::size_t epoch, std::uint64_t step, const EvalResult& e, double lr) {
  return {{"epoch", epoch},           {"step", step},           {"total", e.loss.total},
          {"l1", e.loss.l1},          {"l2", e.loss.l2},        {"bce", e.loss.bce},
          {"guided", e.loss.guided},  {"duration", e.loss.duration}, {"diagonality", e.diagonality},
          {"lr", lr}};
}

TrainResult train_run(const TrainConfig& cfg, models::TtsModel& model, const std::vector<Utterance>& train,
                      const std::vector<Utterance>& valid) {
  cfg.weights.validate();
  if (cfg.accum_k == 0) throw std::invalid_argument("accum_k must be >= 1");
  if (train.empty()) throw std::invalid_argument("train_run: empty training set");
  if (valid.empty()) throw std::invalid_argument("train_run: empty validation set");
  if (cfg.out_dir.empty()) throw std::invalid_argument("train_run: output directory required");
  std::filesystem::create_directories(cfg.out_dir);

  TrainResult res;
  TrainerState& st = res.state;
  st.seed = cfg.seed;
  st.schedule = cfg.lr;
  st.clip_norm = cfg.clip_norm;
  std::ofstream log(cfg.out_dir / "metrics.jsonl", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + (cfg.out_dir / "metrics.jsonl").string());

  std::uint64_t last_eval_step = 0;
  auto run_eval = [&](std::size_t epoch) {
    const EvalResult e = evaluate(model, valid, cfg.weights);
    if (!std::isfinite(e.loss.total)) {
      throw TrainingError("validation loss is not finite at epoch " + std::to_string(epoch) + ", step " +
                          std::to_string(st.global_step) + " (l1=" + std::to_string(e.loss.l1) +
                          " l2=" + std::to_string(e.loss.l2) + " bce=" + std::to_string(e.loss.bce) +
                          " guided=" + std::to_string(e.loss.guided) + " last grad norm=" +
                          std::to_string(st.last_grad_norm) + ")");
    }
    const auto rec = metrics_record(epoch, st.global_step, e, nn::learning_rate(st.schedule, std::max<std::uint64_t>(1, st.global_step)));
    log << rec.dump() << '\n';
    log.flush();
    res.metrics.push_back(rec);
    if (cfg.on_eval) cfg.on_eval(rec);
    if (e.loss.total < st.best_valid) {
      st.best_valid = e.loss.total;
      res.best_checkpoint = cfg.out_dir / "model.loss.best";
      models::save_checkpoint(res.best_checkpoint, model, cfg.checkpoint_extra);
    }
    last_eval_step = st.global_step;
    if (cfg.stop_when && cfg.stop_when(rec)) res.stopped_early = true;
  };
  auto snapshot = [&](std::size_t epoch) {
    const auto path = cfg.out_dir / ("snapshot.ep." + std::to_string(epoch));
    models::save_checkpoint(path, model, cfg.checkpoint_extra);
    res.snapshots.push_back(path);
  };

  run_eval(0);
  snapshot(0);
  if (res.stopped_early) return res;

  std::vector<std::size_t> lengths;
  for (const auto& u : train) lengths.push_back(u.mel.rows());
  std::mt19937_64 dropout_rng(cfg.seed);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    st.epoch = epoch;
    const BatchPlan plan = make_dynamic_batches(lengths, cfg.batch_budget, cfg.seed + epoch);
    for (const auto& batch : plan.batches) {
      std::vector<const Utterance*> items;
      for (auto i : batch) items.push_back(&train[i]);
      nn::ParamStore grads;
      {
        Tape t(true);
        LossGraph lg = batch_loss(t, model, model.params(), items, cfg.weights, cfg.dropout ? &dropout_rng : nullptr);
        t.backward(lg.total);
        grads = t.param_grads(model.params());
      }
      if (accumulate_and_step(st, model.params(), grads, cfg.accum_k)) {
        model.set_trained(true);
        if (cfg.eval_interval > 0 && st.global_step % cfg.eval_interval == 0) run_eval(epoch);
      }
      if (res.stopped_early) break;
    }
    if (!res.stopped_early && last_eval_step != st.global_step) run_eval(epoch);
    snapshot(epoch);
    if (res.stopped_early) break;
  }
  return res;
}

}  // namespace tts::training
