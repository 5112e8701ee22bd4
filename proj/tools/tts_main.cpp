// Command-line front end for the staged recipe and single-utterance synthesis.
//
//   tts recipe --config conf/synthetic.conf [--stage-start N] [--stage-end M] [key=value ...]
//   tts data-prep|feats|train|synth|eval --config FILE [key=value ...]
//   tts synth --checkpoint exp/train/model.loss.best --text "abc de" --out out.wav [--dump-align]
//   tts inspect-ckpt exp/train/model.loss.best
//
// Exit status: 0 ok, 1 usage or configuration error, 2 a stage failed.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tts/models/models.hpp"
#include "tts/nn/container.hpp"
#include "tts/recipe/recipe.hpp"

namespace fs = std::filesystem;
using namespace tts;

namespace {

constexpr int kUsage = 1;
constexpr int kStageFailed = 2;

struct ConfigArgs {
  std::string config;
  std::vector<std::string> overrides;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a, bool required = true) {
  auto* opt = cmd->add_option("-c,--config", a.config, "recipe configuration file")->check(CLI::ExistingFile);
  if (required) opt->required();
  cmd->add_option("overrides", a.overrides, "key=value overrides applied after the file");
}

int run_range(const ConfigArgs& a, int from, int to) {
  recipe::RecipeConfig cfg;
  try {
    cfg = recipe::load_config(a.config, a.overrides);
    cfg.stage_start = from;
    cfg.stage_end = to;
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  std::printf("config hash %s, exp_dir %s\n", cfg.hash().c_str(), cfg.exp_dir.string().c_str());
  int rc = 0;
  for (const auto& r : recipe::run_stages(cfg)) {
    std::printf("stage %2d  %-7s %8.2fs  %s\n", r.stage, recipe::to_string(r.status).c_str(), r.seconds,
                r.message.c_str());
    if (r.status == recipe::StageStatus::failed) rc = kStageFailed;
  }
  std::fflush(stdout);
  return rc;
}

int inspect(const std::string& path) {
  const auto c = nn::read_container(path);
  std::cout << c.config.dump(2) << "\n";
  std::size_t total = 0;
  for (const auto& [name, t] : c.arrays) {
    std::cout << name << " [";
    for (std::size_t i = 0; i < t.shape().size(); ++i) std::cout << (i ? "," : "") << t.shape()[i];
    std::cout << "]\n";
    total += t.size();
  }
  std::cout << c.arrays.size() << " arrays, " << total << " values\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"End-to-end text-to-speech toolkit"};
  app.require_subcommand(1);

  ConfigArgs recipe_args;
  int stage_start = -1, stage_end = 5;
  auto* recipe_cmd = app.add_subcommand("recipe", "run a range of recipe stages");
  add_config_args(recipe_cmd, recipe_args);
  recipe_cmd->add_option("--stage-start", stage_start, "first stage")->check(CLI::Range(-1, 5));
  recipe_cmd->add_option("--stage-end", stage_end, "last stage")->check(CLI::Range(-1, 5));

  ConfigArgs prep_args, feats_args, train_args, eval_args, synth_args;
  auto* prep_cmd = app.add_subcommand("data-prep", "stages -1..0: acquire data and build data directories");
  add_config_args(prep_cmd, prep_args);
  auto* feats_cmd = app.add_subcommand("feats", "stages 1..2: features, statistics and token files");
  add_config_args(feats_cmd, feats_args);
  auto* train_cmd = app.add_subcommand("train", "stage 3: train the configured model");
  add_config_args(train_cmd, train_args);
  auto* eval_cmd = app.add_subcommand("eval", "stage 5: CER report over synthesized audio");
  add_config_args(eval_cmd, eval_args);

  auto* synth_cmd = app.add_subcommand("synth", "stage 4, or one sentence with --text");
  add_config_args(synth_cmd, synth_args, false);
  std::string text, checkpoint, out_wav, vocab;
  recipe::SynthesizeOptions sopt;
  synth_cmd->add_option("--text", text, "sentence to synthesize");
  synth_cmd->add_option("--checkpoint", checkpoint, "model checkpoint");
  synth_cmd->add_option("--out", out_wav, "output WAV path");
  synth_cmd->add_option("--vocab", vocab, "token list that must match the checkpoint");
  synth_cmd->add_option("--gl-iters", sopt.gl_iters, "Griffin-Lim iterations")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--gl-momentum", sopt.gl_momentum, "Griffin-Lim momentum")->check(CLI::Range(0.0, 0.999999));
  synth_cmd->add_option("--threshold", sopt.decode.threshold, "stop probability threshold");
  synth_cmd->add_option("--minlenratio", sopt.decode.minlenratio, "minimum frames per input token");
  synth_cmd->add_option("--maxlenratio", sopt.decode.maxlenratio, "maximum frames per input token");
  synth_cmd->add_option("--seed", sopt.seed, "dropout and phase seed");
  synth_cmd->add_flag("--dump-align", sopt.dump_align, "write <out>.align.ctr next to the WAV");

  std::string ckpt_path;
  auto* inspect_cmd = app.add_subcommand("inspect-ckpt", "print a checkpoint's configuration and arrays");
  inspect_cmd->add_option("checkpoint", ckpt_path, "checkpoint path")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (*recipe_cmd) return run_range(recipe_args, stage_start, stage_end);
    if (*prep_cmd) return run_range(prep_args, -1, 0);
    if (*feats_cmd) return run_range(feats_args, 1, 2);
    if (*train_cmd) return run_range(train_args, 3, 3);
    if (*eval_cmd) return run_range(eval_args, 5, 5);
    if (*inspect_cmd) return inspect(ckpt_path);
    if (*synth_cmd) {
      if (text.empty() && checkpoint.empty()) {
        if (synth_args.config.empty()) {
          std::cerr << "error: synth needs --config, or --text with --checkpoint and --out\n";
          return kUsage;
        }
        return run_range(synth_args, 4, 4);
      }
      if (checkpoint.empty() || out_wav.empty()) {
        std::cerr << "error: --text needs --checkpoint and --out\n";
        return kUsage;
      }
      if (!vocab.empty()) sopt.vocab = vocab;
      const auto rep = recipe::cli_synthesize(text, checkpoint, out_wav, sopt);
      std::printf("wrote %s: %zu frames, RTF %.4f, %s\n", rep.wav.string().c_str(), rep.frames, rep.rtf,
                  rep.hit_maxlen ? "hit maxlen" : (rep.stopped ? "stop token" : "no stop"));
      if (rep.alignment) std::printf("alignment %s\n", rep.alignment->string().c_str());
      return 0;
    }
  } catch (const recipe::RecipeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageFailed;
  }
  return kUsage;
}
