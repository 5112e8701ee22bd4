#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tts/dsp/dsp.hpp"
#include "tts/models/models.hpp"
#include "tts/recipe/synthetic.hpp"
#include "tts/training/training.hpp"

namespace tts::recipe {

class RecipeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- data directories ----
struct DataEntry {
  std::string id;
  std::string text;
  std::filesystem::path wav;
  std::optional<std::filesystem::path> spk_emb;
};

struct DataDir {
  std::filesystem::path path;
  std::vector<DataEntry> entries;  // sorted by id
  bool has_spk_emb = false;

  std::size_t size() const { return entries.size(); }
};

// Reads "text", "wav.scp" and, when present, "spk_emb.scp". Relative wav and embedding
// paths resolve against the data directory. Throws RecipeError naming the offending id
// on duplicates or id-set mismatches.
DataDir parse_data_dir(const std::filesystem::path& path);
// Writes the files sorted by id; paths are written as given.
void write_data_dir(const std::filesystem::path& path, std::vector<DataEntry> entries);

// Whitespace-separated decimal values.
models::SpeakerEmbedding read_embedding(const std::filesystem::path& path);

// ---- configuration ----
// "key = value" lines; '#' starts a comment. Dotted groups: corpus.*, feats.*, model.*,
// loss.*, train.*, synth.*, eval.*. model.* entries are merged into the model's JSON
// configuration (model.postnet.layers reaches the nested field).
struct RecipeConfig {
  std::filesystem::path exp_dir = "exp";
  std::string data_source = "synthetic";  // synthetic | datadir
  std::filesystem::path train_dir, valid_dir, eval_dir;  // data_source = datadir
  std::uint64_t seed = 1;
  int stage_start = -1;
  int stage_end = 5;

  SyntheticCorpusConfig corpus;
  dsp::StftConfig stft{256, 64, 256};
  dsp::MelConfig mel{20, 0.0, 4000.0, 8000, 256, 1e-10};

  models::ModelKind model_kind = models::ModelKind::tacotron2;
  nlohmann::json model_overrides = nlohmann::json::object();
  std::filesystem::path teacher_checkpoint;  // FastSpeech duration teacher

  training::LossWeights loss;
  std::size_t batch_budget = 400;
  std::size_t accum_k = 1;
  std::size_t epochs = 10;
  nn::LrSchedule lr{nn::LrKind::constant, 3e-3, 4000, 256};
  double clip_norm = 1.0;
  std::size_t eval_interval = 0;

  std::size_t gl_iters = 64;
  double gl_momentum = 0.99;
  models::DecodeOptions decode{0.5, 0.0, 10.0, true, 0};

  double del_thresh = 0.02;
  double ins_thresh = 0.02;
  std::string transcriber = "template";  // template | dir
  std::filesystem::path transcript_dir;   // transcriber = dir

  // Applies one "key=value" pair; unknown keys and malformed values throw RecipeError.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  // Model JSON: defaults for model_kind with overrides applied, vocab and mel sizes set.
  nlohmann::json model_json(std::size_t vocab_size) const;

  // Every key with its effective value, one "key = value" line each, sorted.
  std::string canonical() const;
  // FNV-1a 64 of canonical() without the stage range, as 16 hex digits.
  std::string hash() const;
};

RecipeConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
RecipeConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});

std::string fnv1a_hex(std::string_view bytes);
// Hash of a file's bytes, or of a directory's sorted relative names and file bytes.
std::string hash_path(const std::filesystem::path& path);

// ---- stages ----
enum class StageStatus { ok, skipped, failed };
std::string to_string(StageStatus s);

struct StageResult {
  int stage = 0;
  StageStatus status = StageStatus::failed;
  std::vector<std::filesystem::path> artifacts;
  double seconds = 0.0;
  std::string message;
};

// Layout below exp_dir:
//   -1 downloads/synthetic/{wav/<id>.wav, transcripts.tsv}
//    0 data/{train,valid,eval}/{text,wav.scp[,spk_emb.scp]}
//    1 dump/stats.ctr, dump/<set>/feats.ctr (normalized log-mel, one array per id)
//    2 data/lang/tokens.txt, dump/<set>/tokens.txt ("<id> <token ids>")
//    3 train/{model.loss.best, snapshot.ep.N, metrics.jsonl}
//    4 synth/{wav/<id>.wav, outputs.json, feats.ctr, rtf.json}
//    5 eval/{transcripts/<id>.txt, report.json, report.txt, rtf.json}
// Each completed stage leaves .done.stage<N> = {config_hash, input_hashes, timestamp,
// artifacts}; a matching marker with every artifact present makes the stage a skip.
StageResult run_stage(const RecipeConfig& cfg, int stage);
// Runs cfg.stage_start..cfg.stage_end, stopping after the first failure.
std::vector<StageResult> run_stages(const RecipeConfig& cfg);

std::filesystem::path marker_path(const RecipeConfig& cfg, int stage);

// Training settings of stage 3 (without the checkpoint metadata).
training::TrainConfig train_config(const RecipeConfig& cfg);
// Normalized features and tokens of dump/<set> as written by stages 1 and 2.
std::vector<training::Utterance> load_training_set(const RecipeConfig& cfg, const std::string& set,
                                                   std::size_t spk_dim = 0);

// Per-token teacher durations from a teacher-forced pass: argmax counts of the most
// diagonal alignment, scaled by the reduction factor and trimmed to `mel.rows()` frames.
models::DurationSequence teacher_durations(const models::TtsModel& teacher, const text::TokenSequence& tokens,
                                           const nn::Tensor& mel);

// ---- synthesis ----
struct SynthesizeOptions {
  std::size_t gl_iters = 64;
  double gl_momentum = 0.99;
  models::DecodeOptions decode;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> vocab;  // must match the checkpoint's vocabulary
  bool dump_align = false;
};

struct SynthesizeReport {
  std::size_t frames = 0;
  double rtf = 0.0;
  bool stopped = false;
  bool hit_maxlen = false;
  std::filesystem::path wav;
  std::optional<std::filesystem::path> alignment;  // <wav stem>.align.ctr
  nn::Tensor mel;  // denormalized model output
};

// Frontend -> model -> Griffin-Lim -> WAV. The checkpoint must carry the extra block
// stage 3 writes (tokens, stft, mel, stats). Empty text throws before the model loads.
SynthesizeReport cli_synthesize(const std::string& text, const std::filesystem::path& checkpoint,
                                const std::filesystem::path& out_wav, const SynthesizeOptions& opt = {});

// Log-mel -> linear magnitude -> Griffin-Lim.
dsp::Waveform vocode(const nn::Tensor& logmel, const dsp::StftConfig& stft, const dsp::MelConfig& mel,
                     std::size_t iters, double momentum, std::uint64_t seed);

}  // namespace tts::recipe
