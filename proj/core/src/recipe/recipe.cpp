#include "tts/recipe/recipe.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include "tts/dsp/normalization.hpp"
#include "tts/eval/evaluation.hpp"
#include "tts/nn/container.hpp"
#include "tts/text/frontend.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tts::recipe {

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RecipeError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw RecipeError("cannot write " + p.string());
  out << bytes;
  if (!out) throw RecipeError("write failed: " + p.string());
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// "<id> <rest>" lines; blank lines skipped.
std::vector<std::pair<std::string, std::string>> read_scp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RecipeError("missing file " + p.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto sp = t.find_first_of(" \t");
    if (sp == std::string::npos) {
      throw RecipeError(p.string() + ":" + std::to_string(lineno) + ": utterance '" + t + "' has no value");
    }
    out.emplace_back(t.substr(0, sp), trim(std::string_view(t).substr(sp + 1)));
  }
  return out;
}

std::map<std::string, std::string> scp_map(const fs::path& p) {
  std::map<std::string, std::string> m;
  for (auto& [id, v] : read_scp(p)) {
    if (!m.emplace(id, v).second) throw RecipeError("duplicate utterance id '" + id + "' in " + p.string());
  }
  return m;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

}  // namespace

// ---------------------------------------------------------------- data directories

DataDir parse_data_dir(const fs::path& path) {
  if (!fs::is_directory(path)) throw RecipeError("data directory " + path.string() + " does not exist");
  for (const char* f : {"text", "wav.scp"}) {
    if (!fs::exists(path / f)) throw RecipeError("missing file " + (path / f).string());
  }
  const auto text = scp_map(path / "text");
  const auto wav = scp_map(path / "wav.scp");
  std::optional<std::map<std::string, std::string>> spk;
  if (fs::exists(path / "spk_emb.scp")) spk = scp_map(path / "spk_emb.scp");

  auto check_subset = [](const auto& a, const auto& b, const char* an, const char* bn) {
    for (const auto& [id, v] : a) {
      if (!b.count(id)) throw RecipeError("utterance '" + id + "' is in " + an + " but not in " + bn);
    }
  };
  check_subset(text, wav, "text", "wav.scp");
  check_subset(wav, text, "wav.scp", "text");
  if (spk) {
    check_subset(text, *spk, "text", "spk_emb.scp");
    check_subset(*spk, text, "spk_emb.scp", "text");
  }

  DataDir d;
  d.path = path;
  d.has_spk_emb = spk.has_value();
  for (const auto& [id, t] : text) {
    DataEntry e;
    e.id = id;
    e.text = t;
    e.wav = resolve(path, wav.at(id));
    if (spk) e.spk_emb = resolve(path, spk->at(id));
    d.entries.push_back(std::move(e));
  }
  return d;
}

void write_data_dir(const fs::path& path, std::vector<DataEntry> entries) {
  std::sort(entries.begin(), entries.end(), [](const DataEntry& a, const DataEntry& b) { return a.id < b.id; });
  std::set<std::string> seen;
  std::ostringstream text, wav, spk;
  bool any_spk = false;
  for (const auto& e : entries) {
    if (!seen.insert(e.id).second) throw RecipeError("duplicate utterance id '" + e.id + "'");
    text << e.id << ' ' << e.text << '\n';
    wav << e.id << ' ' << e.wav.generic_string() << '\n';
    if (e.spk_emb) {
      any_spk = true;
      spk << e.id << ' ' << e.spk_emb->generic_string() << '\n';
    }
  }
  fs::create_directories(path);
  write_file(path / "text", text.str());
  write_file(path / "wav.scp", wav.str());
  if (any_spk) write_file(path / "spk_emb.scp", spk.str());
}

models::SpeakerEmbedding read_embedding(const fs::path& path) {
  std::istringstream in(read_file(path));
  models::SpeakerEmbedding v;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || !std::isfinite(x)) throw RecipeError("bad embedding value '" + tok + "' in " + path.string());
    v.push_back(x);
  }
  if (v.empty()) throw RecipeError("empty speaker embedding " + path.string());
  return v;
}

// ---------------------------------------------------------------- configuration

namespace {

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw RecipeError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

int parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int x = 0;
  try {
    x = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw RecipeError("config key '" + key + "': expected an integer, got '" + v + "'");
  return x;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size() || !std::isfinite(x)) {
    throw RecipeError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw RecipeError("config key '" + key + "': expected true|false, got '" + v + "'");
}

std::string fmt_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

struct Field {
  std::function<void(RecipeConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RecipeConfig&)> get;
};

template <class F>
Field size_at(F access) {
  return {[access](RecipeConfig& c, const std::string& k, const std::string& v) { access(c) = parse_size(k, v); },
          [access](const RecipeConfig& c) { return std::to_string(access(const_cast<RecipeConfig&>(c))); }};
}

template <class F>
Field double_at(F access) {
  return {[access](RecipeConfig& c, const std::string& k, const std::string& v) { access(c) = parse_double(k, v); },
          [access](const RecipeConfig& c) { return fmt_double(access(const_cast<RecipeConfig&>(c))); }};
}

template <class F>
Field string_at(F access) {
  return {[access](RecipeConfig& c, const std::string&, const std::string& v) { access(c) = v; },
          [access](const RecipeConfig& c) { return std::string(access(const_cast<RecipeConfig&>(c))); }};
}

template <class F>
Field path_at(F access) {
  return {[access](RecipeConfig& c, const std::string&, const std::string& v) { access(c) = fs::path(v); },
          [access](const RecipeConfig& c) { return access(const_cast<RecipeConfig&>(c)).generic_string(); }};
}

#define TTS_FIELD(expr) [](RecipeConfig& c) -> auto& { return c.expr; }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = [] {
    std::map<std::string, Field> m;
    m["exp_dir"] = path_at(TTS_FIELD(exp_dir));
    m["data_source"] = string_at(TTS_FIELD(data_source));
    m["train_dir"] = path_at(TTS_FIELD(train_dir));
    m["valid_dir"] = path_at(TTS_FIELD(valid_dir));
    m["eval_dir"] = path_at(TTS_FIELD(eval_dir));
    m["seed"] = {[](RecipeConfig& c, const std::string& k, const std::string& v) { c.seed = parse_size(k, v); },
                 [](const RecipeConfig& c) { return std::to_string(c.seed); }};
    m["stage_start"] = {[](RecipeConfig& c, const std::string& k, const std::string& v) { c.stage_start = parse_int(k, v); },
                        [](const RecipeConfig& c) { return std::to_string(c.stage_start); }};
    m["stage_end"] = {[](RecipeConfig& c, const std::string& k, const std::string& v) { c.stage_end = parse_int(k, v); },
                      [](const RecipeConfig& c) { return std::to_string(c.stage_end); }};

    m["corpus.n_train"] = size_at(TTS_FIELD(corpus.n_train));
    m["corpus.n_valid"] = size_at(TTS_FIELD(corpus.n_valid));
    m["corpus.n_eval"] = size_at(TTS_FIELD(corpus.n_eval));
    m["corpus.sample_rate"] = size_at(TTS_FIELD(corpus.sample_rate));
    m["corpus.hop"] = size_at(TTS_FIELD(corpus.hop));
    m["corpus.alphabet"] = string_at(TTS_FIELD(corpus.alphabet));
    m["corpus.min_words"] = size_at(TTS_FIELD(corpus.min_words));
    m["corpus.max_words"] = size_at(TTS_FIELD(corpus.max_words));
    m["corpus.min_word_len"] = size_at(TTS_FIELD(corpus.min_word_len));
    m["corpus.max_word_len"] = size_at(TTS_FIELD(corpus.max_word_len));
    m["corpus.min_token_hops"] = size_at(TTS_FIELD(corpus.min_token_hops));
    m["corpus.max_token_hops"] = size_at(TTS_FIELD(corpus.max_token_hops));
    m["corpus.jitter"] = double_at(TTS_FIELD(corpus.jitter));

    m["feats.fft_size"] = {[](RecipeConfig& c, const std::string& k, const std::string& v) {
                             c.stft.fft_size = c.mel.fft_size = parse_size(k, v);
                           },
                           [](const RecipeConfig& c) { return std::to_string(c.stft.fft_size); }};
    m["feats.hop_length"] = size_at(TTS_FIELD(stft.hop_length));
    m["feats.win_length"] = size_at(TTS_FIELD(stft.win_length));
    m["feats.n_mels"] = size_at(TTS_FIELD(mel.n_mels));
    m["feats.fmin"] = double_at(TTS_FIELD(mel.fmin));
    m["feats.fmax"] = double_at(TTS_FIELD(mel.fmax));
    m["feats.sample_rate"] = {
        [](RecipeConfig& c, const std::string& k, const std::string& v) { c.mel.sample_rate = static_cast<int>(parse_size(k, v)); },
        [](const RecipeConfig& c) { return std::to_string(c.mel.sample_rate); }};

    m["model_kind"] = {[](RecipeConfig& c, const std::string& k, const std::string& v) {
                         try {
                           c.model_kind = models::parse_model_kind(v);
                         } catch (const std::exception& e) {
                           throw RecipeError("config key '" + k + "': " + e.what());
                         }
                       },
                       [](const RecipeConfig& c) { return models::to_string(c.model_kind); }};
    m["teacher_checkpoint"] = path_at(TTS_FIELD(teacher_checkpoint));

    m["loss.w_l1"] = double_at(TTS_FIELD(loss.w_l1));
    m["loss.w_l2"] = double_at(TTS_FIELD(loss.w_l2));
    m["loss.bce_pos_weight"] = double_at(TTS_FIELD(loss.bce_pos_weight));
    m["loss.lambda_ga"] = double_at(TTS_FIELD(loss.lambda_ga));
    m["loss.ga_sigma"] = double_at(TTS_FIELD(loss.ga_sigma));
    m["loss.w_dur"] = double_at(TTS_FIELD(loss.w_dur));

    m["train.batch_budget"] = size_at(TTS_FIELD(batch_budget));
    m["train.accum_k"] = size_at(TTS_FIELD(accum_k));
    m["train.epochs"] = size_at(TTS_FIELD(epochs));
    m["train.lr_kind"] = {[](RecipeConfig& c, const std::string& k, const std::string& v) {
                            try {
                              c.lr.kind = nn::parse_lr_kind(v);
                            } catch (const std::exception& e) {
                              throw RecipeError("config key '" + k + "': " + e.what());
                            }
                          },
                          [](const RecipeConfig& c) { return nn::to_string(c.lr.kind); }};
    m["train.lr"] = double_at(TTS_FIELD(lr.scale));
    m["train.warmup"] = {[](RecipeConfig& c, const std::string& k, const std::string& v) { c.lr.warmup = parse_size(k, v); },
                         [](const RecipeConfig& c) { return std::to_string(c.lr.warmup); }};
    m["train.lr_model_dim"] = size_at(TTS_FIELD(lr.model_dim));
    m["train.clip_norm"] = double_at(TTS_FIELD(clip_norm));
    m["train.eval_interval"] = size_at(TTS_FIELD(eval_interval));

    m["synth.gl_iters"] = size_at(TTS_FIELD(gl_iters));
    m["synth.gl_momentum"] = double_at(TTS_FIELD(gl_momentum));
    m["synth.threshold"] = double_at(TTS_FIELD(decode.threshold));
    m["synth.minlenratio"] = double_at(TTS_FIELD(decode.minlenratio));
    m["synth.maxlenratio"] = double_at(TTS_FIELD(decode.maxlenratio));
    m["synth.prenet_dropout"] = {
        [](RecipeConfig& c, const std::string& k, const std::string& v) { c.decode.prenet_dropout = parse_bool(k, v); },
        [](const RecipeConfig& c) { return std::string(c.decode.prenet_dropout ? "true" : "false"); }};

    m["eval.del_thresh"] = double_at(TTS_FIELD(del_thresh));
    m["eval.ins_thresh"] = double_at(TTS_FIELD(ins_thresh));
    m["eval.transcriber"] = string_at(TTS_FIELD(transcriber));
    m["eval.transcript_dir"] = path_at(TTS_FIELD(transcript_dir));
    return m;
  }();
  return f;
}

#undef TTS_FIELD

json parse_json_value(const std::string& v) {
  try {
    return json::parse(v);
  } catch (const json::exception&) {
    return v;  // bare strings such as "location"
  }
}

void flatten(const json& j, const std::string& prefix, std::map<std::string, std::string>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out[prefix] = j.is_string() ? j.get<std::string>() : j.dump();
  }
}

json default_model_json(models::ModelKind k) {
  switch (k) {
    case models::ModelKind::tacotron2: return models::Tacotron2Config{};
    case models::ModelKind::transformer: return models::TransformerTtsConfig{};
    case models::ModelKind::fastspeech: return models::FastSpeechConfig{};
  }
  return json::object();
}

// Keys whose values every stage reads through its inputs rather than its own settings.
bool excluded_from_hash(const std::string& key) {
  return key == "stage_start" || key == "stage_end" || key == "exp_dir";
}

}  // namespace

void RecipeConfig::set(const std::string& key, const std::string& value) {
  if (key.rfind("model.", 0) == 0 && key.size() > 6) {
    json* node = &model_overrides;
    std::string rest = key.substr(6);
    for (std::size_t dot; (dot = rest.find('.')) != std::string::npos; rest = rest.substr(dot + 1)) {
      node = &(*node)[rest.substr(0, dot)];
      if (!node->is_object()) *node = json::object();
    }
    (*node)[rest] = parse_json_value(value);
    return;
  }
  const auto& f = fields();
  auto it = f.find(key);
  if (it == f.end()) throw RecipeError("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

void RecipeConfig::validate() const {
  if (stage_start < -1 || stage_end > 5 || stage_start > stage_end) {
    throw RecipeError("stage range " + std::to_string(stage_start) + ".." + std::to_string(stage_end) +
                      " is not within -1..5");
  }
  if (data_source != "synthetic" && data_source != "datadir") {
    throw RecipeError("data_source must be synthetic or datadir, got '" + data_source + "'");
  }
  if (data_source == "datadir" && (train_dir.empty() || valid_dir.empty() || eval_dir.empty())) {
    throw RecipeError("data_source=datadir needs train_dir, valid_dir and eval_dir");
  }
  if (transcriber != "template" && transcriber != "dir") {
    throw RecipeError("eval.transcriber must be template or dir, got '" + transcriber + "'");
  }
  if (transcriber == "template" && data_source != "synthetic") {
    throw RecipeError("eval.transcriber=template only understands the synthetic corpus; use eval.transcriber=dir");
  }
  if (transcriber == "dir" && transcript_dir.empty()) throw RecipeError("eval.transcriber=dir needs eval.transcript_dir");
  if (accum_k == 0) throw RecipeError("train.accum_k must be positive");
  if (batch_budget == 0) throw RecipeError("train.batch_budget must be positive");
  if (gl_iters == 0) throw RecipeError("synth.gl_iters must be positive");
  if (!(gl_momentum >= 0.0 && gl_momentum < 1.0)) throw RecipeError("synth.gl_momentum must be in [0,1)");
  if (mel.sample_rate != static_cast<int>(corpus.sample_rate) && data_source == "synthetic") {
    throw RecipeError("feats.sample_rate must equal corpus.sample_rate");
  }
  if (mel.fft_size != stft.fft_size) throw RecipeError("mel fft size must equal feats.fft_size");
  try {
    stft.validate();
    mel.validate();
    loss.validate();
  } catch (const std::exception& e) {
    throw RecipeError(e.what());
  }
  // Unknown model.* keys.
  std::map<std::string, std::string> known, given;
  flatten(default_model_json(model_kind), "", known);
  flatten(model_overrides, "", given);
  for (const auto& [k, v] : given) {
    if (!known.count(k)) {
      throw RecipeError("unknown config key 'model." + k + "' for model_kind=" + models::to_string(model_kind));
    }
  }
}

json RecipeConfig::model_json(std::size_t vocab_size) const {
  json j = default_model_json(model_kind);
  j.merge_patch(model_overrides);
  j["vocab_size"] = vocab_size;
  j["n_mels"] = mel.n_mels;
  return j;
}

std::string RecipeConfig::canonical() const {
  std::map<std::string, std::string> all;
  for (const auto& [k, f] : fields()) all[k] = f.get(*this);
  std::map<std::string, std::string> model;
  flatten(model_overrides, "", model);
  for (const auto& [k, v] : model) all["model." + k] = v;
  std::ostringstream os;
  for (const auto& [k, v] : all) os << k << " = " << v << '\n';
  return os.str();
}

std::string RecipeConfig::hash() const {
  std::istringstream in(canonical());
  std::string line, kept;
  while (std::getline(in, line)) {
    if (!excluded_from_hash(line.substr(0, line.find(' ')))) kept += line + "\n";
  }
  return fnv1a_hex(kept);
}

RecipeConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  RecipeConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto apply = [&](const std::string& kv, const std::string& where) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw RecipeError(where + ": expected key=value, got '" + kv + "'");
    const std::string key = trim(std::string_view(kv).substr(0, eq));
    if (key.empty()) throw RecipeError(where + ": empty key");
    c.set(key, trim(std::string_view(kv).substr(eq + 1)));
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    apply(t, "line " + std::to_string(lineno));
  }
  for (const auto& o : overrides) apply(o, "override '" + o + "'");
  c.validate();
  return c;
}

RecipeConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  return parse_config(read_file(path), overrides);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string hash_path(const fs::path& path) {
  if (fs::is_regular_file(path)) return fnv1a_hex(read_file(path));
  if (!fs::is_directory(path)) throw RecipeError("cannot hash missing path " + path.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += fs::relative(f, path).generic_string() + "\n" + fnv1a_hex(read_file(f)) + "\n";
  return fnv1a_hex(acc);
}

// ---------------------------------------------------------------- stages

std::string to_string(StageStatus s) {
  switch (s) {
    case StageStatus::ok: return "ok";
    case StageStatus::skipped: return "skipped";
    case StageStatus::failed: return "failed";
  }
  return "unknown";
}

fs::path marker_path(const RecipeConfig& cfg, int stage) {
  return cfg.exp_dir / (".done.stage" + std::to_string(stage));
}

namespace {

const char* const kSets[] = {"train", "valid", "eval"};

// Prefixes of the keys each stage reads directly.
std::vector<std::string> stage_keys(int stage) {
  switch (stage) {
    case -1: return {"data_source", "seed", "corpus."};
    case 0: return {"data_source", "train_dir", "valid_dir", "eval_dir"};
    case 1: return {"feats."};
    case 2: return {};
    case 3: return {"seed", "model", "teacher_checkpoint", "loss.", "train."};
    case 4: return {"seed", "synth.", "feats."};
    case 5: return {"eval.", "data_source", "seed", "corpus.", "feats."};
  }
  return {};
}

std::string stage_config_hash(const RecipeConfig& cfg, int stage) {
  std::istringstream in(cfg.canonical());
  std::string line, kept;
  const auto keys = stage_keys(stage);
  while (std::getline(in, line)) {
    const std::string key = line.substr(0, line.find(' '));
    for (const auto& p : keys) {
      if (key.rfind(p, 0) == 0) {
        kept += line + "\n";
        break;
      }
    }
  }
  return fnv1a_hex(kept);
}

struct StageFailure : RecipeError {
  using RecipeError::RecipeError;
};

void require(const fs::path& p) {
  if (!fs::exists(p)) throw StageFailure("missing prerequisite " + p.string());
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json stft_json(const dsp::StftConfig& s) {
  return {{"fft_size", s.fft_size}, {"hop_length", s.hop_length}, {"win_length", s.win_length}};
}
dsp::StftConfig stft_from(const json& j) {
  return {j.at("fft_size").get<std::size_t>(), j.at("hop_length").get<std::size_t>(),
          j.at("win_length").get<std::size_t>()};
}
json mel_json(const dsp::MelConfig& m) {
  return {{"n_mels", m.n_mels}, {"fmin", m.fmin}, {"fmax", m.fmax}, {"sample_rate", m.sample_rate},
          {"fft_size", m.fft_size}, {"log_floor", m.log_floor}};
}
dsp::MelConfig mel_from(const json& j) {
  dsp::MelConfig m;
  m.n_mels = j.at("n_mels").get<std::size_t>();
  m.fmin = j.at("fmin").get<double>();
  m.fmax = j.at("fmax").get<double>();
  m.sample_rate = j.at("sample_rate").get<int>();
  m.fft_size = j.at("fft_size").get<std::size_t>();
  m.log_floor = j.at("log_floor").get<double>();
  return m;
}

nn::Container read_container_checked(const fs::path& p) {
  require(p);
  return nn::read_container(p);
}

std::map<std::string, text::TokenSequence> read_token_dump(const fs::path& p) {
  require(p);
  std::map<std::string, text::TokenSequence> out;
  for (auto& [id, rest] : read_scp(p)) {
    std::istringstream in(rest);
    text::TokenSequence s;
    std::int64_t v;
    while (in >> v) s.ids.push_back(v);
    out[id] = std::move(s);
  }
  return out;
}

struct StageOutput {
  std::vector<fs::path> artifacts;  // relative to exp_dir
  std::string message;
};

// ---- -1: acquire ----
StageOutput stage_acquire(const RecipeConfig& cfg) {
  if (cfg.data_source == "datadir") return {{}, "external data directories; nothing to acquire"};
  SyntheticCorpusConfig cc = cfg.corpus;
  cc.seed = cfg.seed;
  const auto corpus = generate_corpus(cc);
  const fs::path root = cfg.exp_dir / "downloads" / "synthetic";
  fs::remove_all(root);
  fs::create_directories(root / "wav");
  std::ostringstream tsv;
  auto dump = [&](const std::vector<SyntheticUtterance>& set, const char* name) {
    for (const auto& u : set) {
      dsp::write_wav(root / "wav" / (u.id + ".wav"), u.wave);
      tsv << u.id << '\t' << name << '\t' << u.text << '\n';
    }
  };
  dump(corpus.train, "train");
  dump(corpus.valid, "valid");
  dump(corpus.eval, "eval");
  write_file(root / "transcripts.tsv", tsv.str());
  return {{"downloads/synthetic"}, std::to_string(corpus.train.size() + corpus.valid.size() + corpus.eval.size()) +
                                       " utterances generated"};
}

// ---- 0: data directories ----
StageOutput stage_data(const RecipeConfig& cfg) {
  StageOutput out;
  if (cfg.data_source == "synthetic") {
    const fs::path root = cfg.exp_dir / "downloads" / "synthetic";
    require(root / "transcripts.tsv");
    std::map<std::string, std::vector<DataEntry>> sets;
    std::istringstream in(read_file(root / "transcripts.tsv"));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string id, set, text;
      std::getline(ls, id, '\t');
      std::getline(ls, set, '\t');
      std::getline(ls, text);
      require(root / "wav" / (id + ".wav"));
      // Relative to data/<set> so the experiment directory can move.
      sets[set].push_back({id, text, fs::path("../../downloads/synthetic/wav") / (id + ".wav"), std::nullopt});
    }
    for (const char* s : kSets) {
      write_data_dir(cfg.exp_dir / "data" / s, sets[s]);
      out.artifacts.push_back(fs::path("data") / s);
    }
  } else {
    const fs::path srcs[] = {cfg.train_dir, cfg.valid_dir, cfg.eval_dir};
    for (int i = 0; i < 3; ++i) {
      require(srcs[i]);
      DataDir d = parse_data_dir(srcs[i]);
      for (auto& e : d.entries) {
        require(e.wav);
        e.wav = fs::absolute(e.wav);
        if (e.spk_emb) e.spk_emb = fs::absolute(*e.spk_emb);
      }
      write_data_dir(cfg.exp_dir / "data" / kSets[i], d.entries);
      out.artifacts.push_back(fs::path("data") / kSets[i]);
    }
  }
  return out;
}

// ---- 1: features ----
StageOutput stage_feats(const RecipeConfig& cfg) {
  for (const char* s : kSets) require(cfg.exp_dir / "data" / s / "text");
  std::map<std::string, std::vector<std::pair<std::string, nn::Tensor>>> feats;
  for (const char* s : kSets) {
    const DataDir d = parse_data_dir(cfg.exp_dir / "data" / s);
    for (const auto& e : d.entries) {
      require(e.wav);
      const auto w = dsp::read_wav(e.wav);
      if (w.sample_rate != cfg.mel.sample_rate) {
        throw StageFailure("utterance '" + e.id + "' has sample rate " + std::to_string(w.sample_rate) + ", expected " +
                           std::to_string(cfg.mel.sample_rate));
      }
      feats[s].emplace_back(e.id, dsp::extract_logmel(w, cfg.stft, cfg.mel));
    }
  }
  std::vector<nn::Tensor> train;
  for (const auto& [id, f] : feats["train"]) train.push_back(f);
  if (train.empty()) throw StageFailure("training set is empty");
  const auto stats = dsp::FeatureStats::compute(train);
  fs::create_directories(cfg.exp_dir / "dump");
  stats.save(cfg.exp_dir / "dump" / "stats.ctr");
  StageOutput out{{"dump/stats.ctr"}, {}};
  for (const char* s : kSets) {
    nn::Container c;
    for (const auto& [id, f] : feats[s]) c.arrays[id] = stats.normalize(f);
    c.config = {{"stft", stft_json(cfg.stft)}, {"mel", mel_json(cfg.mel)}, {"normalized", true}};
    fs::create_directories(cfg.exp_dir / "dump" / s);
    nn::write_container(cfg.exp_dir / "dump" / s / "feats.ctr", c);
    out.artifacts.push_back(fs::path("dump") / s / "feats.ctr");
  }
  return out;
}

// ---- 2: tokens ----
StageOutput stage_tokens(const RecipeConfig& cfg) {
  for (const char* s : kSets) require(cfg.exp_dir / "data" / s / "text");
  std::map<std::string, DataDir> dirs;
  for (const char* s : kSets) dirs[s] = parse_data_dir(cfg.exp_dir / "data" / s);
  std::vector<std::string> texts;
  for (const auto& e : dirs["train"].entries) texts.push_back(text::normalize_text(e.text));
  const auto vocab = text::build_char_vocabulary(texts);
  fs::create_directories(cfg.exp_dir / "data" / "lang");
  vocab.save(cfg.exp_dir / "data" / "lang" / "tokens.txt");
  StageOutput out{{"data/lang/tokens.txt"}, std::to_string(vocab.size()) + " tokens"};
  for (const char* s : kSets) {
    std::ostringstream os;
    for (const auto& e : dirs[s].entries) {
      const auto seq = text::tokenize_chars(text::normalize_text(e.text), vocab);
      os << e.id;
      for (auto id : seq.ids) os << ' ' << id;
      os << '\n';
    }
    write_file(cfg.exp_dir / "dump" / s / "tokens.txt", os.str());
    out.artifacts.push_back(fs::path("dump") / s / "tokens.txt");
  }
  return out;
}

std::vector<training::Utterance> load_set(const RecipeConfig& cfg, const std::string& set, std::size_t spk_dim) {
  const auto feats = read_container_checked(cfg.exp_dir / "dump" / set / "feats.ctr");
  const auto tokens = read_token_dump(cfg.exp_dir / "dump" / set / "tokens.txt");
  std::optional<DataDir> dir;
  if (spk_dim > 0) {
    dir = parse_data_dir(cfg.exp_dir / "data" / set);
    if (!dir->has_spk_emb) throw StageFailure("model expects speaker embeddings but data/" + set + " has no spk_emb.scp");
  }
  std::vector<training::Utterance> out;
  for (const auto& [id, mel] : feats.arrays) {
    auto it = tokens.find(id);
    if (it == tokens.end()) throw StageFailure("utterance '" + id + "' has features but no tokens");
    training::Utterance u;
    u.id = id;
    u.tokens = it->second;
    u.mel = mel;
    if (dir) {
      auto e = std::find_if(dir->entries.begin(), dir->entries.end(), [&](const DataEntry& d) { return d.id == id; });
      u.spk = read_embedding(*e->spk_emb);
      if (u.spk->size() != spk_dim) {
        throw StageFailure("speaker embedding of '" + id + "' has dimension " + std::to_string(u.spk->size()) +
                           ", model expects " + std::to_string(spk_dim));
      }
    }
    out.push_back(std::move(u));
  }
  return out;
}

// ---- 3: training ----
StageOutput stage_train(const RecipeConfig& cfg) {
  const fs::path stats_path = cfg.exp_dir / "dump" / "stats.ctr";
  require(stats_path);
  require(cfg.exp_dir / "data" / "lang" / "tokens.txt");
  const auto vocab = text::Vocabulary::load(cfg.exp_dir / "data" / "lang" / "tokens.txt");
  const auto stats = dsp::FeatureStats::load(stats_path);
  const auto feats_cfg = read_container_checked(cfg.exp_dir / "dump" / "train" / "feats.ctr").config;

  auto model = models::make_model(cfg.model_kind, cfg.model_json(vocab.size()), cfg.seed);
  auto train = load_set(cfg, "train", model->spk_embed_dim());
  auto valid = load_set(cfg, "valid", model->spk_embed_dim());

  if (cfg.model_kind == models::ModelKind::fastspeech) {
    if (cfg.teacher_checkpoint.empty()) throw StageFailure("fastspeech training needs teacher_checkpoint");
    require(cfg.teacher_checkpoint);
    const auto teacher = models::load_checkpoint(cfg.teacher_checkpoint);
    if (!teacher.model->autoregressive()) throw StageFailure("teacher_checkpoint must hold an autoregressive model");
    for (auto* set : {&train, &valid}) {
      for (auto& u : *set) u.durations = teacher_durations(*teacher.model, u.tokens, u.mel);
    }
  }

  training::TrainConfig tc = train_config(cfg);
  tc.checkpoint_extra = {{"tokens", vocab.user_tokens()},
                         {"stft", feats_cfg.at("stft")},
                         {"mel", feats_cfg.at("mel")},
                         {"stats", {{"mean", stats.mean}, {"std", stats.std}}}};
  fs::remove_all(tc.out_dir);
  const auto res = training::train_run(tc, *model, train, valid);
  StageOutput out{{"train/model.loss.best", "train/metrics.jsonl"}, {}};
  for (const auto& s : res.snapshots) out.artifacts.push_back(fs::relative(s, cfg.exp_dir));
  std::ostringstream msg;
  msg << res.metrics.size() << " evaluations, best valid loss " << res.state.best_valid;
  out.message = msg.str();
  return out;
}

struct LoadedSynth {
  models::Checkpoint ckpt;
  text::Vocabulary vocab;
  dsp::StftConfig stft;
  dsp::MelConfig mel;
  dsp::FeatureStats stats;
};

LoadedSynth load_for_synthesis(const fs::path& checkpoint) {
  LoadedSynth s;
  s.ckpt = models::load_checkpoint(checkpoint);
  const auto& x = s.ckpt.extra;
  for (const char* k : {"tokens", "stft", "mel", "stats"}) {
    if (!x.contains(k)) throw RecipeError("checkpoint " + checkpoint.string() + " lacks '" + k + "' (not written by the train stage)");
  }
  s.vocab = text::Vocabulary(x.at("tokens").get<std::vector<std::string>>());
  s.stft = stft_from(x.at("stft"));
  s.mel = mel_from(x.at("mel"));
  s.stats.mean = x.at("stats").at("mean").get<std::vector<double>>();
  s.stats.std = x.at("stats").at("std").get<std::vector<double>>();
  const auto vsize = s.ckpt.model->config_json().at("vocab_size").get<std::size_t>();
  if (vsize != s.vocab.size()) {
    throw RecipeError("checkpoint vocabulary has " + std::to_string(s.vocab.size()) + " tokens but the model expects " +
                      std::to_string(vsize));
  }
  return s;
}

// ---- 4: synthesis ----
StageOutput stage_synth(const RecipeConfig& cfg) {
  const fs::path ckpt = cfg.exp_dir / "train" / "model.loss.best";
  require(ckpt);
  const auto tokens = read_token_dump(cfg.exp_dir / "dump" / "eval" / "tokens.txt");
  auto s = load_for_synthesis(ckpt);
  std::optional<DataDir> dir;
  if (s.ckpt.model->spk_embed_dim() > 0) dir = parse_data_dir(cfg.exp_dir / "data" / "eval");

  const fs::path root = cfg.exp_dir / "synth";
  fs::remove_all(root);
  fs::create_directories(root / "wav");
  std::vector<std::string> ids;
  for (const auto& [id, t] : tokens) ids.push_back(id);

  json outputs = json::array();
  nn::Container feats;
  std::size_t index = 0;
  const auto rtf = eval::measure_rtf(ids, [&](const std::string& id) {
    const std::uint64_t seed = cfg.seed * 1000003 + index++;
    models::TtsModel::SynthesisOptions so;
    so.decode = cfg.decode;
    so.decode.seed = seed;
    std::optional<models::SpeakerEmbedding> spk;
    if (dir) {
      auto e = std::find_if(dir->entries.begin(), dir->entries.end(), [&](const DataEntry& d) { return d.id == id; });
      spk = read_embedding(*e->spk_emb);
    }
    const auto out = s.ckpt.model->synthesize(tokens.at(id), so, spk ? &*spk : nullptr);
    const auto mel = s.stats.denormalize(out.mel_after);
    feats.arrays[id] = mel;
    if (mel.rows() < 2) {
      // Too short to vocode; scored later as a missing transcript.
      outputs.push_back({{"id", id}, {"frames", mel.rows()}, {"stopped", out.stopped},
                         {"hit_maxlen", out.hit_maxlen}, {"audio_seconds", 0.0}});
      return 0.0;
    }
    const auto wave = vocode(mel, s.stft, s.mel, cfg.gl_iters, cfg.gl_momentum, seed);
    dsp::write_wav(root / "wav" / (id + ".wav"), wave);
    outputs.push_back({{"id", id},
                       {"frames", out.mel_after.rows()},
                       {"stopped", out.stopped},
                       {"hit_maxlen", out.hit_maxlen},
                       {"audio_seconds", wave.duration_seconds()}});
    return wave.duration_seconds();
  });
  nn::write_container(root / "feats.ctr", feats);
  write_file(root / "outputs.json", outputs.dump(2) + "\n");
  const json r = {{"ids", rtf.ids}, {"rtf", rtf.rtf}, {"mean", rtf.mean}, {"sd", rtf.sd}, {"excluded", rtf.excluded}};
  write_file(root / "rtf.json", r.dump(2) + "\n");
  std::ostringstream msg;
  msg << ids.size() << " utterances, mean RTF " << rtf.mean;
  return {{"synth/wav", "synth/outputs.json", "synth/feats.ctr", "synth/rtf.json"}, msg.str()};
}

// ---- 5: evaluation ----
StageOutput stage_eval(const RecipeConfig& cfg) {
  require(cfg.exp_dir / "data" / "eval" / "text");
  require(cfg.exp_dir / "synth" / "wav");
  const DataDir d = parse_data_dir(cfg.exp_dir / "data" / "eval");
  std::vector<std::pair<std::string, std::string>> refs;
  for (const auto& e : d.entries) refs.emplace_back(e.id, e.text);

  const fs::path root = cfg.exp_dir / "eval";
  fs::remove_all(root);
  fs::path transcripts = cfg.transcript_dir;
  if (cfg.transcriber == "template") {
    SyntheticCorpusConfig cc = cfg.corpus;
    cc.seed = cfg.seed;
    const TemplateTranscriber asr(cc, cfg.stft, cfg.mel);
    transcripts = root / "transcripts";
    fs::create_directories(transcripts);
    for (const auto& [id, ref] : refs) {
      const fs::path wav = cfg.exp_dir / "synth" / "wav" / (id + ".wav");
      if (!fs::exists(wav)) continue;  // scored as missing
      write_file(transcripts / (id + ".txt"), asr.transcribe(dsp::read_wav(wav)) + "\n");
    }
  } else {
    require(transcripts);
  }
  const auto rep = eval::evaluate_corpus(refs, transcripts, {cfg.del_thresh, cfg.ins_thresh});
  json j = eval::to_json(rep);
  j["system"] = models::to_string(cfg.model_kind);
  j["thresholds"] = {{"deletion", cfg.del_thresh}, {"insertion", cfg.ins_thresh}};
  write_file(root / "report.json", j.dump(2) + "\n");
  write_file(root / "report.txt", eval::format_table(rep, models::to_string(cfg.model_kind)));
  StageOutput out{{"eval/report.json", "eval/report.txt"}, {}};
  if (cfg.transcriber == "template") out.artifacts.push_back("eval/transcripts");
  // Timing varies run to run, so it lives apart from the report.
  if (fs::exists(cfg.exp_dir / "synth" / "rtf.json")) {
    const json rtf = json::parse(read_file(cfg.exp_dir / "synth" / "rtf.json"));
    write_file(root / "rtf.json", json{{"mean", rtf.at("mean")}, {"sd", rtf.at("sd")}, {"n", rtf.at("rtf").size()}}.dump(2) + "\n");
    out.artifacts.push_back("eval/rtf.json");
  }
  std::ostringstream msg;
  msg << std::fixed << std::setprecision(1) << "CER " << 100.0 * rep.pooled.cer() << "%";
  out.message = msg.str();
  return out;
}

// Inputs whose content decides a stage's result.
std::vector<fs::path> stage_inputs(const RecipeConfig& cfg, int stage) {
  const fs::path& e = cfg.exp_dir;
  switch (stage) {
    case -1: return {};
    case 0:
      if (cfg.data_source == "synthetic") return {e / "downloads" / "synthetic"};
      return {cfg.train_dir, cfg.valid_dir, cfg.eval_dir};
    case 1: {
      std::vector<fs::path> v;
      for (const char* s : kSets) v.push_back(e / "data" / s);
      if (cfg.data_source == "synthetic") v.push_back(e / "downloads" / "synthetic");
      return v;
    }
    case 2: return {e / "data" / "train" / "text", e / "data" / "valid" / "text", e / "data" / "eval" / "text"};
    case 3: {
      std::vector<fs::path> v{e / "dump" / "stats.ctr", e / "data" / "lang" / "tokens.txt"};
      for (const char* s : {"train", "valid"}) {
        v.push_back(e / "dump" / s / "feats.ctr");
        v.push_back(e / "dump" / s / "tokens.txt");
      }
      if (cfg.model_kind == models::ModelKind::fastspeech && !cfg.teacher_checkpoint.empty()) v.push_back(cfg.teacher_checkpoint);
      return v;
    }
    case 4: return {e / "train" / "model.loss.best", e / "dump" / "eval" / "tokens.txt"};
    case 5: {
      std::vector<fs::path> v{e / "data" / "eval" / "text", e / "synth" / "wav"};
      if (cfg.transcriber == "dir") v.push_back(cfg.transcript_dir);
      return v;
    }
  }
  return {};
}

json input_hashes(const RecipeConfig& cfg, int stage) {
  json j = json::object();
  for (const auto& p : stage_inputs(cfg, stage)) {
    if (!fs::exists(p)) continue;  // reported by the stage itself
    const auto key = p.lexically_relative(cfg.exp_dir);
    j[key.empty() || key.native().rfind("..", 0) == 0 ? p.generic_string() : key.generic_string()] = hash_path(p);
  }
  return j;
}

}  // namespace

training::TrainConfig train_config(const RecipeConfig& cfg) {
  training::TrainConfig tc;
  tc.weights = cfg.loss;
  tc.batch_budget = cfg.batch_budget;
  tc.accum_k = cfg.accum_k;
  tc.epochs = cfg.epochs;
  tc.seed = cfg.seed;
  tc.lr = cfg.lr;
  tc.clip_norm = cfg.clip_norm;
  tc.eval_interval = cfg.eval_interval;
  tc.out_dir = cfg.exp_dir / "train";
  return tc;
}

std::vector<training::Utterance> load_training_set(const RecipeConfig& cfg, const std::string& set,
                                                   std::size_t spk_dim) {
  try {
    return load_set(cfg, set, spk_dim);
  } catch (const StageFailure& e) {
    throw RecipeError(e.what());
  }
}

StageResult run_stage(const RecipeConfig& cfg, int stage) {
  const auto t0 = std::chrono::steady_clock::now();
  StageResult r;
  r.stage = stage;
  auto finish = [&](StageStatus s, std::string msg) {
    r.status = s;
    r.message = std::move(msg);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  };
  if (stage < -1 || stage > 5) return finish(StageStatus::failed, "stage " + std::to_string(stage) + " is not within -1..5");

  try {
    fs::create_directories(cfg.exp_dir);
    const std::string cfg_hash = stage_config_hash(cfg, stage);
    const json inputs = input_hashes(cfg, stage);
    const fs::path marker = marker_path(cfg, stage);
    if (fs::exists(marker)) {
      const json m = json::parse(read_file(marker), nullptr, false);
      if (!m.is_discarded() && m.value("config_hash", "") == cfg_hash && m.value("input_hashes", json()) == inputs &&
          m.contains("artifacts")) {
        bool present = true;
        for (const auto& a : m.at("artifacts")) {
          const fs::path p = cfg.exp_dir / a.get<std::string>();
          present = present && fs::exists(p);
          r.artifacts.push_back(p);
        }
        if (present) return finish(StageStatus::skipped, "up to date");
        r.artifacts.clear();
      }
    }
    fs::remove(marker);

    StageOutput out;
    switch (stage) {
      case -1: out = stage_acquire(cfg); break;
      case 0: out = stage_data(cfg); break;
      case 1: out = stage_feats(cfg); break;
      case 2: out = stage_tokens(cfg); break;
      case 3: out = stage_train(cfg); break;
      case 4: out = stage_synth(cfg); break;
      case 5: out = stage_eval(cfg); break;
    }
    json arts = json::array();
    for (const auto& a : out.artifacts) {
      arts.push_back(a.generic_string());
      r.artifacts.push_back(cfg.exp_dir / a);
    }
    const json m = {{"config_hash", cfg_hash}, {"input_hashes", inputs}, {"timestamp", timestamp()}, {"artifacts", arts}};
    write_file(marker, m.dump(2) + "\n");
    return finish(StageStatus::ok, out.message);
  } catch (const std::exception& e) {
    r.artifacts.clear();
    return finish(StageStatus::failed, e.what());
  }
}

std::vector<StageResult> run_stages(const RecipeConfig& cfg) {
  cfg.validate();
  std::vector<StageResult> out;
  for (int s = cfg.stage_start; s <= cfg.stage_end; ++s) {
    out.push_back(run_stage(cfg, s));
    if (out.back().status == StageStatus::failed) break;
  }
  return out;
}

models::DurationSequence teacher_durations(const models::TtsModel& teacher, const text::TokenSequence& tokens,
                                           const nn::Tensor& mel) {
  const std::size_t r = teacher.reduction_factor(), T = mel.rows();
  if (T == 0) throw RecipeError("teacher durations need at least one frame");
  nn::Tensor target = nn::Tensor::matrix((T + r - 1) / r * r, mel.cols());
  for (std::size_t t = 0; t < target.rows(); ++t) {
    const std::size_t src = std::min(t, T - 1);
    for (std::size_t b = 0; b < mel.cols(); ++b) target(t, b) = mel(src, b);
  }
  nn::Tape tape;
  models::ModelInput in;
  in.tokens = &tokens;
  in.targets = &target;
  const auto out = models::to_output(teacher.forward(tape, teacher.params(), in));
  if (out.alignments.empty()) throw RecipeError("teacher produced no alignments");
  std::size_t best = 0;
  double best_diag = -1.0;
  for (std::size_t k = 0; k < out.alignments.size(); ++k) {
    const double d = attention::diagonality(out.alignments[k]);
    if (d > best_diag) {
      best_diag = d;
      best = k;
    }
  }
  auto d = models::extract_durations(out.alignments[best]);
  std::size_t total = 0;
  for (auto& x : d) total += (x *= r);
  // Padding frames come off the end.
  for (std::size_t n = d.size(); total > T && n-- > 0;) {
    const std::size_t cut = std::min(d[n], total - T);
    d[n] -= cut;
    total -= cut;
  }
  return d;
}

dsp::Waveform vocode(const nn::Tensor& logmel, const dsp::StftConfig& stft, const dsp::MelConfig& mel,
                     std::size_t iters, double momentum, std::uint64_t seed) {
  dsp::GriffinLimOptions g;
  g.iterations = iters;
  g.momentum = momentum;
  g.seed = seed;
  // The features carry their natural level; rescaling would shift every re-extracted frame.
  g.peak_normalize = false;
  return dsp::griffin_lim(dsp::mel_to_linear(logmel, mel), stft, g, mel.sample_rate).wave;
}

SynthesizeReport cli_synthesize(const std::string& raw, const fs::path& checkpoint, const fs::path& out_wav,
                                const SynthesizeOptions& opt) {
  if (raw.find_first_not_of(" \t\r\n\v\f") == std::string::npos) throw RecipeError("text is empty");
  const std::string norm = text::normalize_text(raw);
  if (!fs::exists(checkpoint)) throw RecipeError("checkpoint " + checkpoint.string() + " does not exist");
  auto s = load_for_synthesis(checkpoint);
  if (opt.vocab) {
    const auto v = text::Vocabulary::load(*opt.vocab);
    if (v.tokens() != s.vocab.tokens()) {
      throw RecipeError("vocabulary " + opt.vocab->string() + " does not match the checkpoint's (" +
                        std::to_string(v.size()) + " vs " + std::to_string(s.vocab.size()) + " tokens)");
    }
  }
  if (s.ckpt.model->spk_embed_dim() > 0) throw RecipeError("multi-speaker checkpoints need a speaker embedding");
  const auto tokens = text::tokenize_chars(norm, s.vocab);

  models::TtsModel::SynthesisOptions so;
  so.decode = opt.decode;
  so.decode.seed = opt.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto out = s.ckpt.model->synthesize(tokens, so);
  SynthesizeReport rep;
  rep.mel = s.stats.denormalize(out.mel_after);
  if (rep.mel.rows() < 2) {
    throw RecipeError("model produced " + std::to_string(rep.mel.rows()) + " frame(s); nothing to vocode");
  }
  const auto wave = vocode(rep.mel, s.stft, s.mel, opt.gl_iters, opt.gl_momentum, opt.seed);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (out_wav.has_parent_path()) fs::create_directories(out_wav.parent_path());
  dsp::write_wav(out_wav, wave);
  rep.frames = out.mel_after.rows();
  rep.rtf = wave.duration_seconds() > 0 ? elapsed / wave.duration_seconds() : 0.0;
  rep.stopped = out.stopped;
  rep.hit_maxlen = out.hit_maxlen;
  rep.wav = out_wav;
  if (opt.dump_align) {
    nn::Container c;
    for (std::size_t k = 0; k < out.alignments.size(); ++k) c.arrays["align." + std::to_string(k)] = out.alignments[k];
    c.config = {{"text", norm}, {"tokens", tokens.ids}};
    rep.alignment = fs::path(out_wav).replace_extension(".align.ctr");
    nn::write_container(*rep.alignment, c);
  }
  return rep;
}

}  // namespace tts::recipe
