#include "tts/eval/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tts/text/frontend.hpp"

namespace tts::eval {

double EditStats::cer() const {
  if (ref_len == 0) throw std::invalid_argument("CER of an empty reference");
  return static_cast<double>(errors()) / static_cast<double>(ref_len);
}

EditStats& EditStats::operator+=(const EditStats& o) {
  sub += o.sub;
  del += o.del;
  ins += o.ins;
  ref_len += o.ref_len;
  return *this;
}

EditStats edit_stats(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  struct Cell {
    std::size_t cost = 0, sub = 0;
  };
  // (cost, -sub) compared lexicographically.
  auto better = [](const Cell& a, const Cell& b) { return a.cost < b.cost || (a.cost == b.cost && a.sub > b.sub); };
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {j, 0};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {i, 0};
    for (std::size_t j = 1; j <= m; ++j) {
      const bool same = ref[i - 1] == hyp[j - 1];
      Cell best{prev[j - 1].cost + (same ? 0 : 1), prev[j - 1].sub + (same ? 0 : 1)};
      const Cell del{prev[j].cost + 1, prev[j].sub};
      const Cell ins{cur[j - 1].cost + 1, cur[j - 1].sub};
      if (better(del, best)) best = del;
      if (better(ins, best)) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const Cell end = prev[m];
  // cost = S + D + I and n - m = D - I.
  const std::size_t d_plus_i = end.cost - end.sub;
  EditStats s;
  s.sub = end.sub;
  s.del = (d_plus_i + n - m) / 2;
  s.ins = d_plus_i - s.del;
  s.ref_len = n;
  return s;
}

namespace {

// normalize_text rejects blank input; a blank hypothesis is a legitimate transcript.
std::string normalized_or_empty(std::string_view s) {
  if (s.find_first_not_of(" \t\n\r\v\f") == std::string_view::npos) return {};
  return text::normalize_text(s);
}

}  // namespace

EditStats cer(std::string_view ref, std::string_view hyp) {
  const auto r = text::utf8_chars(normalized_or_empty(ref));
  if (r.empty()) throw std::invalid_argument("CER reference is empty after normalization");
  return edit_stats(r, text::utf8_chars(normalized_or_empty(hyp)));
}

std::string to_string(FailureKind k) {
  switch (k) {
    case FailureKind::none: return "none";
    case FailureKind::deletion: return "deletion";
    case FailureKind::repetition: return "repetition";
  }
  return "unknown";
}

FailureLabel detect_failure(const EditStats& stats, double del_thresh, double ins_thresh, std::string id) {
  if (!(del_thresh > 0.0) || !(ins_thresh > 0.0)) throw std::invalid_argument("failure thresholds must be positive");
  if (stats.ref_len == 0) throw std::invalid_argument("failure detection needs a non-empty reference");
  FailureLabel l;
  l.id = std::move(id);
  l.del_rate = static_cast<double>(stats.del) / static_cast<double>(stats.ref_len);
  l.ins_rate = static_cast<double>(stats.ins) / static_cast<double>(stats.ref_len);
  l.deletion = l.del_rate > del_thresh;
  l.repetition = l.ins_rate > ins_thresh;
  if (l.deletion && l.repetition) {
    l.kind = l.ins_rate > l.del_rate ? FailureKind::repetition : FailureKind::deletion;
  } else if (l.deletion) {
    l.kind = FailureKind::deletion;
  } else if (l.repetition) {
    l.kind = FailureKind::repetition;
  }
  return l;
}

Clock steady_clock() {
  return [] { return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count(); };
}

RtfReport summarize_rtf(std::vector<std::string> ids, std::vector<double> rtf) {
  RtfReport r;
  r.ids = std::move(ids);
  r.rtf = std::move(rtf);
  if (r.rtf.empty()) return r;
  const double n = static_cast<double>(r.rtf.size());
  r.mean = std::accumulate(r.rtf.begin(), r.rtf.end(), 0.0) / n;
  if (r.rtf.size() > 1) {
    double ss = 0.0;
    for (double x : r.rtf) ss += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(ss / (n - 1.0));
  }
  return r;
}

RtfReport measure_rtf(const std::vector<std::string>& ids, const std::function<double(const std::string&)>& synth,
                      const Clock& clock) {
  if (ids.empty()) throw std::invalid_argument("measure_rtf: no utterances");
  std::vector<std::string> kept, excluded;
  std::vector<double> rtf;
  for (const auto& id : ids) {
    const double t0 = clock();
    const double audio = synth(id);
    const double elapsed = clock() - t0;
    if (!(audio > 0.0)) {
      excluded.push_back(id);
      continue;
    }
    kept.push_back(id);
    rtf.push_back(std::max(0.0, elapsed) / audio);
  }
  RtfReport r = summarize_rtf(std::move(kept), std::move(rtf));
  r.excluded = std::move(excluded);
  return r;
}

MosReport mos_aggregate(const std::vector<int>& ratings) {
  if (ratings.empty()) throw std::invalid_argument("mos_aggregate: no ratings");
  for (int v : ratings) {
    if (v < 1 || v > 5) throw std::invalid_argument("MOS rating " + std::to_string(v) + " is outside 1..5");
  }
  MosReport r;
  r.n = ratings.size();
  const double n = static_cast<double>(r.n);
  r.mean = std::accumulate(ratings.begin(), ratings.end(), 0.0) / n;
  if (r.n >= 2) {
    double ss = 0.0;
    for (int v : ratings) ss += (v - r.mean) * (v - r.mean);
    r.ci95 = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return r;
}

CorpusReport evaluate_corpus(const std::vector<std::pair<std::string, std::string>>& refs,
                             const std::function<std::optional<std::string>(const std::string&)>& transcript,
                             const FailureThresholds& th) {
  if (refs.empty()) throw std::invalid_argument("evaluate_corpus: no references");
  CorpusReport rep;
  for (const auto& [id, ref] : refs) {
    UtteranceResult u;
    u.id = id;
    u.ref = normalized_or_empty(ref);
    if (u.ref.empty()) throw std::invalid_argument("reference for '" + id + "' is empty");
    const auto hyp = transcript(id);
    if (hyp) {
      u.hyp = normalized_or_empty(*hyp);
      u.stats = cer(u.ref, u.hyp);
    } else {
      u.missing = true;
      u.stats.ref_len = text::utf8_chars(u.ref).size();
      u.stats.del = u.stats.ref_len;
      rep.missing.push_back(id);
    }
    u.label = detect_failure(u.stats, th.deletion, th.insertion, id);
    rep.deletions_flagged += u.label.deletion ? 1 : 0;
    rep.repetitions_flagged += u.label.repetition ? 1 : 0;
    rep.pooled += u.stats;
    rep.utterances.push_back(std::move(u));
  }
  return rep;
}

CorpusReport evaluate_corpus(const std::vector<std::pair<std::string, std::string>>& refs,
                             const std::filesystem::path& transcript_dir, const FailureThresholds& th) {
  return evaluate_corpus(
      refs,
      [&](const std::string& id) -> std::optional<std::string> {
        std::ifstream in(transcript_dir / (id + ".txt"), std::ios::binary);
        if (!in) return std::nullopt;
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
      },
      th);
}

nlohmann::json to_json(const EditStats& s) {
  return {{"sub", s.sub}, {"del", s.del}, {"ins", s.ins}, {"ref_len", s.ref_len}, {"cer", s.ref_len ? s.cer() : 0.0}};
}

nlohmann::json to_json(const CorpusReport& r) {
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& u : r.utterances) {
    utts.push_back({{"id", u.id},
                    {"ref", u.ref},
                    {"hyp", u.hyp},
                    {"missing", u.missing},
                    {"stats", to_json(u.stats)},
                    {"failure", to_string(u.label.kind)},
                    {"del_rate", u.label.del_rate},
                    {"ins_rate", u.label.ins_rate}});
  }
  return {{"corpus", to_json(r.pooled)},
          {"missing", r.missing},
          {"deletions_flagged", r.deletions_flagged},
          {"repetitions_flagged", r.repetitions_flagged},
          {"utterances", utts}};
}

std::string format_table(const CorpusReport& r, const std::string& system_name) {
  const auto& p = r.pooled;
  auto pct = [&](std::size_t v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << 100.0 * static_cast<double>(v) / static_cast<double>(p.ref_len);
    return os.str();
  };
  std::ostringstream os;
  const std::size_t w = std::max<std::size_t>(6, system_name.size());
  os << std::left << std::setw(static_cast<int>(w)) << "Method" << " | Sub  | Del  | Ins  | CER\n";
  os << std::left << std::setw(static_cast<int>(w)) << system_name << " | " << std::setw(4) << pct(p.sub) << " | "
     << std::setw(4) << pct(p.del) << " | " << std::setw(4) << pct(p.ins) << " | " << pct(p.errors()) << "\n";
  return os.str();
}

}  // namespace tts::eval
