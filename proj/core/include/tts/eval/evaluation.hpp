#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace tts::eval {

struct EditStats {
  std::size_t sub = 0;
  std::size_t del = 0;
  std::size_t ins = 0;
  std::size_t ref_len = 0;

  std::size_t errors() const { return sub + del + ins; }
  // (sub+del+ins)/ref_len; may exceed 1.
  double cer() const;
  EditStats& operator+=(const EditStats& o);
  friend bool operator==(const EditStats&, const EditStats&) = default;
};

// Unit-cost alignment of code-point sequences. Among minimum-cost alignments the one
// with the most substitutions wins; total cost and S then fix D and I, which is the
// same answer a backtrace preferring substitution, then deletion, then insertion gives.
EditStats edit_stats(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

// Both sides go through text::normalize_text first; spaces count. Throws
// std::invalid_argument when the normalized reference is empty.
EditStats cer(std::string_view ref, std::string_view hyp);

enum class FailureKind { none, deletion, repetition };
std::string to_string(FailureKind k);

struct FailureLabel {
  std::string id;
  FailureKind kind = FailureKind::none;
  double del_rate = 0.0;
  double ins_rate = 0.0;
  bool deletion = false;
  bool repetition = false;
};

inline constexpr double kDefaultFailureThreshold = 0.02;

// deletion when del/ref_len > del_thresh, repetition when ins/ref_len > ins_thresh;
// if both fire the larger rate names the kind, a tie going to deletion.
FailureLabel detect_failure(const EditStats& stats, double del_thresh = kDefaultFailureThreshold,
                            double ins_thresh = kDefaultFailureThreshold, std::string id = {});

struct RtfReport {
  std::vector<std::string> ids;
  std::vector<double> rtf;
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 for a single utterance
  std::vector<std::string> excluded;  // produced no audio
};

// Seconds since an arbitrary origin.
using Clock = std::function<double()>;
Clock steady_clock();

// `synth` generates one utterance and returns the seconds of audio it produced.
// RTF = (clock after - clock before) / audio seconds.
RtfReport measure_rtf(const std::vector<std::string>& ids, const std::function<double(const std::string&)>& synth,
                      const Clock& clock = steady_clock());
// Mean and sample standard deviation of an RTF list.
RtfReport summarize_rtf(std::vector<std::string> ids, std::vector<double> rtf);

struct MosReport {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> ci95;  // 1.96 s / sqrt(n); absent for n = 1
};

MosReport mos_aggregate(const std::vector<int>& ratings);

struct UtteranceResult {
  std::string id;
  std::string ref;
  std::string hyp;
  EditStats stats;
  FailureLabel label;
  bool missing = false;  // no transcript; scored as a full deletion
};

struct CorpusReport {
  std::vector<UtteranceResult> utterances;
  EditStats pooled;
  std::vector<std::string> missing;
  std::size_t deletions_flagged = 0;
  std::size_t repetitions_flagged = 0;
};

struct FailureThresholds {
  double deletion = kDefaultFailureThreshold;
  double insertion = kDefaultFailureThreshold;
};

// Reads "<transcript_dir>/<id>.txt" for each reference (id, text) pair and pools edit
// counts over the pooled reference length.
CorpusReport evaluate_corpus(const std::vector<std::pair<std::string, std::string>>& refs,
                             const std::filesystem::path& transcript_dir, const FailureThresholds& th = {});
// Same, with hypotheses already in memory; absent entries count as missing.
CorpusReport evaluate_corpus(const std::vector<std::pair<std::string, std::string>>& refs,
                             const std::function<std::optional<std::string>(const std::string&)>& transcript,
                             const FailureThresholds& th = {});

nlohmann::json to_json(const EditStats& s);
nlohmann::json to_json(const CorpusReport& r);
// Sub/Del/Ins/CER in percent with one decimal, one row.
std::string format_table(const CorpusReport& r, const std::string& system_name);

}  // namespace tts::eval
