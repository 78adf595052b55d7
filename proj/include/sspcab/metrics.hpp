#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace sspcab {

/// Scores with binary labels (1 = anomalous) and an optional group id per
/// element (video or image source). `groups` is empty or parallel to `scores`.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::string> groups;

  void validate() const;
};

/// Mann-Whitney statistic: the fraction of (positive, negative) pairs ranked
/// correctly, ties counted 1/2. Throws MetricError unless both classes occur.
double roc_auc(std::span<const double> scores, std::span<const int> labels);
double roc_auc(const ScoredSet& set);

/// Sum over the score-descending sweep of (R_k - R_{k-1}) · P_k; equal scores
/// keep their input order. Throws MetricError when there is no positive.
double average_precision(std::span<const double> scores, std::span<const int> labels);
double average_precision(const ScoredSet& set);

struct GroupAuc {
  std::string group;
  double auc = 0.0;
};

struct MicroMacro {
  double micro = 0.0;
  double macro = 0.0;
  std::vector<GroupAuc> per_group;   // groups in first-appearance order
  std::vector<std::string> skipped;  // single-class groups left out of macro
};

/// micro: AUC over all elements; macro: unweighted mean of per-group AUCs.
MicroMacro micro_macro_auc(const ScoredSet& set);

struct EvalReport {
  std::size_t frames = 0;
  std::size_t positives = 0;
  double auroc = 0.0;
  double ap = 0.0;
  double micro_auc = 0.0;
  double macro_auc = 0.0;
  std::vector<GroupAuc> per_group;
  std::vector<std::string> skipped_groups;
};

EvalReport evaluate(const ScoredSet& set);
/// `key=value` lines in fixed order, metrics with six decimals.
std::string format_report(const EvalReport& report);

/// Rescales each group's scores to [0, 1]; constant groups map to 0.
void minmax_normalize_per_group(ScoredSet& set);

/// One line of a score file: "group_id frame_index score label".
struct ScoreRecord {
  std::string group;
  std::size_t frame = 0;
  double score = 0.0;
  int label = 0;
};

std::vector<ScoreRecord> parse_score_records(const std::string& text);
std::string format_score_records(const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> read_score_file(const std::filesystem::path& path);
void write_score_file(const std::filesystem::path& path, const std::vector<ScoreRecord>& records);
ScoredSet to_scored_set(const std::vector<ScoreRecord>& records);

}  // namespace sspcab
