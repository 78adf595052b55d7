#include "sspcab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "sspcab/errors.hpp"
#include "sspcab/kv_text.hpp"

namespace sspcab {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels, const char* what) {
  if (scores.size() != labels.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(scores.size()) + " scores but " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw MetricError(std::string(what) + ": labels must be 0 or 1");
    if (std::isnan(scores[i])) throw MetricError(std::string(what) + ": NaN score at index " + std::to_string(i));
  }
}

}  // namespace

void ScoredSet::validate() const {
  check_inputs(scores, labels, "scored set");
  if (!groups.empty() && groups.size() != scores.size()) {
    throw ShapeError("scored set: " + std::to_string(groups.size()) + " group ids for " +
                     std::to_string(scores.size()) + " scores");
  }
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "roc_auc");
  const std::size_t n = scores.size();
  const std::size_t pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw MetricError("roc_auc is undefined without both positive and negative samples");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the midrank keeps every quantity an exact integer.
  double twice_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double twice_midrank = static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) twice_rank_sum += twice_midrank;
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double concordant_x2 = twice_rank_sum - p * (p + 1.0);
  return concordant_x2 / (2.0 * p * static_cast<double>(neg));
}

double roc_auc(const ScoredSet& set) { return roc_auc(set.scores, set.labels); }

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "average_precision");
  const std::size_t pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (pos == 0) throw MetricError("average_precision is undefined without positive samples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] != 1) continue;
    ++hits;
    ap += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return ap / static_cast<double>(pos);
}

double average_precision(const ScoredSet& set) { return average_precision(set.scores, set.labels); }

MicroMacro micro_macro_auc(const ScoredSet& set) {
  set.validate();
  std::vector<std::string> names;
  std::map<std::string, ScoredSet> by_group;
  for (std::size_t i = 0; i < set.scores.size(); ++i) {
    const std::string& g = set.groups.empty() ? std::string() : set.groups[i];
    auto [it, inserted] = by_group.try_emplace(g);
    if (inserted) names.push_back(g);
    it->second.scores.push_back(set.scores[i]);
    it->second.labels.push_back(set.labels[i]);
  }

  MicroMacro r;
  double sum = 0.0;
  for (const std::string& g : names) {
    const ScoredSet& s = by_group.at(g);
    const bool both = std::count(s.labels.begin(), s.labels.end(), 1) > 0 &&
                      std::count(s.labels.begin(), s.labels.end(), 0) > 0;
    if (!both) {
      r.skipped.push_back(g);
      continue;
    }
    const double auc = roc_auc(s);
    r.per_group.push_back({g, auc});
    sum += auc;
  }
  if (r.per_group.empty()) throw MetricError("macro AUC is undefined: no group contains both classes");
  r.macro = sum / static_cast<double>(r.per_group.size());
  r.micro = roc_auc(set);
  return r;
}

EvalReport evaluate(const ScoredSet& set) {
  set.validate();
  if (set.scores.empty()) throw MetricError("cannot evaluate an empty score set");
  EvalReport r;
  r.frames = set.scores.size();
  r.positives = static_cast<std::size_t>(std::count(set.labels.begin(), set.labels.end(), 1));
  r.auroc = roc_auc(set);
  r.ap = average_precision(set);
  MicroMacro mm = micro_macro_auc(set);
  r.micro_auc = mm.micro;
  r.macro_auc = mm.macro;
  r.per_group = std::move(mm.per_group);
  r.skipped_groups = std::move(mm.skipped);
  return r;
}

std::string format_report(const EvalReport& r) {
  std::string s;
  auto put = [&](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  put("frames", std::to_string(r.frames));
  put("positives", std::to_string(r.positives));
  put("auroc", format_fixed(r.auroc, 6));
  put("ap", format_fixed(r.ap, 6));
  put("micro_auc", format_fixed(r.micro_auc, 6));
  put("macro_auc", format_fixed(r.macro_auc, 6));
  put("groups_scored", std::to_string(r.per_group.size()));
  put("groups_skipped", std::to_string(r.skipped_groups.size()));
  for (const auto& g : r.per_group) put("group_auc." + g.group, format_fixed(g.auc, 6));
  for (const auto& g : r.skipped_groups) put("group_skipped." + g, "single-class");
  return s;
}

void minmax_normalize_per_group(ScoredSet& set) {
  set.validate();
  std::map<std::string, std::pair<double, double>> range;
  auto group_of = [&](std::size_t i) { return set.groups.empty() ? std::string() : set.groups[i]; };
  for (std::size_t i = 0; i < set.scores.size(); ++i) {
    auto [it, inserted] = range.try_emplace(group_of(i), set.scores[i], set.scores[i]);
    if (!inserted) {
      it->second.first = std::min(it->second.first, set.scores[i]);
      it->second.second = std::max(it->second.second, set.scores[i]);
    }
  }
  for (std::size_t i = 0; i < set.scores.size(); ++i) {
    const auto [lo, hi] = range.at(group_of(i));
    set.scores[i] = hi > lo ? (set.scores[i] - lo) / (hi - lo) : 0.0;
  }
}

std::vector<ScoreRecord> parse_score_records(const std::string& text) {
  std::vector<ScoreRecord> out;
  std::size_t offset = 0;
  std::size_t line_no = 0;
  while (offset < text.size()) {
    std::size_t nl = text.find('\n', offset);
    if (nl == std::string::npos) nl = text.size();
    const std::string_view line = trim(std::string_view(text).substr(offset, nl - offset));
    ++line_no;
    const std::size_t line_start = offset;
    offset = nl + 1;
    if (line.empty() || line.front() == '#') continue;

    std::istringstream fields{std::string(line)};
    std::string group, frame, score, label, extra;
    if (!(fields >> group >> frame >> score >> label) || (fields >> extra)) {
      throw FormatError("score file line " + std::to_string(line_no) +
                            ": expected 'group_id frame_index score label'",
                        line_start);
    }
    ScoreRecord rec;
    rec.group = group;
    try {
      rec.frame = parse_uint(frame, "frame_index");
      rec.score = parse_double(score, "score");
    } catch (const ConfigError& e) {
      throw FormatError("score file line " + std::to_string(line_no) + ": " + e.what(), line_start);
    }
    if (label != "0" && label != "1") {
      throw FormatError("score file line " + std::to_string(line_no) + ": label must be 0 or 1", line_start);
    }
    rec.label = label == "1" ? 1 : 0;
    out.push_back(std::move(rec));
  }
  return out;
}

std::string format_score_records(const std::vector<ScoreRecord>& records) {
  std::string s;
  for (const auto& r : records) {
    s += r.group + " " + std::to_string(r.frame) + " " + format_double(r.score) + " " + std::to_string(r.label) + "\n";
  }
  return s;
}

std::vector<ScoreRecord> read_score_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open score file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_score_records(ss.str());
}

void write_score_file(const std::filesystem::path& path, const std::vector<ScoreRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open score file for writing: " + path.string());
  out << format_score_records(records);
  if (!out) throw IoError("failed writing score file: " + path.string());
}

ScoredSet to_scored_set(const std::vector<ScoreRecord>& records) {
  ScoredSet s;
  for (const auto& r : records) {
    s.scores.push_back(r.score);
    s.labels.push_back(r.label);
    s.groups.push_back(r.group);
  }
  return s;
}

}  // namespace sspcab
