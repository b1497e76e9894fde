#pragma once

// Four-scenario zero-shot splits, ranking metrics and report files.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "psrp/corpus.hpp"
#include "psrp/error.hpp"
#include "psrp/rng.hpp"

namespace psrp {

// ---------------------------------------------------------------------------
// Metrics

namespace detail {

inline void check_metric_input(std::span<const double> scores, std::span<const int> labels,
                               const char* who) {
  if (scores.size() != labels.size()) {
    throw MetricError(std::string(who) + ": " + std::to_string(scores.size()) + " scores but " +
                      std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw MetricError(std::string(who) + ": labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw MetricError(std::string(who) + ": non-finite score");
  }
}

/// Indices sorted by descending score, ties by ascending input index.
inline std::vector<std::size_t> ranking(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace detail

/// Rank statistic: fraction of positive/negative pairs ordered correctly,
/// ties counting one half.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_metric_input(scores, labels, "auroc");
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw MetricError("auroc: undefined without both positive and negative labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (1-based, tie-averaged) ranks of the positives, kept doubled to stay integral.
  double doubled_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double pos_in_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) pos_in_group += labels[order[j++]];
    doubled_rank_sum += pos_in_group * static_cast<double>(i + 1 + j);
    i = j;
  }
  const double u = doubled_rank_sum / 2.0 - pos * (pos + 1.0) / 2.0;
  return u / (pos * neg);
}

/// Average precision: mean over positives of the precision at their rank in
/// descending-score order, ties broken by input index.
inline double auprc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_metric_input(scores, labels, "auprc");
  const auto order = detail::ranking(scores);
  double tp = 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 1) {
      tp += 1.0;
      sum += tp / static_cast<double>(k + 1);
    }
  }
  if (tp == 0.0) throw MetricError("auprc: undefined without positive labels");
  return sum / tp;
}

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
};

/// ROC points (fpr, tpr) from (0,0), one per distinct score; trapezoids over
/// them integrate to auroc().
inline std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  detail::check_metric_input(scores, labels, "roc_curve");
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw MetricError("roc_curve: undefined without both classes");
  const auto order = detail::ranking(scores);
  std::vector<CurvePoint> pts{{0.0, 0.0}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    pts.push_back({fp / neg, tp / pos});
    i = j;
  }
  return pts;
}

/// PR points (recall, precision): a leading (0, 1) then one point per ranked
/// item. Step integration sum((r_k - r_{k-1}) * p_k) equals auprc().
inline std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
  detail::check_metric_input(scores, labels, "pr_curve");
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (pos == 0) throw MetricError("pr_curve: undefined without positive labels");
  const auto order = detail::ranking(scores);
  std::vector<CurvePoint> pts{{0.0, 1.0}};
  double tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    tp += labels[order[k]];
    pts.push_back({tp / pos, tp / static_cast<double>(k + 1)});
  }
  return pts;
}

inline double trapezoid_area(const std::vector<CurvePoint>& pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i].x - pts[i - 1].x) * (pts[i].y + pts[i - 1].y) / 2.0;
  }
  return area;
}

inline double step_area(const std::vector<CurvePoint>& pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) area += (pts[i].x - pts[i - 1].x) * pts[i].y;
  return area;
}

// ---------------------------------------------------------------------------
// Scenario splits

enum class Scenario { SeenBoth = 0, UnseenComp = 1, UnseenProt = 2, UnseenBoth = 3 };

inline constexpr std::array<Scenario, 4> kScenarios = {Scenario::SeenBoth, Scenario::UnseenComp,
                                                       Scenario::UnseenProt, Scenario::UnseenBoth};

inline const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::SeenBoth: return "seen_both";
    case Scenario::UnseenComp: return "unseen_comp";
    case Scenario::UnseenProt: return "unseen_prot";
    case Scenario::UnseenBoth: return "unseen_both";
  }
  return "?";
}

inline Scenario scenario_from_name(std::string_view name) {
  for (auto s : kScenarios) {
    if (name == scenario_name(s)) return s;
  }
  throw ParseError("unknown scenario '" + std::string(name) + "'");
}

inline Scenario classify(bool compound_seen, bool protein_seen) {
  if (compound_seen && protein_seen) return Scenario::SeenBoth;
  if (protein_seen) return Scenario::UnseenComp;
  if (compound_seen) return Scenario::UnseenProt;
  return Scenario::UnseenBoth;
}

struct SplitRatios {
  double train = 0.7;
  double valid = 0.1;
  double test = 0.2;

  void validate() const {
    if (!(train >= 0 && valid >= 0 && test >= 0)) throw ValidationError("split ratios must be >= 0");
    if (std::abs(train + valid + test - 1.0) > 1e-9) {
      throw ValidationError("split ratios must sum to 1 (got " + std::to_string(train + valid + test) + ")");
    }
  }
};

struct ScenarioSplit {
  std::vector<InteractionRecord> train;
  std::vector<InteractionRecord> valid;
  std::array<std::vector<InteractionRecord>, 4> test;

  const std::vector<InteractionRecord>& partition(Scenario s) const { return test[static_cast<int>(s)]; }
  std::size_t test_size() const {
    std::size_t n = 0;
    for (const auto& p : test) n += p.size();
    return n;
  }
};

/// Places test records into the four partitions by compound SMILES and
/// (uppercased) sequence membership in `train`.
inline std::array<std::vector<InteractionRecord>, 4> classify_test(
    const std::vector<InteractionRecord>& train, const std::vector<InteractionRecord>& test) {
  std::unordered_set<std::string> compounds, proteins;
  for (const auto& r : train) {
    compounds.insert(r.compound.smiles);
    proteins.insert(r.protein.raw);
  }
  std::array<std::vector<InteractionRecord>, 4> out;
  for (const auto& r : test) {
    const auto s = classify(compounds.count(r.compound.smiles) != 0, proteins.count(r.protein.raw) != 0);
    out[static_cast<int>(s)].push_back(r);
  }
  return out;
}

/// Seeded pair-level shuffle into train/valid/test, then scenario
/// classification of the test pairs. Partition sizes are rounded for train and
/// valid; test takes the remainder.
inline ScenarioSplit split_scenarios(const std::vector<InteractionRecord>& records,
                                     const SplitRatios& ratios, std::uint64_t seed) {
  if (records.empty()) throw ValidationError("split_scenarios: no records");
  ratios.validate();
  const auto total = records.size();
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = total; i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  const auto n_train = std::min<std::size_t>(total, static_cast<std::size_t>(std::llround(ratios.train * total)));
  const auto n_valid =
      std::min<std::size_t>(total - n_train, static_cast<std::size_t>(std::llround(ratios.valid * total)));

  ScenarioSplit split;
  std::vector<InteractionRecord> test;
  for (std::size_t k = 0; k < total; ++k) {
    const auto& r = records[order[k]];
    if (k < n_train) {
      split.train.push_back(r);
    } else if (k < n_train + n_valid) {
      split.valid.push_back(r);
    } else {
      test.push_back(r);
    }
  }
  split.test = classify_test(split.train, test);
  return split;
}

// ---------------------------------------------------------------------------
// Reports

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;
};

/// Predictions from one seed, keyed by partition name.
using SeedPredictions = std::map<std::string, ScoredSet>;

struct PartitionMetrics {
  std::optional<double> auroc_mean, auroc_std, auprc_mean, auprc_std;
  std::vector<double> auroc_per_seed, auprc_per_seed;
  std::size_t n_pairs = 0;
};

struct MetricsReport {
  std::string dataset;
  std::size_t seed_count = 0;
  std::map<std::string, PartitionMetrics> partitions;
  std::string config_fingerprint;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset;
    j["seed_count"] = seed_count;
    auto& parts = j["partitions"] = nlohmann::ordered_json::object();
    for (const auto& [name, m] : partitions) {
      auto& p = parts[name];
      const auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) {
          p[key] = *v;
        } else {
          p[key] = nullptr;
        }
      };
      put("auroc_mean", m.auroc_mean);
      put("auroc_std", m.auroc_std);
      put("auprc_mean", m.auprc_mean);
      put("auprc_std", m.auprc_std);
      p["n_pairs"] = m.n_pairs;
    }
    j["config_fingerprint"] = config_fingerprint;
    return j;
  }
};

inline double mean_of(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
inline double stddev_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// 64-bit FNV-1a digest rendered as 16 hex digits.
inline std::string fingerprint(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void write_curve_csv(const std::filesystem::path& path, const char* header,
                            const std::vector<CurvePoint>& pts) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << header << '\n';
  char buf[80];
  for (const auto& p : pts) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.x, p.y);
    out << buf;
  }
}

inline std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path) {
  const auto text = read_file(path);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  std::vector<CurvePoint> pts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(path.string() + ": malformed curve row '" + line + "'");
    pts.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  return pts;
}

/// Aggregates per-seed predictions into mean/std per partition. A partition
/// whose metric is undefined for some seed (single-class labels) reports null
/// for that metric. With `out_dir` set, writes report.json plus
/// roc_<partition>_seed<k>.csv and pr_<partition>_seed<k>.csv.
inline MetricsReport emit_report(const std::string& dataset, const std::vector<SeedPredictions>& seeds,
                                 const std::filesystem::path& out_dir, const std::string& config_fingerprint) {
  if (seeds.empty()) throw ValidationError("emit_report: no seed results");
  MetricsReport report;
  report.dataset = dataset;
  report.seed_count = seeds.size();
  report.config_fingerprint = config_fingerprint;

  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
      throw Error("cannot create report directory '" + out_dir.string() + "'");
    }
  }

  std::map<std::string, std::size_t> present;
  for (const auto& s : seeds) {
    for (const auto& [name, set] : s) ++present[name];
  }
  for (const auto& [name, count] : present) {
    PartitionMetrics m;
    bool roc_ok = count == seeds.size();
    bool pr_ok = roc_ok;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const auto it = seeds[k].find(name);
      if (it == seeds[k].end()) continue;
      const auto& set = it->second;
      if (k == 0 || m.n_pairs == 0) m.n_pairs = set.scores.size();
      try {
        m.auroc_per_seed.push_back(auroc(set.scores, set.labels));
        if (!out_dir.empty()) {
          write_curve_csv(out_dir / ("roc_" + name + "_seed" + std::to_string(k) + ".csv"), "fpr,tpr",
                          roc_curve(set.scores, set.labels));
        }
      } catch (const MetricError&) {
        roc_ok = false;
      }
      try {
        m.auprc_per_seed.push_back(auprc(set.scores, set.labels));
        if (!out_dir.empty()) {
          write_curve_csv(out_dir / ("pr_" + name + "_seed" + std::to_string(k) + ".csv"), "recall,precision",
                          pr_curve(set.scores, set.labels));
        }
      } catch (const MetricError&) {
        pr_ok = false;
      }
    }
    if (roc_ok) {
      m.auroc_mean = mean_of(m.auroc_per_seed);
      m.auroc_std = stddev_of(m.auroc_per_seed);
    }
    if (pr_ok) {
      m.auprc_mean = mean_of(m.auprc_per_seed);
      m.auprc_std = stddev_of(m.auprc_per_seed);
    }
    report.partitions[name] = std::move(m);
  }

  if (!out_dir.empty()) {
    const auto path = out_dir / "report.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << report.to_json().dump(2) << '\n';
  }
  return report;
}

// ---------------------------------------------------------------------------
// Prediction files: `pair_id,score,label`, pair_id = <partition>:<index>,
// `#` lines are comments.

struct PredictionRow {
  std::string pair_id;
  double score = 0.0;
  int label = 0;
};

inline std::string format_prediction_row(const PredictionRow& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, ",%.17g,%d", r.score, r.label);
  return r.pair_id + buf;
}

inline SeedPredictions parse_predictions_text(std::string_view text, const std::string& source) {
  SeedPredictions out;
  std::size_t start = 0;
  int line_no = 0;
  bool header_seen = false;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = detail::trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (line == "pair_id,score,label") continue;
    }
    const auto where = source + ":" + std::to_string(line_no);
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string_view::npos || line.find(',', c2 + 1) != std::string_view::npos) {
      throw ParseError(where + ": expected 'pair_id,score,label', got '" + std::string(line) + "'");
    }
    const auto id = line.substr(0, c1);
    const auto colon = id.find(':');
    if (colon == std::string_view::npos) {
      throw ParseError(where + ": pair_id '" + std::string(id) + "' lacks a '<partition>:' prefix");
    }
    const std::string score_text(line.substr(c1 + 1, c2 - c1 - 1));
    char* stop = nullptr;
    const double score = std::strtod(score_text.c_str(), &stop);
    if (score_text.empty() || stop != score_text.c_str() + score_text.size() || !std::isfinite(score)) {
      throw ParseError(where + ": score '" + score_text + "' is not a finite number");
    }
    int label = 0;
    if (!detail::parse_label(line.substr(c2 + 1), label) || label < 0) {
      throw ParseError(where + ": label '" + std::string(line.substr(c2 + 1)) + "' is not 0 or 1");
    }
    auto& set = out[std::string(id.substr(0, colon))];
    set.scores.push_back(score);
    set.labels.push_back(label);
  }
  return out;
}

inline SeedPredictions read_predictions(const std::filesystem::path& path) {
  return parse_predictions_text(read_file(path), path.string());
}

}  // namespace psrp
