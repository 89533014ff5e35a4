#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "owdet/error.hpp"
#include "owdet/geometry.hpp"

namespace owdet {

// The COCO threshold grid, built as (50 + 5i)/100 rather than 0.5 + 0.05*i:
// the additive form drifts off the representable 0.9, which would silently
// flip boundary matches with IoU exactly 0.9.
inline std::vector<double> coco_thresholds() {
  std::vector<double> out;
  for (int i = 0; i < 10; ++i) out.push_back((50 + 5 * i) / 100.0);
  return out;
}

struct MatchEntry {
  std::size_t det_index = 0;            // index into the caller's det list
  std::optional<std::int64_t> truth;    // matched instance, if any
  double iou = 0.0;                     // match IoU, or best available if unmatched
};

// One image at one threshold. Entries are in processing order: descending
// score, input order on ties, truncated to the cap.
struct MatchTable {
  std::vector<MatchEntry> entries;
  std::vector<std::int64_t> unmatched_truth;
};

// Greedy one-to-one matching. Detections are ranked by descending score
// (stable on ties), capped, and each takes the still-unmatched truth with
// the highest IoU when that IoU reaches iou_thr; equal IoUs go to the
// earliest truth index.
inline MatchTable match_greedy(const std::vector<Detection>& dets,
                               const std::vector<Annotation>& truth,
                               double iou_thr,
                               std::size_t cap = 100) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  if (order.size() > cap) order.resize(cap);

  MatchTable table;
  std::vector<bool> used(truth.size(), false);
  for (std::size_t idx : order) {
    double best_iou = 0.0;
    std::size_t best_j = truth.size();
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (used[j]) continue;
      const double v = iou(dets[idx].box, truth[j].box);
      if (v > best_iou) {
        best_iou = v;
        best_j = j;
      }
    }
    MatchEntry e;
    e.det_index = idx;
    e.iou = best_iou;
    if (best_j < truth.size() && best_iou >= iou_thr) {
      used[best_j] = true;
      e.truth = truth[best_j].instance_id;
    }
    table.entries.push_back(e);
  }
  for (std::size_t j = 0; j < truth.size(); ++j) {
    if (!used[j]) table.unmatched_truth.push_back(truth[j].instance_id);
  }
  return table;
}

// A detection's contribution to a PR curve: its score and whether it matched.
struct ScoredOutcome {
  double score = 0.0;
  bool tp = false;
};

// 101-point interpolated AP. Outcomes may arrive in any order; they are
// stably sorted by descending score here, so equal scores keep the caller's
// assembly order. Undefined (nullopt) when the slice has no ground truth.
inline std::optional<double> average_precision(std::vector<ScoredOutcome> outcomes,
                                               std::size_t truth_count) {
  if (truth_count == 0) return std::nullopt;
  std::stable_sort(outcomes.begin(), outcomes.end(),
                   [](const ScoredOutcome& a, const ScoredOutcome& b) {
                     return a.score > b.score;
                   });
  const std::size_t n = outcomes.size();
  std::vector<double> prec(n), rec(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (outcomes[i].tp) ++tp;
    prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    rec[i] = static_cast<double>(tp) / static_cast<double>(truth_count);
  }
  // Precision envelope: env[i] = max precision from i onward. Recall is
  // nondecreasing, so "max precision at recall >= r" is env at the first
  // index whose recall reaches r.
  for (std::size_t i = n; i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double sum = 0.0;
  std::size_t j = 0;
  for (int i = 0; i <= 100; ++i) {
    const double r = i / 100.0;
    while (j < n && rec[j] < r) ++j;
    if (j < n) sum += prec[j];
  }
  return sum / 101.0;
}

// Mean recall across the threshold grid: matched_per_threshold[k] counts
// matched truths at thresholds[k]; every entry is divided by the same truth
// total. Undefined when there is no truth.
inline std::optional<double> average_recall(
    const std::vector<std::size_t>& matched_per_threshold,
    std::size_t truth_count) {
  if (truth_count == 0) return std::nullopt;
  if (matched_per_threshold.empty()) {
    throw Error(ErrorCode::size_mismatch, "no thresholds given");
  }
  double sum = 0.0;
  for (std::size_t m : matched_per_threshold) {
    sum += static_cast<double>(m) / static_cast<double>(truth_count);
  }
  return sum / static_cast<double>(matched_per_threshold.size());
}

struct MetricsReport {
  std::optional<double> ap_all, ap50, ap75, ap_small, ap_medium, ap_large;
  std::optional<double> ar_all, ar_small, ar_medium, ar_large;
  std::vector<double> thresholds;
  std::vector<std::optional<double>> ap_by_threshold;  // class-averaged
  std::size_t detection_cap = 100;
};

namespace detail {

// Detections and truth for one image and one category, in input order.
struct Slice {
  std::vector<Detection> dets;
  std::vector<Annotation> truth;
};

using SliceMap = std::map<std::string, Slice>;  // image id -> slice

inline std::map<int, SliceMap> group_by_category(
    const std::vector<Detection>& dets, const std::vector<Annotation>& truth) {
  std::map<int, SliceMap> grouped;
  for (const auto& t : truth) grouped[t.category][t.image_id].truth.push_back(t);
  for (const auto& d : dets) grouped[d.category][d.image_id].dets.push_back(d);
  return grouped;
}

// AP and per-threshold matched counts for one category across the dataset.
struct CategoryEval {
  std::vector<std::optional<double>> ap;       // per threshold
  std::vector<std::size_t> matched;            // per threshold
  std::size_t truth_count = 0;
};

inline CategoryEval eval_category(const SliceMap& slices,
                                  const std::vector<double>& thresholds,
                                  std::size_t cap) {
  CategoryEval out;
  for (const auto& [id, slice] : slices) out.truth_count += slice.truth.size();
  for (const double thr : thresholds) {
    std::vector<ScoredOutcome> outcomes;
    std::size_t matched = 0;
    for (const auto& [id, slice] : slices) {
      const MatchTable table = match_greedy(slice.dets, slice.truth, thr, cap);
      for (const auto& e : table.entries) {
        outcomes.push_back(
            ScoredOutcome{slice.dets[e.det_index].score, e.truth.has_value()});
        if (e.truth) ++matched;
      }
    }
    out.ap.push_back(average_precision(std::move(outcomes), out.truth_count));
    out.matched.push_back(matched);
  }
  return out;
}

// Bucket restriction: truth outside the bucket disappears, and a detection
// follows its best-overlap truth (same image and category, ties to the
// earliest): if that truth sits outside the bucket the detection is ignored
// rather than penalized. Detections overlapping nothing stay, as plain FPs.
inline SliceMap restrict_to_bucket(const SliceMap& slices, SizeBucket bucket) {
  SliceMap out;
  for (const auto& [image_id, slice] : slices) {
    Slice filtered;
    for (const auto& t : slice.truth) {
      if (classify_size(t.box) == bucket) filtered.truth.push_back(t);
    }
    for (const auto& d : slice.dets) {
      double best_iou = 0.0;
      std::size_t best_j = slice.truth.size();
      for (std::size_t j = 0; j < slice.truth.size(); ++j) {
        const double v = iou(d.box, slice.truth[j].box);
        if (v > best_iou) {
          best_iou = v;
          best_j = j;
        }
      }
      if (best_j == slice.truth.size() ||
          classify_size(slice.truth[best_j].box) == bucket) {
        filtered.dets.push_back(d);
      }
    }
    if (!filtered.dets.empty() || !filtered.truth.empty()) {
      out.emplace(image_id, std::move(filtered));
    }
  }
  return out;
}

// Equal-weight mean over the defined entries; nullopt when none is defined.
inline std::optional<double> mean_defined(
    const std::vector<std::optional<double>>& values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

struct CellPair {
  std::optional<double> ap;
  std::optional<double> ar;
};

// Class-averaged AP/AR over a family of category slices (already bucket
// restricted if needed). Categories without truth drop out of the means.
inline CellPair eval_cells(const std::map<int, SliceMap>& grouped,
                           const std::vector<double>& thresholds,
                           std::size_t cap) {
  std::vector<std::optional<double>> per_class_ap;
  std::vector<std::optional<double>> per_class_ar;
  for (const auto& [category, slices] : grouped) {
    const CategoryEval ev = eval_category(slices, thresholds, cap);
    if (ev.truth_count == 0) continue;
    per_class_ap.push_back(mean_defined(ev.ap));
    per_class_ar.push_back(average_recall(ev.matched, ev.truth_count));
  }
  return CellPair{mean_defined(per_class_ap), mean_defined(per_class_ar)};
}

}  // namespace detail

// Full close-set evaluation: AP/AR over the threshold grid, AP at 0.5 and
// 0.75, and the three size buckets. Categories are taken from the truth;
// categories that have detections but no truth stay out of the averages (an
// undefined slice is not a zero).
inline MetricsReport coco_suite(const std::vector<Detection>& dets,
                                const std::vector<Annotation>& truth,
                                const std::vector<double>& thresholds = coco_thresholds(),
                                std::size_t cap = 100) {
  if (thresholds.empty()) {
    throw Error(ErrorCode::size_mismatch, "empty threshold grid");
  }
  MetricsReport report;
  report.thresholds = thresholds;
  report.detection_cap = cap;

  const auto grouped = detail::group_by_category(dets, truth);

  // Per-threshold class-averaged AP table + the headline means.
  std::vector<std::vector<std::optional<double>>> ap_by_class;  // [class][thr]
  std::vector<std::optional<double>> per_class_ap_mean;
  std::vector<std::optional<double>> per_class_ar;
  for (const auto& [category, slices] : grouped) {
    const detail::CategoryEval ev = detail::eval_category(slices, thresholds, cap);
    if (ev.truth_count == 0) continue;
    ap_by_class.push_back(ev.ap);
    per_class_ap_mean.push_back(detail::mean_defined(ev.ap));
    per_class_ar.push_back(average_recall(ev.matched, ev.truth_count));
  }
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    std::vector<std::optional<double>> column;
    for (const auto& row : ap_by_class) column.push_back(row[k]);
    report.ap_by_threshold.push_back(detail::mean_defined(column));
  }
  report.ap_all = detail::mean_defined(per_class_ap_mean);
  report.ar_all = detail::mean_defined(per_class_ar);

  const auto fixed_point = [&](double thr) {
    std::vector<std::optional<double>> per_class;
    for (const auto& [category, slices] : grouped) {
      const detail::CategoryEval ev =
          detail::eval_category(slices, std::vector<double>{thr}, cap);
      if (ev.truth_count == 0) continue;
      per_class.push_back(ev.ap[0]);
    }
    return detail::mean_defined(per_class);
  };
  report.ap50 = fixed_point(0.5);
  report.ap75 = fixed_point(0.75);

  const auto bucket_cells = [&](SizeBucket bucket) {
    std::map<int, detail::SliceMap> restricted;
    for (const auto& [category, slices] : grouped) {
      auto r = detail::restrict_to_bucket(slices, bucket);
      if (!r.empty()) restricted.emplace(category, std::move(r));
    }
    return detail::eval_cells(restricted, thresholds, cap);
  };
  const auto small = bucket_cells(SizeBucket::small);
  const auto medium = bucket_cells(SizeBucket::medium);
  const auto large = bucket_cells(SizeBucket::large);
  report.ap_small = small.ap;
  report.ar_small = small.ar;
  report.ap_medium = medium.ap;
  report.ar_medium = medium.ar;
  report.ap_large = large.ap;
  report.ar_large = large.ar;
  return report;
}

struct WildernessReport {
  double p_known = 0.0;  // precision when unknown objects are invisible
  double p_mixed = 0.0;  // precision when unknown objects absorb detections
  double wi = 0.0;       // p_known / p_mixed - 1
  std::size_t considered = 0;      // detections at or above score_thr
  std::size_t true_positives = 0;  // matched against known truth at IoU 0.5
  std::size_t absorbed = 0;        // leftover detections on unknown truth
  double score_thr = 0.05;
  std::optional<double> wi_at_recall80;  // recall-level operating point
};

namespace detail {

// Per-detection verdicts shared by WI and its recall-level variant. Known
// matching is category-aware greedy at IoU 0.5 (uncapped); a detection that
// failed to match known truth is "absorbed" when any unknown truth in its
// image overlaps it at 0.5, which mirrors ignore-region handling: every such
// detection vanishes from the knowns-only universe, however many pile onto
// one unknown object.
struct WiVerdicts {
  std::vector<std::size_t> rank;  // global order: score desc, input-stable
  std::vector<bool> tp;
  std::vector<bool> absorbed;
};

inline WiVerdicts wi_verdicts(const std::vector<Detection>& dets,
                              const std::vector<Annotation>& truth_known,
                              const std::vector<Annotation>& truth_unknown) {
  WiVerdicts v;
  v.tp.assign(dets.size(), false);
  v.absorbed.assign(dets.size(), false);

  std::map<std::string, std::map<int, std::vector<std::size_t>>> det_groups;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    det_groups[dets[i].image_id][dets[i].category].push_back(i);
  }
  std::map<std::string, std::map<int, std::vector<Annotation>>> known_groups;
  for (const auto& t : truth_known) known_groups[t.image_id][t.category].push_back(t);
  std::map<std::string, std::vector<Annotation>> unknown_groups;
  for (const auto& t : truth_unknown) unknown_groups[t.image_id].push_back(t);

  for (const auto& [image_id, by_cat] : det_groups) {
    for (const auto& [category, indices] : by_cat) {
      std::vector<Detection> local;
      for (std::size_t i : indices) local.push_back(dets[i]);
      const auto kg = known_groups.find(image_id);
      static const std::vector<Annotation> none;
      const auto& truth =
          kg != known_groups.end() && kg->second.count(category)
              ? kg->second.at(category)
              : none;
      const MatchTable table = match_greedy(
          local, truth, 0.5, std::numeric_limits<std::size_t>::max());
      for (const auto& e : table.entries) {
        if (e.truth) v.tp[indices[e.det_index]] = true;
      }
    }
  }
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (v.tp[i]) continue;
    const auto ug = unknown_groups.find(dets[i].image_id);
    if (ug == unknown_groups.end()) continue;
    for (const auto& t : ug->second) {
      if (iou(dets[i].box, t.box) >= 0.5) {
        v.absorbed[i] = true;
        break;
      }
    }
  }
  v.rank.resize(dets.size());
  std::iota(v.rank.begin(), v.rank.end(), std::size_t{0});
  std::stable_sort(v.rank.begin(), v.rank.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  return v;
}

}  // namespace detail

// Wilderness impact. P_K is precision with unknown truth invisible:
// detections absorbed by an unknown object leave the denominator entirely.
// P_mixed keeps them as errors. With no unknown truth the two coincide and
// WI is exactly zero. The report also carries WI at the 0.8-recall operating
// point over the full score-ranked list when that recall is attainable.
inline WildernessReport wilderness_impact(const std::vector<Detection>& dets,
                                          const std::vector<Annotation>& truth_known,
                                          const std::vector<Annotation>& truth_unknown,
                                          double score_thr = 0.05) {
  const detail::WiVerdicts v = detail::wi_verdicts(dets, truth_known, truth_unknown);

  WildernessReport report;
  report.score_thr = score_thr;
  std::size_t n = 0, tp = 0, absorbed = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].score < score_thr) continue;
    ++n;
    if (v.tp[i]) ++tp;
    if (v.absorbed[i]) ++absorbed;
  }
  report.considered = n;
  report.true_positives = tp;
  report.absorbed = absorbed;
  if (n == 0 || tp == 0) {
    throw Error(ErrorCode::degenerate_denominator,
                "mixed-universe precision is zero; WI undefined");
  }
  report.p_mixed = static_cast<double>(tp) / static_cast<double>(n);
  report.p_known = static_cast<double>(tp) / static_cast<double>(n - absorbed);
  report.wi = report.p_known / report.p_mixed - 1.0;

  if (!truth_known.empty()) {
    std::size_t cum_tp = 0, cum_abs = 0, k = 0;
    for (std::size_t r = 0; r < v.rank.size(); ++r) {
      const std::size_t i = v.rank[r];
      if (v.tp[i]) ++cum_tp;
      if (v.absorbed[i]) ++cum_abs;
      const double recall =
          static_cast<double>(cum_tp) / static_cast<double>(truth_known.size());
      if (recall >= 0.8) {
        k = r + 1;
        break;
      }
    }
    if (k > 0 && cum_tp > 0 && k > cum_abs) {
      const double pk = static_cast<double>(cum_tp) / static_cast<double>(k - cum_abs);
      const double pm = static_cast<double>(cum_tp) / static_cast<double>(k);
      report.wi_at_recall80 = pk / pm - 1.0;
    }
  }
  return report;
}

struct OseReport {
  std::size_t a_ose = 0;
  std::map<int, std::size_t> by_class;  // detection category -> count
};

// Counts unknown ground-truth objects absorbed by known-class detections:
// greedy one-to-one at iou_thr over detections with score >= score_thr, so
// several detections piling onto one unknown object still count it once.
inline OseReport absolute_open_set_error(const std::vector<Detection>& dets,
                                         const std::vector<Annotation>& truth_unknown,
                                         double iou_thr = 0.5,
                                         double score_thr = 0.05) {
  std::map<std::string, std::vector<Detection>> det_groups;
  for (const auto& d : dets) {
    if (d.score >= score_thr) det_groups[d.image_id].push_back(d);
  }
  std::map<std::string, std::vector<Annotation>> unknown_groups;
  for (const auto& t : truth_unknown) unknown_groups[t.image_id].push_back(t);

  OseReport report;
  for (const auto& [image_id, local] : det_groups) {
    const auto ug = unknown_groups.find(image_id);
    if (ug == unknown_groups.end()) continue;
    const MatchTable table = match_greedy(
        local, ug->second, iou_thr, std::numeric_limits<std::size_t>::max());
    for (const auto& e : table.entries) {
      if (e.truth) {
        ++report.a_ose;
        ++report.by_class[local[e.det_index].category];
      }
    }
  }
  return report;
}

// ---- report serialization ----

// Metric reals are serialized to 6 decimal places; undefined cells are JSON
// null / "n/a" in text.
inline double round6(double v) { return std::round(v * 1e6) / 1e6; }

namespace detail {

inline nlohmann::json opt_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return round6(*v);
}

inline std::string opt_text(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << *v;
  return os.str();
}

}  // namespace detail

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["ap_all"] = detail::opt_json(r.ap_all);
  j["ap50"] = detail::opt_json(r.ap50);
  j["ap75"] = detail::opt_json(r.ap75);
  j["ap_small"] = detail::opt_json(r.ap_small);
  j["ap_medium"] = detail::opt_json(r.ap_medium);
  j["ap_large"] = detail::opt_json(r.ap_large);
  j["ar_all"] = detail::opt_json(r.ar_all);
  j["ar_small"] = detail::opt_json(r.ar_small);
  j["ar_medium"] = detail::opt_json(r.ar_medium);
  j["ar_large"] = detail::opt_json(r.ar_large);
  j["thresholds"] = nlohmann::json::array();
  for (double t : r.thresholds) j["thresholds"].push_back(round6(t));
  j["ap_by_threshold"] = nlohmann::json::array();
  for (const auto& v : r.ap_by_threshold) j["ap_by_threshold"].push_back(detail::opt_json(v));
  j["detection_cap"] = r.detection_cap;
  return j;
}

inline std::string metrics_to_text(const MetricsReport& r) {
  std::ostringstream os;
  const auto row = [&](const char* name, const std::optional<double>& v) {
    os << name;
    for (std::size_t i = std::string(name).size(); i < 12; ++i) os << ' ';
    os << detail::opt_text(v) << "\n";
  };
  row("AP_all", r.ap_all);
  row("AP50", r.ap50);
  row("AP75", r.ap75);
  row("AP_small", r.ap_small);
  row("AP_medium", r.ap_medium);
  row("AP_large", r.ap_large);
  row("AR_all", r.ar_all);
  row("AR_small", r.ar_small);
  row("AR_medium", r.ar_medium);
  row("AR_large", r.ar_large);
  return os.str();
}

inline nlohmann::json wilderness_to_json(const WildernessReport& r) {
  nlohmann::json j;
  j["p_known"] = round6(r.p_known);
  j["p_mixed"] = round6(r.p_mixed);
  j["wi"] = round6(r.wi);
  j["considered"] = r.considered;
  j["true_positives"] = r.true_positives;
  j["absorbed"] = r.absorbed;
  j["score_thr"] = round6(r.score_thr);
  j["wi_at_recall80"] = detail::opt_json(r.wi_at_recall80);
  return j;
}

inline nlohmann::json ose_to_json(const OseReport& r) {
  nlohmann::json j;
  j["a_ose"] = r.a_ose;
  j["by_class"] = nlohmann::json::object();
  for (const auto& [category, count] : r.by_class) {
    j["by_class"][std::to_string(category)] = count;
  }
  return j;
}

}  // namespace owdet
