#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "owdet/error.hpp"
#include "owdet/manifest.hpp"
#include "owdet/random.hpp"

namespace owdet {

// Incremental class schedule: task t introduces a set of class names; the
// union over tasks up to t is known, everything introduced later is unknown.
// Classes outside the schedule are not evaluated at all and views drop them.
struct TaskSchedule {
  std::string name;
  std::vector<std::pair<int, std::vector<std::string>>> tasks;

  const std::vector<std::string>& introduced(int t) const {
    for (const auto& [id, classes] : tasks)
      if (id == t) return classes;
    throw Error(ErrorCode::unknown_task,
                "task " + std::to_string(t) + " not in schedule '" + name + "'");
  }

  std::set<std::string> known_at(int t) const {
    introduced(t);  // validates t
    std::set<std::string> out;
    for (const auto& [id, classes] : tasks)
      if (id <= t) out.insert(classes.begin(), classes.end());
    return out;
  }

  std::set<std::string> unknown_at(int t) const {
    introduced(t);
    std::set<std::string> out;
    for (const auto& [id, classes] : tasks)
      if (id > t) out.insert(classes.begin(), classes.end());
    return out;
  }

  std::set<std::string> all_classes() const {
    std::set<std::string> out;
    for (const auto& [id, classes] : tasks)
      out.insert(classes.begin(), classes.end());
    return out;
  }
};

inline void validate_schedule(const TaskSchedule& s) {
  std::set<std::string> seen;
  std::set<int> ids;
  for (const auto& [id, classes] : s.tasks) {
    if (!ids.insert(id).second) {
      throw Error(ErrorCode::parse_error,
                  "schedule '" + s.name + "' repeats task " + std::to_string(id));
    }
    for (const auto& c : classes) {
      if (!seen.insert(c).second) {
        throw Error(ErrorCode::parse_error,
                    "schedule '" + s.name + "' introduces '" + c + "' twice");
      }
    }
  }
}

// Renames / merges / drops classes by name. Targets must not themselves be
// sources (no chains), and dropped names cannot also be mapped.
struct ClassMergeMap {
  std::map<std::string, std::string> mapping;
  std::vector<std::string> drop;
};

inline void validate_merge_map(const ClassMergeMap& m) {
  for (const auto& [src, dst] : m.mapping) {
    if (m.mapping.count(dst)) {
      throw Error(ErrorCode::parse_error,
                  "merge target '" + dst + "' is itself a source");
    }
  }
  for (const auto& d : m.drop) {
    if (m.mapping.count(d)) {
      throw Error(ErrorCode::parse_error,
                  "'" + d + "' is both dropped and mapped");
    }
  }
}

// Applies a merge map. Sources renamed into existing classes reuse that
// class's id; sources renamed into a brand-new class keep the first source's
// id. Instance counts are conserved minus the dropped classes.
inline DatasetManifest merge_classes(const DatasetManifest& manifest,
                                     const ClassMergeMap& m) {
  validate_merge_map(m);
  for (const auto& [src, dst] : m.mapping) {
    if (!manifest.category_id(src)) {
      throw Error(ErrorCode::unknown_source_class,
                  "merge source '" + src + "' not in the category table");
    }
  }
  for (const auto& d : m.drop) {
    if (!manifest.category_id(d)) {
      throw Error(ErrorCode::unknown_source_class,
                  "dropped class '" + d + "' not in the category table");
    }
  }
  const std::set<std::string> dropped(m.drop.begin(), m.drop.end());

  DatasetManifest out;
  out.split = manifest.split;
  out.images = manifest.images;
  std::unordered_map<int, int> id_map;          // old id -> new id
  std::map<std::string, int> emitted;           // new name -> new id
  std::vector<int> dropped_ids;
  for (const auto& [id, name] : manifest.categories) {
    if (dropped.count(name)) {
      dropped_ids.push_back(id);
      continue;
    }
    const auto mapped = m.mapping.find(name);
    const std::string target = mapped == m.mapping.end() ? name : mapped->second;
    // An existing class that is also a merge target must keep its own id, so
    // resolve targets against the ORIGINAL table first.
    int new_id;
    if (auto it = emitted.find(target); it != emitted.end()) {
      new_id = it->second;
    } else if (auto orig = manifest.category_id(target);
               orig && !m.mapping.count(target)) {
      new_id = *orig;
      emitted.emplace(target, new_id);
      out.categories.emplace_back(new_id, target);
    } else {
      new_id = id;  // brand-new class: first source donates its id
      emitted.emplace(target, new_id);
      out.categories.emplace_back(new_id, target);
    }
    id_map.emplace(id, new_id);
  }
  for (const auto& a : manifest.annotations) {
    const auto it = id_map.find(a.category);
    if (it == id_map.end()) continue;  // dropped class
    Annotation copy = a;
    copy.category = it->second;
    out.annotations.push_back(copy);
  }
  return out;
}

namespace detail {

inline int resolve_unknown_id(DatasetManifest& m) {
  if (auto existing = m.category_id("unknown")) return *existing;
  int id = 0;
  for (const auto& [cid, name] : m.categories) id = std::max(id, cid);
  ++id;
  m.categories.emplace_back(id, "unknown");
  return id;
}

inline std::set<int> resolve_names(const DatasetManifest& m,
                                   const std::set<std::string>& names,
                                   bool must_exist) {
  std::set<int> ids;
  for (const auto& n : names) {
    if (auto id = m.category_id(n)) {
      ids.insert(*id);
    } else if (must_exist) {
      throw Error(ErrorCode::unknown_category,
                  "class '" + n + "' not in the category table");
    }
  }
  return ids;
}

}  // namespace detail

// Open-set view: the train split sees only known-class labels; the val split
// keeps known labels and turns every other annotation into "unknown".
inline DatasetManifest make_openset_view(const DatasetManifest& manifest,
                                         const std::set<std::string>& known,
                                         Split split) {
  const std::set<int> known_ids = detail::resolve_names(manifest, known, true);
  DatasetManifest out;
  out.split = split;
  out.images = manifest.images;
  out.categories = manifest.categories;
  if (split == Split::train) {
    for (const auto& a : manifest.annotations)
      if (known_ids.count(a.category)) out.annotations.push_back(a);
    return out;
  }
  const int unknown_id = detail::resolve_unknown_id(out);
  for (const auto& a : manifest.annotations) {
    Annotation copy = a;
    if (!known_ids.count(a.category)) copy.category = unknown_id;
    out.annotations.push_back(copy);
  }
  return out;
}

// Task view: training labels only the classes introduced at task t; the val
// view keeps everything known by t with true labels and relabels classes
// from later tasks to "unknown". Classes outside the schedule are dropped
// from both views (they are not part of the evaluation universe).
inline DatasetManifest make_task_view(const DatasetManifest& manifest,
                                      const TaskSchedule& schedule, int t,
                                      Split split) {
  const auto& introduced_names = schedule.introduced(t);  // throws unknown_task
  DatasetManifest out;
  out.split = split;
  out.images = manifest.images;
  out.categories = manifest.categories;
  if (split == Split::train) {
    const std::set<int> ids = detail::resolve_names(
        manifest,
        std::set<std::string>(introduced_names.begin(), introduced_names.end()),
        false);
    for (const auto& a : manifest.annotations)
      if (ids.count(a.category)) out.annotations.push_back(a);
    return out;
  }
  const std::set<int> known_ids =
      detail::resolve_names(manifest, schedule.known_at(t), false);
  const std::set<int> future_ids =
      detail::resolve_names(manifest, schedule.unknown_at(t), false);
  const int unknown_id = detail::resolve_unknown_id(out);
  for (const auto& a : manifest.annotations) {
    if (known_ids.count(a.category)) {
      out.annotations.push_back(a);
    } else if (future_ids.count(a.category)) {
      Annotation copy = a;
      copy.category = unknown_id;
      out.annotations.push_back(copy);
    }
    // otherwise: unscheduled class, dropped
  }
  return out;
}

struct ReplaySelection {
  std::vector<std::string> image_ids;           // selection order
  std::map<std::string, std::size_t> counts;    // accumulated per class
  std::map<std::string, std::size_t> shortfall; // classes that missed quota
};

// Greedy exemplar accumulation: walk the seed-shuffled image order and take
// any image still contributing to a class below the quota; all known-class
// instances of a taken image count. Classes that run out of images end up in
// the shortfall report instead of failing the call.
inline ReplaySelection select_exemplar_replay(const DatasetManifest& manifest,
                                              const std::set<std::string>& known,
                                              std::size_t min_instances,
                                              std::uint32_t seed) {
  if (min_instances < 1) {
    throw Error(ErrorCode::size_mismatch, "min_instances must be >= 1");
  }
  const std::set<int> known_ids = detail::resolve_names(manifest, known, true);
  std::unordered_map<std::string, std::vector<int>> image_classes;
  for (const auto& a : manifest.annotations) {
    if (known_ids.count(a.category)) image_classes[a.image_id].push_back(a.category);
  }
  std::vector<std::size_t> order(manifest.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937 rng(seed);
  shuffle_deterministic(order, rng);

  std::unordered_map<int, std::size_t> counts;
  for (int id : known_ids) counts[id] = 0;
  ReplaySelection out;
  for (std::size_t pos : order) {
    bool all_met = true;
    for (int id : known_ids) {
      if (counts[id] < min_instances) {
        all_met = false;
        break;
      }
    }
    if (all_met) break;
    const auto& im = manifest.images[pos];
    const auto it = image_classes.find(im.id);
    if (it == image_classes.end()) continue;
    bool useful = false;
    for (int cid : it->second) {
      if (counts[cid] < min_instances) {
        useful = true;
        break;
      }
    }
    if (!useful) continue;
    out.image_ids.push_back(im.id);
    for (int cid : it->second) ++counts[cid];
  }
  for (int id : known_ids) {
    const auto name = manifest.category_name(id);
    out.counts[*name] = counts[id];
    if (counts[id] < min_instances) out.shortfall[*name] = min_instances - counts[id];
  }
  return out;
}

struct HoldoutSelection {
  std::vector<std::string> holdout;  // image ids, selection order
  DatasetManifest remainder;
  bool full_coverage = true;    // every selected image covers all classes
  std::size_t min_coverage = 0; // distinct classes in the weakest selection
};

// Pulls n images out of a training manifest for proposal bootstrapping.
// Preference goes to images covering every category; when there are not
// enough of those, the selection relaxes to maximum coverage. Within equal
// coverage the choice is uniform under the seed.
inline HoldoutSelection select_proposal_holdout(const DatasetManifest& manifest,
                                                std::size_t n,
                                                std::uint32_t seed) {
  if (manifest.split != Split::train) {
    throw Error(ErrorCode::wrong_split, "holdout selection needs a train manifest");
  }
  if (n > manifest.images.size()) {
    throw Error(ErrorCode::insufficient_images,
                "asked for " + std::to_string(n) + " of " +
                    std::to_string(manifest.images.size()) + " images");
  }
  std::unordered_map<std::string, std::set<int>> image_cover;
  for (const auto& a : manifest.annotations) image_cover[a.image_id].insert(a.category);
  const std::size_t all = manifest.categories.size();

  std::vector<std::size_t> order(manifest.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937 rng(seed);
  shuffle_deterministic(order, rng);
  // Shuffle first, then a stable sort by coverage: uniform within each
  // coverage level, deterministic across runs.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ca = image_cover.find(manifest.images[a].id);
    const auto cb = image_cover.find(manifest.images[b].id);
    const std::size_t na = ca == image_cover.end() ? 0 : ca->second.size();
    const std::size_t nb = cb == image_cover.end() ? 0 : cb->second.size();
    return na > nb;
  });

  HoldoutSelection out;
  std::unordered_set<std::string> chosen;
  out.min_coverage = n == 0 ? 0 : all;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& im = manifest.images[order[i]];
    out.holdout.push_back(im.id);
    chosen.insert(im.id);
    const auto it = image_cover.find(im.id);
    const std::size_t cov = it == image_cover.end() ? 0 : it->second.size();
    out.min_coverage = std::min(out.min_coverage, cov);
    if (cov < all) out.full_coverage = false;
  }
  out.remainder.split = manifest.split;
  out.remainder.categories = manifest.categories;
  for (const auto& im : manifest.images) {
    if (!chosen.count(im.id)) out.remainder.images.push_back(im);
  }
  for (const auto& a : manifest.annotations) {
    if (!chosen.count(a.image_id)) out.remainder.annotations.push_back(a);
  }
  return out;
}

// ---- shipped schedules ----

inline std::vector<std::string> preset_names() {
  return {"kitti", "nuscenes", "bdd-cross"};
}

inline TaskSchedule preset_schedule(const std::string& name) {
  if (name == "kitti") {
    return TaskSchedule{"kitti",
                        {{1, {"car", "truck"}},
                         {2, {"tram", "misc", "cyclist"}},
                         {3, {"pedestrian", "van"}}}};
  }
  if (name == "nuscenes") {
    return TaskSchedule{
        "nuscenes",
        {{1, {"car", "bus"}},
         {2, {"motor", "bike", "barrier", "traffic cone", "road objects"}},
         {3, {"trailer", "truck", "construction vehicle", "pedestrian"}}}};
  }
  if (name == "bdd-cross") {
    return TaskSchedule{"bdd-cross",
                        {{1, {"pedestrian", "bus"}},
                         {2, {"truck", "bike"}},
                         {3, {"car", "motor"}}}};
  }
  throw Error(ErrorCode::parse_error, "unknown schedule preset '" + name + "'");
}

// Class normalization shipped with the nuScenes schedule.
inline ClassMergeMap nuscenes_merge_map() {
  ClassMergeMap m;
  m.mapping = {{"bicycle", "bike"},
               {"bicycle rack", "bike"},
               {"debris", "road objects"},
               {"pushable-pullable objects", "road objects"},
               {"emergency vehicle", "car"}};
  m.drop = {"animal"};
  return m;
}

// BDD keeps its labels except the tiny "train" class.
inline ClassMergeMap bdd_merge_map() {
  ClassMergeMap m;
  m.drop = {"train"};
  return m;
}

}  // namespace owdet
