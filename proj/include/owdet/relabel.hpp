#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "owdet/error.hpp"
#include "owdet/geometry.hpp"
#include "owdet/manifest.hpp"

namespace owdet {

enum class ProposalSource { external_detector, prior_knowledge };

// Class-agnostic boxes for one image. scores is either empty or aligned with
// boxes; entries may be absent when the producer gave none.
struct ProposalSet {
  std::string image_id;
  std::vector<Box> boxes;
  std::vector<std::optional<double>> scores;
  ProposalSource source = ProposalSource::external_detector;
};

struct RelabelConfig {
  double alpha = 0.3;
  // Category id to assign to unmatched proposals. relabel_dataset resolves
  // this to the manifest's "unknown" category (creating it if needed);
  // standalone relabel_image callers must pick an id themselves.
  int unknown_category = -1;
  double dedup_iou = 0.9;
};

struct RelabelStats {
  std::size_t known_matched = 0;  // proposals dropped as duplicates of truth
  std::size_t unknown_added = 0;
  std::size_t deduplicated = 0;   // unknowns dropped against earlier unknowns

  RelabelStats& operator+=(const RelabelStats& o) {
    known_matched += o.known_matched;
    unknown_added += o.unknown_added;
    deduplicated += o.deduplicated;
    return *this;
  }
};

// Relabels one image's proposals against its ground truth. A proposal whose
// best IoU against truth is strictly greater than alpha takes that truth's
// class, which makes it a duplicate of an existing annotation, so it is
// dropped rather than emitted. Everything else becomes an "unknown"
// annotation, after suppressing near-duplicates (IoU >= dedup_iou against an
// earlier kept unknown). Ground truth passes through untouched. New
// annotations get instance ids following the per-image truth maximum;
// relabel_dataset renumbers them manifest-wide.
inline std::vector<Annotation> relabel_image(const ProposalSet& proposals,
                                             const std::vector<Annotation>& truth,
                                             const RelabelConfig& cfg,
                                             RelabelStats* stats = nullptr) {
  for (const auto& t : truth) {
    if (t.image_id != proposals.image_id) {
      throw Error(ErrorCode::image_id_mismatch,
                  "proposals for '" + proposals.image_id +
                      "' paired with truth for '" + t.image_id + "'");
    }
  }
  std::vector<Annotation> out = truth;
  std::vector<Box> kept_unknowns;
  RelabelStats local;
  std::int64_t next_instance = 0;
  for (const auto& t : truth) next_instance = std::max(next_instance, t.instance_id);
  ++next_instance;

  for (const Box& p : proposals.boxes) {
    // Only the max IoU matters: a known-matched proposal is dropped no
    // matter which truth box won the tie.
    double best = 0.0;
    for (const auto& t : truth) best = std::max(best, iou(p, t.box));
    if (best > cfg.alpha) {
      ++local.known_matched;
      continue;
    }
    bool duplicate = false;
    for (const Box& kept : kept_unknowns) {
      if (iou(p, kept) >= cfg.dedup_iou) {
        duplicate = true;
        break;
      }
    }
    if (duplicate) {
      ++local.deduplicated;
      continue;
    }
    kept_unknowns.push_back(p);
    out.push_back(Annotation{proposals.image_id, p, cfg.unknown_category,
                             next_instance++});
    ++local.unknown_added;
  }
  if (stats) *stats += local;
  return out;
}

// Applies relabel_image across a manifest. The category table gains an
// "unknown" entry when it lacks one (id = max existing + 1); images without
// proposals pass through unchanged. Proposal boxes are clipped to their
// image first, matching the invariant every other consumer assumes. New
// unknown annotations are renumbered manifest-wide in image order, so output
// instance ids stay unique and runs are deterministic.
inline DatasetManifest relabel_dataset(
    const DatasetManifest& manifest,
    const std::map<std::string, ProposalSet>& proposals,
    const RelabelConfig& cfg, RelabelStats* stats = nullptr) {
  const auto index = manifest.image_index();
  for (const auto& [image_id, ps] : proposals) {
    if (!index.count(image_id)) {
      throw Error(ErrorCode::unknown_image_id,
                  "proposals reference image '" + image_id +
                      "' not present in the manifest");
    }
  }

  DatasetManifest out;
  out.split = manifest.split;
  out.images = manifest.images;
  out.categories = manifest.categories;
  int unknown_id;
  if (auto existing = out.category_id("unknown")) {
    unknown_id = *existing;
  } else {
    unknown_id = 0;
    for (const auto& [id, name] : out.categories) unknown_id = std::max(unknown_id, id);
    ++unknown_id;
    out.categories.emplace_back(unknown_id, "unknown");
  }
  RelabelConfig resolved = cfg;
  resolved.unknown_category = unknown_id;

  // Bucket annotations per image, preserving manifest order within each.
  std::map<std::string, std::vector<Annotation>> truth_by_image;
  for (const auto& a : manifest.annotations) truth_by_image[a.image_id].push_back(a);

  std::int64_t next_instance = manifest.max_instance_id() + 1;
  for (const auto& im : manifest.images) {
    const auto truth_it = truth_by_image.find(im.id);
    const std::vector<Annotation> empty;
    const auto& truth = truth_it == truth_by_image.end() ? empty : truth_it->second;
    const auto prop_it = proposals.find(im.id);
    if (prop_it == proposals.end()) {
      out.annotations.insert(out.annotations.end(), truth.begin(), truth.end());
      continue;
    }
    ProposalSet clipped = prop_it->second;
    for (auto& b : clipped.boxes) b = clip_box(b, im.width, im.height);
    auto relabeled = relabel_image(clipped, truth, resolved, stats);
    for (std::size_t i = truth.size(); i < relabeled.size(); ++i) {
      relabeled[i].instance_id = next_instance++;
    }
    out.annotations.insert(out.annotations.end(), relabeled.begin(),
                           relabeled.end());
  }
  return out;
}

// ---- proposals (JSON lines) ----

// One object per line: {"image_id": str, "bbox": [x,y,w,h], "score"?: f}.
// Lines group by image_id preserving file order within each image.
inline std::map<std::string, ProposalSet> load_proposals(
    const std::string& path,
    ProposalSource source = ProposalSource::external_detector) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io_error, "cannot open " + path);
  std::map<std::string, ProposalSet> sets;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string image_id = j.at("image_id").get<std::string>();
      const auto& bb = j.at("bbox");
      const Box box{bb.at(0).get<double>(), bb.at(1).get<double>(),
                    bb.at(2).get<double>(), bb.at(3).get<double>()};
      if (box.width <= 0.0 || box.height <= 0.0) {
        throw Error(ErrorCode::parse_error,
                    path + ":" + std::to_string(lineno) + ": degenerate box");
      }
      auto& set = sets[image_id];
      set.image_id = image_id;
      set.source = source;
      set.boxes.push_back(box);
      set.scores.push_back(j.contains("score")
                               ? std::optional<double>(j.at("score").get<double>())
                               : std::nullopt);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse_error,
                  path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return sets;
}

inline void save_proposals(const std::string& path,
                           const std::map<std::string, ProposalSet>& sets) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::io_error, "cannot open " + path);
  for (const auto& [image_id, set] : sets) {
    for (std::size_t i = 0; i < set.boxes.size(); ++i) {
      nlohmann::json j{{"image_id", image_id},
                       {"bbox",
                        {set.boxes[i].x_min, set.boxes[i].y_min,
                         set.boxes[i].width, set.boxes[i].height}}};
      if (i < set.scores.size() && set.scores[i]) j["score"] = *set.scores[i];
      os << j.dump() << "\n";
    }
  }
  if (!os) throw Error(ErrorCode::io_error, path + ": write failed");
}

}  // namespace owdet
