#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "owdet/error.hpp"
#include "owdet/geometry.hpp"

namespace owdet {

enum class Split { train, val };

inline const char* to_string(Split s) {
  return s == Split::train ? "train" : "val";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw Error(ErrorCode::parse_error, "unknown split '" + s + "'");
}

struct ImageInfo {
  std::string id;
  std::string file;
  int width = 0;
  int height = 0;
};

// In-memory dataset: category table, image list, flat annotation list, and
// which split this manifest represents. Annotation boxes are clipped to
// their image at load time, so downstream code can assume in-frame boxes.
struct DatasetManifest {
  std::vector<std::pair<int, std::string>> categories;
  std::vector<ImageInfo> images;
  std::vector<Annotation> annotations;
  Split split = Split::train;

  std::optional<int> category_id(const std::string& name) const {
    for (const auto& [id, n] : categories)
      if (n == name) return id;
    return std::nullopt;
  }

  std::optional<std::string> category_name(int id) const {
    for (const auto& [cid, n] : categories)
      if (cid == id) return n;
    return std::nullopt;
  }

  const ImageInfo* find_image(const std::string& id) const {
    for (const auto& im : images)
      if (im.id == id) return &im;
    return nullptr;
  }

  std::unordered_map<std::string, std::size_t> image_index() const {
    std::unordered_map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < images.size(); ++i) idx.emplace(images[i].id, i);
    return idx;
  }

  std::int64_t max_instance_id() const {
    std::int64_t m = 0;
    for (const auto& a : annotations) m = std::max(m, a.instance_id);
    return m;
  }
};

// Structural checks shared by the JSON loader and the importers. Boxes are
// clipped in place; a box with no in-frame area or no positive size is a
// parse error, not a silent repair.
inline void validate_manifest(DatasetManifest& m) {
  std::unordered_set<std::string> image_ids;
  std::unordered_map<std::string, const ImageInfo*> by_id;
  for (const auto& im : m.images) {
    if (!image_ids.insert(im.id).second) {
      throw Error(ErrorCode::parse_error, "duplicate image id '" + im.id + "'");
    }
    if (im.width <= 0 || im.height <= 0) {
      throw Error(ErrorCode::parse_error,
                  "image '" + im.id + "' has nonpositive dimensions");
    }
    by_id.emplace(im.id, &im);
  }
  std::unordered_set<int> category_ids;
  for (const auto& [id, name] : m.categories) {
    if (!category_ids.insert(id).second) {
      throw Error(ErrorCode::parse_error,
                  "duplicate category id " + std::to_string(id));
    }
    if (name.empty()) {
      throw Error(ErrorCode::parse_error, "empty category name");
    }
  }
  std::unordered_set<std::int64_t> instance_ids;
  for (auto& a : m.annotations) {
    const auto it = by_id.find(a.image_id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::parse_error,
                  "annotation references unknown image '" + a.image_id + "'");
    }
    if (!category_ids.count(a.category)) {
      throw Error(ErrorCode::parse_error,
                  "annotation references unknown category " +
                      std::to_string(a.category));
    }
    if (!instance_ids.insert(a.instance_id).second) {
      throw Error(ErrorCode::parse_error,
                  "duplicate instance id " + std::to_string(a.instance_id));
    }
    if (a.box.width <= 0.0 || a.box.height <= 0.0) {
      throw Error(ErrorCode::parse_error,
                  "degenerate box on instance " + std::to_string(a.instance_id));
    }
    try {
      a.box = clip_box(a.box, it->second->width, it->second->height);
    } catch (const Error&) {
      throw Error(ErrorCode::parse_error,
                  "instance " + std::to_string(a.instance_id) +
                      " lies outside image '" + a.image_id + "'");
    }
  }
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["categories"] = nlohmann::json::array();
  for (const auto& [id, name] : m.categories) {
    j["categories"].push_back(nlohmann::json::array({id, name}));
  }
  j["images"] = nlohmann::json::array();
  for (const auto& im : m.images) {
    j["images"].push_back({{"id", im.id},
                           {"file", im.file},
                           {"width", im.width},
                           {"height", im.height}});
  }
  j["annotations"] = nlohmann::json::array();
  for (const auto& a : m.annotations) {
    j["annotations"].push_back(
        {{"image_id", a.image_id},
         {"bbox", {a.box.x_min, a.box.y_min, a.box.width, a.box.height}},
         {"category_id", a.category},
         {"instance_id", a.instance_id}});
  }
  j["split"] = to_string(m.split);
  return j;
}

// Unknown top-level keys are ignored so tools may embed provenance (seed,
// preset) next to the data.
inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    for (const auto& c : j.at("categories")) {
      m.categories.emplace_back(c.at(0).get<int>(), c.at(1).get<std::string>());
    }
    for (const auto& im : j.at("images")) {
      m.images.push_back(ImageInfo{im.at("id").get<std::string>(),
                                   im.at("file").get<std::string>(),
                                   im.at("width").get<int>(),
                                   im.at("height").get<int>()});
    }
    for (const auto& a : j.at("annotations")) {
      const auto& bb = a.at("bbox");
      if (!bb.is_array() || bb.size() != 4) {
        throw Error(ErrorCode::parse_error, "bbox must be [x, y, w, h]");
      }
      m.annotations.push_back(
          Annotation{a.at("image_id").get<std::string>(),
                     Box{bb.at(0).get<double>(), bb.at(1).get<double>(),
                         bb.at(2).get<double>(), bb.at(3).get<double>()},
                     a.at("category_id").get<int>(),
                     a.at("instance_id").get<std::int64_t>()});
    }
    if (j.contains("split")) {
      m.split = split_from_string(j.at("split").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("manifest: ") + e.what());
  }
  validate_manifest(m);
  return m;
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io_error, "cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, path + ": " + e.what());
  }
  return manifest_from_json(j);
}

inline void save_manifest(const std::string& path, const DatasetManifest& m,
                          const nlohmann::json& provenance = {}) {
  nlohmann::json j = manifest_to_json(m);
  if (provenance.is_object()) {
    for (const auto& [k, v] : provenance.items()) j[k] = v;
  }
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::io_error, "cannot open " + path);
  os << j.dump(2) << "\n";
  if (!os) throw Error(ErrorCode::io_error, path + ": write failed");
}

// ---- detections (JSON lines) ----

inline std::vector<Detection> load_detections(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io_error, "cannot open " + path);
  std::vector<Detection> dets;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto& bb = j.at("bbox");
      Detection d{j.at("image_id").get<std::string>(),
                  Box{bb.at(0).get<double>(), bb.at(1).get<double>(),
                      bb.at(2).get<double>(), bb.at(3).get<double>()},
                  j.at("category_id").get<int>(), j.at("score").get<double>()};
      if (d.score < 0.0 || d.score > 1.0) {
        throw Error(ErrorCode::parse_error,
                    path + ":" + std::to_string(lineno) + ": score outside [0,1]");
      }
      dets.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse_error,
                  path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return dets;
}

inline void save_detections(const std::string& path,
                            const std::vector<Detection>& dets) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::io_error, "cannot open " + path);
  for (const auto& d : dets) {
    nlohmann::json j{{"image_id", d.image_id},
                     {"bbox", {d.box.x_min, d.box.y_min, d.box.width, d.box.height}},
                     {"category_id", d.category},
                     {"score", d.score}};
    os << j.dump() << "\n";
  }
  if (!os) throw Error(ErrorCode::io_error, path + ": write failed");
}

// ---- KITTI label import ----

namespace detail {

// Reads just enough of a PNG or binary PNM header to learn the dimensions.
inline std::pair<int, int> probe_image_size(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io_error, "cannot open " + path);
  unsigned char head[24];
  is.read(reinterpret_cast<char*>(head), 2);
  if (!is) throw Error(ErrorCode::parse_error, path + ": truncated header");
  if (head[0] == 'P' && (head[1] == '5' || head[1] == '6')) {
    is.seekg(0);
    std::string all(1024, '\0');
    is.read(all.data(), static_cast<std::streamsize>(all.size()));
    std::istringstream hs(all.substr(2));
    // minimal tokenizer mirroring PNM comment rules
    auto tok = [&]() {
      int c = hs.get();
      while (c != EOF) {
        if (c == '#') {
          while (c != EOF && c != '\n') c = hs.get();
        } else if (std::isspace(c)) {
          c = hs.get();
        } else {
          break;
        }
      }
      long v = 0;
      if (c == EOF || !std::isdigit(c)) {
        throw Error(ErrorCode::parse_error, path + ": malformed PNM header");
      }
      while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = hs.get();
      }
      return v;
    };
    const long w = tok();
    const long h = tok();
    return {static_cast<int>(w), static_cast<int>(h)};
  }
  is.seekg(0);
  is.read(reinterpret_cast<char*>(head), 24);
  static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (!is || std::memcmp(head, png_sig, 8) != 0) {
    throw Error(ErrorCode::parse_error, path + ": unrecognized image format");
  }
  const auto be32 = [&](int off) {
    return (static_cast<int>(head[off]) << 24) | (static_cast<int>(head[off + 1]) << 16) |
           (static_cast<int>(head[off + 2]) << 8) | static_cast<int>(head[off + 3]);
  };
  return {be32(16), be32(20)};
}

inline std::string kitti_class_name(std::string type) {
  std::transform(type.begin(), type.end(), type.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::replace(type.begin(), type.end(), '_', ' ');
  return type;
}

}  // namespace detail

// Builds a manifest from a directory of KITTI label .txt files plus the
// matching image files (same stem) from images_dir. Label rows are
// whitespace separated: type, truncated, occluded, alpha, then the bbox as
// left top right bottom. DontCare rows are skipped; a zero-area box on a
// real class is a parse error. Category ids are assigned in order of first
// appearance over files sorted by name, so the import is deterministic.
inline DatasetManifest import_kitti(const std::string& labels_dir,
                                    const std::string& images_dir,
                                    Split split = Split::train) {
  namespace fs = std::filesystem;
  std::vector<fs::path> label_files;
  for (const auto& entry : fs::directory_iterator(labels_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") {
      label_files.push_back(entry.path());
    }
  }
  std::sort(label_files.begin(), label_files.end());

  DatasetManifest m;
  m.split = split;
  std::int64_t next_instance = 1;
  for (const auto& lf : label_files) {
    const std::string stem = lf.stem().string();
    fs::path image_path;
    for (const char* ext : {".png", ".pgm", ".ppm"}) {
      fs::path candidate = fs::path(images_dir) / (stem + ext);
      if (fs::exists(candidate)) {
        image_path = candidate;
        break;
      }
    }
    if (image_path.empty()) {
      throw Error(ErrorCode::io_error,
                  "no image found for label file " + lf.string());
    }
    const auto [iw, ih] = detail::probe_image_size(image_path.string());
    m.images.push_back(ImageInfo{stem, image_path.string(), iw, ih});

    std::ifstream is(lf);
    if (!is) throw Error(ErrorCode::io_error, "cannot open " + lf.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream ls(line);
      std::string type;
      double truncated, occluded, alpha, left, top, right, bottom;
      if (!(ls >> type >> truncated >> occluded >> alpha >> left >> top >>
            right >> bottom)) {
        throw Error(ErrorCode::parse_error,
                    lf.string() + ":" + std::to_string(lineno) +
                        ": expected KITTI label row");
      }
      if (type == "DontCare") continue;
      if (right - left <= 0.0 || bottom - top <= 0.0) {
        throw Error(ErrorCode::parse_error,
                    lf.string() + ":" + std::to_string(lineno) +
                        ": degenerate box for class " + type);
      }
      const std::string name = detail::kitti_class_name(type);
      int cid;
      if (auto existing = m.category_id(name)) {
        cid = *existing;
      } else {
        cid = static_cast<int>(m.categories.size()) + 1;
        m.categories.emplace_back(cid, name);
      }
      m.annotations.push_back(Annotation{
          stem, Box{left, top, right - left, bottom - top}, cid, next_instance++});
    }
  }
  validate_manifest(m);
  return m;
}

}  // namespace owdet
