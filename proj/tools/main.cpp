// owdet: batch frontend for saliency generation, image fusion, open-world
// relabeling, split construction, and detector evaluation. Every command is
// a pure function of its inputs, flags, and seed: re-running writes byte
// identical outputs, regardless of the worker count.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "owdet/error.hpp"
#include "owdet/fusion.hpp"
#include "owdet/image_io.hpp"
#include "owdet/manifest.hpp"
#include "owdet/metrics.hpp"
#include "owdet/openworld.hpp"
#include "owdet/relabel.hpp"
#include "owdet/saliency.hpp"
#include "owdet/version.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitInput = 2;

// Bounded pool over [0, n). Tasks must only touch their own slot; callers
// gather results in index order afterwards so output never depends on
// scheduling.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const unsigned count = std::min<unsigned>(workers, static_cast<unsigned>(n));
  pool.reserve(count);
  for (unsigned w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

std::string sanitize_id(const std::string& id) {
  std::string out = id;
  for (char& c : out) {
    if (c == '/' || c == '\\' || c == ':') c = '_';
  }
  return out;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw owdet::Error(owdet::ErrorCode::io_error, "cannot open " + path);
  os << j.dump(2) << "\n";
  if (!os) throw owdet::Error(owdet::ErrorCode::io_error, path + ": write failed");
}

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw owdet::Error(owdet::ErrorCode::io_error, "cannot open " + path);
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    throw owdet::Error(owdet::ErrorCode::parse_error, path + ": " + e.what());
  }
}

// ---- saliency ----

struct SaliencyArgs {
  std::string manifest_path;
  std::vector<std::string> images;
  std::string proposals_path;
  std::string out_dir = ".";
  unsigned workers = 1;
  bool raw = false;
  owdet::SpectralConfig cfg;
};

int run_saliency(const SaliencyArgs& args) {
  struct Job {
    std::string id;
    std::string source;
    std::vector<owdet::Box> regions;
    bool restricted = false;
  };
  std::vector<Job> jobs;
  std::map<std::string, owdet::ProposalSet> proposals;
  if (!args.proposals_path.empty()) {
    proposals = owdet::load_proposals(args.proposals_path,
                                      owdet::ProposalSource::prior_knowledge);
  }
  if (!args.manifest_path.empty()) {
    const auto manifest = owdet::load_manifest(args.manifest_path);
    for (const auto& im : manifest.images) {
      Job job{im.id, im.file, {}, false};
      if (const auto it = proposals.find(im.id); it != proposals.end()) {
        job.regions = it->second.boxes;
        job.restricted = true;
      }
      jobs.push_back(std::move(job));
    }
  }
  for (const auto& path : args.images) {
    const std::string id = fs::path(path).stem().string();
    Job job{id, path, {}, false};
    if (const auto it = proposals.find(id); it != proposals.end()) {
      job.regions = it->second.boxes;
      job.restricted = true;
    }
    jobs.push_back(std::move(job));
  }

  fs::create_directories(args.out_dir);
  std::vector<std::optional<owdet::SaliencyMap>> maps(jobs.size());
  std::vector<std::string> failures(jobs.size());
  parallel_for(jobs.size(), args.workers, [&](std::size_t i) {
    try {
      const owdet::ImageBuffer img = owdet::load_image(jobs[i].source);
      maps[i] = jobs[i].restricted
                    ? owdet::region_saliency(img, jobs[i].regions, args.cfg)
                    : owdet::spectral_residual(img, args.cfg);
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });

  json index;
  index["config"] = {{"working_width", args.cfg.working_width},
                     {"log_epsilon", args.cfg.log_epsilon},
                     {"smooth_kernel", args.cfg.smooth_kernel},
                     {"postblur_sigma", args.cfg.postblur_sigma}};
  index["images"] = json::object();
  index["failures"] = json::array();
  bool failed = false;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!failures[i].empty()) {
      failed = true;
      index["failures"].push_back(
          {{"image_id", jobs[i].id}, {"error", failures[i]}});
      std::cerr << "saliency: " << jobs[i].id << ": " << failures[i] << "\n";
      continue;
    }
    const std::string base =
        (fs::path(args.out_dir) / sanitize_id(jobs[i].id)).string();
    owdet::save_saliency_png(base + ".png", *maps[i]);
    std::string indexed = base + ".png";
    if (args.raw) {
      owdet::save_salf(base + ".salf", *maps[i]);
      indexed = base + ".salf";
    }
    index["images"][jobs[i].id] = indexed;
  }
  write_json_file((fs::path(args.out_dir) / "saliency_index.json").string(), index);
  return failed ? kExitInput : kExitOk;
}

// ---- merge ----

struct MergeArgs {
  std::string manifest_path;
  std::string index_path;
  std::string weights_path;
  std::string out_dir = ".";
  unsigned workers = 1;
};

int run_merge(const MergeArgs& args) {
  const auto manifest = owdet::load_manifest(args.manifest_path);
  const json index = load_json_file(args.index_path);
  if (!index.contains("images") || !index["images"].is_object()) {
    throw owdet::Error(owdet::ErrorCode::parse_error,
                       args.index_path + ": missing \"images\" object");
  }
  owdet::FusionWeights weights;
  if (!args.weights_path.empty()) {
    weights = owdet::load_fusion_weights(args.weights_path);
  }

  fs::create_directories(args.out_dir);
  std::vector<std::optional<owdet::ImageBuffer>> fused(manifest.images.size());
  std::vector<std::string> failures(manifest.images.size());
  parallel_for(manifest.images.size(), args.workers, [&](std::size_t i) {
    const auto& im = manifest.images[i];
    try {
      const auto it = index["images"].find(im.id);
      if (it == index["images"].end()) {
        throw owdet::Error(owdet::ErrorCode::missing_saliency,
                           "no saliency entry for image '" + im.id + "'");
      }
      const std::string sal_path = it->get<std::string>();
      owdet::ImageBuffer img = owdet::load_image(im.file);
      if (img.channels == 1) {
        // fused output is RGB; lift grayscale inputs by channel replication
        owdet::ImageBuffer rgb(img.width, img.height, 3);
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = img.at(x, y, 0);
        img = std::move(rgb);
      }
      owdet::SaliencyMap map;
      std::ifstream probe(sal_path, std::ios::binary);
      char magic[4] = {0, 0, 0, 0};
      probe.read(magic, 4);
      probe.close();
      if (std::string(magic, 4) == "SALF") {
        map = owdet::load_salf(sal_path);
      } else {
        const owdet::ImageBuffer sal_img = owdet::load_image(sal_path);
        map = owdet::to_gray(sal_img);
      }
      fused[i] = owdet::merge(img, map, weights);
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });

  bool failed = false;
  for (std::size_t i = 0; i < manifest.images.size(); ++i) {
    if (!failures[i].empty()) {
      failed = true;
      std::cerr << "merge: " << manifest.images[i].id << ": " << failures[i] << "\n";
      continue;
    }
    const std::string out =
        (fs::path(args.out_dir) / (sanitize_id(manifest.images[i].id) + ".png"))
            .string();
    owdet::save_png(out, *fused[i]);
  }
  return failed ? kExitInput : kExitOk;
}

// ---- relabel ----

struct RelabelArgs {
  std::string manifest_path;
  std::string proposals_path;
  std::string out_path;
  double alpha = 0.3;
  double dedup_iou = 0.9;
};

int run_relabel(const RelabelArgs& args) {
  const auto manifest = owdet::load_manifest(args.manifest_path);
  const auto proposals = owdet::load_proposals(args.proposals_path);
  owdet::RelabelConfig cfg;
  cfg.alpha = args.alpha;
  cfg.dedup_iou = args.dedup_iou;
  owdet::RelabelStats stats;
  const auto relabeled = owdet::relabel_dataset(manifest, proposals, cfg, &stats);
  owdet::save_manifest(args.out_path, relabeled,
                       json{{"alpha", args.alpha}, {"dedup_iou", args.dedup_iou}});
  std::cout << "known-matched: " << stats.known_matched
            << "\nunknown-added: " << stats.unknown_added
            << "\ndeduplicated: " << stats.deduplicated << "\n";
  return kExitOk;
}

// ---- split ----

struct SplitArgs {
  std::string manifest_path;
  std::string preset;
  std::string schedule_path;
  std::string mode = "closeset";
  std::string split;  // empty: keep the manifest's split
  int task = 1;
  std::uint32_t seed = 0;
  std::size_t replay_min = 50;
  std::size_t holdout_n = 500;
  std::string out_dir = ".";
};

owdet::TaskSchedule schedule_from_file(const std::string& path) {
  const json j = load_json_file(path);
  owdet::TaskSchedule s;
  try {
    s.name = j.value("name", std::string("custom"));
    for (const auto& t : j.at("tasks")) {
      s.tasks.emplace_back(t.at(0).get<int>(),
                           t.at(1).get<std::vector<std::string>>());
    }
  } catch (const json::exception& e) {
    throw owdet::Error(owdet::ErrorCode::parse_error, path + ": " + e.what());
  }
  owdet::validate_schedule(s);
  return s;
}

int run_split(const SplitArgs& args) {
  const auto manifest = owdet::load_manifest(args.manifest_path);
  owdet::TaskSchedule schedule;
  if (!args.schedule_path.empty()) {
    schedule = schedule_from_file(args.schedule_path);
  } else {
    schedule = owdet::preset_schedule(args.preset);
  }
  const owdet::Split split =
      args.split.empty() ? manifest.split : owdet::split_from_string(args.split);
  const json provenance{{"seed", args.seed},
                        {"preset", schedule.name},
                        {"task", args.task},
                        {"mode", args.mode}};

  fs::create_directories(args.out_dir);
  const auto out_path = [&](const char* name) {
    return (fs::path(args.out_dir) / name).string();
  };

  owdet::DatasetManifest view;
  if (args.mode == "closeset") {
    view = manifest;  // labels pass through untouched
  } else if (args.mode == "openset") {
    view = owdet::make_openset_view(manifest, schedule.known_at(args.task), split);
  } else if (args.mode == "openworld") {
    view = owdet::make_task_view(manifest, schedule, args.task, split);
  } else {
    throw owdet::Error(owdet::ErrorCode::parse_error,
                       "unknown mode '" + args.mode + "'");
  }
  owdet::save_manifest(out_path("view.json"), view, provenance);

  if (args.mode == "openworld" && split == owdet::Split::train) {
    const auto replay = owdet::select_exemplar_replay(
        manifest, schedule.known_at(args.task), args.replay_min, args.seed);
    json rj{{"image_ids", replay.image_ids},
            {"counts", replay.counts},
            {"shortfall", replay.shortfall},
            {"min_instances", args.replay_min}};
    for (const auto& [k, v] : provenance.items()) rj[k] = v;
    write_json_file(out_path("replay.json"), rj);

    const auto holdout =
        owdet::select_proposal_holdout(manifest, args.holdout_n, args.seed);
    json hj{{"holdout", holdout.holdout},
            {"full_coverage", holdout.full_coverage},
            {"min_coverage", holdout.min_coverage},
            {"n", args.holdout_n}};
    for (const auto& [k, v] : provenance.items()) hj[k] = v;
    write_json_file(out_path("holdout.json"), hj);
    owdet::save_manifest(out_path("remainder.json"), holdout.remainder, provenance);
  }
  return kExitOk;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string manifest_path;
  std::string detections_path;
  std::string mode = "closeset";
  std::string out_path;
  std::string text_path;
  double score_thr = 0.05;
  std::vector<double> thresholds;  // empty: standard grid
};

int run_evaluate(const EvaluateArgs& args) {
  const auto manifest = owdet::load_manifest(args.manifest_path);
  const auto dets = owdet::load_detections(args.detections_path);

  const auto index = manifest.image_index();
  std::set<std::string> dangling;
  std::set<int> bad_categories;
  std::set<int> table;
  for (const auto& [id, name] : manifest.categories) table.insert(id);
  for (const auto& d : dets) {
    if (!index.count(d.image_id)) dangling.insert(d.image_id);
    if (!table.count(d.category)) bad_categories.insert(d.category);
  }
  if (!dangling.empty() || !bad_categories.empty()) {
    for (const auto& id : dangling) {
      std::cerr << "evaluate: detection references unknown image '" << id << "'\n";
    }
    for (int c : bad_categories) {
      std::cerr << "evaluate: detection references unknown category " << c << "\n";
    }
    return kExitInput;
  }

  const std::vector<double> grid =
      args.thresholds.empty() ? owdet::coco_thresholds() : args.thresholds;
  const std::optional<int> unknown_id = manifest.category_id("unknown");

  const auto filter_dets = [&](bool keep_unknown) {
    std::vector<owdet::Detection> out;
    for (const auto& d : dets) {
      const bool is_unknown = unknown_id && d.category == *unknown_id;
      if (is_unknown == keep_unknown) out.push_back(d);
    }
    return out;
  };
  const auto filter_truth = [&](bool keep_unknown) {
    std::vector<owdet::Annotation> out;
    for (const auto& a : manifest.annotations) {
      const bool is_unknown = unknown_id && a.category == *unknown_id;
      if (is_unknown == keep_unknown) out.push_back(a);
    }
    return out;
  };

  json report;
  report["mode"] = args.mode;
  std::string text;
  if (args.mode == "closeset") {
    const auto coco = owdet::coco_suite(dets, manifest.annotations, grid);
    report["coco"] = owdet::metrics_to_json(coco);
    text = owdet::metrics_to_text(coco);
  } else if (args.mode == "openset") {
    const auto coco = owdet::coco_suite(dets, manifest.annotations, grid);
    report["coco"] = owdet::metrics_to_json(coco);
    text = owdet::metrics_to_text(coco);
    const auto known =
        owdet::coco_suite(filter_dets(false), filter_truth(false), grid);
    report["known"] = owdet::metrics_to_json(known);
    if (unknown_id) {
      const auto unknown =
          owdet::coco_suite(filter_dets(true), filter_truth(true), grid);
      report["unknown"] = owdet::metrics_to_json(unknown);
    }
  } else if (args.mode == "openworld") {
    // Known-class detections only: this protocol has no unknown head.
    const auto known_dets = filter_dets(false);
    const auto known_truth = filter_truth(false);
    const auto unknown_truth = filter_truth(true);
    const auto coco = owdet::coco_suite(known_dets, known_truth, grid);
    report["coco_known"] = owdet::metrics_to_json(coco);
    report["ap50_known"] =
        coco.ap50 ? json(owdet::round6(*coco.ap50)) : json(nullptr);
    text = owdet::metrics_to_text(coco);
    try {
      const auto wi = owdet::wilderness_impact(known_dets, known_truth,
                                               unknown_truth, args.score_thr);
      report["wilderness"] = owdet::wilderness_to_json(wi);
    } catch (const owdet::Error& e) {
      if (e.code() != owdet::ErrorCode::degenerate_denominator) throw;
      report["wilderness"] = {{"wi", nullptr}, {"degenerate", true}};
    }
    const auto ose = owdet::absolute_open_set_error(known_dets, unknown_truth,
                                                    0.5, args.score_thr);
    report["ose"] = owdet::ose_to_json(ose);
  } else {
    throw owdet::Error(owdet::ErrorCode::parse_error,
                       "unknown mode '" + args.mode + "'");
  }

  std::cout << text;
  if (!args.out_path.empty()) write_json_file(args.out_path, report);
  if (!args.text_path.empty()) {
    std::ofstream os(args.text_path);
    if (!os) {
      throw owdet::Error(owdet::ErrorCode::io_error, "cannot open " + args.text_path);
    }
    os << text;
  }
  return kExitOk;
}

// ---- machine-readable help ----

json describe_app(const CLI::App& app) {
  json j;
  j["name"] = app.get_name();
  j["description"] = app.get_description();
  j["options"] = json::array();
  for (const CLI::Option* opt : app.get_options()) {
    j["options"].push_back({{"name", opt->get_name()},
                            {"description", opt->get_description()},
                            {"required", opt->get_required()},
                            {"default", opt->get_default_str()}});
  }
  j["subcommands"] = json::array();
  for (const CLI::App* sub : app.get_subcommands({})) {
    j["subcommands"].push_back(describe_app(*sub));
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open-world detection dataset and evaluation toolkit"};
  app.set_version_flag("--version", std::string(owdet::version()));
  bool help_json = false;
  app.add_flag("--help-json", help_json, "print flag schema as JSON and exit");

  SaliencyArgs sal;
  auto* sal_cmd = app.add_subcommand("saliency", "compute saliency maps");
  sal_cmd->add_option("--manifest", sal.manifest_path, "dataset manifest JSON");
  sal_cmd->add_option("images", sal.images, "image files (alternative to --manifest)");
  sal_cmd->add_option("--proposals", sal.proposals_path,
                      "region proposals JSONL; restricts saliency to regions");
  sal_cmd->add_option("--out", sal.out_dir, "output directory")->required();
  sal_cmd->add_option("--workers", sal.workers, "worker threads");
  sal_cmd->add_flag("--raw", sal.raw, "also write raw float maps and index them");
  sal_cmd->add_option("--working-width", sal.cfg.working_width,
                      "spectral working width in pixels");
  sal_cmd->add_option("--postblur-sigma", sal.cfg.postblur_sigma,
                      "post blur sigma, working-scale pixels");

  MergeArgs mrg;
  auto* mrg_cmd = app.add_subcommand("merge", "fuse saliency into images");
  mrg_cmd->add_option("--manifest", mrg.manifest_path, "dataset manifest JSON")
      ->required();
  mrg_cmd->add_option("--saliency-index", mrg.index_path,
                      "index JSON from the saliency command")
      ->required();
  mrg_cmd->add_option("--weights", mrg.weights_path, "fusion weights JSON");
  mrg_cmd->add_option("--out", mrg.out_dir, "output directory")->required();
  mrg_cmd->add_option("--workers", mrg.workers, "worker threads");

  RelabelArgs rel;
  auto* rel_cmd = app.add_subcommand("relabel", "relabel proposals as unknowns");
  rel_cmd->add_option("--manifest", rel.manifest_path, "dataset manifest JSON")
      ->required();
  rel_cmd->add_option("--proposals", rel.proposals_path, "proposals JSONL")
      ->required();
  rel_cmd->add_option("--alpha", rel.alpha, "known-match IoU threshold");
  rel_cmd->add_option("--dedup-iou", rel.dedup_iou, "unknown dedup IoU");
  rel_cmd->add_option("--out", rel.out_path, "output manifest path")->required();

  SplitArgs spl;
  auto* spl_cmd = app.add_subcommand("split", "build task/split views");
  spl_cmd->add_option("--manifest", spl.manifest_path, "dataset manifest JSON")
      ->required();
  spl_cmd->add_option("--preset", spl.preset,
                      "schedule preset: kitti, nuscenes, bdd-cross");
  spl_cmd->add_option("--schedule", spl.schedule_path, "schedule JSON file");
  spl_cmd->add_option("--mode", spl.mode, "closeset, openset, or openworld");
  spl_cmd->add_option("--split", spl.split, "train or val (default: manifest's)");
  spl_cmd->add_option("--task", spl.task, "task number");
  spl_cmd->add_option("--seed", spl.seed, "selection seed");
  spl_cmd->add_option("--replay-min", spl.replay_min,
                      "exemplar instances per class");
  spl_cmd->add_option("--holdout-n", spl.holdout_n, "proposal holdout size");
  spl_cmd->add_option("--out", spl.out_dir, "output directory")->required();

  EvaluateArgs ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "score detections");
  ev_cmd->add_option("--manifest", ev.manifest_path, "truth manifest JSON")
      ->required();
  ev_cmd->add_option("--detections", ev.detections_path, "detections JSONL")
      ->required();
  ev_cmd->add_option("--mode", ev.mode, "closeset, openset, or openworld");
  ev_cmd->add_option("--score-thr", ev.score_thr,
                     "score threshold for WI and A-OSE");
  ev_cmd->add_option("--thresholds", ev.thresholds,
                     "IoU thresholds (default: 0.5..0.95 step 0.05)");
  ev_cmd->add_option("--out", ev.out_path, "report JSON path");
  ev_cmd->add_option("--text", ev.text_path, "report text path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (help_json) {
      std::cout << describe_app(app).dump(2) << "\n";
      return kExitOk;
    }
    if (sal_cmd->parsed()) {
      if (sal.manifest_path.empty() && sal.images.empty()) {
        std::cerr << "saliency: need --manifest or image files\n";
        return kExitInput;
      }
      return run_saliency(sal);
    }
    if (mrg_cmd->parsed()) return run_merge(mrg);
    if (rel_cmd->parsed()) return run_relabel(rel);
    if (spl_cmd->parsed()) {
      if (spl.preset.empty() == spl.schedule_path.empty()) {
        std::cerr << "split: need exactly one of --preset / --schedule\n";
        return kExitInput;
      }
      return run_split(spl);
    }
    if (ev_cmd->parsed()) return run_evaluate(ev);
    std::cout << app.help();
    return kExitOk;
  } catch (const owdet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
