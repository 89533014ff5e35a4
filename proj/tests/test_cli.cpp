// End-to-end checks of the owdet binary: flag handling, exit codes, output
// layout, and byte-level determinism across reruns and worker counts.
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "owdet/image_io.hpp"
#include "owdet/manifest.hpp"
#include "subprocess.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = OWDET_CLI_PATH;

testutil::RunResult cli(const std::vector<std::string>& args,
                        const testutil::TempDir& tmp) {
  return testutil::run_process(kCli, args, tmp.path.string());
}

// Writes a small dataset: textured PGM images plus a manifest. Returns the
// manifest path.
std::string write_dataset(const testutil::TempDir& tmp, int n_images) {
  owdet::DatasetManifest m;
  m.categories = {{1, "car"}, {2, "pedestrian"}};
  for (int i = 0; i < n_images; ++i) {
    const std::string id = "img" + std::to_string(i);
    owdet::ImageBuffer img(48, 48, 1, 0.1);
    // a bright block whose position varies per image
    const int bx = 6 + (i * 7) % 30;
    const int by = 6 + (i * 11) % 30;
    for (int y = by; y < by + 8; ++y)
      for (int x = bx; x < bx + 8; ++x) img.at(x, y, 0) = 0.95;
    const std::string file = tmp.file(id + ".pgm");
    owdet::save_pnm(file, img);
    m.images.push_back({id, file, 48, 48});
    m.annotations.push_back({id,
                             {static_cast<double>(bx), static_cast<double>(by), 8, 8},
                             1 + (i % 2),
                             i + 1});
  }
  m.split = owdet::Split::train;
  const std::string path = tmp.file("manifest.json");
  owdet::save_manifest(path, m);
  return path;
}

// Sorted relative file list with whole-file contents, for byte comparisons.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      out[fs::relative(entry.path(), dir).string()] =
          testutil::slurp(entry.path().string());
    }
  }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("version and help exit cleanly") {
  testutil::TempDir tmp("cli_version");
  const auto v = cli({"--version"}, tmp);
  CHECK(v.exit_code == 0);
  CHECK(v.out.find("0.1.0") != std::string::npos);

  const auto h = cli({"--help"}, tmp);
  CHECK(h.exit_code == 0);
  CHECK(h.out.find("saliency") != std::string::npos);
  CHECK(h.out.find("evaluate") != std::string::npos);
}

TEST_CASE("help-json lists every subcommand with its flags") {
  testutil::TempDir tmp("cli_helpjson");
  const auto r = cli({"--help-json"}, tmp);
  REQUIRE(r.exit_code == 0);
  const json j = json::parse(r.out);
  std::vector<std::string> names;
  for (const auto& sub : j["subcommands"]) names.push_back(sub["name"]);
  CHECK(names == std::vector<std::string>{"saliency", "merge", "relabel",
                                          "split", "evaluate"});
  bool saw_alpha = false;
  for (const auto& opt : j["subcommands"][2]["options"]) {
    if (opt["name"] == "--alpha") saw_alpha = true;
  }
  CHECK(saw_alpha);
}

TEST_CASE("unknown flags exit with code 2") {
  testutil::TempDir tmp("cli_badflag");
  CHECK(cli({"--no-such-flag"}, tmp).exit_code == 2);
  CHECK(cli({"relabel", "--bogus"}, tmp).exit_code == 2);
}

TEST_CASE("missing input files exit with code 2") {
  testutil::TempDir tmp("cli_missing");
  const auto r = cli({"relabel", "--manifest", tmp.file("nope.json"),
                      "--proposals", tmp.file("nope.jsonl"), "--out",
                      tmp.file("out.json")},
                     tmp);
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("saliency writes maps and an index, deterministically") {
  testutil::TempDir tmp("cli_sal");
  const std::string manifest = write_dataset(tmp, 6);

  // The index stores output paths, so determinism is checked by re-running
  // into the same directory and comparing before/after snapshots.
  const auto run = [&](const std::string& workers) {
    return cli({"saliency", "--manifest", manifest, "--out", tmp.file("sal"),
                "--workers", workers},
               tmp);
  };
  REQUIRE(run("1").exit_code == 0);
  const auto s1 = snapshot(tmp.file("sal"));
  CHECK(s1.size() == 7);  // 6 maps + the index

  REQUIRE(run("4").exit_code == 0);
  CHECK(snapshot(tmp.file("sal")) == s1);  // byte-identical across workers

  const json index = json::parse(s1.at("saliency_index.json"));
  CHECK(index["images"].size() == 6);
  CHECK(index["failures"].empty());
  CHECK(index["config"]["working_width"] == 64);
}

TEST_CASE("saliency --raw also writes float maps and indexes them") {
  testutil::TempDir tmp("cli_salraw");
  const std::string manifest = write_dataset(tmp, 2);
  REQUIRE(cli({"saliency", "--manifest", manifest, "--out", tmp.file("sal"),
               "--raw"},
              tmp)
              .exit_code == 0);
  const json index = json::parse(testutil::slurp(tmp.file("sal/saliency_index.json")));
  for (const auto& [id, path] : index["images"].items()) {
    CHECK(path.get<std::string>().ends_with(".salf"));
    CHECK(fs::exists(path.get<std::string>()));
  }
  CHECK(fs::exists(tmp.file("sal/img0.png")));  // previews still written
}

TEST_CASE("saliency restricted by proposals stays inside the regions") {
  testutil::TempDir tmp("cli_salprop");
  const std::string manifest = write_dataset(tmp, 2);
  {
    std::ofstream os(tmp.file("props.jsonl"));
    os << R"({"image_id":"img0","bbox":[4,4,20,20]})" << "\n";
  }
  REQUIRE(cli({"saliency", "--manifest", manifest, "--proposals",
               tmp.file("props.jsonl"), "--out", tmp.file("sal"), "--raw"},
              tmp)
              .exit_code == 0);
  const owdet::Plane map = owdet::load_salf(tmp.file("sal/img0.salf"));
  std::size_t outside_nonzero = 0;
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x)
      if ((x < 4 || x >= 24 || y < 4 || y >= 24) && map.at(x, y) != 0.0)
        ++outside_nonzero;
  CHECK(outside_nonzero == 0);
  // img1 had no proposals: full-frame saliency at the image's own size
  const owdet::Plane full = owdet::load_salf(tmp.file("sal/img1.salf"));
  CHECK(full.width == 48);
  CHECK(full.height == 48);
}

TEST_CASE("merge fuses saliency into images, deterministically") {
  testutil::TempDir tmp("cli_merge");
  const std::string manifest = write_dataset(tmp, 4);
  REQUIRE(cli({"saliency", "--manifest", manifest, "--out", tmp.file("sal")},
              tmp)
              .exit_code == 0);

  const auto run = [&](const std::string& dir, const std::string& workers) {
    return cli({"merge", "--manifest", manifest, "--saliency-index",
                tmp.file("sal/saliency_index.json"), "--out", tmp.file(dir),
                "--workers", workers},
               tmp);
  };
  REQUIRE(run("fused1", "1").exit_code == 0);
  REQUIRE(run("fused4", "4").exit_code == 0);
  const auto f1 = snapshot(tmp.file("fused1"));
  CHECK(f1.size() == 4);
  CHECK(f1 == snapshot(tmp.file("fused4")));

  const owdet::ImageBuffer fused = owdet::load_png(tmp.file("fused1/img0.png"));
  CHECK(fused.channels == 3);
  CHECK(fused.width == 48);
}

TEST_CASE("merge without a saliency entry fails with code 2") {
  testutil::TempDir tmp("cli_mergemiss");
  const std::string manifest = write_dataset(tmp, 2);
  {
    std::ofstream os(tmp.file("index.json"));
    os << R"({"images": {}})";
  }
  const auto r = cli({"merge", "--manifest", manifest, "--saliency-index",
                      tmp.file("index.json"), "--out", tmp.file("fused")},
                     tmp);
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("missing_saliency") != std::string::npos);
}

TEST_CASE("relabel emits counts and an updated manifest") {
  testutil::TempDir tmp("cli_relabel");
  const std::string manifest = write_dataset(tmp, 3);
  {
    std::ofstream os(tmp.file("props.jsonl"));
    // one proposal right on img0's truth block, one far away
    os << R"({"image_id":"img0","bbox":[6,6,8,8],"score":0.9})" << "\n";
    os << R"({"image_id":"img0","bbox":[36,36,10,10],"score":0.5})" << "\n";
  }
  const auto r = cli({"relabel", "--manifest", manifest, "--proposals",
                      tmp.file("props.jsonl"), "--out", tmp.file("out.json")},
                     tmp);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("known-matched: 1") != std::string::npos);
  CHECK(r.out.find("unknown-added: 1") != std::string::npos);

  const auto out = owdet::load_manifest(tmp.file("out.json"));
  REQUIRE(out.category_id("unknown").has_value());
  std::size_t unknowns = 0;
  for (const auto& a : out.annotations) {
    unknowns += a.category == *out.category_id("unknown");
  }
  CHECK(unknowns == 1);

  // provenance block landed in the file
  const json j = json::parse(testutil::slurp(tmp.file("out.json")));
  CHECK(j["alpha"] == 0.3);
}

TEST_CASE("split closeset/openset/openworld views with provenance") {
  testutil::TempDir tmp("cli_split");
  // build a manifest whose classes match the kitti preset's first two tasks
  owdet::DatasetManifest m;
  m.categories = {{1, "car"}, {2, "truck"}, {3, "cyclist"}, {4, "pedestrian"}};
  for (int i = 0; i < 8; ++i) {
    const std::string id = "k" + std::to_string(i);
    m.images.push_back({id, id + ".png", 100, 100});
    m.annotations.push_back({id, {5, 5, 20, 20}, 1 + (i % 4), i + 1});
  }
  m.split = owdet::Split::train;
  owdet::save_manifest(tmp.file("m.json"), m);

  const auto r = cli({"split", "--manifest", tmp.file("m.json"), "--preset",
                      "kitti", "--mode", "openworld", "--task", "1", "--seed",
                      "9", "--replay-min", "1", "--holdout-n", "2", "--out",
                      tmp.file("t1")},
                     tmp);
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(tmp.file("t1/view.json")));
  REQUIRE(fs::exists(tmp.file("t1/replay.json")));
  REQUIRE(fs::exists(tmp.file("t1/holdout.json")));
  REQUIRE(fs::exists(tmp.file("t1/remainder.json")));

  const auto view = owdet::load_manifest(tmp.file("t1/view.json"));
  for (const auto& a : view.annotations) {
    CHECK((a.category == 1 || a.category == 2));  // task-1 classes only
  }
  const json vj = json::parse(testutil::slurp(tmp.file("t1/view.json")));
  CHECK(vj["seed"] == 9);
  CHECK(vj["preset"] == "kitti");
  CHECK(vj["task"] == 1);
  CHECK(vj["mode"] == "openworld");

  const json hj = json::parse(testutil::slurp(tmp.file("t1/holdout.json")));
  const auto remainder = owdet::load_manifest(tmp.file("t1/remainder.json"));
  CHECK(hj["holdout"].size() + remainder.images.size() == 8);

  // deterministic: a second run writes identical bytes
  REQUIRE(cli({"split", "--manifest", tmp.file("m.json"), "--preset", "kitti",
               "--mode", "openworld", "--task", "1", "--seed", "9",
               "--replay-min", "1", "--holdout-n", "2", "--out", tmp.file("t1b")},
              tmp)
              .exit_code == 0);
  CHECK(snapshot(tmp.file("t1")) == snapshot(tmp.file("t1b")));

  // val split of the same task maps future classes to "unknown"
  owdet::DatasetManifest v = m;
  v.split = owdet::Split::val;
  owdet::save_manifest(tmp.file("v.json"), v);
  REQUIRE(cli({"split", "--manifest", tmp.file("v.json"), "--preset", "kitti",
               "--mode", "openworld", "--task", "1", "--out", tmp.file("tv")},
              tmp)
              .exit_code == 0);
  const auto val_view = owdet::load_manifest(tmp.file("tv/view.json"));
  REQUIRE(val_view.category_id("unknown").has_value());
  std::size_t unknowns = 0;
  for (const auto& a : val_view.annotations) {
    unknowns += a.category == *val_view.category_id("unknown");
  }
  CHECK(unknowns > 0);
}

TEST_CASE("split requires exactly one schedule source") {
  testutil::TempDir tmp("cli_splitbad");
  const std::string manifest = write_dataset(tmp, 2);
  CHECK(cli({"split", "--manifest", manifest, "--out", tmp.file("x")}, tmp)
            .exit_code == 2);
  CHECK(cli({"split", "--manifest", manifest, "--preset", "kitti",
             "--schedule", tmp.file("s.json"), "--out", tmp.file("x")},
            tmp)
            .exit_code == 2);
}

TEST_CASE("split accepts a custom schedule file") {
  testutil::TempDir tmp("cli_splitsched");
  const std::string manifest = write_dataset(tmp, 4);  // car / pedestrian
  {
    std::ofstream os(tmp.file("sched.json"));
    os << R"({"name":"mine","tasks":[[1,["car"]],[2,["pedestrian"]]]})";
  }
  const auto r = cli({"split", "--manifest", manifest, "--schedule",
                      tmp.file("sched.json"), "--mode", "openset", "--task",
                      "1", "--out", tmp.file("os")},
                     tmp);
  REQUIRE(r.exit_code == 0);
  const auto view = owdet::load_manifest(tmp.file("os/view.json"));
  for (const auto& a : view.annotations) CHECK(a.category == 1);
}

TEST_CASE("evaluate scores a perfect detector at 1.0") {
  testutil::TempDir tmp("cli_eval");
  const std::string manifest = write_dataset(tmp, 5);
  const auto m = owdet::load_manifest(manifest);
  std::vector<owdet::Detection> dets;
  for (const auto& a : m.annotations) {
    dets.push_back({a.image_id, a.box, a.category, 0.9});
  }
  owdet::save_detections(tmp.file("dets.jsonl"), dets);

  const auto r = cli({"evaluate", "--manifest", manifest, "--detections",
                      tmp.file("dets.jsonl"), "--mode", "closeset", "--out",
                      tmp.file("report.json"), "--text", tmp.file("report.txt")},
                     tmp);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("AP_all") != std::string::npos);

  const json report = json::parse(testutil::slurp(tmp.file("report.json")));
  CHECK(report["mode"] == "closeset");
  CHECK(report["coco"]["ap_all"] == 1.0);
  CHECK(report["coco"]["ar_all"] == 1.0);
  CHECK(testutil::slurp(tmp.file("report.txt")).find("1.000000") !=
        std::string::npos);

  // rerun: identical bytes
  REQUIRE(cli({"evaluate", "--manifest", manifest, "--detections",
               tmp.file("dets.jsonl"), "--mode", "closeset", "--out",
               tmp.file("report2.json")},
              tmp)
              .exit_code == 0);
  CHECK(testutil::slurp(tmp.file("report.json")) ==
        testutil::slurp(tmp.file("report2.json")));
}

TEST_CASE("evaluate openworld reports wilderness and open-set error") {
  testutil::TempDir tmp("cli_evalow");
  owdet::DatasetManifest m;
  m.categories = {{1, "car"}, {2, "unknown"}};
  m.images = {{"a", "a.png", 200, 200}};
  m.annotations = {{"a", {10, 10, 30, 30}, 1, 1},
                   {"a", {100, 100, 30, 30}, 2, 2}};  // an unknown object
  m.split = owdet::Split::val;
  owdet::save_manifest(tmp.file("m.json"), m);
  const std::vector<owdet::Detection> dets = {
      {"a", {10, 10, 30, 30}, 1, 0.9},
      {"a", {100, 100, 30, 30}, 1, 0.8},  // absorbed by the unknown
  };
  owdet::save_detections(tmp.file("d.jsonl"), dets);

  const auto r = cli({"evaluate", "--manifest", tmp.file("m.json"),
                      "--detections", tmp.file("d.jsonl"), "--mode",
                      "openworld", "--out", tmp.file("rep.json")},
                     tmp);
  REQUIRE(r.exit_code == 0);
  const json rep = json::parse(testutil::slurp(tmp.file("rep.json")));
  CHECK(rep["coco_known"]["ap_all"] == 1.0);
  CHECK(rep["ap50_known"] == 1.0);
  CHECK(rep["wilderness"]["absorbed"] == 1);
  CHECK(rep["wilderness"]["wi"] == 1.0);  // 1.0 / 0.5 - 1
  CHECK(rep["ose"]["a_ose"] == 1);
  CHECK(rep["ose"]["by_class"]["1"] == 1);
}

TEST_CASE("evaluate rejects detections pointing at unknown images") {
  testutil::TempDir tmp("cli_evalbad");
  const std::string manifest = write_dataset(tmp, 2);
  {
    std::ofstream os(tmp.file("d.jsonl"));
    os << R"({"image_id":"ghost","bbox":[1,1,5,5],"category_id":1,"score":0.5})"
       << "\n";
  }
  const auto r = cli({"evaluate", "--manifest", manifest, "--detections",
                      tmp.file("d.jsonl"), "--mode", "closeset"},
                     tmp);
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("ghost") != std::string::npos);
}

TEST_SUITE_END();
