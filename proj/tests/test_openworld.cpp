#include "owdet/openworld.hpp"

#include <algorithm>
#include <set>

#include "doctest.h"

using owdet::ClassMergeMap;
using owdet::DatasetManifest;
using owdet::Split;
using owdet::TaskSchedule;

namespace {

// Four classes over six images; class coverage varies per image so replay
// and holdout selection have something to choose between.
DatasetManifest bench_manifest() {
  DatasetManifest m;
  m.categories = {{1, "car"}, {2, "truck"}, {3, "pedestrian"}, {4, "van"}};
  for (int i = 0; i < 6; ++i) {
    const std::string id = "img" + std::to_string(i);
    m.images.push_back({id, id + ".png", 200, 200});
  }
  std::int64_t inst = 1;
  const auto add = [&](const std::string& img, int cat) {
    m.annotations.push_back(
        {img, {10.0 * static_cast<double>(inst % 12), 10, 20, 20}, cat, inst});
    ++inst;
  };
  add("img0", 1); add("img0", 2); add("img0", 3); add("img0", 4);
  add("img1", 1); add("img1", 2);
  add("img2", 3); add("img2", 4);
  add("img3", 1);
  add("img4", 2); add("img4", 3);
  add("img5", 4); add("img5", 4);
  m.split = Split::train;
  return m;
}

TaskSchedule two_task_schedule() {
  return TaskSchedule{"test", {{1, {"car", "truck"}}, {2, {"pedestrian", "van"}}}};
}

}  // namespace

TEST_SUITE_BEGIN("openworld");

TEST_CASE("schedule knowledge accumulates across tasks") {
  const TaskSchedule s = two_task_schedule();
  CHECK(s.introduced(1) == std::vector<std::string>{"car", "truck"});
  CHECK(s.known_at(1) == std::set<std::string>{"car", "truck"});
  CHECK(s.unknown_at(1) == std::set<std::string>{"pedestrian", "van"});
  CHECK(s.known_at(2) ==
        std::set<std::string>{"car", "truck", "pedestrian", "van"});
  CHECK(s.unknown_at(2).empty());
  CHECK(s.all_classes().size() == 4);
  try {
    s.introduced(9);
    FAIL("expected an exception");
  } catch (const owdet::Error& e) {
    CHECK(e.code() == owdet::ErrorCode::unknown_task);
  }
}

TEST_CASE("schedule validation rejects duplicates") {
  TaskSchedule repeat_task{"bad", {{1, {"a"}}, {1, {"b"}}}};
  CHECK_THROWS_AS(owdet::validate_schedule(repeat_task), owdet::Error);
  TaskSchedule repeat_class{"bad", {{1, {"a"}}, {2, {"a"}}}};
  CHECK_THROWS_AS(owdet::validate_schedule(repeat_class), owdet::Error);
}

TEST_CASE("presets cover disjoint classes and end with nothing unknown") {
  for (const auto& name : owdet::preset_names()) {
    const TaskSchedule s = owdet::preset_schedule(name);
    CHECK(s.name == name);
    owdet::validate_schedule(s);
    REQUIRE(!s.tasks.empty());
    for (const auto& [t, classes] : s.tasks) {
      const auto known = s.known_at(t);
      const auto unknown = s.unknown_at(t);
      std::set<std::string> overlap;
      std::set_intersection(known.begin(), known.end(), unknown.begin(),
                            unknown.end(),
                            std::inserter(overlap, overlap.begin()));
      CHECK(overlap.empty());
    }
    CHECK(s.unknown_at(s.tasks.back().first).empty());
  }
  CHECK_THROWS_AS(owdet::preset_schedule("imaginary"), owdet::Error);
}

TEST_CASE("preset class compositions") {
  const TaskSchedule kitti = owdet::preset_schedule("kitti");
  REQUIRE(kitti.tasks.size() == 3);
  CHECK(kitti.introduced(1) == std::vector<std::string>{"car", "truck"});
  CHECK(kitti.introduced(2) == std::vector<std::string>{"tram", "misc", "cyclist"});
  CHECK(kitti.introduced(3) == std::vector<std::string>{"pedestrian", "van"});

  const TaskSchedule nu = owdet::preset_schedule("nuscenes");
  CHECK(nu.introduced(2) ==
        std::vector<std::string>{"motor", "bike", "barrier", "traffic cone",
                                 "road objects"});
  CHECK(nu.introduced(3) ==
        std::vector<std::string>{"trailer", "truck", "construction vehicle",
                                 "pedestrian"});

  const TaskSchedule bdd = owdet::preset_schedule("bdd-cross");
  CHECK(bdd.introduced(1) == std::vector<std::string>{"pedestrian", "bus"});
  CHECK(bdd.introduced(3) == std::vector<std::string>{"car", "motor"});
}

TEST_CASE("merge_classes renames into an existing class") {
  DatasetManifest m;
  m.categories = {{1, "car"}, {2, "emergency vehicle"}, {3, "animal"}};
  m.images = {{"a", "a.png", 100, 100}};
  m.annotations = {{"a", {1, 1, 5, 5}, 1, 1},
                   {"a", {10, 10, 5, 5}, 2, 2},
                   {"a", {20, 20, 5, 5}, 3, 3}};
  ClassMergeMap mm;
  mm.mapping = {{"emergency vehicle", "car"}};
  mm.drop = {"animal"};
  const DatasetManifest out = owdet::merge_classes(m, mm);
  REQUIRE(out.categories.size() == 1);
  CHECK(out.categories[0] == std::pair<int, std::string>{1, "car"});
  REQUIRE(out.annotations.size() == 2);  // the animal is gone
  CHECK(out.annotations[0].category == 1);
  CHECK(out.annotations[1].category == 1);  // remapped
  CHECK(out.annotations[1].instance_id == 2);
}

TEST_CASE("merge into a brand-new class keeps the first source id") {
  DatasetManifest m;
  m.categories = {{4, "bicycle"}, {9, "bicycle rack"}};
  m.images = {{"a", "a.png", 100, 100}};
  m.annotations = {{"a", {1, 1, 5, 5}, 9, 1}};
  ClassMergeMap mm;
  mm.mapping = {{"bicycle", "bike"}, {"bicycle rack", "bike"}};
  const DatasetManifest out = owdet::merge_classes(m, mm);
  REQUIRE(out.categories.size() == 1);
  CHECK(out.categories[0] == std::pair<int, std::string>{4, "bike"});
  CHECK(out.annotations[0].category == 4);
}

TEST_CASE("merge map validation") {
  ClassMergeMap chain;
  chain.mapping = {{"a", "b"}, {"b", "c"}};  // target b is also a source
  CHECK_THROWS_AS(owdet::validate_merge_map(chain), owdet::Error);

  ClassMergeMap both;
  both.mapping = {{"a", "b"}};
  both.drop = {"a"};
  CHECK_THROWS_AS(owdet::validate_merge_map(both), owdet::Error);

  DatasetManifest m;
  m.categories = {{1, "car"}};
  ClassMergeMap missing;
  missing.mapping = {{"ghost", "car"}};
  try {
    owdet::merge_classes(m, missing);
    FAIL("expected an exception");
  } catch (const owdet::Error& e) {
    CHECK(e.code() == owdet::ErrorCode::unknown_source_class);
  }
}

TEST_CASE("shipped merge maps validate") {
  owdet::validate_merge_map(owdet::nuscenes_merge_map());
  owdet::validate_merge_map(owdet::bdd_merge_map());
  CHECK(owdet::nuscenes_merge_map().mapping.at("bicycle") == "bike");
  CHECK(owdet::bdd_merge_map().drop == std::vector<std::string>{"train"});
}

TEST_CASE("openset train view keeps only known labels") {
  const DatasetManifest m = bench_manifest();
  const auto view = owdet::make_openset_view(m, {"car", "truck"}, Split::train);
  CHECK(view.split == Split::train);
  CHECK(view.images.size() == m.images.size());
  REQUIRE(!view.annotations.empty());
  for (const auto& a : view.annotations) {
    CHECK((a.category == 1 || a.category == 2));
  }
  // categories table is left whole; only the labels are filtered
  CHECK(view.categories == m.categories);
}

TEST_CASE("openset val view relabels the rest as unknown") {
  const DatasetManifest m = bench_manifest();
  const auto view = owdet::make_openset_view(m, {"car"}, Split::val);
  const auto unknown_id = view.category_id("unknown");
  REQUIRE(unknown_id.has_value());
  CHECK(view.annotations.size() == m.annotations.size());  // nothing dropped
  for (const auto& a : view.annotations) {
    if (a.category != 1) CHECK(a.category == *unknown_id);
  }
}

TEST_CASE("openset view requires known classes to exist") {
  const DatasetManifest m = bench_manifest();
  try {
    owdet::make_openset_view(m, {"car", "spaceship"}, Split::train);
    FAIL("expected an exception");
  } catch (const owdet::Error& e) {
    CHECK(e.code() == owdet::ErrorCode::unknown_category);
  }
}

TEST_CASE("task train view holds only the classes introduced at t") {
  const DatasetManifest m = bench_manifest();
  const auto view = owdet::make_task_view(m, two_task_schedule(), 2, Split::train);
  REQUIRE(!view.annotations.empty());
  for (const auto& a : view.annotations) {
    CHECK((a.category == 3 || a.category == 4));  // pedestrian, van
  }
}

TEST_CASE("task val view mixes known labels with future unknowns") {
  const DatasetManifest m = bench_manifest();
  const auto view = owdet::make_task_view(m, two_task_schedule(), 1, Split::val);
  const auto unknown_id = view.category_id("unknown");
  REQUIRE(unknown_id.has_value());
  std::size_t known = 0, unknown = 0;
  for (const auto& a : view.annotations) {
    if (a.category == 1 || a.category == 2) {
      ++known;
    } else {
      CHECK(a.category == *unknown_id);
      ++unknown;
    }
  }
  CHECK(known == 6);    // car x3 + truck x3
  CHECK(unknown == 7);  // pedestrian x3 + van x4
}

TEST_CASE("final task val view has no unknown labels") {
  const DatasetManifest m = bench_manifest();
  const auto view = owdet::make_task_view(m, two_task_schedule(), 2, Split::val);
  const auto unknown_id = view.category_id("unknown");
  for (const auto& a : view.annotations) {
    if (unknown_id) CHECK(a.category != *unknown_id);
  }
  CHECK(view.annotations.size() == m.annotations.size());
}

TEST_CASE("unscheduled classes are dropped from task views") {
  DatasetManifest m = bench_manifest();
  m.categories.emplace_back(9, "misc");
  m.annotations.push_back({"img5", {50, 50, 10, 10}, 9, 100});
  const TaskSchedule s = two_task_schedule();
  const auto train = owdet::make_task_view(m, s, 1, Split::train);
  const auto val = owdet::make_task_view(m, s, 1, Split::val);
  for (const auto& a : train.annotations) CHECK(a.category != 9);
  for (const auto& a : val.annotations) CHECK(a.category != 9);
  CHECK(val.annotations.size() == m.annotations.size() - 1);
}

TEST_CASE("schedules tolerate classes absent from the current slice") {
  DatasetManifest m = bench_manifest();
  TaskSchedule s{"wide", {{1, {"car", "bus"}}, {2, {"truck"}}}};  // no bus here
  const auto view = owdet::make_task_view(m, s, 1, Split::train);
  for (const auto& a : view.annotations) CHECK(a.category == 1);
}

TEST_CASE("exemplar replay meets quotas or reports shortfall") {
  const DatasetManifest m = bench_manifest();
  const auto sel = owdet::select_exemplar_replay(m, {"car", "truck"}, 2, 7);
  CHECK(sel.shortfall.empty());
  CHECK(sel.counts.at("car") >= 2);
  CHECK(sel.counts.at("truck") >= 2);
  // image ids must come from the manifest, without repeats
  std::set<std::string> uniq(sel.image_ids.begin(), sel.image_ids.end());
  CHECK(uniq.size() == sel.image_ids.size());
  for (const auto& id : sel.image_ids) CHECK(m.find_image(id) != nullptr);

  // an unreachable quota is reported, not fatal
  const auto starved = owdet::select_exemplar_replay(m, {"car"}, 50, 7);
  REQUIRE(starved.shortfall.count("car") == 1);
  CHECK(starved.shortfall.at("car") == 50 - starved.counts.at("car"));
  CHECK(starved.counts.at("car") == 3);  // every car image taken
}

TEST_CASE("replay selection is seed-stable and seed-sensitive") {
  const DatasetManifest m = bench_manifest();
  const auto a = owdet::select_exemplar_replay(m, {"car", "truck"}, 1, 3);
  const auto b = owdet::select_exemplar_replay(m, {"car", "truck"}, 1, 3);
  CHECK(a.image_ids == b.image_ids);
  CHECK(a.counts == b.counts);
}

TEST_CASE("replay rejects bad arguments") {
  const DatasetManifest m = bench_manifest();
  CHECK_THROWS_AS(owdet::select_exemplar_replay(m, {"car"}, 0, 1), owdet::Error);
  CHECK_THROWS_AS(owdet::select_exemplar_replay(m, {"ghost"}, 1, 1),
                  owdet::Error);
}

TEST_CASE("holdout and remainder partition the manifest exactly") {
  const DatasetManifest m = bench_manifest();
  const auto sel = owdet::select_proposal_holdout(m, 2, 11);
  CHECK(sel.holdout.size() == 2);
  CHECK(sel.remainder.images.size() == 4);
  std::set<std::string> all;
  for (const auto& id : sel.holdout) all.insert(id);
  for (const auto& im : sel.remainder.images) all.insert(im.id);
  CHECK(all.size() == 6);
  // annotations follow their images
  for (const auto& a : sel.remainder.annotations) {
    CHECK(std::find(sel.holdout.begin(), sel.holdout.end(), a.image_id) ==
          sel.holdout.end());
  }
  // the best-covered image (img0 carries all four classes) is taken first
  CHECK(sel.holdout[0] == "img0");
  CHECK(sel.min_coverage >= 2);
}

TEST_CASE("holdout flags partial coverage") {
  const DatasetManifest m = bench_manifest();
  const auto sel = owdet::select_proposal_holdout(m, 5, 1);
  CHECK_FALSE(sel.full_coverage);  // only img0 covers all classes
  const auto one = owdet::select_proposal_holdout(m, 1, 1);
  CHECK(one.full_coverage);
  CHECK(one.min_coverage == 4);
}

TEST_CASE("holdout validates split and size") {
  DatasetManifest val = bench_manifest();
  val.split = Split::val;
  try {
    owdet::select_proposal_holdout(val, 1, 0);
    FAIL("expected an exception");
  } catch (const owdet::Error& e) {
    CHECK(e.code() == owdet::ErrorCode::wrong_split);
  }
  const DatasetManifest m = bench_manifest();
  try {
    owdet::select_proposal_holdout(m, 7, 0);
    FAIL("expected an exception");
  } catch (const owdet::Error& e) {
    CHECK(e.code() == owdet::ErrorCode::insufficient_images);
  }
}

TEST_SUITE_END();
