#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "genz3d/data.hpp"
#include "genz3d/error.hpp"

using namespace genz3d;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("genz3d-unit-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

data::Scene tiny_scene() {
  data::Scene s;
  s.points.resize(3, 3);
  s.points << 0, 0, 0, 1, 0.5, -0.25, 0.1, 0.2, 0.3;
  s.labels = {0, 1, 1};
  return s;
}

}  // namespace

TEST(Synthetic, ZeroCountIsEmpty) {
  const auto ds = data::generate_synthetic(data::default_synth_config(), data::Task::kSegmentation, 0, 1);
  EXPECT_TRUE(ds.scenes.empty());
  EXPECT_EQ(ds.num_classes(), 8);
}

TEST(Synthetic, SameSeedIsBitIdentical) {
  const auto cfg = data::default_synth_config();
  for (auto task : {data::Task::kSegmentation, data::Task::kClassification}) {
    const auto a = data::generate_synthetic(cfg, task, 5, 42);
    const auto b = data::generate_synthetic(cfg, task, 5, 42);
    ASSERT_EQ(a.scenes.size(), b.scenes.size());
    for (std::size_t i = 0; i < a.scenes.size(); ++i)
      EXPECT_EQ(data::serialize_scene(a.scenes[i]), data::serialize_scene(b.scenes[i]));
    const auto c = data::generate_synthetic(cfg, task, 5, 43);
    EXPECT_NE(data::serialize_scene(a.scenes[0]), data::serialize_scene(c.scenes[0]));
  }
}

TEST(Synthetic, ScenesSatisfyInvariants) {
  const auto cfg = data::default_synth_config();
  for (auto task : {data::Task::kSegmentation, data::Task::kClassification}) {
    const auto ds = data::generate_synthetic(cfg, task, 30, 7);
    for (const auto& s : ds.scenes) {
      EXPECT_NO_THROW(s.validate(ds.num_classes()));
      EXPECT_EQ(s.labels.size(), s.size());
      if (task == data::Task::kClassification) EXPECT_NO_THROW(s.cloud_label());
    }
  }
}

TEST(Synthetic, SegmentationCoversEveryClass) {
  const auto ds = data::generate_synthetic(data::default_synth_config(), data::Task::kSegmentation, 40, 3);
  for (auto f : ds.class_frequencies()) EXPECT_GT(f, 0);
}

TEST(Roster, ParsesCompositesAndRejectsUnknownFamilies) {
  const auto r = data::parse_roster("a=sphere,b=box+cone");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_FALSE(r[0].rider.has_value());
  EXPECT_EQ(r[1].base, data::ShapeFamily::kBox);
  EXPECT_EQ(*r[1].rider, data::ShapeFamily::kCone);
  EXPECT_EQ(data::parse_roster(data::format_roster(r)).size(), 2u);
  try {
    data::parse_roster("a=blob");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(Roster, DuplicateNamesRejected) {
  data::SynthConfig cfg;
  cfg.roster = data::parse_roster("a=sphere,a=box");
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(InductiveFilter, DropsSceneWithSingleUnseenPoint) {
  data::Dataset ds;
  ds.task = data::Task::kSegmentation;
  ds.class_names = {"a", "b", "c"};
  ds.scenes = {tiny_scene(), tiny_scene()};
  ds.scenes[1].labels[2] = 2;
  const auto f = data::inductive_filter(ds, {2});
  ASSERT_EQ(f.scenes.size(), 1u);
  EXPECT_EQ(f.scenes[0].labels, ds.scenes[0].labels);
}

TEST(InductiveFilter, EmptyUnseenSetKeepsEverything) {
  const auto ds = data::generate_synthetic(data::default_synth_config(), data::Task::kSegmentation, 6, 1);
  EXPECT_EQ(data::inductive_filter(ds, {}).scenes.size(), ds.scenes.size());
}

TEST(InductiveFilter, PartitionIsDisjointAndComplete) {
  const auto ds = data::generate_synthetic(data::default_synth_config(), data::Task::kSegmentation, 30, 2);
  const std::set<int> unseen{6, 7};
  const auto [kept, removed] = data::partition_by_classes(ds, unseen);
  EXPECT_EQ(kept.scenes.size() + removed.scenes.size(), ds.scenes.size());
  for (const auto& s : kept.scenes) EXPECT_FALSE(s.contains_any(unseen));
  for (const auto& s : removed.scenes) EXPECT_TRUE(s.contains_any(unseen));
  // Order is preserved, so merging by membership rebuilds the original.
  std::size_t k = 0, r = 0;
  for (const auto& s : ds.scenes) {
    const auto& next = s.contains_any(unseen) ? removed.scenes[r++] : kept.scenes[k++];
    EXPECT_EQ(data::serialize_scene(next), data::serialize_scene(s));
  }
}

TEST(InductiveGuard, RaisesOnForeignLabel) {
  data::Dataset ds;
  ds.class_names = {"a", "b", "c"};
  ds.scenes = {tiny_scene()};
  EXPECT_NO_THROW(data::assert_inductive(ds, {0, 1}, "test"));
  EXPECT_THROW(data::assert_inductive(ds, {0}, "test"), InductiveViolation);
}

TEST(ValidationSplits, Counts) {
  EXPECT_EQ(data::validation_class_count(30), 6);
  EXPECT_EQ(data::validation_class_count(5), 2);
  EXPECT_EQ(data::validation_class_count(1), 2);
}

TEST(ValidationSplits, ExcludedNeverValidated) {
  std::vector<int> seen(12);
  std::iota(seen.begin(), seen.end(), 0);
  const std::vector<int> excluded{0, 5};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto splits = data::make_validation_splits(seen, excluded, 3, seed);
    ASSERT_EQ(splits.size(), 3u);
    for (const auto& s : splits) {
      EXPECT_EQ(s.validation_classes.size(), 2u);
      EXPECT_EQ(s.train_classes.size() + s.validation_classes.size(), seen.size());
      for (int c : s.validation_classes) {
        EXPECT_NE(c, 0);
        EXPECT_NE(c, 5);
      }
    }
  }
  EXPECT_EQ(data::make_validation_splits(seen, excluded, 3, 9)[1].validation_classes,
            data::make_validation_splits(seen, excluded, 3, 9)[1].validation_classes);
}

TEST(SceneIo, WriteReadIsIdentity) {
  const auto dir = temp_dir("scene");
  const auto s = tiny_scene();
  data::write_scene((dir / "s.txt").string(), s);
  const auto back = data::read_scene((dir / "s.txt").string());
  EXPECT_EQ(back.points, s.points);
  EXPECT_EQ(back.labels, s.labels);
}

TEST(SceneIo, RejectsNanAndCountMismatch) {
  EXPECT_THROW(data::parse_scene(std::string(data::kSceneMagic) + "\nN 1\nnan 0 0 0\n"), Error);
  EXPECT_THROW(data::parse_scene(std::string(data::kSceneMagic) + "\nN 2\n0 0 0 0\n"), Error);
  EXPECT_THROW(data::parse_scene(std::string(data::kSceneMagic) + "\nN 1\n0 0 0 0\n1 1 1 0\n"), Error);
}

TEST(DatasetIo, RoundTrip) {
  const auto dir = temp_dir("dataset");
  const auto ds = data::generate_synthetic(data::default_synth_config(), data::Task::kClassification, 4, 5);
  data::write_dataset(dir.string(), ds);
  const auto back = data::read_dataset(dir.string());
  EXPECT_EQ(back.task, ds.task);
  EXPECT_EQ(back.class_names, ds.class_names);
  ASSERT_EQ(back.scenes.size(), ds.scenes.size());
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) EXPECT_EQ(back.scenes[i].points, ds.scenes[i].points);
}

TEST(DatasetIo, MissingDirectoryIsDataError) {
  try {
    data::read_dataset("/nonexistent/genz3d");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(SplitFile, RoundTripAndValidation) {
  data::SplitFile s;
  s.seen = {"a", "b"};
  s.unseen = {"c"};
  s.validation_excluded = {"a"};
  const auto back = data::parse_split_file(data::serialize_split_file(s));
  EXPECT_EQ(back.seen, s.seen);
  EXPECT_EQ(back.unseen, s.unseen);
  EXPECT_EQ(back.validation_excluded, s.validation_excluded);
  s.unseen.push_back("a");
  EXPECT_THROW(s.validate(), Error);
}

TEST(Task, NamesRoundTrip) {
  for (auto t : {data::Task::kClassification, data::Task::kSegmentation})
    EXPECT_EQ(data::parse_task(data::task_name(t)), t);
  EXPECT_THROW(data::parse_task("detection"), Error);
}
