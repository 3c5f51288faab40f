#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "genz3d/nn.hpp"

namespace genz3d::data {

enum class Task { kClassification, kSegmentation };

std::string task_name(Task task);
Task parse_task(const std::string& name);

// A labeled point cloud. Classification clouds carry the same label on every
// point; segmentation scenes carry per-point labels and instance ids.
struct Scene {
  nn::Matrix points;  // N x 3
  std::vector<int> labels;
  std::vector<int> instances;  // empty or N

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  int cloud_label() const;
  bool contains_any(const std::set<int>& classes) const;
  // Throws Error(kData) on shape, finiteness, or label-range violations.
  void validate(int num_classes) const;
};

struct Dataset {
  Task task = Task::kSegmentation;
  std::vector<std::string> class_names;
  std::vector<Scene> scenes;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  int class_id(const std::string& name) const;
  std::vector<int> class_ids(const std::vector<std::string>& names) const;
  // Per-class point counts (segmentation) or cloud counts (classification).
  std::vector<std::int64_t> class_frequencies() const;
};

enum class ShapeFamily { kSphere, kBox, kCylinder, kCone, kTorus, kPlane, kWall };

std::string family_name(ShapeFamily f);
ShapeFamily parse_family(const std::string& name);

// One class of the synthetic roster. A rider turns the class into a composite
// that stacks a second primitive on top of the base shape.
struct ClassSpec {
  std::string name;
  ShapeFamily base = ShapeFamily::kSphere;
  std::optional<ShapeFamily> rider;

  // Ground planes and walls appear in every segmentation scene.
  bool structural() const { return base == ShapeFamily::kPlane || base == ShapeFamily::kWall; }
};

// "name=family" or "name=base+rider".
ClassSpec parse_class_spec(const std::string& text);
std::vector<ClassSpec> parse_roster(const std::string& comma_separated);
std::string format_roster(const std::vector<ClassSpec>& roster);

struct SynthConfig {
  std::vector<ClassSpec> roster;
  int points_per_object = 96;
  int points_per_structure = 96;
  int objects_per_scene = 3;
  double jitter = 0.005;
  double scene_extent = 4.0;  // ground side length in meters

  void validate() const;
};

// ground, wall, sphere, box, cylinder, cone, torus, ridden_box (box + sphere).
std::vector<ClassSpec> default_roster();
SynthConfig default_synth_config();

// Deterministic in (config, task, count, seed).
Dataset generate_synthetic(const SynthConfig& config, Task task, int count, std::uint64_t seed);

// Raises InductiveViolation if any point is labeled outside `allowed`.
void assert_inductive(const Dataset& dataset, const std::set<int>& allowed,
                      const std::string& stage);

// Splits scenes into (no unseen point at all, at least one unseen point),
// each preserving order.
std::pair<Dataset, Dataset> partition_by_classes(const Dataset& dataset,
                                                 const std::set<int>& unseen);
Dataset inductive_filter(const Dataset& dataset, const std::set<int>& unseen);

struct ValidationSplit {
  std::vector<int> train_classes;
  std::vector<int> validation_classes;
};

int validation_class_count(std::size_t seen_count);

std::vector<ValidationSplit> make_validation_splits(const std::vector<int>& seen,
                                                    const std::vector<int>& excluded,
                                                    int n_splits, std::uint64_t seed);

struct SplitFile {
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
  std::vector<std::string> validation_excluded;

  void validate() const;
};

SplitFile read_split_file(const std::string& path);
void write_split_file(const std::string& path, const SplitFile& split);
SplitFile parse_split_file(const std::string& text, const std::string& source = "<memory>");
std::string serialize_split_file(const SplitFile& split);

inline constexpr const char* kSceneMagic = "genz3d-scene v1";
inline constexpr const char* kDatasetMagic = "genz3d-dataset v1";

std::string serialize_scene(const Scene& scene);
Scene parse_scene(const std::string& text, const std::string& source = "<memory>");
void write_scene(const std::string& path, const Scene& scene);
Scene read_scene(const std::string& path);

// A dataset directory holds `dataset.txt` (task + class roster) and one
// `scene_NNNNN.txt` per scene.
void write_dataset(const std::string& dir, const Dataset& dataset);
Dataset read_dataset(const std::string& dir);

}  // namespace genz3d::data
