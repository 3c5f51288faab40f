#include "genz3d/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "genz3d/checkpoint.hpp"
#include "genz3d/error.hpp"

namespace genz3d::data {

namespace fs = std::filesystem;

namespace {

Error data_error(const std::string& source, int line, const std::string& what) {
  std::ostringstream msg;
  msg << source << ":" << line << ": " << what;
  return Error(ErrorKind::kData, msg.str());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kData, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kData, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorKind::kData, "failed writing '" + path + "'");
}

std::string trim(std::string s) {
  s.erase(0, s.find_first_not_of(" \t\r"));
  s.erase(s.find_last_not_of(" \t\r") + 1);
  return s;
}

}  // namespace

std::string task_name(Task task) {
  return task == Task::kClassification ? "classification" : "segmentation";
}

Task parse_task(const std::string& name) {
  if (name == "classification") return Task::kClassification;
  if (name == "segmentation") return Task::kSegmentation;
  throw Error(ErrorKind::kConfig, "unknown task '" + name + "'");
}

int Scene::cloud_label() const {
  if (labels.empty()) throw Error(ErrorKind::kData, "empty cloud has no label");
  return labels.front();
}

bool Scene::contains_any(const std::set<int>& classes) const {
  return std::any_of(labels.begin(), labels.end(),
                     [&](int l) { return classes.count(l) > 0; });
}

void Scene::validate(int num_classes) const {
  if (points.rows() < 1) throw Error(ErrorKind::kData, "scene has no points");
  if (points.cols() != 3) throw Error(ErrorKind::kData, "scene points must have 3 columns");
  if (labels.size() != size()) throw Error(ErrorKind::kData, "label count does not match points");
  if (!instances.empty() && instances.size() != size())
    throw Error(ErrorKind::kData, "instance count does not match points");
  if (!points.allFinite()) throw Error(ErrorKind::kData, "scene has non-finite coordinates");
  for (int l : labels)
    if (l < 0 || l >= num_classes)
      throw Error(ErrorKind::kData, "label " + std::to_string(l) + " outside class roster");
}

int Dataset::class_id(const std::string& name) const {
  auto it = std::find(class_names.begin(), class_names.end(), name);
  if (it == class_names.end()) throw Error(ErrorKind::kConfig, "unknown class '" + name + "'");
  return static_cast<int>(it - class_names.begin());
}

std::vector<int> Dataset::class_ids(const std::vector<std::string>& names) const {
  std::vector<int> out;
  for (const auto& n : names) out.push_back(class_id(n));
  return out;
}

std::vector<std::int64_t> Dataset::class_frequencies() const {
  std::vector<std::int64_t> freq(class_names.size(), 0);
  for (const auto& s : scenes) {
    if (task == Task::kClassification) {
      ++freq[static_cast<std::size_t>(s.cloud_label())];
    } else {
      for (int l : s.labels) ++freq[static_cast<std::size_t>(l)];
    }
  }
  return freq;
}

void assert_inductive(const Dataset& dataset, const std::set<int>& allowed,
                      const std::string& stage) {
  for (std::size_t i = 0; i < dataset.scenes.size(); ++i) {
    for (int l : dataset.scenes[i].labels) {
      if (!allowed.count(l)) {
        const std::string name = l >= 0 && l < dataset.num_classes()
                                     ? dataset.class_names[static_cast<std::size_t>(l)]
                                     : std::to_string(l);
        throw InductiveViolation(stage + " received scene " + std::to_string(i) +
                                 " containing class '" + name + "'");
      }
    }
  }
}

std::pair<Dataset, Dataset> partition_by_classes(const Dataset& dataset,
                                                 const std::set<int>& unseen) {
  Dataset kept{dataset.task, dataset.class_names, {}};
  Dataset removed{dataset.task, dataset.class_names, {}};
  for (const auto& s : dataset.scenes) (s.contains_any(unseen) ? removed : kept).scenes.push_back(s);
  return {std::move(kept), std::move(removed)};
}

Dataset inductive_filter(const Dataset& dataset, const std::set<int>& unseen) {
  return partition_by_classes(dataset, unseen).first;
}

int validation_class_count(std::size_t seen_count) {
  return std::max(2, static_cast<int>(std::lround(0.2 * static_cast<double>(seen_count))));
}

std::vector<ValidationSplit> make_validation_splits(const std::vector<int>& seen,
                                                    const std::vector<int>& excluded,
                                                    int n_splits, std::uint64_t seed) {
  std::vector<int> eligible;
  for (int c : seen)
    if (std::find(excluded.begin(), excluded.end(), c) == excluded.end()) eligible.push_back(c);
  std::sort(eligible.begin(), eligible.end());
  const int v = validation_class_count(seen.size());
  if (eligible.size() < 2 || static_cast<int>(eligible.size()) < v) {
    std::ostringstream msg;
    msg << "validation splits need " << v << " eligible seen classes, only " << eligible.size()
        << " remain after exclusions";
    throw Error(ErrorKind::kConfig, msg.str());
  }
  // Number of distinct validation sets available, capped to avoid overflow.
  double combos = 1.0;
  for (int i = 0; i < v; ++i)
    combos = combos * static_cast<double>(eligible.size() - static_cast<std::size_t>(i)) / (i + 1);
  if (n_splits < 1 || static_cast<double>(n_splits) > combos + 0.5) {
    std::ostringstream msg;
    msg << "cannot draw " << n_splits << " distinct validation splits from " << eligible.size()
        << " eligible classes (" << std::llround(combos) << " possible)";
    throw Error(ErrorKind::kConfig, msg.str());
  }

  nn::Rng rng(seed);
  std::set<std::vector<int>> drawn;
  std::vector<ValidationSplit> out;
  for (int attempt = 0; static_cast<int>(out.size()) < n_splits; ++attempt) {
    if (attempt > 100000) throw Error(ErrorKind::kConfig, "failed to draw distinct validation splits");
    std::vector<int> pool = eligible;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<int> val(pool.begin(), pool.begin() + v);
    std::sort(val.begin(), val.end());
    if (!drawn.insert(val).second) continue;
    ValidationSplit split;
    split.validation_classes = val;
    for (int c : seen)
      if (!std::binary_search(val.begin(), val.end(), c)) split.train_classes.push_back(c);
    out.push_back(std::move(split));
  }
  return out;
}

void SplitFile::validate() const {
  auto check_unique = [](const std::vector<std::string>& v, const char* section) {
    std::set<std::string> s(v.begin(), v.end());
    if (s.size() != v.size())
      throw Error(ErrorKind::kConfig, std::string("duplicate class in [") + section + "]");
  };
  check_unique(seen, "seen");
  check_unique(unseen, "unseen");
  check_unique(validation_excluded, "validation-excluded");
  if (seen.empty()) throw Error(ErrorKind::kConfig, "split has no seen classes");
  for (const auto& u : unseen)
    if (std::find(seen.begin(), seen.end(), u) != seen.end())
      throw Error(ErrorKind::kConfig, "class '" + u + "' is both seen and unseen");
  for (const auto& e : validation_excluded)
    if (std::find(seen.begin(), seen.end(), e) == seen.end())
      throw Error(ErrorKind::kConfig, "validation-excluded class '" + e + "' is not seen");
}

SplitFile parse_split_file(const std::string& text, const std::string& source) {
  SplitFile split;
  std::vector<std::string>* current = nullptr;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line == "[seen]") {
      current = &split.seen;
    } else if (line == "[unseen]") {
      current = &split.unseen;
    } else if (line == "[validation-excluded]") {
      current = &split.validation_excluded;
    } else if (line.front() == '[') {
      throw Error(ErrorKind::kConfig, source + ":" + std::to_string(lineno) +
                                          ": unknown section " + line);
    } else {
      if (!current)
        throw Error(ErrorKind::kConfig,
                    source + ":" + std::to_string(lineno) + ": class name outside a section");
      current->push_back(line);
    }
  }
  split.validate();
  return split;
}

std::string serialize_split_file(const SplitFile& split) {
  std::ostringstream out;
  out << "[seen]\n";
  for (const auto& c : split.seen) out << c << '\n';
  out << "[unseen]\n";
  for (const auto& c : split.unseen) out << c << '\n';
  out << "[validation-excluded]\n";
  for (const auto& c : split.validation_excluded) out << c << '\n';
  return out.str();
}

SplitFile read_split_file(const std::string& path) {
  return parse_split_file(slurp(path), path);
}

void write_split_file(const std::string& path, const SplitFile& split) {
  spill(path, serialize_split_file(split));
}

std::string serialize_scene(const Scene& scene) {
  std::string out;
  out.reserve(scene.size() * 64 + 32);
  out += kSceneMagic;
  out += "\nN " + std::to_string(scene.size()) + "\n";
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out += format_real(scene.points(r, 0));
    out += ' ';
    out += format_real(scene.points(r, 1));
    out += ' ';
    out += format_real(scene.points(r, 2));
    out += ' ';
    out += std::to_string(scene.labels[i]);
    if (!scene.instances.empty()) {
      out += ' ';
      out += std::to_string(scene.instances[i]);
    }
    out += '\n';
  }
  return out;
}

Scene parse_scene(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto next = [&]() {
    while (std::getline(in, line)) {
      ++lineno;
      if (!trim(line).empty()) return true;
    }
    return false;
  };
  if (!next() || trim(line) != kSceneMagic)
    throw data_error(source, 1, std::string("missing header '") + kSceneMagic + "'");
  if (!next()) throw data_error(source, lineno, "missing point count");
  std::istringstream hs(line);
  std::string tag;
  long long n = -1;
  if (!(hs >> tag >> n) || tag != "N" || n < 1)
    throw data_error(source, lineno, "malformed point count line");

  Scene scene;
  scene.points.resize(n, 3);
  scene.labels.resize(static_cast<std::size_t>(n));
  bool with_instances = false;
  for (long long i = 0; i < n; ++i) {
    if (!next())
      throw data_error(source, lineno,
                       "header declares " + std::to_string(n) + " points, body has " +
                           std::to_string(i));
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.size() != 4 && tok.size() != 5)
      throw data_error(source, lineno, "expected 'x y z label [instance]'");
    if (i == 0) with_instances = tok.size() == 5;
    if ((tok.size() == 5) != with_instances)
      throw data_error(source, lineno, "inconsistent instance column");
    try {
      for (int k = 0; k < 3; ++k) {
        const double v = parse_real(tok[static_cast<std::size_t>(k)]);
        if (!std::isfinite(v)) throw data_error(source, lineno, "non-finite coordinate");
        scene.points(i, k) = v;
      }
      scene.labels[static_cast<std::size_t>(i)] = std::stoi(tok[3]);
      if (with_instances) scene.instances.push_back(std::stoi(tok[4]));
    } catch (const std::invalid_argument& e) {
      throw data_error(source, lineno, std::string("malformed value: ") + e.what());
    } catch (const std::out_of_range&) {
      throw data_error(source, lineno, "value out of range");
    }
  }
  if (next())
    throw data_error(source, lineno,
                     "body has more points than the declared " + std::to_string(n));
  return scene;
}

void write_scene(const std::string& path, const Scene& scene) { spill(path, serialize_scene(scene)); }

Scene read_scene(const std::string& path) { return parse_scene(slurp(path), path); }

void write_dataset(const std::string& dir, const Dataset& dataset) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << kDatasetMagic << '\n';
  manifest << "task " << task_name(dataset.task) << '\n';
  manifest << "classes";
  for (const auto& c : dataset.class_names) manifest << ' ' << c;
  manifest << "\nscenes " << dataset.scenes.size() << '\n';
  spill((fs::path(dir) / "dataset.txt").string(), manifest.str());
  for (std::size_t i = 0; i < dataset.scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05zu.txt", i);
    write_scene((fs::path(dir) / name).string(), dataset.scenes[i]);
  }
}

Dataset read_dataset(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "dataset.txt").string();
  std::istringstream in(slurp(manifest_path));
  std::string line;
  int lineno = 0;
  Dataset ds;
  long long count = -1;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line != kDatasetMagic) throw data_error(manifest_path, lineno, "missing dataset header");
      header = true;
      continue;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "task") {
      std::string t;
      ls >> t;
      ds.task = parse_task(t);
    } else if (key == "classes") {
      for (std::string c; ls >> c;) ds.class_names.push_back(c);
    } else if (key == "scenes") {
      ls >> count;
    } else {
      throw data_error(manifest_path, lineno, "unknown key '" + key + "'");
    }
  }
  if (!header || count < 0 || ds.class_names.empty())
    throw data_error(manifest_path, lineno, "incomplete dataset manifest");
  for (long long i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05lld.txt", i);
    Scene s = read_scene((fs::path(dir) / name).string());
    s.validate(ds.num_classes());
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

}  // namespace genz3d::data
