#include "genz3d/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include "genz3d/checkpoint.hpp"
#include "genz3d/error.hpp"

namespace genz3d::config {

namespace fs = std::filesystem;

std::string run_mode_name(RunMode m) {
  switch (m) {
    case RunMode::kGenerative: return "generative";
    case RunMode::kFullSupervision: return "full_supervision";
    case RunMode::kZslBackbone: return "zsl_backbone";
    case RunMode::kZslTrivial: return "zsl_trivial";
    case RunMode::kBaseline: return "baseline";
  }
  return "";
}

RunMode parse_run_mode(const std::string& name) {
  std::string n = name;
  std::replace(n.begin(), n.end(), '-', '_');
  for (RunMode m : {RunMode::kGenerative, RunMode::kFullSupervision, RunMode::kZslBackbone,
                    RunMode::kZslTrivial, RunMode::kBaseline})
    if (run_mode_name(m) == n) return m;
  throw Error(ErrorKind::kConfig, "unknown mode '" + name + "'");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : v) {
    if (ch == ',' || ch == ' ' || ch == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

struct Parser {
  std::string source;
  int line = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorKind::kConfig, source + ":" + std::to_string(line) + ": " + msg);
  }

  long long integer(const std::string& v) const {
    std::size_t used = 0;
    long long x = 0;
    try {
      x = std::stoll(v, &used);
    } catch (const std::exception&) {
      fail("expected an integer, got '" + v + "'");
    }
    if (used != v.size()) fail("expected an integer, got '" + v + "'");
    return x;
  }

  int int32(const std::string& v) const { return static_cast<int>(integer(v)); }

  double real(const std::string& v) const {
    try {
      return parse_real(v);
    } catch (const std::exception&) {
      fail("expected a number, got '" + v + "'");
    }
  }

  bool boolean(const std::string& v) const {
    if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
    if (v == "false" || v == "no" || v == "0" || v == "off") return false;
    fail("expected a boolean, got '" + v + "'");
  }

  std::vector<int> ints(const std::string& v) const {
    std::vector<int> out;
    for (const auto& t : split_list(v)) out.push_back(int32(t));
    return out;
  }

  std::vector<double> reals(const std::string& v) const {
    std::vector<double> out;
    for (const auto& t : split_list(v)) out.push_back(real(t));
    return out;
  }

  template <typename Fn>
  auto wrap(Fn&& fn) const -> decltype(fn()) {
    try {
      return fn();
    } catch (const Error& e) {
      fail(e.what());
    }
  }
};

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return path.is_absolute() ? p : (fs::path(base) / path).lexically_normal().string();
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& base_dir, const std::string& source) {
  ExperimentConfig c;
  Parser p{source};
  std::optional<std::uint64_t> backbone_seed, gen_seed, clf_seed;
  std::optional<double> epsilon_value;
  std::optional<std::string> epsilon_name;

  using Handler = std::function<void(const std::string&)>;
  const std::map<std::string, std::map<std::string, Handler>> table{
      {"data",
       {{"train", [&](const std::string& v) { c.train_path = resolve(base_dir, v); }},
        {"test", [&](const std::string& v) { c.test_path = resolve(base_dir, v); }},
        {"prototypes",
         [&](const std::string& v) {
           c.prototype_paths.clear();
           for (const auto& f : split_list(v)) c.prototype_paths.push_back(resolve(base_dir, f));
         }},
        {"split", [&](const std::string& v) { c.split_path = resolve(base_dir, v); }}}},
      {"experiment",
       {{"mode", [&](const std::string& v) { c.mode = p.wrap([&] { return parse_run_mode(v); }); }},
        {"setting", [&](const std::string& v) { c.setting = p.wrap([&] { return generators::parse_setting(v); }); }},
        {"generator",
         [&](const std::string& v) { c.generator = p.wrap([&] { return generators::parse_generator(v); }); }},
        {"seed", [&](const std::string& v) { c.seed = static_cast<std::uint64_t>(p.integer(v)); }},
        {"output", [&](const std::string& v) { c.output_dir = v; }},
        {"prototype_source",
         [&](const std::string& v) {
           if (v == "file") {
             c.prototype_source = pipeline::PrototypeSource::kFile;
           } else if (v == "ideal") {
             c.prototype_source = pipeline::PrototypeSource::kIdeal;
           } else {
             p.fail("prototype_source must be file or ideal");
           }
         }},
        {"prototype_concat",
         [&](const std::string& v) {
           if (v != "raw" && v != "normalized") p.fail("prototype_concat must be raw or normalized");
           c.normalize_before_concat = v == "normalized";
         }},
        {"normalize_prototypes", [&](const std::string& v) { c.normalize_prototypes = p.boolean(v); }},
        {"allow_zsl_segmentation", [&](const std::string& v) { c.allow_zsl_segmentation = p.boolean(v); }}}},
      {"backbone",
       {{"seed", [&](const std::string& v) { backbone_seed = static_cast<std::uint64_t>(p.integer(v)); }},
        {"epochs", [&](const std::string& v) { c.backbone.epochs = p.int32(v); }},
        {"batch_size", [&](const std::string& v) { c.backbone.batch_size = p.int32(v); }},
        {"learning_rate", [&](const std::string& v) { c.backbone.learning_rate = p.real(v); }},
        {"feature_dim", [&](const std::string& v) { c.backbone.feature_dim = p.int32(v); }},
        {"neighbors", [&](const std::string& v) { c.backbone.neighbors = p.int32(v); }},
        {"point_widths", [&](const std::string& v) { c.backbone.point_widths = p.ints(v); }},
        {"head_widths", [&](const std::string& v) { c.backbone.head_widths = p.ints(v); }}}},
      {"generator",
       {{"seed", [&](const std::string& v) { gen_seed = static_cast<std::uint64_t>(p.integer(v)); }},
        {"noise_dim", [&](const std::string& v) { c.gen.noise_dim = p.int32(v); }},
        {"hidden", [&](const std::string& v) { c.gen.hidden = p.int32(v); }},
        {"bandwidths", [&](const std::string& v) { c.gen.bandwidths = p.reals(v); }},
        {"epochs", [&](const std::string& v) { c.gen.epochs = p.int32(v); }},
        {"batch_size", [&](const std::string& v) { c.gen.batch_size = p.int32(v); }},
        {"learning_rate", [&](const std::string& v) { c.gen.learning_rate = p.real(v); }},
        {"dae_noise", [&](const std::string& v) { c.gen.dae_noise = p.real(v); }},
        {"per_unseen_class", [&](const std::string& v) { c.trainset.per_unseen_class = p.int32(v); }},
        {"budget", [&](const std::string& v) { c.trainset.budget = p.integer(v); }}}},
      {"classifier",
       {{"seed", [&](const std::string& v) { clf_seed = static_cast<std::uint64_t>(p.integer(v)); }},
        {"epochs", [&](const std::string& v) { c.classifier.epochs = p.int32(v); }},
        {"batch_size", [&](const std::string& v) { c.classifier.batch_size = p.int32(v); }},
        {"learning_rate", [&](const std::string& v) { c.classifier.learning_rate = p.real(v); }},
        {"hidden", [&](const std::string& v) { c.classifier.hidden = p.ints(v); }}}},
      {"bias",
       {{"beta", [&](const std::string& v) { c.bias.beta = p.real(v); }},
        {"epsilon", [&](const std::string& v) { epsilon_value = p.real(v); }},
        {"epsilon_preset", [&](const std::string& v) { epsilon_name = v; }}}},
      {"grid",
       {{"enabled", [&](const std::string& v) { c.grid_search = p.boolean(v); }},
        {"betas", [&](const std::string& v) { c.grid.betas = p.reals(v); }},
        {"epsilons", [&](const std::string& v) { c.grid.epsilons = p.reals(v); }},
        {"joint", [&](const std::string& v) { c.grid.joint = p.boolean(v); }},
        {"objective",
         [&](const std::string& v) {
           if (v == "hm") {
             c.grid.objective = pipeline::Objective::kHm;
           } else if (v == "hmiou") {
             c.grid.objective = pipeline::Objective::kHmIou;
           } else {
             p.fail("objective must be hm or hmiou");
           }
         }},
        {"validation_splits", [&](const std::string& v) { c.validation_splits = p.int32(v); }},
        {"threads", [&](const std::string& v) { c.grid.threads = p.int32(v); }}}},
      {"baseline",
       {{"method", [&](const std::string& v) { c.baseline = p.wrap([&] { return baselines::parse_method(v); }); }},
        {"k", [&](const std::string& v) { c.k = p.int32(v); }},
        {"distance",
         [&](const std::string& v) {
           if (v == "euclidean") {
             c.distance = baselines::Distance::kEuclidean;
           } else if (v == "cosine") {
             c.distance = baselines::Distance::kCosine;
           } else {
             p.fail("distance must be euclidean or cosine");
           }
         }},
        {"epochs", [&](const std::string& v) { c.projector.epochs = p.int32(v); }},
        {"learning_rate", [&](const std::string& v) { c.projector.learning_rate = p.real(v); }}}},
  };

  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::set<std::string> seen_keys;
  while (std::getline(in, raw)) {
    ++p.line;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') p.fail("malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!table.count(section)) p.fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) p.fail("expected key = value");
    if (section.empty()) p.fail("key outside any section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& keys = table.at(section);
    auto it = keys.find(key);
    if (it == keys.end()) p.fail("unknown key '" + key + "' in [" + section + "]");
    if (!seen_keys.insert(section + "." + key).second) p.fail("duplicate key '" + key + "' in [" + section + "]");
    if (value.empty()) p.fail("empty value for '" + key + "'");
    it->second(value);
  }

  c.backbone.seed = backbone_seed.value_or(c.seed);
  c.gen.seed = gen_seed.value_or(c.seed);
  c.classifier.seed = clf_seed.value_or(c.seed);
  c.trainset.seed = c.seed;
  c.projector.seed = c.seed;
  if (epsilon_value && epsilon_name) throw Error(ErrorKind::kConfig, source + ": set either epsilon or epsilon_preset");
  if (epsilon_name) c.bias.epsilon = pipeline::epsilon_preset(*epsilon_name);
  if (epsilon_value) c.bias.epsilon = *epsilon_value;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const fs::path parent = fs::path(path).parent_path();
  return parse_config(buf.str(), parent.empty() ? "." : parent.string(), path);
}

void ExperimentConfig::validate() const {
  bias.validate();
  classifier.validate();
  gen.validate();
  if (grid_search) grid.validate();
  if (grid.threads < 1) throw Error(ErrorKind::kConfig, "threads must be >= 1");
  if (validation_splits < 1) throw Error(ErrorKind::kConfig, "validation_splits must be >= 1");
  if (k < 1) throw Error(ErrorKind::kConfig, "K must be >= 1");
  projector.validate();
  if (prototype_paths.size() > 2) throw Error(ErrorKind::kConfig, "at most two prototype files can be concatenated");
  if (mode == RunMode::kGenerative && prototype_source == pipeline::PrototypeSource::kIdeal && grid_search)
    throw Error(ErrorKind::kConfig, "ideal prototypes fix beta = 1 and epsilon = 0; disable the grid search");
}

void ExperimentConfig::validate_files() const {
  validate();
  auto need = [](const std::string& path, const char* what) {
    if (path.empty()) throw Error(ErrorKind::kConfig, std::string("config does not name the ") + what);
    if (!fs::exists(path)) throw Error(ErrorKind::kConfig, std::string(what) + " '" + path + "' does not exist");
  };
  need(train_path, "training data");
  need(test_path, "test data");
  need(split_path, "split file");
  const bool needs_protos = mode == RunMode::kBaseline ||
                            (mode == RunMode::kGenerative && prototype_source == pipeline::PrototypeSource::kFile);
  if (needs_protos && prototype_paths.empty()) throw Error(ErrorKind::kConfig, "config does not name a prototype file");
  for (const auto& p : prototype_paths) need(p, "prototype file");
}

std::string resolve_output(const std::string& dir) {
  const fs::path p(dir);
  if (p.is_absolute()) return dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return (fs::path(root) / p).string();
  return dir;
}

pipeline::ExperimentSpec load_experiment(const ExperimentConfig& c) {
  c.validate_files();
  pipeline::ExperimentSpec s;
  s.train = data::read_dataset(c.train_path);
  s.test = data::read_dataset(c.test_path);
  if (s.train.class_names != s.test.class_names)
    throw Error(ErrorKind::kData, "training and test datasets use different class rosters");
  if (s.train.task != s.test.task) throw Error(ErrorKind::kData, "training and test datasets differ in task");
  if (s.train.task == data::Task::kSegmentation && c.setting == generators::Setting::kZsl &&
      !c.allow_zsl_segmentation)
    throw Error(ErrorKind::kConfig, "segmentation is evaluated in the GZSL setting; set allow_zsl_segmentation = true to override");

  const data::SplitFile split = data::read_split_file(c.split_path);
  s.split = pipeline::split_from_file(split, s.train);
  s.validation_excluded = s.train.class_ids(split.validation_excluded);

  if (!c.prototype_paths.empty()) {
    auto load = [&](const std::string& path) {
      auto set = prototypes::load_prototypes(path);
      return c.normalize_before_concat && c.prototype_paths.size() > 1 ? prototypes::l2_normalized(set) : set;
    };
    s.prototypes = load(c.prototype_paths.front());
    if (c.prototype_paths.size() == 2) s.prototypes = prototypes::concat_prototypes(s.prototypes, load(c.prototype_paths[1]));
    if (c.normalize_prototypes) s.prototypes = prototypes::l2_normalized(s.prototypes);
    for (int cls : s.split.all())
      if (!s.prototypes.contains(s.train.class_names[static_cast<std::size_t>(cls)]))
        throw Error(ErrorKind::kConfig, "no prototype for class '" + s.train.class_names[static_cast<std::size_t>(cls)] + "'");
  }

  s.setting = c.setting;
  s.generator = c.generator;
  s.prototype_source = c.prototype_source;
  s.backbone = c.backbone;
  s.backbone.validate(backbone::mode_for(s.train.task));
  s.gen = c.gen;
  s.trainset = c.trainset;
  s.classifier = c.classifier;
  s.bias = c.bias;
  s.grid_search = c.grid_search;
  s.grid = c.grid;
  s.grid.objective = c.grid.objective;
  s.validation_splits = c.validation_splits;
  s.seed = c.seed;
  s.output_dir = resolve_output(c.output_dir);
  return s;
}

}  // namespace genz3d::config
