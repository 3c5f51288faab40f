// genz3d: command-line front end for the synthetic benchmark, the generative
// pipeline, the reference modes and the projection baselines.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "genz3d/baselines.hpp"
#include "genz3d/config.hpp"
#include "genz3d/error.hpp"
#include "genz3d/pipeline.hpp"

namespace fs = std::filesystem;
using namespace genz3d;

namespace {

struct Common {
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool resume = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--output", c.output, "output directory (overrides the config)");
  cmd->add_option("--seed", c.seed, "seed for every stage (overrides the config)");
  cmd->add_option("--threads", c.threads, "worker threads for the grid search")->check(CLI::PositiveNumber);
}

config::ExperimentConfig load(const Common& c) {
  config::ExperimentConfig cfg = config::load_config(c.config);
  if (!c.output.empty()) cfg.output_dir = c.output;
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.backbone.seed = cfg.gen.seed = cfg.classifier.seed = cfg.trainset.seed = cfg.projector.seed = *c.seed;
  }
  if (c.threads > 0) cfg.grid.threads = c.threads;
  cfg.validate_files();
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kData, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorKind::kData, "failed writing '" + path.string() + "'");
}

std::string curve_csv(const std::vector<pipeline::GridCell>& cells) {
  std::ostringstream out;
  out << "beta,epsilon,objective\n";
  for (const auto& c : cells)
    out << format_real(c.beta) << ',' << format_real(c.epsilon) << ',' << format_real(c.objective) << '\n';
  return out.str();
}

void write_reports(const std::string& dir, const eval::MetricsReport& report) {
  fs::create_directories(dir);
  write_file(fs::path(dir) / "report.txt", eval::render_report(report, eval::ReportFormat::kText));
  write_file(fs::path(dir) / "report.csv", eval::render_report(report, eval::ReportFormat::kCsv));
  std::cout << eval::render_report(report, eval::ReportFormat::kText);
}

void write_grid(const std::string& dir, const pipeline::GridResult& g) {
  fs::create_directories(dir);
  write_file(fs::path(dir) / "beta_curve.csv", curve_csv(g.beta_curve));
  write_file(fs::path(dir) / "epsilon_curve.csv", curve_csv(g.epsilon_curve));
  if (!g.joint_table.empty()) write_file(fs::path(dir) / "joint_grid.csv", curve_csv(g.joint_table));
  std::cout << "selected beta = " << format_real(g.best.beta) << ", epsilon = " << format_real(g.best.epsilon)
            << '\n';
}

// Seen-only backbone from the output directory when resuming, else trained.
backbone::TrainedBackbone seen_backbone(const pipeline::ExperimentSpec& spec, bool resume) {
  const fs::path ckpt = fs::path(spec.output_dir) / "backbone.ckpt";
  if (resume && fs::exists(ckpt)) {
    auto t = backbone::backbone_from_checkpoint(read_checkpoint(ckpt.string()));
    for (int c : t.aux_classes)
      if (!spec.split.is_seen(c)) throw InductiveViolation("stored backbone was trained on a non-seen class");
    return t;
  }
  auto t = backbone::train_backbone(pipeline::seen_training_set(spec.train, spec.split), spec.split.seen,
                                    spec.backbone);
  fs::create_directories(spec.output_dir);
  write_checkpoint(ckpt.string(), backbone::to_checkpoint(t));
  return t;
}

int run_stages(const Common& common, pipeline::Stage load_before, pipeline::Stage stop_after,
               std::optional<bool> grid) {
  config::ExperimentConfig cfg = load(common);
  if (grid) cfg.grid_search = *grid;
  cfg.validate();
  pipeline::ExperimentSpec spec = config::load_experiment(cfg);
  spec.resume = common.resume;
  spec.load_before = load_before;
  spec.stop_after = stop_after;
  const pipeline::ExperimentResult r = pipeline::run_experiment(spec);
  if (r.grid) write_grid(spec.output_dir, *r.grid);
  if (stop_after == pipeline::Stage::kEvaluation) {
    write_reports(spec.output_dir, r.report);
  } else {
    std::cout << pipeline::stage_name(stop_after) << " checkpoint written to " << spec.output_dir << '\n';
  }
  return 0;
}

int run_reference(const config::ExperimentConfig& cfg, const pipeline::ExperimentSpec& spec, bool resume) {
  pipeline::ReferenceMode mode = pipeline::ReferenceMode::kFullSupervision;
  if (cfg.mode == config::RunMode::kZslBackbone) mode = pipeline::ReferenceMode::kZslBackbone;
  if (cfg.mode == config::RunMode::kZslTrivial) mode = pipeline::ReferenceMode::kZslTrivial;
  std::optional<backbone::TrainedBackbone> bb;
  if (mode != pipeline::ReferenceMode::kFullSupervision) bb = seen_backbone(spec, resume);
  eval::MetricsReport report = pipeline::run_reference(mode, spec.train, spec.test, spec.split, spec.backbone,
                                                       spec.classifier, bb ? &*bb : nullptr);
  report.metadata["seed"] = std::to_string(spec.seed);
  write_reports(spec.output_dir, report);
  return 0;
}

int run_baseline(const config::ExperimentConfig& cfg, const pipeline::ExperimentSpec& spec, bool resume) {
  const backbone::TrainedBackbone bb = seen_backbone(spec, resume);
  const baselines::BaselineModel model =
      baselines::train_baseline(cfg.baseline, spec.train, spec.split, spec.prototypes, spec.backbone,
                                cfg.projector, &bb);
  eval::MetricsReport report;
  try {
    const pipeline::FeatureTable test = pipeline::extract_features(model.backbone, spec.test);
    const auto preds = baselines::baseline_predict_features(model, test.features, cfg.k, cfg.distance);
    report = pipeline::evaluate_predictions(preds, test.labels, spec.test, spec.split, spec.setting);
  } catch (const InductiveViolation&) {
    throw;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kConfig) throw;
    throw StageError("evaluation", ErrorKind::kEvaluation, e.what());
  } catch (const std::exception& e) {
    throw StageError("evaluation", ErrorKind::kEvaluation, e.what());
  }
  report.metadata["mode"] = "baseline";
  report.metadata["method"] = baselines::method_name(cfg.baseline);
  report.metadata["k"] = std::to_string(cfg.k);
  report.metadata["distance"] = cfg.distance == baselines::Distance::kEuclidean ? "euclidean" : "cosine";
  report.metadata["seed"] = std::to_string(spec.seed);
  write_reports(spec.output_dir, report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"genz3d: generative zero-shot learning for point clouds"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_task = "segmentation", synth_out, roster_text, proto_out, split_out;
  std::string unseen_text = "torus,ridden_box";
  int count = 100;
  std::uint64_t synth_seed = 1;
  data::SynthConfig synth_cfg = data::default_synth_config();
  double proto_noise = 0.05;
  int proto_extra = 3;
  synth->add_option("--task", synth_task, "classification or segmentation")
      ->check(CLI::IsMember({"classification", "segmentation"}));
  synth->add_option("--count", count, "number of clouds or scenes");
  synth->add_option("--seed", synth_seed, "generation seed");
  synth->add_option("--out", synth_out, "dataset directory (created)")->required();
  synth->add_option("--roster", roster_text, "name=family[+rider],... (default: built-in 8 classes)");
  synth->add_option("--points-per-object", synth_cfg.points_per_object, "points sampled per object");
  synth->add_option("--points-per-structure", synth_cfg.points_per_structure, "points sampled per ground or wall");
  synth->add_option("--objects-per-scene", synth_cfg.objects_per_scene, "objects placed in each scene");
  synth->add_option("--jitter", synth_cfg.jitter, "Gaussian point noise");
  synth->add_option("--prototypes", proto_out, "also write attribute prototypes to this file");
  synth->add_option("--prototype-noise", proto_noise, "noise added to attribute prototypes");
  synth->add_option("--prototype-extra-dims", proto_extra, "random extra prototype dimensions");
  synth->add_option("--split", split_out, "also write a split file to this path");
  synth->add_option("--unseen", unseen_text, "unseen classes for --split");

  // pipeline stages
  Common common;
  auto* tb = app.add_subcommand("train-backbone", "train the seen-class backbone");
  auto* tg = app.add_subcommand("train-generator", "train the feature generator (needs backbone.ckpt)");
  auto* tc = app.add_subcommand("train-classifier", "train the final classifier (needs generator.ckpt)");
  auto* ev = app.add_subcommand("eval", "evaluate stored checkpoints on the test set");
  auto* gs = app.add_subcommand("grid-search", "select beta and epsilon on validation folds");
  auto* run = app.add_subcommand("run", "run an experiment end to end");
  auto* bl = app.add_subcommand("baseline", "run a projection baseline");
  for (auto* cmd : {tb, tg, tc, ev, gs, run, bl}) add_common(cmd, common);
  for (auto* cmd : {gs, run, bl}) cmd->add_flag("--resume", common.resume, "reuse checkpoints in the output directory");
  std::string mode_text;
  bool grid_flag = false;
  run->add_option("--mode", mode_text, "generative, full-supervision, zsl-backbone, zsl-trivial or baseline")
      ->check(CLI::IsMember({"generative", "full-supervision", "zsl-backbone", "zsl-trivial", "baseline"}));
  run->add_flag("--grid-search", grid_flag, "grid-search beta and epsilon");
  std::string method_text, distance_text;
  int k = 0;
  bl->add_option("--method", method_text, "devise or zslpc")->check(CLI::IsMember({"devise", "zslpc"}));
  bl->add_option("--k", k, "neighbours considered by the unseen-preference rule")->check(CLI::PositiveNumber);
  bl->add_option("--distance", distance_text, "euclidean or cosine")
      ->check(CLI::IsMember({"euclidean", "cosine"}));

  // report
  auto* rp = app.add_subcommand("report", "render a stored CSV report");
  std::string csv_path, format = "text";
  rp->add_option("--csv", csv_path, "report.csv to render")->required()->check(CLI::ExistingFile);
  rp->add_option("--format", format, "text or csv")->check(CLI::IsMember({"text", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::kUsage);
  }

  try {
    if (synth->parsed()) {
      const data::Task task = data::parse_task(synth_task);
      if (!roster_text.empty()) synth_cfg.roster = data::parse_roster(roster_text);
      synth_cfg.validate();
      const data::Dataset ds = data::generate_synthetic(synth_cfg, task, count, synth_seed);
      data::SplitFile split;
      if (!split_out.empty()) {
        std::set<std::string> unseen;
        std::stringstream ss(unseen_text);
        for (std::string t; std::getline(ss, t, ',');)
          if (!t.empty()) unseen.insert(t);
        for (const auto& n : unseen) ds.class_id(n);
        for (const auto& c : synth_cfg.roster) {
          if (unseen.count(c.name)) {
            split.unseen.push_back(c.name);
          } else {
            split.seen.push_back(c.name);
            if (c.structural()) split.validation_excluded.push_back(c.name);
          }
        }
        split.validate();
      }
      data::write_dataset(synth_out, ds);
      if (!proto_out.empty())
        prototypes::save_prototypes(proto_out,
                                    prototypes::attribute_prototypes(synth_cfg.roster, proto_noise, proto_extra, synth_seed));
      if (!split_out.empty()) data::write_split_file(split_out, split);
      std::cout << "wrote " << ds.scenes.size() << ' ' << data::task_name(task) << " samples to " << synth_out << '\n';
      return 0;
    }
    if (rp->parsed()) {
      std::ifstream in(csv_path, std::ios::binary);
      std::stringstream buf;
      buf << in.rdbuf();
      eval::MetricsReport r;
      try {
        r = eval::report_from_csv(buf.str());
      } catch (const std::exception& e) {
        throw Error(ErrorKind::kData, csv_path + ": " + e.what());
      }
      std::cout << eval::render_report(r, format == "csv" ? eval::ReportFormat::kCsv : eval::ReportFormat::kText);
      return 0;
    }
    if (tb->parsed()) return run_stages(common, pipeline::Stage::kBackbone, pipeline::Stage::kBackbone, std::nullopt);
    if (tg->parsed()) return run_stages(common, pipeline::Stage::kGenerator, pipeline::Stage::kGenerator, std::nullopt);
    if (tc->parsed()) return run_stages(common, pipeline::Stage::kClassifier, pipeline::Stage::kClassifier, std::nullopt);
    if (ev->parsed()) return run_stages(common, pipeline::Stage::kEvaluation, pipeline::Stage::kEvaluation, std::nullopt);
    if (gs->parsed()) return run_stages(common, pipeline::Stage::kBackbone, pipeline::Stage::kClassifier, true);

    config::ExperimentConfig cfg = load(common);
    if (bl->parsed()) {
      cfg.mode = config::RunMode::kBaseline;
      if (!method_text.empty()) cfg.baseline = baselines::parse_method(method_text);
      if (k > 0) cfg.k = k;
      if (distance_text == "cosine") {
        cfg.distance = baselines::Distance::kCosine;
      } else if (distance_text == "euclidean") {
        cfg.distance = baselines::Distance::kEuclidean;
      } else if (!distance_text.empty()) {
        throw Error(ErrorKind::kConfig, "distance must be euclidean or cosine");
      }
    }
    if (!mode_text.empty()) cfg.mode = config::parse_run_mode(mode_text);
    if (grid_flag) cfg.grid_search = true;
    cfg.validate_files();
    if (cfg.mode == config::RunMode::kGenerative)
      return run_stages(common, pipeline::Stage::kBackbone, pipeline::Stage::kEvaluation, cfg.grid_search);
    pipeline::ExperimentSpec spec = config::load_experiment(cfg);
    if (cfg.mode == config::RunMode::kBaseline) return run_baseline(cfg, spec, common.resume);
    return run_reference(cfg, spec, common.resume);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::kData);
  }
}
