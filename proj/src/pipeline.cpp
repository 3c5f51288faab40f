#include "genz3d/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "genz3d/error.hpp"

namespace genz3d::pipeline {

namespace fs = std::filesystem;

ZslSplit ZslSplit::make(std::vector<int> seen, std::vector<int> unseen) {
  std::sort(seen.begin(), seen.end());
  std::sort(unseen.begin(), unseen.end());
  if (seen.empty()) throw Error(ErrorKind::kConfig, "split has no seen class");
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end() ||
      std::adjacent_find(unseen.begin(), unseen.end()) != unseen.end())
    throw Error(ErrorKind::kConfig, "split lists a class twice");
  if (seen.front() < 0 || (!unseen.empty() && unseen.front() < 0))
    throw Error(ErrorKind::kConfig, "split contains a negative class id");
  std::vector<int> both;
  std::set_intersection(seen.begin(), seen.end(), unseen.begin(), unseen.end(), std::back_inserter(both));
  if (!both.empty()) {
    std::ostringstream msg;
    msg << "class " << both.front() << " is both seen and unseen";
    throw Error(ErrorKind::kConfig, msg.str());
  }
  return {std::move(seen), std::move(unseen)};
}

bool ZslSplit::is_seen(int c) const { return std::binary_search(seen.begin(), seen.end(), c); }
bool ZslSplit::is_unseen(int c) const { return std::binary_search(unseen.begin(), unseen.end(), c); }

std::vector<int> ZslSplit::all() const {
  std::vector<int> out;
  std::merge(seen.begin(), seen.end(), unseen.begin(), unseen.end(), std::back_inserter(out));
  return out;
}

ZslSplit split_from_file(const data::SplitFile& file, const data::Dataset& dataset) {
  file.validate();
  return ZslSplit::make(dataset.class_ids(file.seen), dataset.class_ids(file.unseen));
}

void BiasConfig::validate() const {
  if (!(beta >= 1.0) || !std::isfinite(beta)) throw Error(ErrorKind::kConfig, "beta must be >= 1");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw Error(ErrorKind::kConfig, "epsilon must lie in [0, 1]");
}

const std::map<std::string, double>& epsilon_presets() {
  static const std::map<std::string, double> presets{
      {"modelnet40", 0.995}, {"s3dis", 0.4}, {"scannet", 0.6}, {"semantickitti", 0.2}};
  return presets;
}

double epsilon_preset(const std::string& name) {
  auto it = epsilon_presets().find(name);
  if (it == epsilon_presets().end()) throw Error(ErrorKind::kConfig, "unknown epsilon preset '" + name + "'");
  return it->second;
}

void ClassifierConfig::validate() const {
  for (int h : hidden)
    if (h <= 0) throw Error(ErrorKind::kConfig, "classifier hidden widths must be positive");
  if (epochs < 0 || batch_size <= 0) throw Error(ErrorKind::kConfig, "invalid classifier epochs or batch size");
  if (!(learning_rate > 0)) throw Error(ErrorKind::kConfig, "classifier learning rate must be positive");
}

Classifier train_classifier(const generators::GeneratedSet& trainset, const ZslSplit& split,
                            int num_classes, double beta, const ClassifierConfig& config) {
  config.validate();
  if (trainset.size() == 0) throw Error(ErrorKind::kTraining, "classifier training set is empty");
  if (!(beta >= 1.0)) throw Error(ErrorKind::kConfig, "beta must be >= 1");
  for (int l : trainset.labels) {
    if (l < 0 || l >= num_classes || !(split.is_seen(l) || split.is_unseen(l))) {
      std::ostringstream msg;
      msg << "classifier training label " << l << " is outside the split";
      throw Error(ErrorKind::kConfig, msg.str());
    }
  }
  std::vector<double> weights(static_cast<std::size_t>(num_classes), 1.0);
  for (int u : split.unseen) weights[static_cast<std::size_t>(u)] = beta;

  nn::Rng rng(config.seed);
  std::vector<int> widths{static_cast<int>(trainset.features.cols())};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(num_classes);
  Classifier clf;
  clf.net = nn::Mlp::create(widths, nn::Activation::kRelu, nn::Activation::kIdentity, rng);

  nn::AdamState adam;
  adam.learning_rate = config.learning_rate;
  std::vector<std::size_t> order(trainset.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      nn::Matrix x(static_cast<Eigen::Index>(end - start), trainset.features.cols());
      std::vector<int> y(end - start);
      for (std::size_t i = start; i < end; ++i) {
        x.row(static_cast<Eigen::Index>(i - start)) = trainset.features.row(static_cast<Eigen::Index>(order[i]));
        y[i - start] = trainset.labels[order[i]];
      }
      nn::MlpCache cache;
      const nn::Matrix logits = nn::mlp_forward(clf.net, x, &cache);
      const nn::LossResult loss = nn::softmax_cross_entropy(logits, y, weights);
      const nn::MlpGradients grads = nn::mlp_backward(clf.net, cache, loss.gradient);
      nn::adam_step(clf.net.parameters(), grads.spans(), adam);
    }
  }
  return clf;
}

nn::Matrix classifier_scores(const Classifier& classifier, const nn::Matrix& features) {
  if (!classifier.trained()) throw Error(ErrorKind::kEvaluation, "classifier is not trained");
  return nn::softmax(nn::mlp_forward(classifier.net, features));
}

nn::Vector calibrated_stacking(const nn::Vector& scores, const ZslSplit& split, double epsilon) {
  nn::Vector out = scores;
  for (int s : split.seen) {
    if (s >= out.size()) throw std::invalid_argument("score vector shorter than the class set");
    out[s] -= epsilon;
  }
  return out;
}

int argmax_class(const nn::Vector& scores, std::span<const int> candidates) {
  if (candidates.empty()) throw std::invalid_argument("no candidate class");
  int best = -1;
  for (int c : candidates) {
    if (c < 0 || c >= scores.size()) throw std::out_of_range("candidate class outside the score vector");
    if (best < 0 || scores[c] > scores[best] || (scores[c] == scores[best] && c < best)) best = c;
  }
  return best;
}

std::vector<int> candidate_classes(const ZslSplit& split, Candidates which) {
  switch (which) {
    case Candidates::kUnseenOnly:
      if (split.unseen.empty()) throw Error(ErrorKind::kConfig, "ZSL prediction needs unseen classes");
      return split.unseen;
    case Candidates::kSeenOnly:
      return split.seen;
    case Candidates::kSplit:
      break;
  }
  return split.all();
}

std::vector<int> decide(const nn::Matrix& scores, const ZslSplit& split, double epsilon,
                        Candidates which) {
  const std::vector<int> candidates = candidate_classes(split, which);
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const nn::Vector adjusted = calibrated_stacking(scores.row(i).transpose(), split, epsilon);
    out[static_cast<std::size_t>(i)] = argmax_class(adjusted, candidates);
  }
  return out;
}

FeatureTable extract_features(const backbone::BackboneModel& model, const data::Dataset& dataset) {
  std::vector<nn::Matrix> blocks;
  FeatureTable t;
  Eigen::Index rows = 0;
  for (const auto& scene : dataset.scenes) {
    t.scene_offsets.push_back(static_cast<std::size_t>(rows));
    if (model.mode == backbone::Mode::kSegmentation) {
      blocks.push_back(backbone::extract_point_features(model, scene.points));
      t.labels.insert(t.labels.end(), scene.labels.begin(), scene.labels.end());
    } else {
      blocks.push_back(backbone::extract_global_feature(model, scene.points).transpose());
      t.labels.push_back(scene.cloud_label());
    }
    rows += blocks.back().rows();
  }
  t.scene_offsets.push_back(static_cast<std::size_t>(rows));
  t.features.resize(rows, model.feature_dim());
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    t.features.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  return t;
}

generators::FeaturesByClass group_by_class(const FeatureTable& table, const std::set<int>* classes,
                                           const std::vector<std::size_t>* scenes) {
  std::map<int, std::vector<Eigen::Index>> rows;
  auto take_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const int l = table.labels[i];
      if (!classes || classes->count(l)) rows[l].push_back(static_cast<Eigen::Index>(i));
    }
  };
  if (scenes) {
    for (std::size_t s : *scenes) take_range(table.scene_offsets[s], table.scene_offsets[s + 1]);
  } else {
    take_range(0, table.labels.size());
  }
  generators::FeaturesByClass out;
  for (const auto& [c, idx] : rows) {
    nn::Matrix m(static_cast<Eigen::Index>(idx.size()), table.features.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = table.features.row(idx[i]);
    out.emplace(c, std::move(m));
  }
  return out;
}

std::map<int, std::int64_t> label_frequencies(const FeatureTable& table, const std::set<int>& classes) {
  std::map<int, std::int64_t> f;
  for (int l : table.labels)
    if (classes.count(l)) ++f[l];
  return f;
}

generators::PrototypesByClass prototypes_for(const prototypes::PrototypeSet& set,
                                             const std::vector<std::string>& class_names,
                                             const std::vector<int>& classes) {
  generators::PrototypesByClass out;
  for (int c : classes) out.emplace(c, set.at(class_names.at(static_cast<std::size_t>(c))));
  return out;
}

std::vector<int> predict(const PipelineModel& model, const nn::Matrix& cloud) {
  if (!model.classifier.trained()) throw Error(ErrorKind::kEvaluation, "pipeline classifier is not trained");
  if (model.backbone.point_mlp.empty()) throw Error(ErrorKind::kEvaluation, "pipeline backbone is not trained");
  nn::Matrix features;
  if (model.backbone.mode == backbone::Mode::kSegmentation) {
    features = backbone::extract_point_features(model.backbone, cloud);
  } else {
    features = backbone::extract_global_feature(model.backbone, cloud).transpose();
  }
  const Candidates which =
      model.setting == generators::Setting::kZsl ? Candidates::kUnseenOnly : Candidates::kSplit;
  return decide(classifier_scores(model.classifier, features), model.split, model.bias.epsilon, which);
}

void GridConfig::validate() const {
  if (betas.empty() || epsilons.empty()) throw Error(ErrorKind::kConfig, "grid search needs non-empty grids");
  for (double b : betas)
    if (!(b >= 1.0)) throw Error(ErrorKind::kConfig, "beta grid values must be >= 1");
  for (double e : epsilons)
    if (!(e >= 0.0 && e <= 1.0)) throw Error(ErrorKind::kConfig, "epsilon grid values must lie in [0, 1]");
  if (threads < 1) throw Error(ErrorKind::kConfig, "threads must be >= 1");
}

GridResult grid_search(const ObjectiveFn& objective, const GridConfig& config) {
  config.validate();
  GridResult r;
  if (config.joint) {
    double best = -1.0;
    for (std::size_t b = 0; b < config.betas.size(); ++b) {
      for (double e : config.epsilons) {
        const double v = objective(b, e);
        r.joint_table.push_back({config.betas[b], e, v});
        if (v > best) {
          best = v;
          r.best = {config.betas[b], e};
        }
      }
    }
    for (const auto& cell : r.joint_table) {
      if (cell.epsilon == 0.0) r.beta_curve.push_back(cell);
      if (cell.beta == r.best.beta) r.epsilon_curve.push_back(cell);
    }
    return r;
  }
  std::size_t best_b = 0;
  double best = -1.0;
  for (std::size_t b = 0; b < config.betas.size(); ++b) {
    const double v = objective(b, 0.0);
    r.beta_curve.push_back({config.betas[b], 0.0, v});
    if (v > best) {
      best = v;
      best_b = b;
    }
  }
  r.best.beta = config.betas[best_b];
  best = -1.0;
  for (double e : config.epsilons) {
    const double v = objective(best_b, e);
    r.epsilon_curve.push_back({r.best.beta, e, v});
    if (v > best) {
      best = v;
      r.best.epsilon = e;
    }
  }
  return r;
}

double fold_objective(const eval::ConfusionMatrix& cm, const ZslSplit& split, Objective objective,
                      generators::Setting setting) {
  auto measure = [&](std::span<const int> classes) {
    if (objective == Objective::kHm) return eval::class_accuracy(cm, classes);
    bool any = false;
    for (int c : classes) any = any || eval::iou(cm, c).has_value();
    return any ? eval::miou(cm, classes) : 0.0;
  };
  const double u = measure(split.unseen);
  if (setting == generators::Setting::kZsl) return u;
  return eval::harmonic_mean(measure(split.seen), u);
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(threads));
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void check_fold(const BiasFold& fold, const std::set<int>& test_unseen) {
  auto touches = [&](int c) { return test_unseen.count(c) > 0; };
  bool bad = std::any_of(fold.split.seen.begin(), fold.split.seen.end(), touches) ||
             std::any_of(fold.split.unseen.begin(), fold.split.unseen.end(), touches) ||
             std::any_of(fold.labels.begin(), fold.labels.end(), touches) ||
             std::any_of(fold.trainset.labels.begin(), fold.trainset.labels.end(), touches);
  if (bad) throw Error(ErrorKind::kConfig, "validation fold touches a test-unseen class");
}

}  // namespace

GridResult grid_search_bias(const std::vector<BiasFold>& folds, int num_classes,
                            const ClassifierConfig& classifier, const GridConfig& config,
                            const std::set<int>& test_unseen) {
  config.validate();
  if (folds.empty()) throw Error(ErrorKind::kConfig, "grid search needs at least one validation fold");
  for (const auto& f : folds) check_fold(f, test_unseen);

  // scores[fold][beta]
  const std::size_t nb = config.betas.size();
  std::vector<nn::Matrix> scores(folds.size() * nb);
  parallel_for(scores.size(), config.threads, [&](std::size_t cell) {
    const auto& fold = folds[cell / nb];
    const Classifier clf = train_classifier(fold.trainset, fold.split, num_classes, config.betas[cell % nb], classifier);
    scores[cell] = classifier_scores(clf, fold.features);
  });

  const Candidates which =
      config.setting == generators::Setting::kZsl ? Candidates::kUnseenOnly : Candidates::kSplit;
  auto objective = [&](std::size_t b, double eps) {
    double sum = 0.0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const auto preds = decide(scores[f * nb + b], folds[f].split, eps, which);
      sum += fold_objective(confusion(preds, folds[f].labels, num_classes), folds[f].split, config.objective,
                            config.setting);
    }
    return sum / static_cast<double>(folds.size());
  };
  return grid_search(objective, config);
}

eval::ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels,
                                int num_classes) {
  eval::ConfusionMatrix cm(num_classes);
  cm.accumulate(predictions, labels);
  return cm;
}

namespace {

generators::GeneratedSet real_trainset(const generators::FeaturesByClass& groups) {
  generators::GeneratedSet out;
  Eigen::Index rows = 0;
  for (const auto& [c, f] : groups) rows += f.rows();
  if (groups.empty()) return out;
  out.features.resize(rows, groups.begin()->second.cols());
  Eigen::Index r = 0;
  for (const auto& [c, f] : groups) {
    out.features.middleRows(r, f.rows()) = f;
    r += f.rows();
    out.labels.insert(out.labels.end(), static_cast<std::size_t>(f.rows()), c);
    out.provenance.insert(out.provenance.end(), static_cast<std::size_t>(f.rows()), generators::Provenance::kReal);
  }
  return out;
}

}  // namespace

std::vector<BiasFold> build_validation_folds(const FeatureTable& seen_train,
                                             const prototypes::PrototypeSet& protos,
                                             const std::vector<std::string>& class_names,
                                             const std::vector<data::ValidationSplit>& splits,
                                             const FoldOptions& options) {
  if (options.holdout_every < 2) throw Error(ErrorKind::kConfig, "holdout_every must be >= 2");
  const std::size_t n_scenes = seen_train.scene_offsets.size() - 1;
  std::vector<std::size_t> fit_scenes, eval_scenes;
  for (std::size_t s = 0; s < n_scenes; ++s)
    (s % static_cast<std::size_t>(options.holdout_every) == static_cast<std::size_t>(options.holdout_every - 1)
         ? eval_scenes
         : fit_scenes)
        .push_back(s);
  if (eval_scenes.empty() || fit_scenes.empty())
    throw Error(ErrorKind::kData, "too few training scenes to hold out validation data");

  std::vector<BiasFold> folds;
  for (std::size_t k = 0; k < splits.size(); ++k) {
    const auto& vs = splits[k];
    BiasFold fold;
    fold.split = ZslSplit::make(vs.train_classes, vs.validation_classes);
    const std::set<int> train_set(vs.train_classes.begin(), vs.train_classes.end());
    const auto real = group_by_class(seen_train, &train_set, &fit_scenes);
    if (real.size() != train_set.size())
      throw Error(ErrorKind::kData, "a validation fold has a training class without features");

    generators::GenConfig gen = options.gen;
    gen.seed = nn::derive_seed(options.gen.seed, k + 1);
    const auto gen_model =
        generators::train_generator(options.generator, real, prototypes_for(protos, class_names, vs.train_classes), gen);

    std::map<int, std::int64_t> freq;
    for (const auto& [c, f] : real) freq[c] = f.rows();
    generators::TrainsetOptions ts = options.trainset;
    ts.seed = nn::derive_seed(options.trainset.seed, k + 1);
    fold.trainset = generators::build_classifier_trainset(
        options.setting, gen_model, prototypes_for(protos, class_names, vs.validation_classes), &real, freq,
        options.task, ts);

    Eigen::Index rows = 0;
    for (std::size_t s : eval_scenes) rows += static_cast<Eigen::Index>(seen_train.scene_offsets[s + 1] - seen_train.scene_offsets[s]);
    fold.features.resize(rows, seen_train.features.cols());
    Eigen::Index r = 0;
    for (std::size_t s : eval_scenes) {
      for (std::size_t i = seen_train.scene_offsets[s]; i < seen_train.scene_offsets[s + 1]; ++i) {
        fold.features.row(r++) = seen_train.features.row(static_cast<Eigen::Index>(i));
        fold.labels.push_back(seen_train.labels[i]);
      }
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

std::string reference_name(ReferenceMode mode) {
  switch (mode) {
    case ReferenceMode::kFullSupervision: return "full_supervision";
    case ReferenceMode::kZslBackbone: return "zsl_backbone";
    case ReferenceMode::kZslTrivial: return "zsl_trivial";
  }
  return "";
}

ReferenceMode parse_reference(const std::string& name) {
  std::string n = name;
  std::replace(n.begin(), n.end(), '-', '_');
  if (n == "full_supervision") return ReferenceMode::kFullSupervision;
  if (n == "zsl_backbone") return ReferenceMode::kZslBackbone;
  if (n == "zsl_trivial") return ReferenceMode::kZslTrivial;
  throw Error(ErrorKind::kConfig, "unknown reference mode '" + name + "'");
}

data::Dataset seen_training_set(const data::Dataset& train, const ZslSplit& split) {
  return data::inductive_filter(train, split.unseen_set());
}

eval::MetricsReport evaluate_predictions(const std::vector<int>& predictions, const std::vector<int>& labels,
                                         const data::Dataset& dataset, const ZslSplit& split,
                                         generators::Setting setting) {
  if (predictions.size() != labels.size()) throw Error(ErrorKind::kEvaluation, "prediction count mismatch");
  eval::ConfusionMatrix cm(dataset.num_classes());
  std::size_t counted = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (setting == generators::Setting::kZsl && !split.is_unseen(labels[i])) continue;
    cm.add(labels[i], predictions[i]);
    ++counted;
  }
  if (counted == 0) throw Error(ErrorKind::kEvaluation, "no test item to evaluate");
  const bool seg = dataset.task == data::Task::kSegmentation;
  if (setting == generators::Setting::kZsl) return eval::make_report(cm, dataset.class_names, {}, split.unseen, seg);
  return eval::make_report(cm, dataset.class_names, split.seen, split.unseen, seg);
}

eval::MetricsReport run_reference(ReferenceMode mode, const data::Dataset& train,
                                  const data::Dataset& test, const ZslSplit& split,
                                  const backbone::BackboneConfig& backbone_config,
                                  const ClassifierConfig& classifier_config,
                                  const backbone::TrainedBackbone* seen_backbone) {
  const data::Dataset seen_train = seen_training_set(train, split);
  backbone::TrainedBackbone local;
  const backbone::TrainedBackbone* bb = seen_backbone;
  if (mode == ReferenceMode::kFullSupervision) {
    local = backbone::train_backbone(train, split.all(), backbone_config);
    bb = &local;
  } else if (!bb) {
    local = backbone::train_backbone(seen_train, split.seen, backbone_config);
    bb = &local;
  } else {
    for (int c : bb->aux_classes)
      if (!split.is_seen(c)) throw InductiveViolation("reference backbone was trained on a non-seen class");
  }

  const data::Dataset& clf_data = mode == ReferenceMode::kZslTrivial ? seen_train : train;
  const std::vector<int> clf_classes = mode == ReferenceMode::kZslTrivial ? split.seen : split.all();
  const std::set<int> allowed(clf_classes.begin(), clf_classes.end());
  if (mode == ReferenceMode::kZslTrivial) data::assert_inductive(clf_data, allowed, "zsl_trivial classifier");
  const FeatureTable table = extract_features(bb->model, clf_data);
  const generators::GeneratedSet trainset = real_trainset(group_by_class(table, &allowed));
  const Classifier clf = train_classifier(trainset, split, train.num_classes(), 1.0, classifier_config);

  const FeatureTable test_table = extract_features(bb->model, test);
  const Candidates which = mode == ReferenceMode::kZslTrivial ? Candidates::kSeenOnly : Candidates::kSplit;
  const auto preds = decide(classifier_scores(clf, test_table.features), split, 0.0, which);
  eval::MetricsReport report = evaluate_predictions(preds, test_table.labels, test, split, generators::Setting::kGzsl);
  report.metadata["mode"] = reference_name(mode);
  return report;
}

Checkpoint to_checkpoint(const Classifier& classifier, const BiasConfig& bias) {
  Checkpoint c;
  c.kind = "classifier";
  c.meta["beta"] = format_real(bias.beta);
  c.meta["epsilon"] = format_real(bias.epsilon);
  c.nets.emplace_back("f", classifier.net);
  return c;
}

Classifier classifier_from_checkpoint(const Checkpoint& ckpt, BiasConfig* bias) {
  if (ckpt.kind != "classifier")
    throw Error(ErrorKind::kData, "expected a classifier checkpoint, got '" + ckpt.kind + "'");
  Classifier clf;
  clf.net = ckpt.net("f");
  if (bias) {
    bias->beta = parse_real(ckpt.require_meta("beta"));
    bias->epsilon = parse_real(ckpt.require_meta("epsilon"));
  }
  return clf;
}

namespace {

template <typename Fn>
auto stage(const std::string& name, ErrorKind kind, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const InductiveViolation&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.kind(), e.what());
  } catch (const std::exception& e) {
    throw StageError(name, kind, e.what());
  }
}

std::string names_of(const std::vector<int>& ids, const std::vector<std::string>& names) {
  std::string out;
  for (int c : ids) {
    if (!out.empty()) out += ' ';
    out += names.at(static_cast<std::size_t>(c));
  }
  return out;
}

}  // namespace

std::string stage_name(Stage stage) {
  switch (stage) {
    case Stage::kBackbone: return "backbone";
    case Stage::kGenerator: return "generator";
    case Stage::kClassifier: return "classifier";
    case Stage::kEvaluation: return "evaluation";
  }
  return "";
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  ExperimentResult result;
  const ZslSplit& split = spec.split;
  const bool persist = !spec.output_dir.empty();
  auto ckpt_path = [&](const char* name) { return (fs::path(spec.output_dir) / name).string(); };
  auto resumable = [&](const char* name, Stage st) {
    if (st < spec.load_before) {
      if (!persist || !fs::exists(ckpt_path(name)))
        throw Error(ErrorKind::kData, "missing checkpoint '" + ckpt_path(name) + "'; run the " +
                                          stage_name(st) + " stage first");
      return true;
    }
    return persist && spec.resume && fs::exists(ckpt_path(name));
  };
  if (persist) fs::create_directories(spec.output_dir);
  if (spec.train.class_names != spec.test.class_names)
    throw Error(ErrorKind::kConfig, "train and test datasets use different class rosters");

  const data::Dataset seen_train = seen_training_set(spec.train, split);
  const std::set<int> seen_set = split.seen_set();

  const backbone::TrainedBackbone bb = stage("backbone", ErrorKind::kTraining, [&] {
    backbone::TrainedBackbone t;
    if (resumable("backbone.ckpt", Stage::kBackbone)) {
      t = backbone::backbone_from_checkpoint(read_checkpoint(ckpt_path("backbone.ckpt")));
      for (int c : t.aux_classes)
        if (!split.is_seen(c)) throw InductiveViolation("stored backbone was trained on a non-seen class");
    } else {
      backbone::BackboneConfig cfg = spec.backbone;
      t = backbone::train_backbone(seen_train, split.seen, cfg);
      if (persist) write_checkpoint(ckpt_path("backbone.ckpt"), backbone::to_checkpoint(t));
    }
    return t;
  });
  result.model.backbone = bb.model;
  if (spec.stop_after == Stage::kBackbone) return result;
  result.model.split = split;
  result.model.setting = spec.setting;

  FeatureTable train_table;
  prototypes::PrototypeSet protos = spec.prototypes;
  result.model.generator = stage("generator", ErrorKind::kTraining, [&] {
    data::assert_inductive(seen_train, seen_set, "generator training");
    train_table = extract_features(bb.model, seen_train);
    if (spec.prototype_source == PrototypeSource::kIdeal)
      protos = prototypes::ideal_prototypes(bb, spec.train, split.seen, split.unseen);
    if (resumable("generator.ckpt", Stage::kGenerator))
      return generators::generator_from_checkpoint(read_checkpoint(ckpt_path("generator.ckpt")));
    const auto real = group_by_class(train_table, &seen_set);
    generators::Generator g = generators::train_generator(
        spec.generator, real, prototypes_for(protos, spec.train.class_names, split.seen), spec.gen);
    if (persist) write_checkpoint(ckpt_path("generator.ckpt"), generators::to_checkpoint(g));
    return g;
  });

  if (spec.stop_after == Stage::kGenerator) return result;

  const int num_classes = spec.train.num_classes();
  const data::Task task = spec.train.task;
  stage("classifier", ErrorKind::kTraining, [&] {
    BiasConfig bias = spec.bias;
    if (resumable("classifier.ckpt", Stage::kClassifier)) {
      result.model.classifier =
          classifier_from_checkpoint(read_checkpoint(ckpt_path("classifier.ckpt")), &result.model.bias);
      return 0;
    }
    if (spec.prototype_source == PrototypeSource::kIdeal) {
      bias = {1.0, 0.0};
    } else if (spec.grid_search) {
      const auto vsplits = data::make_validation_splits(split.seen, spec.validation_excluded,
                                                        spec.validation_splits, spec.seed);
      FoldOptions fo;
      fo.generator = spec.generator;
      fo.gen = spec.gen;
      fo.trainset = spec.trainset;
      fo.setting = spec.setting;
      fo.task = task;
      const auto folds = build_validation_folds(train_table, protos, spec.train.class_names, vsplits, fo);
      GridConfig gc = spec.grid;
      gc.setting = spec.setting;
      result.grid = grid_search_bias(folds, num_classes, spec.classifier, gc, split.unseen_set());
      bias = result.grid->best;
    }
    bias.validate();
    const auto real = group_by_class(train_table, &seen_set);
    std::map<int, std::int64_t> freq;
    for (const auto& [c, f] : real) freq[c] = f.rows();
    const auto trainset = generators::build_classifier_trainset(
        spec.setting, result.model.generator, prototypes_for(protos, spec.train.class_names, split.unseen),
        spec.setting == generators::Setting::kGzsl ? &real : nullptr, freq, task, spec.trainset);
    result.model.classifier = train_classifier(trainset, split, num_classes, bias.beta, spec.classifier);
    result.model.bias = bias;
    if (persist) write_checkpoint(ckpt_path("classifier.ckpt"), to_checkpoint(result.model.classifier, bias));
    return 0;
  });

  if (spec.stop_after == Stage::kClassifier) return result;

  result.report = stage("evaluation", ErrorKind::kEvaluation, [&] {
    const FeatureTable test_table = extract_features(bb.model, spec.test);
    const Candidates which =
        spec.setting == generators::Setting::kZsl ? Candidates::kUnseenOnly : Candidates::kSplit;
    const auto preds = decide(classifier_scores(result.model.classifier, test_table.features), split,
                              result.model.bias.epsilon, which);
    eval::MetricsReport r = evaluate_predictions(preds, test_table.labels, spec.test, split, spec.setting);
    r.metadata["mode"] = "generative";
    r.metadata["setting"] = generators::setting_name(spec.setting);
    r.metadata["generator"] = generators::generator_name(spec.generator);
    r.metadata["beta"] = format_real(result.model.bias.beta);
    r.metadata["epsilon"] = format_real(result.model.bias.epsilon);
    r.metadata["seed"] = std::to_string(spec.seed);
    r.metadata["seen"] = names_of(split.seen, spec.train.class_names);
    r.metadata["unseen"] = names_of(split.unseen, spec.train.class_names);
    r.metadata["prototypes"] = spec.prototype_source == PrototypeSource::kIdeal ? "ideal" : "file";
    return r;
  });
  return result;
}

}  // namespace genz3d::pipeline
