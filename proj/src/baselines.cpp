#include "genz3d/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "genz3d/error.hpp"

namespace genz3d::baselines {

std::string method_name(Method m) { return m == Method::kDevise ? "devise" : "zslpc"; }

Method parse_method(const std::string& name) {
  if (name == "devise") return Method::kDevise;
  if (name == "zslpc") return Method::kZslpc;
  throw Error(ErrorKind::kConfig, "unknown baseline method '" + name + "' (expected devise or zslpc)");
}

void ProjectorConfig::validate() const {
  if (epochs < 0 || batch_size <= 0) throw Error(ErrorKind::kConfig, "invalid projector epochs or batch size");
  if (!(learning_rate > 0)) throw Error(ErrorKind::kConfig, "projector learning rate must be positive");
}

DeviseProjector train_devise_projection(const generators::FeaturesByClass& features,
                                        const generators::PrototypesByClass& prototypes,
                                        const ProjectorConfig& config) {
  config.validate();
  if (features.empty()) throw Error(ErrorKind::kTraining, "projection training needs seen features");
  std::vector<std::pair<int, Eigen::Index>> rows;
  int dim = -1;
  for (const auto& [c, f] : features) {
    auto it = prototypes.find(c);
    if (it == prototypes.end()) {
      std::ostringstream msg;
      msg << "missing prototype for seen class " << c;
      throw Error(ErrorKind::kConfig, msg.str());
    }
    if (dim < 0) dim = static_cast<int>(it->second.size());
    for (Eigen::Index i = 0; i < f.rows(); ++i) rows.emplace_back(c, i);
  }
  const int in = static_cast<int>(features.begin()->second.cols());

  nn::Rng rng(config.seed);
  DeviseProjector p;
  p.net = nn::Mlp({nn::make_dense(in, dim, nn::Activation::kIdentity, rng)});
  nn::AdamState adam;
  adam.learning_rate = config.learning_rate;
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t start = 0; start < rows.size(); start += batch) {
      const std::size_t end = std::min(rows.size(), start + batch);
      const auto n = static_cast<Eigen::Index>(end - start);
      nn::Matrix x(n, in), t(n, dim);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& [c, r] = rows[start + static_cast<std::size_t>(i)];
        x.row(i) = features.at(c).row(r);
        t.row(i) = prototypes.at(c).transpose();
      }
      nn::MlpCache cache;
      const nn::Matrix out = nn::mlp_forward(p.net, x, &cache);
      const nn::LossResult loss = nn::mean_squared_error(out, t);
      const nn::MlpGradients g = nn::mlp_backward(p.net, cache, loss.gradient);
      nn::adam_step(p.net.parameters(), g.spans(), adam);
    }
  }
  return p;
}

nn::Matrix devise_embed(const DeviseProjector& projector, const nn::Matrix& features) {
  if (!projector.trained()) throw Error(ErrorKind::kEvaluation, "projector is not trained");
  return nn::mlp_forward(projector.net, features);
}

ConseCombiner make_conse(const backbone::TrainedBackbone& trained,
                         const generators::PrototypesByClass& prototypes,
                         const pipeline::ZslSplit& split) {
  if (trained.aux_classes != split.seen)
    throw Error(ErrorKind::kConfig, "ConSE probability head must cover exactly the seen classes");
  ConseCombiner c;
  c.head = trained.aux_classifier;
  c.classes = trained.aux_classes;
  for (std::size_t i = 0; i < c.classes.size(); ++i) {
    const auto it = prototypes.find(c.classes[i]);
    if (it == prototypes.end()) {
      std::ostringstream msg;
      msg << "missing prototype for seen class " << c.classes[i];
      throw Error(ErrorKind::kConfig, msg.str());
    }
    if (i == 0) c.prototypes.resize(static_cast<Eigen::Index>(c.classes.size()), it->second.size());
    c.prototypes.row(static_cast<Eigen::Index>(i)) = it->second.transpose();
  }
  return c;
}

nn::Vector convex_combination(const nn::Vector& probabilities, const nn::Matrix& prototypes) {
  if (probabilities.size() != prototypes.rows())
    throw std::invalid_argument("probabilities and prototypes differ in class count");
  return prototypes.transpose() * probabilities;
}

nn::Matrix conse_embed(const ConseCombiner& combiner, const nn::Matrix& features) {
  if (!combiner.trained()) throw Error(ErrorKind::kEvaluation, "ConSE head is not trained");
  return nn::softmax(nn::mlp_forward(combiner.head, features)) * combiner.prototypes;
}

int knn_unseen_preference(const nn::Vector& query, const generators::PrototypesByClass& prototypes,
                          const pipeline::ZslSplit& split, int k, Distance distance) {
  if (k < 1) throw Error(ErrorKind::kConfig, "K must be >= 1");
  if (static_cast<std::size_t>(k) > prototypes.size()) {
    std::ostringstream msg;
    msg << "K = " << k << " exceeds the number of classes (" << prototypes.size() << ")";
    throw Error(ErrorKind::kConfig, msg.str());
  }
  std::vector<std::pair<double, int>> ranked;
  ranked.reserve(prototypes.size());
  for (const auto& [c, t] : prototypes) {
    if (t.size() != query.size()) throw std::invalid_argument("query and prototype differ in dimension");
    double d = 0.0;
    if (distance == Distance::kEuclidean) {
      d = (query - t).norm();
    } else {
      const double denom = query.norm() * t.norm();
      d = denom > 0 ? 1.0 - query.dot(t) / denom : 1.0;
    }
    ranked.emplace_back(d, c);
  }
  std::sort(ranked.begin(), ranked.end());
  for (int i = 0; i < k; ++i)
    if (split.is_unseen(ranked[static_cast<std::size_t>(i)].second)) return ranked[static_cast<std::size_t>(i)].second;
  return ranked.front().second;
}

std::vector<int> baseline_predict_features(const BaselineModel& model, const nn::Matrix& features, int k,
                                           Distance distance) {
  nn::Matrix embedded;
  if (model.method == Method::kDevise) {
    embedded = devise_embed(model.projector, features);
  } else {
    embedded = conse_embed(model.combiner, features);
  }
  std::vector<int> out(static_cast<std::size_t>(embedded.rows()));
  for (Eigen::Index i = 0; i < embedded.rows(); ++i)
    out[static_cast<std::size_t>(i)] =
        knn_unseen_preference(embedded.row(i).transpose(), model.prototypes, model.split, k, distance);
  return out;
}

std::vector<int> baseline_predict(const BaselineModel& model, const nn::Matrix& cloud, int k, Distance distance) {
  if (model.backbone.point_mlp.empty()) throw Error(ErrorKind::kEvaluation, "baseline backbone is not trained");
  const nn::Matrix features = model.backbone.mode == backbone::Mode::kSegmentation
                                  ? backbone::extract_point_features(model.backbone, cloud)
                                  : nn::Matrix(backbone::extract_global_feature(model.backbone, cloud).transpose());
  return baseline_predict_features(model, features, k, distance);
}

int k_preset(Method method, const std::string& dataset) {
  const bool devise = method == Method::kDevise;
  if (dataset == "s3dis") return devise ? 7 : 5;
  if (dataset == "scannet") return 2;
  if (dataset == "semantickitti") return 5;
  throw Error(ErrorKind::kConfig, "unknown K preset '" + dataset + "'");
}

BaselineModel train_baseline(Method method, const data::Dataset& train, const pipeline::ZslSplit& split,
                             const prototypes::PrototypeSet& prototypes,
                             const backbone::BackboneConfig& backbone_config,
                             const ProjectorConfig& projector_config,
                             const backbone::TrainedBackbone* seen_backbone) {
  const data::Dataset seen_train = pipeline::seen_training_set(train, split);
  backbone::TrainedBackbone local;
  if (!seen_backbone) {
    local = backbone::train_backbone(seen_train, split.seen, backbone_config);
    seen_backbone = &local;
  }
  for (int c : seen_backbone->aux_classes)
    if (!split.is_seen(c)) throw InductiveViolation("baseline backbone was trained on a non-seen class");

  BaselineModel m;
  m.method = method;
  m.backbone = seen_backbone->model;
  m.split = split;
  m.prototypes = pipeline::prototypes_for(prototypes, train.class_names, split.all());
  if (method == Method::kDevise) {
    const std::set<int> seen = split.seen_set();
    data::assert_inductive(seen_train, seen, "projection training");
    const auto table = pipeline::extract_features(m.backbone, seen_train);
    m.projector = train_devise_projection(pipeline::group_by_class(table, &seen),
                                          pipeline::prototypes_for(prototypes, train.class_names, split.seen),
                                          projector_config);
  } else {
    m.combiner = make_conse(*seen_backbone, m.prototypes, split);
  }
  return m;
}

}  // namespace genz3d::baselines
