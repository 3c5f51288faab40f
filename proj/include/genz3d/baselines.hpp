#pragma once

// Projection baselines for GZSL segmentation. Each point feature is embedded
// in prototype space, either by a learned linear projection (DeViSe-style,
// MSE regression onto the class prototype) or as the probability-weighted
// average of seen prototypes (ConSE-style, using the backbone's auxiliary
// classifier), then labeled by a K-nearest-prototype rule that prefers
// unseen classes.

#include <cstdint>
#include <string>
#include <vector>

#include "genz3d/backbone.hpp"
#include "genz3d/eval.hpp"
#include "genz3d/generators.hpp"
#include "genz3d/pipeline.hpp"

namespace genz3d::baselines {

enum class Method { kDevise, kZslpc };

std::string method_name(Method m);
Method parse_method(const std::string& name);

enum class Distance { kEuclidean, kCosine };

struct ProjectorConfig {
  int epochs = 30;
  int batch_size = 256;
  double learning_rate = 5e-3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct DeviseProjector {
  nn::Mlp net;  // linear F -> D

  bool trained() const { return !net.empty(); }
};

// Minimizes 0.5 |W x + b - t_y|^2 over seen features. Every class in
// `features` needs a prototype.
DeviseProjector train_devise_projection(const generators::FeaturesByClass& features,
                                        const generators::PrototypesByClass& prototypes,
                                        const ProjectorConfig& config);

nn::Matrix devise_embed(const DeviseProjector& projector, const nn::Matrix& features);

struct ConseCombiner {
  nn::Mlp head;             // seen-class probability head b
  std::vector<int> classes;  // class id of each head output (exactly the seen set)
  nn::Matrix prototypes;    // |S| x D, rows follow `classes`

  bool trained() const { return !head.empty(); }
};

// The head must cover exactly split.seen.
ConseCombiner make_conse(const backbone::TrainedBackbone& trained,
                         const generators::PrototypesByClass& prototypes,
                         const pipeline::ZslSplit& split);

// sum_s p(s | x) t_s, one row per feature row.
nn::Matrix conse_embed(const ConseCombiner& combiner, const nn::Matrix& features);
// The same combination for given probabilities (columns follow prototype rows).
nn::Vector convex_combination(const nn::Vector& probabilities, const nn::Matrix& prototypes);

// Among the K prototypes nearest to `query`, the nearest unseen one if any,
// otherwise the nearest overall. Distance ties go to the lowest class id.
// Candidates are the classes of `prototypes`; K > their count is rejected.
int knn_unseen_preference(const nn::Vector& query, const generators::PrototypesByClass& prototypes,
                          const pipeline::ZslSplit& split, int k, Distance distance = Distance::kEuclidean);

struct BaselineModel {
  Method method = Method::kDevise;
  backbone::BackboneModel backbone;
  DeviseProjector projector;
  ConseCombiner combiner;
  generators::PrototypesByClass prototypes;  // every class of the split
  pipeline::ZslSplit split;
};

std::vector<int> baseline_predict(const BaselineModel& model, const nn::Matrix& cloud, int k,
                                  Distance distance = Distance::kEuclidean);

// Predictions for precomputed backbone features.
std::vector<int> baseline_predict_features(const BaselineModel& model, const nn::Matrix& features, int k,
                                           Distance distance = Distance::kEuclidean);

// Default K per dataset name.
int k_preset(Method method, const std::string& dataset);

// Trains the baseline on the seen-only training set (reusing `seen_backbone`
// when given) and builds the model.
BaselineModel train_baseline(Method method, const data::Dataset& train, const pipeline::ZslSplit& split,
                             const prototypes::PrototypeSet& prototypes,
                             const backbone::BackboneConfig& backbone_config,
                             const ProjectorConfig& projector_config,
                             const backbone::TrainedBackbone* seen_backbone = nullptr);

}  // namespace genz3d::baselines
