#pragma once

// PointNet-style feature extractor. A shared per-point MLP followed by a
// coordinate-wise max gives the global cloud feature; for segmentation each
// point's embedding is concatenated with the global feature and passed
// through a second MLP (the segmentation head).
//
// Clouds are centered on their centroid and scaled to unit max radius before
// anything else. In segmentation mode every point is also described by six
// neighborhood statistics (covariance shape of its k nearest neighbors), so
// the per-point MLP sees 9 inputs instead of 3.

#include <cstdint>
#include <vector>

#include "genz3d/checkpoint.hpp"
#include "genz3d/data.hpp"
#include "genz3d/nn.hpp"

namespace genz3d::backbone {

enum class Mode { kClassification, kSegmentation };

Mode mode_for(data::Task task);

inline constexpr int kNeighborhoodDescriptors = 6;

struct BackboneConfig {
  std::vector<int> point_widths{32, 64};  // hidden..output widths of the point MLP
  std::vector<int> head_widths{64};       // hidden widths of the segmentation head
  int feature_dim = 64;                   // F
  int neighbors = 16;
  int epochs = 20;
  int batch_size = 8;  // clouds per step (classification); scenes are one step each
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;

  void validate(Mode mode) const;
};

struct BackboneModel {
  Mode mode = Mode::kClassification;
  nn::Mlp point_mlp;
  nn::Mlp seg_head;  // empty in classification mode
  int neighbors = 16;

  int input_dim() const;
  int feature_dim() const;
  int global_dim() const { return point_mlp.out_dim(); }
  void validate() const;
};

BackboneModel make_backbone(Mode mode, const BackboneConfig& config, nn::Rng& rng);

// Centers and scales to unit max radius; appends neighborhood descriptors in
// segmentation mode. Throws on an empty cloud.
nn::Matrix prepare_input(Mode mode, const nn::Matrix& cloud, int neighbors);
std::vector<nn::Matrix> prepare_inputs(const data::Dataset& dataset, Mode mode, int neighbors);

nn::Vector extract_global_feature(const BackboneModel& model, const nn::Matrix& cloud);
nn::Matrix extract_point_features(const BackboneModel& model, const nn::Matrix& cloud);

// Variants taking an already prepared input.
nn::Vector global_feature_from_input(const BackboneModel& model, const nn::Matrix& input);
nn::Matrix point_features_from_input(const BackboneModel& model, const nn::Matrix& input);

// Gradients of one forward/backward pass through the backbone.
struct BackboneGradients {
  nn::MlpGradients point_mlp;
  nn::MlpGradients seg_head;
};

// Forward + backward in one call. `grad_features` is d(loss)/d(features):
// 1 x F for classification, N x F for segmentation.
struct BackboneForward {
  nn::Matrix features;
  nn::MlpCache point_cache;
  nn::MlpCache head_cache;
  std::vector<Eigen::Index> argmax;  // per global-feature column
};

BackboneForward backbone_forward(const BackboneModel& model, const nn::Matrix& input);
BackboneGradients backbone_backward(const BackboneModel& model, const BackboneForward& fwd,
                                    const nn::Matrix& grad_features);

struct TrainedBackbone {
  BackboneModel model;
  nn::Mlp aux_classifier;         // linear b: F -> |train classes|
  std::vector<int> aux_classes;   // global class id of each output of b
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;
};

// Joint cross-entropy training of the backbone and the auxiliary linear
// classifier. Every label in `dataset` must belong to `train_classes`,
// otherwise InductiveViolation is raised before any training happens.
// `prepared` may supply cached prepare_inputs() for the dataset.
TrainedBackbone train_backbone(const data::Dataset& dataset, const std::vector<int>& train_classes,
                               const BackboneConfig& config,
                               const std::vector<nn::Matrix>* prepared = nullptr);

// Auxiliary classifier scores: softmax(b(features)), columns follow aux_classes.
nn::Matrix aux_probabilities(const TrainedBackbone& trained, const nn::Matrix& features);

Checkpoint to_checkpoint(const TrainedBackbone& trained);
TrainedBackbone backbone_from_checkpoint(const Checkpoint& ckpt);

}  // namespace genz3d::backbone
