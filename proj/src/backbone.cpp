#include "genz3d/backbone.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "genz3d/error.hpp"

namespace genz3d::backbone {

Mode mode_for(data::Task task) {
  return task == data::Task::kClassification ? Mode::kClassification : Mode::kSegmentation;
}

namespace {

int input_dim_for(Mode mode) { return mode == Mode::kSegmentation ? 3 + kNeighborhoodDescriptors : 3; }

// Covariance-shape statistics of each point's k-neighborhood. Neighbors are
// ordered by (distance, coordinates) so the result depends only on the point
// multiset, not on storage order.
nn::Matrix neighborhood_descriptors(const nn::Matrix& pts, int neighbors) {
  const Eigen::Index n = pts.rows();
  const Eigen::Index k = std::min<Eigen::Index>(std::max(1, neighbors), n);
  nn::Matrix out(n, kNeighborhoodDescriptors);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::vector<double> dist(static_cast<std::size_t>(n));
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
    if (dist[ua] != dist[ub]) return dist[ua] < dist[ub];
    for (int c = 0; c < 3; ++c)
      if (pts(a, c) != pts(b, c)) return pts(a, c) < pts(b, c);
    return false;
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j)
      dist[static_cast<std::size_t>(j)] = (pts.row(j) - pts.row(i)).squaredNorm();
    std::iota(order.begin(), order.end(), 0);
    std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), less);
    std::sort(order.begin(), order.begin() + k, less);

    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (Eigen::Index t = 0; t < k; ++t) mean += pts.row(order[static_cast<std::size_t>(t)]).transpose();
    mean /= static_cast<double>(k);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (Eigen::Index t = 0; t < k; ++t) {
      const Eigen::Vector3d d = pts.row(order[static_cast<std::size_t>(t)]).transpose() - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(k);

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig;
    eig.computeDirect(cov);
    // Ascending eigenvalues: l3 <= l2 <= l1.
    const double l3 = std::max(0.0, eig.eigenvalues()(0));
    const double l2 = std::max(0.0, eig.eigenvalues()(1));
    const double l1 = std::max(0.0, eig.eigenvalues()(2));
    if (l1 <= 1e-18) {
      out.row(i).setZero();
      continue;
    }
    const Eigen::Vector3d normal = eig.eigenvectors().col(0);
    const double spread = std::sqrt(l1);
    const Eigen::Vector3d offset = pts.row(i).transpose() - mean;
    out(i, 0) = (l1 - l2) / l1;                               // linearity
    out(i, 1) = (l2 - l3) / l1;                               // planarity
    out(i, 2) = l3 / l1;                                      // scattering
    out(i, 3) = std::abs(normal.z());                         // verticality of the normal
    out(i, 4) = 4.0 * spread;                                 // neighborhood scale
    out(i, 5) = std::abs(offset.dot(normal)) / spread;        // off-surface offset
  }
  return out;
}

// Column-wise max with the first maximal row recorded per column.
nn::Matrix column_max(const nn::Matrix& m, std::vector<Eigen::Index>& argmax) {
  nn::Matrix g(1, m.cols());
  argmax.assign(static_cast<std::size_t>(m.cols()), 0);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    Eigen::Index best = 0;
    double v = m(0, j);
    for (Eigen::Index i = 1; i < m.rows(); ++i) {
      if (m(i, j) > v) {
        v = m(i, j);
        best = i;
      }
    }
    g(0, j) = v;
    argmax[static_cast<std::size_t>(j)] = best;
  }
  return g;
}

nn::Matrix concat_global(const nn::Matrix& global, const nn::Matrix& local) {
  nn::Matrix h(local.rows(), global.cols() + local.cols());
  h.leftCols(global.cols()) = global.replicate(local.rows(), 1);
  h.rightCols(local.cols()) = local;
  return h;
}

}  // namespace

void BackboneConfig::validate(Mode mode) const {
  if (point_widths.empty()) throw Error(ErrorKind::kConfig, "backbone point MLP needs widths");
  for (int w : point_widths)
    if (w <= 0) throw Error(ErrorKind::kConfig, "backbone widths must be positive");
  for (int w : head_widths)
    if (w <= 0) throw Error(ErrorKind::kConfig, "backbone widths must be positive");
  if (feature_dim <= 0) throw Error(ErrorKind::kConfig, "feature dim must be positive");
  if (mode == Mode::kClassification && point_widths.back() != feature_dim)
    throw Error(ErrorKind::kConfig,
                "classification backbone: last point-MLP width must equal the feature dim");
  if (neighbors < 1) throw Error(ErrorKind::kConfig, "neighbor count must be >= 1");
  if (epochs < 0 || batch_size < 1 || !(learning_rate > 0))
    throw Error(ErrorKind::kConfig, "invalid backbone training schedule");
}

int BackboneModel::input_dim() const { return point_mlp.in_dim(); }

int BackboneModel::feature_dim() const {
  return mode == Mode::kSegmentation ? seg_head.out_dim() : point_mlp.out_dim();
}

void BackboneModel::validate() const {
  if (point_mlp.empty()) throw Error(ErrorKind::kTraining, "backbone is untrained");
  if (point_mlp.in_dim() != input_dim_for(mode))
    throw Error(ErrorKind::kData, "backbone input dim does not match its mode");
  if (mode == Mode::kSegmentation) {
    if (seg_head.empty()) throw Error(ErrorKind::kData, "segmentation backbone lacks its head");
    if (seg_head.in_dim() != 2 * point_mlp.out_dim())
      throw Error(ErrorKind::kData, "segmentation head input must be global+local width");
  }
}

BackboneModel make_backbone(Mode mode, const BackboneConfig& config, nn::Rng& rng) {
  config.validate(mode);
  BackboneModel m;
  m.mode = mode;
  m.neighbors = config.neighbors;
  std::vector<int> widths{input_dim_for(mode)};
  widths.insert(widths.end(), config.point_widths.begin(), config.point_widths.end());
  m.point_mlp = nn::Mlp::create(widths, nn::Activation::kRelu, nn::Activation::kRelu, rng);
  if (mode == Mode::kSegmentation) {
    std::vector<int> head{2 * config.point_widths.back()};
    head.insert(head.end(), config.head_widths.begin(), config.head_widths.end());
    head.push_back(config.feature_dim);
    m.seg_head = nn::Mlp::create(head, nn::Activation::kRelu, nn::Activation::kRelu, rng);
  }
  return m;
}

nn::Matrix prepare_input(Mode mode, const nn::Matrix& cloud, int neighbors) {
  if (cloud.rows() < 1) throw Error(ErrorKind::kData, "cannot extract features from an empty cloud");
  if (cloud.cols() != 3) throw Error(ErrorKind::kData, "clouds must be N x 3");
  const Eigen::RowVector3d centroid = cloud.colwise().mean();
  nn::Matrix centered = cloud.rowwise() - centroid;
  const double radius = centered.rowwise().norm().maxCoeff();
  if (radius > 0) centered /= radius;
  if (mode == Mode::kClassification) return centered;
  nn::Matrix input(cloud.rows(), 3 + kNeighborhoodDescriptors);
  input.leftCols(3) = centered;
  input.rightCols(kNeighborhoodDescriptors) = neighborhood_descriptors(centered, neighbors);
  return input;
}

std::vector<nn::Matrix> prepare_inputs(const data::Dataset& dataset, Mode mode, int neighbors) {
  std::vector<nn::Matrix> out;
  out.reserve(dataset.scenes.size());
  for (const auto& s : dataset.scenes) out.push_back(prepare_input(mode, s.points, neighbors));
  return out;
}

BackboneForward backbone_forward(const BackboneModel& model, const nn::Matrix& input) {
  BackboneForward fwd;
  nn::Matrix local = nn::mlp_forward(model.point_mlp, input, &fwd.point_cache);
  nn::Matrix global = column_max(local, fwd.argmax);
  if (model.mode == Mode::kClassification) {
    fwd.features = std::move(global);
  } else {
    fwd.features = nn::mlp_forward(model.seg_head, concat_global(global, local), &fwd.head_cache);
  }
  return fwd;
}

BackboneGradients backbone_backward(const BackboneModel& model, const BackboneForward& fwd,
                                    const nn::Matrix& grad_features) {
  BackboneGradients grads;
  const nn::Matrix& local = fwd.point_cache.output;
  nn::Matrix grad_local = nn::Matrix::Zero(local.rows(), local.cols());
  nn::Matrix grad_global;
  if (model.mode == Mode::kClassification) {
    grad_global = grad_features;
  } else {
    grads.seg_head = nn::mlp_backward(model.seg_head, fwd.head_cache, grad_features);
    const nn::Matrix& gh = grads.seg_head.input;
    grad_global = gh.leftCols(local.cols()).colwise().sum();
    grad_local = gh.rightCols(local.cols());
  }
  for (Eigen::Index j = 0; j < local.cols(); ++j)
    grad_local(fwd.argmax[static_cast<std::size_t>(j)], j) += grad_global(0, j);
  grads.point_mlp = nn::mlp_backward(model.point_mlp, fwd.point_cache, grad_local);
  return grads;
}

nn::Vector global_feature_from_input(const BackboneModel& model, const nn::Matrix& input) {
  model.validate();
  std::vector<Eigen::Index> argmax;
  return column_max(nn::mlp_forward(model.point_mlp, input), argmax).row(0).transpose();
}

nn::Matrix point_features_from_input(const BackboneModel& model, const nn::Matrix& input) {
  if (model.mode != Mode::kSegmentation)
    throw Error(ErrorKind::kData, "per-point features require a segmentation-mode backbone");
  model.validate();
  return backbone_forward(model, input).features;
}

nn::Vector extract_global_feature(const BackboneModel& model, const nn::Matrix& cloud) {
  return global_feature_from_input(model, prepare_input(model.mode, cloud, model.neighbors));
}

nn::Matrix extract_point_features(const BackboneModel& model, const nn::Matrix& cloud) {
  if (model.mode != Mode::kSegmentation)
    throw Error(ErrorKind::kData, "per-point features require a segmentation-mode backbone");
  return point_features_from_input(model, prepare_input(model.mode, cloud, model.neighbors));
}

namespace {

struct StepResult {
  double loss = 0.0;
  std::size_t samples = 0;
};

std::vector<std::span<double>> all_parameters(BackboneModel& m, nn::Mlp& aux) {
  auto p = m.point_mlp.parameters();
  if (!m.seg_head.empty()) {
    auto h = m.seg_head.parameters();
    p.insert(p.end(), h.begin(), h.end());
  }
  auto a = aux.parameters();
  p.insert(p.end(), a.begin(), a.end());
  return p;
}

}  // namespace

TrainedBackbone train_backbone(const data::Dataset& dataset, const std::vector<int>& train_classes,
                               const BackboneConfig& config,
                               const std::vector<nn::Matrix>* prepared) {
  const Mode mode = mode_for(dataset.task);
  config.validate(mode);
  const std::set<int> allowed(train_classes.begin(), train_classes.end());
  data::assert_inductive(dataset, allowed, "backbone training");
  if (dataset.scenes.empty()) throw Error(ErrorKind::kTraining, "backbone training set is empty");
  if (train_classes.empty()) throw Error(ErrorKind::kTraining, "no training classes");

  std::vector<nn::Matrix> local_inputs;
  if (!prepared) {
    local_inputs = prepare_inputs(dataset, mode, config.neighbors);
    prepared = &local_inputs;
  }
  if (prepared->size() != dataset.scenes.size())
    throw Error(ErrorKind::kTraining, "prepared inputs do not match the dataset");

  nn::Rng rng(config.seed);
  TrainedBackbone out;
  out.model = make_backbone(mode, config, rng);
  out.aux_classes = train_classes;
  std::sort(out.aux_classes.begin(), out.aux_classes.end());
  const int n_aux = static_cast<int>(out.aux_classes.size());
  std::vector<int> local_index(static_cast<std::size_t>(dataset.num_classes()), -1);
  for (int i = 0; i < n_aux; ++i) local_index[static_cast<std::size_t>(out.aux_classes[static_cast<std::size_t>(i)])] = i;
  out.aux_classifier = nn::Mlp({nn::make_dense(config.feature_dim, n_aux, nn::Activation::kIdentity, rng)});
  const std::vector<double> unit_weights(static_cast<std::size_t>(n_aux), 1.0);

  auto targets_of = [&](std::size_t s) {
    const auto& sc = dataset.scenes[s];
    std::vector<int> t;
    if (mode == Mode::kClassification) {
      t.push_back(local_index[static_cast<std::size_t>(sc.cloud_label())]);
    } else {
      t.reserve(sc.labels.size());
      for (int l : sc.labels) t.push_back(local_index[static_cast<std::size_t>(l)]);
    }
    return t;
  };

  // One optimization step over a group of scenes; returns summed loss.
  nn::AdamState adam;
  adam.learning_rate = config.learning_rate;
  auto run_group = [&](const std::vector<std::size_t>& group, bool update) -> StepResult {
    StepResult res;
    std::vector<BackboneForward> fwds;
    nn::Matrix feats;
    std::vector<int> targets;
    if (mode == Mode::kClassification) {
      feats.resize(static_cast<Eigen::Index>(group.size()), out.model.feature_dim());
      for (std::size_t g = 0; g < group.size(); ++g) {
        fwds.push_back(backbone_forward(out.model, (*prepared)[group[g]]));
        feats.row(static_cast<Eigen::Index>(g)) = fwds.back().features;
        targets.push_back(targets_of(group[g]).front());
      }
    } else {
      fwds.push_back(backbone_forward(out.model, (*prepared)[group.front()]));
      feats = fwds.back().features;
      targets = targets_of(group.front());
    }
    nn::MlpCache aux_cache;
    nn::Matrix logits = nn::mlp_forward(out.aux_classifier, feats, &aux_cache);
    nn::LossResult loss = nn::softmax_cross_entropy(logits, targets, unit_weights);
    res.loss = loss.loss * static_cast<double>(targets.size());
    res.samples = targets.size();
    if (!update) return res;

    nn::MlpGradients aux_grads = nn::mlp_backward(out.aux_classifier, aux_cache, loss.gradient);
    nn::MlpGradients point_grads, head_grads;
    for (std::size_t g = 0; g < fwds.size(); ++g) {
      const nn::Matrix gf = mode == Mode::kClassification
                                ? nn::Matrix(aux_grads.input.row(static_cast<Eigen::Index>(g)))
                                : aux_grads.input;
      BackboneGradients bg = backbone_backward(out.model, fwds[g], gf);
      point_grads.add(bg.point_mlp);
      if (mode == Mode::kSegmentation) head_grads.add(bg.seg_head);
    }
    std::vector<std::span<const double>> grads = point_grads.spans();
    if (mode == Mode::kSegmentation) {
      auto h = head_grads.spans();
      grads.insert(grads.end(), h.begin(), h.end());
    }
    auto a = aux_grads.spans();
    grads.insert(grads.end(), a.begin(), a.end());
    auto params = all_parameters(out.model, out.aux_classifier);
    nn::adam_step(params, grads, adam);
    return res;
  };

  std::vector<std::size_t> order(dataset.scenes.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t group_size = mode == Mode::kClassification ? static_cast<std::size_t>(config.batch_size) : 1;

  auto full_pass_loss = [&]() {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < order.size(); s += group_size) {
      std::vector<std::size_t> group(order.begin() + static_cast<std::ptrdiff_t>(s),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + group_size)));
      StepResult r = run_group(group, false);
      total += r.loss;
      count += r.samples;
    }
    return total / static_cast<double>(std::max<std::size_t>(1, count));
  };
  out.initial_loss = full_pass_loss();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < order.size(); s += group_size) {
      std::vector<std::size_t> group(order.begin() + static_cast<std::ptrdiff_t>(s),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + group_size)));
      StepResult r = run_group(group, true);
      total += r.loss;
      count += r.samples;
    }
    out.epoch_loss.push_back(total / static_cast<double>(std::max<std::size_t>(1, count)));
  }
  return out;
}

nn::Matrix aux_probabilities(const TrainedBackbone& trained, const nn::Matrix& features) {
  return nn::softmax(nn::mlp_forward(trained.aux_classifier, features));
}

Checkpoint to_checkpoint(const TrainedBackbone& trained) {
  Checkpoint c;
  c.kind = "backbone";
  c.meta["mode"] = trained.model.mode == Mode::kClassification ? "classification" : "segmentation";
  c.meta["neighbors"] = std::to_string(trained.model.neighbors);
  c.meta["aux_classes"] = join_ints(trained.aux_classes);
  c.nets.emplace_back("point_mlp", trained.model.point_mlp);
  if (!trained.model.seg_head.empty()) c.nets.emplace_back("seg_head", trained.model.seg_head);
  c.nets.emplace_back("aux_classifier", trained.aux_classifier);
  return c;
}

TrainedBackbone backbone_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "backbone")
    throw Error(ErrorKind::kData, "expected a backbone checkpoint, got '" + ckpt.kind + "'");
  TrainedBackbone t;
  const std::string& mode = ckpt.require_meta("mode");
  if (mode == "classification") {
    t.model.mode = Mode::kClassification;
  } else if (mode == "segmentation") {
    t.model.mode = Mode::kSegmentation;
  } else {
    throw Error(ErrorKind::kData, "unknown backbone mode tag '" + mode + "'");
  }
  t.model.neighbors = std::stoi(ckpt.require_meta("neighbors"));
  t.aux_classes = split_ints(ckpt.require_meta("aux_classes"));
  t.model.point_mlp = ckpt.net("point_mlp");
  if (t.model.mode == Mode::kSegmentation) t.model.seg_head = ckpt.net("seg_head");
  t.aux_classifier = ckpt.net("aux_classifier");
  t.model.validate();
  return t;
}

}  // namespace genz3d::backbone
