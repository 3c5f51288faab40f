#include "genz3d/generators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "genz3d/error.hpp"

namespace genz3d::generators {

std::string generator_name(GeneratorKind kind) {
  return kind == GeneratorKind::kGmmn ? "gmmn" : "dae";
}

GeneratorKind parse_generator(const std::string& name) {
  if (name == "gmmn") return GeneratorKind::kGmmn;
  if (name == "dae") return GeneratorKind::kDae;
  throw Error(ErrorKind::kConfig, "unknown generator '" + name + "' (expected gmmn or dae)");
}

std::string setting_name(Setting s) { return s == Setting::kZsl ? "zsl" : "gzsl"; }

Setting parse_setting(const std::string& name) {
  if (name == "zsl") return Setting::kZsl;
  if (name == "gzsl") return Setting::kGzsl;
  throw Error(ErrorKind::kConfig, "unknown setting '" + name + "' (expected zsl or gzsl)");
}

void GenConfig::validate() const {
  if (noise_dim <= 0) throw Error(ErrorKind::kConfig, "generator noise dim must be positive");
  if (hidden <= 0) throw Error(ErrorKind::kConfig, "generator hidden width must be positive");
  if (bandwidths.empty()) throw Error(ErrorKind::kConfig, "generator needs at least one bandwidth");
  for (double b : bandwidths)
    if (!(b > 0) || !std::isfinite(b)) throw Error(ErrorKind::kConfig, "generator bandwidths must be positive");
  if (epochs < 0 || batch_size <= 0) throw Error(ErrorKind::kConfig, "invalid generator epochs or batch size");
  if (!(learning_rate > 0)) throw Error(ErrorKind::kConfig, "generator learning rate must be positive");
  if (!(dae_noise >= 0)) throw Error(ErrorKind::kConfig, "DAE corruption scale must be >= 0");
}

namespace {

nn::Matrix squared_distances(const nn::Matrix& a, const nn::Matrix& b) {
  nn::Matrix d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  return d;
}

void check_sets(const nn::Matrix& x, const nn::Matrix& y, std::span<const double> sigmas) {
  if (x.rows() < 1 || y.rows() < 1) throw std::invalid_argument("mmd needs non-empty sets");
  if (x.cols() != y.cols()) throw std::invalid_argument("mmd sets differ in dimension");
  if (sigmas.empty()) throw std::invalid_argument("mmd needs at least one bandwidth");
}

}  // namespace

double mmd_biased(const nn::Matrix& x, const nn::Matrix& y, std::span<const double> sigmas) {
  check_sets(x, y, sigmas);
  const nn::Matrix dxx = squared_distances(x, x);
  const nn::Matrix dyy = squared_distances(y, y);
  const nn::Matrix dxy = squared_distances(x, y);
  double total = 0.0;
  for (double s : sigmas) {
    const double g = -1.0 / (2.0 * s * s);
    total += (dxx * g).array().exp().mean() + (dyy * g).array().exp().mean() -
             2.0 * (dxy * g).array().exp().mean();
  }
  return total;
}

double mmd_biased_with_grad(const nn::Matrix& x, const nn::Matrix& y,
                            std::span<const double> sigmas, nn::Matrix& grad_x) {
  check_sets(x, y, sigmas);
  const double n = static_cast<double>(x.rows());
  const double m = static_cast<double>(y.rows());
  const nn::Matrix dxx = squared_distances(x, x);
  const nn::Matrix dyy = squared_distances(y, y);
  const nn::Matrix dxy = squared_distances(x, y);
  grad_x = nn::Matrix::Zero(x.rows(), x.cols());
  double total = 0.0;
  for (double s : sigmas) {
    const double g = -1.0 / (2.0 * s * s);
    const nn::Matrix kxx = (dxx * g).array().exp().matrix();
    const nn::Matrix kyy = (dyy * g).array().exp().matrix();
    const nn::Matrix kxy = (dxy * g).array().exp().matrix();
    total += kxx.mean() + kyy.mean() - 2.0 * kxy.mean();
    // d k(a,b) / da = -k(a,b) (a - b) / sigma^2
    const double inv_s2 = 1.0 / (s * s);
    const nn::Vector rxx = kxx.rowwise().sum();
    const nn::Vector rxy = kxy.rowwise().sum();
    grad_x -= (2.0 * inv_s2 / (n * n)) * (rxx.asDiagonal() * x - kxx * x);
    grad_x += (2.0 * inv_s2 / (n * m)) * (rxy.asDiagonal() * x - kxy * y);
  }
  return total;
}

double median_pairwise_distance(const nn::Matrix& x, Eigen::Index max_rows) {
  const Eigen::Index stride = std::max<Eigen::Index>(1, (x.rows() + max_rows - 1) / max_rows);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < x.rows(); i += stride) rows.push_back(i);
  std::vector<double> d;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) d.push_back((x.row(rows[i]) - x.row(rows[j])).norm());
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0 ? *mid : 1.0;
}

namespace {

struct Prepared {
  int feature_dim = 0;
  int prototype_dim = 0;
  std::vector<int> classes;
};

Prepared check_inputs(const FeaturesByClass& features, const PrototypesByClass& prototypes) {
  if (features.empty()) throw Error(ErrorKind::kTraining, "generator training needs at least one seen class");
  Prepared p;
  p.feature_dim = static_cast<int>(features.begin()->second.cols());
  p.prototype_dim = -1;
  for (const auto& [cls, feats] : features) {
    if (feats.rows() < 1) {
      std::ostringstream msg;
      msg << "seen class " << cls << " has no features";
      throw Error(ErrorKind::kTraining, msg.str());
    }
    if (feats.cols() != p.feature_dim) throw Error(ErrorKind::kTraining, "seen features differ in dimension");
    auto it = prototypes.find(cls);
    if (it == prototypes.end()) {
      std::ostringstream msg;
      msg << "missing prototype for seen class " << cls;
      throw Error(ErrorKind::kConfig, msg.str());
    }
    if (p.prototype_dim < 0) p.prototype_dim = static_cast<int>(it->second.size());
    if (it->second.size() != p.prototype_dim) throw Error(ErrorKind::kConfig, "prototypes differ in dimension");
    p.classes.push_back(cls);
  }
  return p;
}

nn::Matrix conditioned_input(const nn::Matrix& head, const nn::Vector& prototype) {
  nn::Matrix in(head.rows(), head.cols() + prototype.size());
  in.leftCols(head.cols()) = head;
  in.rightCols(prototype.size()) = prototype.transpose().replicate(head.rows(), 1);
  return in;
}

nn::Matrix sample_rows(const nn::Matrix& m, Eigen::Index count, nn::Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(m.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  nn::Matrix out(count, m.cols());
  for (Eigen::Index i = 0; i < count; ++i) out.row(i) = m.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

Generator train_gmmn(const FeaturesByClass& features, const PrototypesByClass& prototypes,
                     const GenConfig& config) {
  config.validate();
  const Prepared p = check_inputs(features, prototypes);
  nn::Rng rng(config.seed);

  Generator gen;
  gen.kind = GeneratorKind::kGmmn;
  gen.noise_dim = config.noise_dim;
  gen.prototype_dim = p.prototype_dim;
  gen.feature_dim = p.feature_dim;
  const std::vector<int> widths{config.noise_dim + p.prototype_dim, config.hidden, p.feature_dim};
  gen.net = nn::Mlp::create(widths, nn::Activation::kRelu, nn::Activation::kIdentity, rng);

  Eigen::Index total_rows = 0;
  for (const auto& [c, f] : features) total_rows += f.rows();
  nn::Matrix pooled(total_rows, p.feature_dim);
  Eigen::Index r = 0;
  for (const auto& [c, f] : features) {
    pooled.middleRows(r, f.rows()) = f;
    r += f.rows();
  }
  const double median = median_pairwise_distance(pooled);
  for (double b : config.bandwidths) gen.sigmas.push_back(b * median);

  nn::AdamState adam;
  adam.learning_rate = config.learning_rate;
  std::vector<int> order = p.classes;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int cls : order) {
      const nn::Matrix& real_all = features.at(cls);
      const Eigen::Index count = std::min<Eigen::Index>(config.batch_size, real_all.rows());
      const nn::Matrix real = sample_rows(real_all, count, rng);
      const nn::Matrix z = nn::gaussian_matrix(count, config.noise_dim, rng);
      nn::MlpCache cache;
      const nn::Matrix fake = nn::mlp_forward(gen.net, conditioned_input(z, prototypes.at(cls)), &cache);
      nn::Matrix grad;
      epoch_loss += mmd_biased_with_grad(fake, real, gen.sigmas, grad);
      const nn::MlpGradients grads = nn::mlp_backward(gen.net, cache, grad);
      const auto spans = grads.spans();
      const auto params = gen.net.parameters();
      nn::adam_step(params, spans, adam);
    }
    gen.loss_trace.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return gen;
}

Generator train_dae(const FeaturesByClass& features, const PrototypesByClass& prototypes,
                    const GenConfig& config) {
  config.validate();
  const Prepared p = check_inputs(features, prototypes);
  nn::Rng rng(config.seed);

  Generator gen;
  gen.kind = GeneratorKind::kDae;
  gen.noise_dim = config.noise_dim;
  gen.prototype_dim = p.prototype_dim;
  gen.feature_dim = p.feature_dim;
  const std::vector<int> enc_widths{p.feature_dim, config.hidden, config.noise_dim};
  const std::vector<int> dec_widths{config.noise_dim + p.prototype_dim, config.hidden, p.feature_dim};
  gen.encoder = nn::Mlp::create(enc_widths, nn::Activation::kRelu, nn::Activation::kIdentity, rng);
  gen.net = nn::Mlp::create(dec_widths, nn::Activation::kRelu, nn::Activation::kIdentity, rng);

  // Flatten to (feature, class) rows so batches mix classes.
  std::vector<std::pair<int, Eigen::Index>> rows;
  for (const auto& [cls, f] : features)
    for (Eigen::Index i = 0; i < f.rows(); ++i) rows.emplace_back(cls, i);

  nn::AdamState adam;
  adam.learning_rate = config.learning_rate;
  std::normal_distribution<double> gauss(0.0, config.dae_noise);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(rows.begin(), rows.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(rows.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto n = static_cast<Eigen::Index>(end - start);
      nn::Matrix clean(n, p.feature_dim);
      nn::Matrix protos(n, p.prototype_dim);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& [cls, row] = rows[start + static_cast<std::size_t>(i)];
        clean.row(i) = features.at(cls).row(row);
        protos.row(i) = prototypes.at(cls).transpose();
      }
      nn::Matrix noisy = clean;
      if (config.dae_noise > 0)
        for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy.data()[i] += gauss(rng);

      nn::MlpCache enc_cache;
      const nn::Matrix latent = nn::mlp_forward(gen.encoder, noisy, &enc_cache);
      nn::Matrix dec_in(n, config.noise_dim + p.prototype_dim);
      dec_in << latent, protos;
      nn::MlpCache dec_cache;
      const nn::Matrix recon = nn::mlp_forward(gen.net, dec_in, &dec_cache);
      const nn::LossResult loss = nn::mean_squared_error(recon, clean);
      epoch_loss += loss.loss;
      ++batches;

      const nn::MlpGradients dec_grads = nn::mlp_backward(gen.net, dec_cache, loss.gradient);
      const nn::MlpGradients enc_grads =
          nn::mlp_backward(gen.encoder, enc_cache, dec_grads.input.leftCols(config.noise_dim));
      std::vector<std::span<double>> params = gen.encoder.parameters();
      std::vector<std::span<const double>> grads = enc_grads.spans();
      for (auto s : gen.net.parameters()) params.push_back(s);
      for (auto s : dec_grads.spans()) grads.push_back(s);
      nn::adam_step(params, grads, adam);
    }
    gen.loss_trace.push_back(batches ? epoch_loss / static_cast<double>(batches) : 0.0);
  }
  return gen;
}

Generator train_generator(GeneratorKind kind, const FeaturesByClass& features,
                          const PrototypesByClass& prototypes, const GenConfig& config) {
  return kind == GeneratorKind::kGmmn ? train_gmmn(features, prototypes, config)
                                      : train_dae(features, prototypes, config);
}

nn::Matrix sample_features(const Generator& gen, const nn::Vector& prototype, int n,
                           std::uint64_t seed) {
  if (!gen.trained()) throw Error(ErrorKind::kTraining, "generator is not trained");
  if (prototype.size() != gen.prototype_dim) {
    std::ostringstream msg;
    msg << "prototype has " << prototype.size() << " dims, generator expects " << gen.prototype_dim;
    throw Error(ErrorKind::kConfig, msg.str());
  }
  if (n < 0) throw std::invalid_argument("negative sample count");
  if (n == 0) return nn::Matrix(0, gen.feature_dim);
  nn::Rng rng(seed);
  const nn::Matrix z = nn::gaussian_matrix(n, gen.noise_dim, rng);
  return nn::mlp_forward(gen.net, conditioned_input(z, prototype));
}

nn::Matrix dae_reconstruct(const Generator& gen, const nn::Matrix& x, const nn::Vector& prototype) {
  if (gen.kind != GeneratorKind::kDae || gen.encoder.empty())
    throw Error(ErrorKind::kTraining, "reconstruction needs a trained DAE generator");
  return nn::mlp_forward(gen.net, conditioned_input(nn::mlp_forward(gen.encoder, x), prototype));
}

Checkpoint to_checkpoint(const Generator& gen) {
  Checkpoint ckpt;
  ckpt.kind = "generator";
  ckpt.meta["generator"] = generator_name(gen.kind);
  ckpt.meta["noise_dim"] = std::to_string(gen.noise_dim);
  ckpt.meta["prototype_dim"] = std::to_string(gen.prototype_dim);
  ckpt.meta["feature_dim"] = std::to_string(gen.feature_dim);
  ckpt.meta["sigmas"] = join_reals(gen.sigmas);
  ckpt.meta["loss_trace"] = join_reals(gen.loss_trace);
  ckpt.nets.emplace_back("net", gen.net);
  if (gen.kind == GeneratorKind::kDae) ckpt.nets.emplace_back("encoder", gen.encoder);
  return ckpt;
}

Generator generator_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "generator")
    throw Error(ErrorKind::kData, "checkpoint kind '" + ckpt.kind + "' is not a generator");
  Generator gen;
  gen.kind = parse_generator(ckpt.require_meta("generator"));
  gen.noise_dim = std::stoi(ckpt.require_meta("noise_dim"));
  gen.prototype_dim = std::stoi(ckpt.require_meta("prototype_dim"));
  gen.feature_dim = std::stoi(ckpt.require_meta("feature_dim"));
  gen.sigmas = split_reals(ckpt.require_meta("sigmas"));
  gen.loss_trace = split_reals(ckpt.require_meta("loss_trace"));
  gen.net = ckpt.net("net");
  if (gen.kind == GeneratorKind::kDae) gen.encoder = ckpt.net("encoder");
  if (gen.net.in_dim() != gen.noise_dim + gen.prototype_dim || gen.net.out_dim() != gen.feature_dim)
    throw Error(ErrorKind::kData, "generator checkpoint dimensions are inconsistent");
  return gen;
}

std::size_t GeneratedSet::count(Provenance p) const {
  return static_cast<std::size_t>(std::count(provenance.begin(), provenance.end(), p));
}

std::map<int, std::int64_t> generation_counts(data::Task task,
                                              const std::map<int, std::int64_t>& seen_frequencies,
                                              const std::vector<int>& unseen,
                                              const TrainsetOptions& options) {
  std::map<int, std::int64_t> counts;
  if (task == data::Task::kClassification) {
    if (options.per_unseen_class < 0) throw Error(ErrorKind::kConfig, "negative generation count");
    for (int u : unseen) counts[u] = options.per_unseen_class;
    return counts;
  }
  if (seen_frequencies.empty())
    throw Error(ErrorKind::kConfig, "segmentation generation counts need seen-class frequencies");
  double seen_total = 0.0;
  for (const auto& [c, f] : seen_frequencies) seen_total += static_cast<double>(f);
  const double mean = seen_total / static_cast<double>(seen_frequencies.size());
  const double all = seen_total + mean * static_cast<double>(unseen.size());
  const double budget = options.budget > 0 ? static_cast<double>(options.budget) : all;
  if (options.budget < 0) throw Error(ErrorKind::kConfig, "negative generation budget");
  for (int u : unseen) counts[u] = std::llround(budget * mean / all);
  return counts;
}

GeneratedSet build_classifier_trainset(Setting setting, const Generator& gen,
                                       const PrototypesByClass& unseen_prototypes,
                                       const FeaturesByClass* real_seen,
                                       const std::map<int, std::int64_t>& seen_frequencies,
                                       data::Task task, const TrainsetOptions& options) {
  if (setting == Setting::kGzsl && (real_seen == nullptr || real_seen->empty()))
    throw Error(ErrorKind::kConfig, "GZSL classifier training set needs real seen features");
  std::vector<int> unseen;
  for (const auto& [u, t] : unseen_prototypes) unseen.push_back(u);
  const auto counts = generation_counts(task, seen_frequencies, unseen, options);

  std::vector<nn::Matrix> blocks;
  GeneratedSet out;
  Eigen::Index rows = 0;
  for (const auto& [u, t] : unseen_prototypes) {
    const int n = static_cast<int>(counts.at(u));
    blocks.push_back(sample_features(gen, t, n, nn::derive_seed(options.seed, static_cast<std::uint64_t>(u))));
    out.labels.insert(out.labels.end(), static_cast<std::size_t>(n), u);
    out.provenance.insert(out.provenance.end(), static_cast<std::size_t>(n), Provenance::kGenerated);
    rows += n;
  }
  if (setting == Setting::kGzsl) {
    for (const auto& [s, f] : *real_seen) {
      if (unseen_prototypes.count(s)) throw Error(ErrorKind::kConfig, "class is both seen and unseen");
      blocks.push_back(f);
      out.labels.insert(out.labels.end(), static_cast<std::size_t>(f.rows()), s);
      out.provenance.insert(out.provenance.end(), static_cast<std::size_t>(f.rows()), Provenance::kReal);
      rows += f.rows();
    }
  }
  out.features.resize(rows, gen.feature_dim);
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    if (b.rows() == 0) continue;
    if (b.cols() != gen.feature_dim) throw Error(ErrorKind::kData, "real seen features differ from generator dim");
    out.features.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  return out;
}

}  // namespace genz3d::generators
