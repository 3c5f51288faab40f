// Parametric synthetic point clouds: single shapes for classification and
// multi-object scenes on a ground plane (with a wall) for segmentation.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "genz3d/data.hpp"
#include "genz3d/error.hpp"

namespace genz3d::data {

namespace {

constexpr double kPi = std::numbers::pi;

struct Point {
  double x, y, z;
};

// Size parameters drawn once per object instance.
struct ShapeParams {
  ShapeFamily family;
  double a = 0, b = 0, c = 0;  // family-specific (radius, extent, height)

  double height() const {
    switch (family) {
      case ShapeFamily::kSphere: return 2 * a;
      case ShapeFamily::kBox: return c;
      case ShapeFamily::kCylinder: return b;
      case ShapeFamily::kCone: return b;
      case ShapeFamily::kTorus: return 2 * b;
      case ShapeFamily::kPlane: return 0;
      case ShapeFamily::kWall: return b;
    }
    return 0;
  }
  double footprint() const {
    switch (family) {
      case ShapeFamily::kSphere: return a;
      case ShapeFamily::kBox: return 0.5 * std::hypot(a, b);
      case ShapeFamily::kCylinder: return a;
      case ShapeFamily::kCone: return a;
      case ShapeFamily::kTorus: return a + b;
      case ShapeFamily::kPlane: return 0.5 * std::hypot(a, a);
      case ShapeFamily::kWall: return 0.5 * a;
    }
    return 0;
  }
};

double uniform(nn::Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

ShapeParams draw_params(ShapeFamily f, double scale, nn::Rng& rng) {
  ShapeParams p{f};
  switch (f) {
    case ShapeFamily::kSphere: p.a = uniform(rng, 0.30, 0.45); break;
    case ShapeFamily::kBox:
      p.a = uniform(rng, 0.5, 0.8);
      p.b = uniform(rng, 0.5, 0.8);
      p.c = uniform(rng, 0.4, 0.8);
      break;
    case ShapeFamily::kCylinder:
      p.a = uniform(rng, 0.20, 0.30);
      p.b = uniform(rng, 0.8, 1.2);
      break;
    case ShapeFamily::kCone:
      p.a = uniform(rng, 0.30, 0.45);
      p.b = uniform(rng, 0.7, 1.0);
      break;
    case ShapeFamily::kTorus:
      p.a = uniform(rng, 0.35, 0.45);
      p.b = uniform(rng, 0.10, 0.15);
      break;
    case ShapeFamily::kPlane: p.a = uniform(rng, 0.8, 1.2); break;
    case ShapeFamily::kWall:
      p.a = uniform(rng, 0.8, 1.2);
      p.b = uniform(rng, 0.8, 1.2);
      break;
  }
  p.a *= scale;
  p.b *= scale;
  p.c *= scale;
  return p;
}

// Surface sample in the object frame: base centered at the origin, resting
// on z = 0.
Point sample_surface(const ShapeParams& p, nn::Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  switch (p.family) {
    case ShapeFamily::kSphere: {
      double x = normal(rng), y = normal(rng), z = normal(rng);
      const double n = std::max(1e-12, std::sqrt(x * x + y * y + z * z));
      return {p.a * x / n, p.a * y / n, p.a + p.a * z / n};
    }
    case ShapeFamily::kBox: {
      const double w = p.a, d = p.b, h = p.c;
      const double areas[6] = {w * d, w * d, w * h, w * h, d * h, d * h};
      const double total = w * d * 2 + w * h * 2 + d * h * 2;
      double r = uniform(rng, 0.0, total);
      int face = 0;
      while (face < 5 && r > areas[face]) r -= areas[face++];
      const double u = uniform(rng, -0.5, 0.5), v = uniform(rng, -0.5, 0.5);
      switch (face) {
        case 0: return {u * w, v * d, 0.0};
        case 1: return {u * w, v * d, h};
        case 2: return {u * w, -0.5 * d, (v + 0.5) * h};
        case 3: return {u * w, 0.5 * d, (v + 0.5) * h};
        case 4: return {-0.5 * w, u * d, (v + 0.5) * h};
        default: return {0.5 * w, u * d, (v + 0.5) * h};
      }
    }
    case ShapeFamily::kCylinder: {
      const double lateral = 2 * kPi * p.a * p.b, cap = kPi * p.a * p.a;
      const double t = uniform(rng, 0.0, 2 * kPi);
      if (uniform(rng, 0.0, lateral + cap) < lateral)
        return {p.a * std::cos(t), p.a * std::sin(t), uniform(rng, 0.0, p.b)};
      const double r = p.a * std::sqrt(uniform(rng, 0.0, 1.0));
      return {r * std::cos(t), r * std::sin(t), p.b};
    }
    case ShapeFamily::kCone: {
      // Uniform on the lateral surface: distance from the apex ~ sqrt(U).
      const double u = std::sqrt(uniform(rng, 0.0, 1.0));
      const double t = uniform(rng, 0.0, 2 * kPi);
      return {p.a * u * std::cos(t), p.a * u * std::sin(t), p.b * (1.0 - u)};
    }
    case ShapeFamily::kTorus: {
      // Rejection sampling on the tube angle gives a uniform surface density.
      const double big = p.a, small = p.b;
      for (;;) {
        const double phi = uniform(rng, 0.0, 2 * kPi);
        if (uniform(rng, 0.0, big + small) <= big + small * std::cos(phi)) {
          const double t = uniform(rng, 0.0, 2 * kPi);
          const double ring = big + small * std::cos(phi);
          return {ring * std::cos(t), ring * std::sin(t), small + small * std::sin(phi)};
        }
      }
    }
    case ShapeFamily::kPlane:
      return {uniform(rng, -0.5, 0.5) * p.a, uniform(rng, -0.5, 0.5) * p.a, 0.0};
    case ShapeFamily::kWall:
      return {uniform(rng, -0.5, 0.5) * p.a, 0.0, uniform(rng, 0.0, 1.0) * p.b};
  }
  return {0, 0, 0};
}

struct Instance {
  std::vector<Point> points;
  double footprint = 0;
};

// A roster object in its own frame (yaw applied, base at the origin).
Instance make_object(const ClassSpec& spec, int n_points, nn::Rng& rng) {
  Instance inst;
  const ShapeParams base = draw_params(spec.base, 1.0, rng);
  inst.footprint = base.footprint();
  if (!spec.rider) {
    for (int i = 0; i < n_points; ++i) inst.points.push_back(sample_surface(base, rng));
  } else {
    const ShapeParams rider = draw_params(*spec.rider, 0.55, rng);
    inst.footprint = std::max(inst.footprint, rider.footprint());
    const int n_base = (n_points * 3) / 5;
    for (int i = 0; i < n_base; ++i) inst.points.push_back(sample_surface(base, rng));
    const double lift = base.height();
    for (int i = n_base; i < n_points; ++i) {
      Point q = sample_surface(rider, rng);
      q.z += lift;
      inst.points.push_back(q);
    }
  }
  const double yaw = uniform(rng, 0.0, 2 * kPi);
  const double c = std::cos(yaw), s = std::sin(yaw);
  for (auto& q : inst.points) q = {c * q.x - s * q.y, s * q.x + c * q.y, q.z};
  return inst;
}

void append(Scene& scene, std::vector<Point>& buffer, const std::vector<Point>& pts, double dx,
            double dy, int label, int instance) {
  for (const auto& q : pts) {
    buffer.push_back({q.x + dx, q.y + dy, q.z});
    scene.labels.push_back(label);
    scene.instances.push_back(instance);
  }
}

void finalize(Scene& scene, const std::vector<Point>& buffer, double jitter, nn::Rng& rng) {
  std::normal_distribution<double> noise(0.0, jitter > 0 ? jitter : 1.0);
  scene.points.resize(static_cast<Eigen::Index>(buffer.size()), 3);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    scene.points(r, 0) = buffer[i].x + (jitter > 0 ? noise(rng) : 0.0);
    scene.points(r, 1) = buffer[i].y + (jitter > 0 ? noise(rng) : 0.0);
    scene.points(r, 2) = buffer[i].z + (jitter > 0 ? noise(rng) : 0.0);
  }
}

}  // namespace

std::string family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kSphere: return "sphere";
    case ShapeFamily::kBox: return "box";
    case ShapeFamily::kCylinder: return "cylinder";
    case ShapeFamily::kCone: return "cone";
    case ShapeFamily::kTorus: return "torus";
    case ShapeFamily::kPlane: return "plane";
    case ShapeFamily::kWall: return "wall";
  }
  return "sphere";
}

ShapeFamily parse_family(const std::string& name) {
  for (auto f : {ShapeFamily::kSphere, ShapeFamily::kBox, ShapeFamily::kCylinder,
                 ShapeFamily::kCone, ShapeFamily::kTorus, ShapeFamily::kPlane,
                 ShapeFamily::kWall})
    if (family_name(f) == name) return f;
  throw Error(ErrorKind::kConfig, "unknown shape family '" + name + "'");
}

ClassSpec parse_class_spec(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
    throw Error(ErrorKind::kConfig, "class spec '" + text + "' must look like name=family[+rider]");
  ClassSpec spec;
  spec.name = text.substr(0, eq);
  const std::string shape = text.substr(eq + 1);
  const auto plus = shape.find('+');
  spec.base = parse_family(shape.substr(0, plus));
  if (plus != std::string::npos) {
    spec.rider = parse_family(shape.substr(plus + 1));
    if (spec.structural() || *spec.rider == ShapeFamily::kPlane ||
        *spec.rider == ShapeFamily::kWall)
      throw Error(ErrorKind::kConfig, "class '" + spec.name + "': planes and walls cannot be composites");
  }
  return spec;
}

std::vector<ClassSpec> parse_roster(const std::string& comma_separated) {
  std::vector<ClassSpec> roster;
  std::stringstream ss(comma_separated);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (!tok.empty()) roster.push_back(parse_class_spec(tok));
  }
  return roster;
}

std::string format_roster(const std::vector<ClassSpec>& roster) {
  std::string out;
  for (std::size_t i = 0; i < roster.size(); ++i) {
    if (i) out += ',';
    out += roster[i].name + "=" + family_name(roster[i].base);
    if (roster[i].rider) out += "+" + family_name(*roster[i].rider);
  }
  return out;
}

std::vector<ClassSpec> default_roster() {
  return parse_roster(
      "ground=plane,wall=wall,sphere=sphere,box=box,cylinder=cylinder,cone=cone,torus=torus,"
      "ridden_box=box+sphere");
}

SynthConfig default_synth_config() {
  SynthConfig c;
  c.roster = default_roster();
  return c;
}

void SynthConfig::validate() const {
  if (roster.size() < 2) throw Error(ErrorKind::kConfig, "synthetic roster needs at least 2 classes");
  std::set<std::string> names;
  for (const auto& c : roster) {
    if (c.name.empty() || c.name.find_first_of(" \t,=") != std::string::npos)
      throw Error(ErrorKind::kConfig, "invalid class name '" + c.name + "'");
    if (!names.insert(c.name).second)
      throw Error(ErrorKind::kConfig, "duplicate class '" + c.name + "' in roster");
  }
  if (!(jitter >= 0.0)) throw Error(ErrorKind::kConfig, "jitter must be >= 0");
  if (points_per_object < 1 || points_per_structure < 1)
    throw Error(ErrorKind::kConfig, "point counts must be positive");
  if (objects_per_scene < 0) throw Error(ErrorKind::kConfig, "objects per scene must be >= 0");
  if (!(scene_extent > 0.0)) throw Error(ErrorKind::kConfig, "scene extent must be positive");
}

Dataset generate_synthetic(const SynthConfig& config, Task task, int count, std::uint64_t seed) {
  config.validate();
  if (count < 0) throw Error(ErrorKind::kConfig, "scene count must be >= 0");
  Dataset ds;
  ds.task = task;
  for (const auto& c : config.roster) ds.class_names.push_back(c.name);

  std::vector<int> object_classes, structural_classes;
  for (std::size_t i = 0; i < config.roster.size(); ++i)
    (config.roster[i].structural() ? structural_classes : object_classes)
        .push_back(static_cast<int>(i));
  if (task == Task::kSegmentation && config.objects_per_scene > 0 && object_classes.empty())
    throw Error(ErrorKind::kConfig, "segmentation scenes need at least one non-structural class");

  nn::Rng rng(seed);
  const int n_classes = ds.num_classes();
  for (int s = 0; s < count; ++s) {
    Scene scene;
    std::vector<Point> buffer;
    if (task == Task::kClassification) {
      // Balanced: consecutive blocks of n_classes clouds cover every class once.
      const int label = s % n_classes;
      Instance inst = make_object(config.roster[static_cast<std::size_t>(label)],
                                  config.points_per_object, rng);
      append(scene, buffer, inst.points, 0, 0, label, 0);
      scene.instances.clear();
    } else {
      const double half = 0.5 * config.scene_extent;
      int instance = 0;
      for (int c : structural_classes) {
        const auto& spec = config.roster[static_cast<std::size_t>(c)];
        std::vector<Point> pts;
        for (int i = 0; i < config.points_per_structure; ++i) {
          if (spec.base == ShapeFamily::kPlane) {
            pts.push_back({uniform(rng, -half, half), uniform(rng, -half, half), 0.0});
          } else {
            pts.push_back({uniform(rng, -half, half), half, uniform(rng, 0.0, 1.5)});
          }
        }
        append(scene, buffer, pts, 0, 0, c, instance++);
      }
      struct Placed {
        double x, y, r;
      };
      std::vector<Placed> placed;
      constexpr double kMargin = 0.1;
      for (int o = 0; o < config.objects_per_scene; ++o) {
        const int label = object_classes[std::uniform_int_distribution<std::size_t>(
            0, object_classes.size() - 1)(rng)];
        Instance inst =
            make_object(config.roster[static_cast<std::size_t>(label)], config.points_per_object, rng);
        const double lim = half - inst.footprint - kMargin;
        bool ok = false;
        double x = 0, y = 0;
        for (int attempt = 0; attempt < 200 && lim > 0; ++attempt) {
          x = uniform(rng, -lim, lim);
          y = uniform(rng, -lim, lim);
          ok = std::all_of(placed.begin(), placed.end(), [&](const Placed& p) {
            return std::hypot(p.x - x, p.y - y) >= p.r + inst.footprint + kMargin;
          });
          if (ok) break;
        }
        if (!ok) {
          std::ostringstream msg;
          msg << "impossible packing: scene " << s << " could not place object " << o + 1 << " of "
              << config.objects_per_scene << " (class '" << ds.class_names[static_cast<std::size_t>(label)]
              << "', footprint radius " << inst.footprint << " m) on a " << config.scene_extent
              << " m ground";
          throw Error(ErrorKind::kConfig, msg.str());
        }
        placed.push_back({x, y, inst.footprint});
        append(scene, buffer, inst.points, x, y, label, instance++);
      }
    }
    finalize(scene, buffer, config.jitter, rng);
    if (task == Task::kClassification) scene.instances.clear();
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

}  // namespace genz3d::data
