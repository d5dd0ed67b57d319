#include "dect/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dect/parallel.hpp"
#include "dect/rng.hpp"
#include "json.hpp"

namespace dect {

namespace {

using nlohmann::json;

const char* shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::Disk: return "disk";
    case ShapeKind::Annulus: return "annulus";
    case ShapeKind::Rectangle: return "rectangle";
  }
  throw std::logic_error("unknown shape");
}

ShapeKind shape_from_name(const std::string& s) {
  if (s == "disk") return ShapeKind::Disk;
  if (s == "annulus") return ShapeKind::Annulus;
  if (s == "rectangle") return ShapeKind::Rectangle;
  throw std::invalid_argument("unknown shape: " + s);
}

// Signed distance to the primitive boundary (negative inside); the linear
// edge band turns it into a coverage weight in [0, 1].
double coverage(const Primitive& p, double x, double y) {
  double dist = 0.0;
  switch (p.shape) {
    case ShapeKind::Disk: {
      const double nx = (x - p.center_x) / p.radius_x;
      const double ny = (y - p.center_y) / p.radius_y;
      const double rn = std::sqrt(nx * nx + ny * ny);
      // scale back to pixels with the mean radius so the band width is metric-ish
      dist = (rn - 1.0) * 0.5 * (p.radius_x + p.radius_y);
      break;
    }
    case ShapeKind::Annulus: {
      const double nx = (x - p.center_x) / p.radius_x;
      const double ny = (y - p.center_y) / p.radius_y;
      const double mean_r = 0.5 * (p.radius_x + p.radius_y);
      const double rp = std::sqrt(nx * nx + ny * ny) * mean_r;
      const double outer = mean_r;
      const double inner = mean_r - p.thickness;
      dist = std::max(rp - outer, inner - rp);
      break;
    }
    case ShapeKind::Rectangle: {
      const double dx = std::abs(x - p.center_x) - p.half_width;
      const double dy = std::abs(y - p.center_y) - p.half_height;
      dist = std::max(dx, dy);
      break;
    }
  }
  if (p.edge_width <= 0) return dist <= 0 ? 1.0 : 0.0;
  return std::clamp(0.5 - dist / p.edge_width, 0.0, 1.0);
}

}  // namespace

void PhantomSpec::validate() const {
  if (size < 1) throw std::invalid_argument("phantom size must be >= 1");
  if (!(pixel_size_mm > 0)) throw std::invalid_argument("pixel size must be positive");
  if (background_water < 0 || background_bone < 0)
    throw std::invalid_argument("background densities must be nonnegative");
  for (const auto& p : primitives) {
    if (p.density < 0) throw std::invalid_argument("primitive densities must be nonnegative");
    switch (p.shape) {
      case ShapeKind::Disk:
        if (!(p.radius_x > 0) || !(p.radius_y > 0))
          throw std::invalid_argument("disk radii must be positive");
        break;
      case ShapeKind::Annulus:
        if (!(p.radius_x > 0) || !(p.radius_y > 0) || !(p.thickness > 0))
          throw std::invalid_argument("annulus needs positive radii and thickness");
        break;
      case ShapeKind::Rectangle:
        if (!(p.half_width > 0) || !(p.half_height > 0))
          throw std::invalid_argument("rectangle extents must be positive");
        break;
    }
  }
}

PhantomSpec PhantomSpec::desk_default(int size) {
  PhantomSpec spec;
  spec.size = size;
  const double s = static_cast<double>(size);
  const double cx = 0.5 * s, cy = 0.52 * s;
  auto disk = [](Material m, double density, double x, double y, double rx, double ry) {
    Primitive p;
    p.shape = ShapeKind::Disk;
    p.material = m;
    p.density = density;
    p.center_x = x;
    p.center_y = y;
    p.radius_x = rx;
    p.radius_y = ry;
    return p;
  };
  // soft-tissue ellipse
  spec.primitives.push_back(disk(Material::Water, 1.0, cx, cy, 0.34 * s, 0.30 * s));
  // skull-like ring
  Primitive ring;
  ring.shape = ShapeKind::Annulus;
  ring.material = Material::Bone;
  ring.density = 1.6;
  ring.center_x = cx;
  ring.center_y = cy;
  ring.radius_x = 0.38 * s;
  ring.radius_y = 0.34 * s;
  ring.thickness = 0.035 * s;
  spec.primitives.push_back(ring);
  // interior inserts
  spec.primitives.push_back(disk(Material::Bone, 0.55, cx - 0.12 * s, cy - 0.08 * s, 0.045 * s, 0.045 * s));
  spec.primitives.push_back(disk(Material::Bone, 0.75, cx + 0.10 * s, cy + 0.02 * s, 0.03 * s, 0.03 * s));
  spec.primitives.push_back(disk(Material::Water, 1.08, cx + 0.06 * s, cy - 0.12 * s, 0.06 * s, 0.05 * s));
  spec.primitives.push_back(disk(Material::Water, 0.92, cx - 0.05 * s, cy + 0.12 * s, 0.07 * s, 0.05 * s));
  Primitive slab;
  slab.shape = ShapeKind::Rectangle;
  slab.material = Material::Water;
  slab.density = 1.04;
  slab.center_x = cx + 0.16 * s;
  slab.center_y = cy + 0.14 * s;
  slab.half_width = 0.05 * s;
  slab.half_height = 0.03 * s;
  spec.primitives.push_back(slab);
  return spec;
}

PhantomSpec PhantomSpec::sample(int size, std::uint64_t seed) {
  PhantomSpec spec;
  spec.size = size;
  spec.seed = seed;
  Rng rng(derive_seed(seed, 0x70686E746DULL));
  const double s = static_cast<double>(size);
  const double cx = s * rng.uniform(0.46, 0.54);
  const double cy = s * rng.uniform(0.48, 0.56);
  const double body_rx = s * rng.uniform(0.30, 0.36);
  const double body_ry = s * rng.uniform(0.26, 0.32);

  Primitive body;
  body.shape = ShapeKind::Disk;
  body.material = Material::Water;
  body.density = rng.uniform(0.96, 1.04);
  body.center_x = cx;
  body.center_y = cy;
  body.radius_x = body_rx;
  body.radius_y = body_ry;
  spec.primitives.push_back(body);

  Primitive ring;
  ring.shape = ShapeKind::Annulus;
  ring.material = Material::Bone;
  ring.density = rng.uniform(1.3, 1.8);
  ring.center_x = cx;
  ring.center_y = cy;
  ring.radius_x = body_rx + s * rng.uniform(0.03, 0.05);
  ring.radius_y = body_ry + s * rng.uniform(0.03, 0.05);
  ring.thickness = s * rng.uniform(0.025, 0.045);
  spec.primitives.push_back(ring);

  const int bone_inserts = rng.uniform_int(2, 4);
  for (int i = 0; i < bone_inserts; ++i) {
    Primitive p;
    p.shape = ShapeKind::Disk;
    p.material = Material::Bone;
    p.density = rng.uniform(0.4, 0.9);
    const double ang = rng.uniform(0.0, 6.283185307179586);
    const double rad = rng.uniform(0.15, 0.6);
    p.center_x = cx + rad * body_rx * std::cos(ang);
    p.center_y = cy + rad * body_ry * std::sin(ang);
    p.radius_x = s * rng.uniform(0.02, 0.05);
    p.radius_y = p.radius_x * rng.uniform(0.8, 1.25);
    spec.primitives.push_back(p);
  }
  const int soft_inserts = rng.uniform_int(1, 3);
  for (int i = 0; i < soft_inserts; ++i) {
    Primitive p;
    p.shape = ShapeKind::Disk;
    p.material = Material::Water;
    p.density = rng.uniform(0.85, 1.15);
    const double ang = rng.uniform(0.0, 6.283185307179586);
    const double rad = rng.uniform(0.1, 0.55);
    p.center_x = cx + rad * body_rx * std::cos(ang);
    p.center_y = cy + rad * body_ry * std::sin(ang);
    p.radius_x = s * rng.uniform(0.04, 0.08);
    p.radius_y = p.radius_x * rng.uniform(0.7, 1.3);
    spec.primitives.push_back(p);
  }
  return spec;
}

PhantomSpec phantom_spec_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error("phantom spec is not valid JSON: " + std::string(e.what()));
  }
  PhantomSpec spec;
  try {
    spec.size = j.value("size", 128);
    spec.pixel_size_mm = j.value("pixel_size_mm", 1.0);
    spec.seed = j.value("seed", static_cast<std::uint64_t>(0));
    spec.background_water = j.value("background_water", 0.0);
    spec.background_bone = j.value("background_bone", 0.0);
    for (const auto& pj : j.value("primitives", json::array())) {
      Primitive p;
      p.shape = shape_from_name(pj.at("shape").get<std::string>());
      const std::string mat = pj.at("material").get<std::string>();
      if (mat != "water" && mat != "bone")
        throw std::runtime_error("primitive material must be water or bone");
      p.material = mat == "water" ? Material::Water : Material::Bone;
      p.density = pj.at("density").get<double>();
      p.center_x = pj.at("center_x").get<double>();
      p.center_y = pj.at("center_y").get<double>();
      if (pj.contains("radius")) {
        p.radius_x = p.radius_y = pj.at("radius").get<double>();
      } else {
        p.radius_x = pj.value("radius_x", 0.0);
        p.radius_y = pj.value("radius_y", 0.0);
      }
      p.thickness = pj.value("thickness", 0.0);
      p.half_width = pj.value("half_width", 0.0);
      p.half_height = pj.value("half_height", 0.0);
      p.edge_width = pj.value("edge_width", 0.0);
      spec.primitives.push_back(p);
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("phantom spec field error: " + std::string(e.what()));
  }
  spec.validate();
  return spec;
}

std::string phantom_spec_to_json_text(const PhantomSpec& spec) {
  json j;
  j["size"] = spec.size;
  j["pixel_size_mm"] = spec.pixel_size_mm;
  j["seed"] = spec.seed;
  j["background_water"] = spec.background_water;
  j["background_bone"] = spec.background_bone;
  j["primitives"] = json::array();
  for (const auto& p : spec.primitives) {
    json pj;
    pj["shape"] = shape_name(p.shape);
    pj["material"] = material_name(p.material);
    pj["density"] = p.density;
    pj["center_x"] = p.center_x;
    pj["center_y"] = p.center_y;
    if (p.shape != ShapeKind::Rectangle) {
      pj["radius_x"] = p.radius_x;
      pj["radius_y"] = p.radius_y;
    }
    if (p.shape == ShapeKind::Annulus) pj["thickness"] = p.thickness;
    if (p.shape == ShapeKind::Rectangle) {
      pj["half_width"] = p.half_width;
      pj["half_height"] = p.half_height;
    }
    if (p.edge_width > 0) pj["edge_width"] = p.edge_width;
    j["primitives"].push_back(pj);
  }
  return j.dump(2);
}

std::pair<MaterialImage, MaterialImage> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  MaterialImage water{ImageGrid(spec.size, spec.size, spec.pixel_size_mm), Material::Water};
  MaterialImage bone{ImageGrid(spec.size, spec.size, spec.pixel_size_mm), Material::Bone};
  std::fill(water.grid.data.begin(), water.grid.data.end(), spec.background_water);
  std::fill(bone.grid.data.begin(), bone.grid.data.end(), spec.background_bone);

  parallel_for(water.grid.size(), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t j = lo; j < hi; ++j) {
      const double x = static_cast<double>(j % spec.size) + 0.5;
      const double y = static_cast<double>(j / spec.size) + 0.5;
      double w = spec.background_water;
      double b = spec.background_bone;
      for (const auto& p : spec.primitives) {
        const double cov = coverage(p, x, y);
        if (cov <= 0) continue;
        if (p.material == Material::Water)
          w = (1.0 - cov) * w + cov * p.density;
        else
          b = (1.0 - cov) * b + cov * p.density;
      }
      water.grid.data[j] = w;
      bone.grid.data[j] = b;
    }
  });
  return {std::move(water), std::move(bone)};
}

AttenuationPair synthesize_measurements(const MaterialImage& water, const MaterialImage& bone,
                                        const DecompPhysics& physics, const NoiseSpec& noise) {
  if (!water.grid.same_geometry(bone.grid))
    throw std::invalid_argument("synthesize_measurements: images are not co-registered");
  if (noise.sigma_high < 0 || noise.sigma_low < 0)
    throw std::invalid_argument("noise sigmas must be nonnegative");
  physics.validate();
  const Mat22& a0 = physics.mass_atten;

  AttenuationPair y;
  y.high = ImageGrid(water.grid.width, water.grid.height, water.grid.pixel_size_mm);
  y.low = ImageGrid(water.grid.width, water.grid.height, water.grid.pixel_size_mm);
  parallel_for(water.grid.size(), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t j = lo; j < hi; ++j) {
      const double w = water.grid.data[j];
      const double b = bone.grid.data[j];
      double nh = 0.0, nl = 0.0;
      if (noise.sigma_high > 0)
        nh = noise.sigma_high * counter_gaussian(noise.seed, static_cast<std::uint64_t>(2 * j));
      if (noise.sigma_low > 0)
        nl = noise.sigma_low * counter_gaussian(noise.seed, static_cast<std::uint64_t>(2 * j + 1));
      y.high.data[j] = a0.m00 * w + a0.m01 * b + nh;
      y.low.data[j] = a0.m10 * w + a0.m11 * b + nl;
    }
  });
  return y;
}

std::array<double, 2> noise_weights(const NoiseSpec& noise) {
  auto weight = [](double sigma) { return sigma > 0 ? 1.0 / (sigma * sigma) : 1.0; };
  return {weight(noise.sigma_high), weight(noise.sigma_low)};
}

}  // namespace dect
