#include "dect/baseline_ep.hpp"

#include <cmath>
#include <stdexcept>

#include "dect/parallel.hpp"

namespace dect {

void EpConfig::validate() const {
  if (!(beta_water >= 0) || !(beta_bone >= 0))
    throw std::invalid_argument("EP regularization weights must be nonnegative");
  if (!(delta_water > 0) || !(delta_bone > 0))
    throw std::invalid_argument("EP deltas must be positive");
  if (iterations < 0) throw std::invalid_argument("EP iteration count must be nonnegative");
}

double ep_potential(double t, double delta) {
  const double u = t / delta;
  return (delta * delta / 3.0) * (std::sqrt(1.0 + 3.0 * u * u) - 1.0);
}

double ep_potential_deriv(double t, double delta) {
  const double u = t / delta;
  return t / std::sqrt(1.0 + 3.0 * u * u);
}

namespace {

// 8-neighborhood offsets, fixed order; differences wrap periodically.
constexpr int kNeighbors[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                  {0, 1},   {1, -1}, {1, 0},  {1, 1}};

struct Workspace {
  int width, height;
  std::int64_t n;
  const AttenuationPair* y;
  const DecompPhysics* physics;
  const EpConfig* cfg;
};

double cost_of(const Workspace& ws, const std::vector<double>& water,
               const std::vector<double>& bone) {
  const Mat22& a0 = ws.physics->mass_atten;
  const double wh = ws.physics->noise_weight[0];
  const double wl = ws.physics->noise_weight[1];
  const int W = ws.width, H = ws.height;

  // fixed tiling keeps the reduction order independent of the worker count
  constexpr std::int64_t kTile = 4096;
  const std::int64_t tiles = (ws.n + kTile - 1) / kTile;
  std::vector<double> partial(static_cast<size_t>(tiles), 0.0);
  parallel_for(tiles, [&](std::int64_t t0, std::int64_t t1) {
    for (std::int64_t t = t0; t < t1; ++t) {
      const std::int64_t lo = t * kTile;
      const std::int64_t hi = std::min(ws.n, lo + kTile);
      double acc = 0.0;
      for (std::int64_t j = lo; j < hi; ++j) {
        const double rw = water[j], rb = bone[j];
        const double rh = ws.y->high.data[j] - (a0.m00 * rw + a0.m01 * rb);
        const double rl = ws.y->low.data[j] - (a0.m10 * rw + a0.m11 * rb);
        acc += 0.5 * (wh * rh * rh + wl * rl * rl);
        const int py = static_cast<int>(j / W);
        const int px = static_cast<int>(j % W);
        for (const auto& d : kNeighbors) {
          const int ny = (py + d[0] + H) % H;
          const int nx = (px + d[1] + W) % W;
          const std::int64_t k = static_cast<std::int64_t>(ny) * W + nx;
          acc += ws.cfg->beta_water * ep_potential(rw - water[k], ws.cfg->delta_water);
          acc += ws.cfg->beta_bone * ep_potential(rb - bone[k], ws.cfg->delta_bone);
        }
      }
      partial[t] = acc;
    }
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

void gradient_of(const Workspace& ws, const std::vector<double>& water,
                 const std::vector<double>& bone, std::vector<double>& grad_water,
                 std::vector<double>& grad_bone) {
  const Mat22& a0 = ws.physics->mass_atten;
  const double wh = ws.physics->noise_weight[0];
  const double wl = ws.physics->noise_weight[1];
  const int W = ws.width, H = ws.height;
  parallel_for(ws.n, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t j = lo; j < hi; ++j) {
      const double rw = water[j], rb = bone[j];
      // A0^T W0 (A0 x - y)
      const double rh = (a0.m00 * rw + a0.m01 * rb) - ws.y->high.data[j];
      const double rl = (a0.m10 * rw + a0.m11 * rb) - ws.y->low.data[j];
      double gw = a0.m00 * wh * rh + a0.m10 * wl * rl;
      double gb = a0.m01 * wh * rh + a0.m11 * wl * rl;
      const int py = static_cast<int>(j / W);
      const int px = static_cast<int>(j % W);
      // each unordered pair shows up twice in the double sum, hence the 2x
      for (const auto& d : kNeighbors) {
        const int ny = (py + d[0] + H) % H;
        const int nx = (px + d[1] + W) % W;
        const std::int64_t k = static_cast<std::int64_t>(ny) * W + nx;
        gw += 2.0 * ws.cfg->beta_water * ep_potential_deriv(rw - water[k], ws.cfg->delta_water);
        gb += 2.0 * ws.cfg->beta_bone * ep_potential_deriv(rb - bone[k], ws.cfg->delta_bone);
      }
      grad_water[j] = gw;
      grad_bone[j] = gb;
    }
  });
}

}  // namespace

double ep_cost(const AttenuationPair& y, const DecompPhysics& physics, const EpConfig& cfg,
               const std::pair<MaterialImage, MaterialImage>& x) {
  Workspace ws{y.high.width, y.high.height, y.high.size(), &y, &physics, &cfg};
  return cost_of(ws, x.first.grid.data, x.second.grid.data);
}

std::pair<std::vector<double>, std::vector<double>> ep_cost_gradient(
    const AttenuationPair& y, const DecompPhysics& physics, const EpConfig& cfg,
    const std::pair<MaterialImage, MaterialImage>& x) {
  Workspace ws{y.high.width, y.high.height, y.high.size(), &y, &physics, &cfg};
  std::vector<double> gw(static_cast<size_t>(ws.n)), gb(static_cast<size_t>(ws.n));
  gradient_of(ws, x.first.grid.data, x.second.grid.data, gw, gb);
  return {std::move(gw), std::move(gb)};
}

EpResult ep_decompose(const AttenuationPair& y, const DecompPhysics& physics, const EpConfig& cfg,
                      const std::pair<MaterialImage, MaterialImage>& init) {
  y.validate();
  physics.validate();
  cfg.validate();
  if (!y.high.same_geometry(init.first.grid) || !y.high.same_geometry(init.second.grid))
    throw std::invalid_argument("ep_decompose initializer is not co-registered");

  Workspace ws{y.high.width, y.high.height, y.high.size(), &y, &physics, &cfg};
  std::vector<double> water = init.first.grid.data;
  std::vector<double> bone = init.second.grid.data;
  std::vector<double> gw(water.size()), gb(bone.size());
  std::vector<double> try_water(water.size()), try_bone(bone.size());

  // Descent step from the curvature bounds: lambda_max of the per-pixel
  // data-fit block plus 2 * sum_m beta_m * |neighborhood| from psi'' <= 1.
  const Mat22 w0 = Mat22::diag(physics.noise_weight[0], physics.noise_weight[1]);
  const Mat22 fisher = physics.mass_atten.transposed() * w0 * physics.mass_atten;
  const double lipschitz =
      fisher.eigenvalues_sym()[1] + 2.0 * (cfg.beta_water + cfg.beta_bone) * 8.0;
  const double base_step = 1.0 / lipschitz;

  EpResult res;
  double cost = cost_of(ws, water, bone);
  if (!std::isfinite(cost)) throw std::runtime_error("EP cost is non-finite at the initializer");
  res.cost_curve.push_back(cost);

  for (int it = 0; it < cfg.iterations; ++it) {
    gradient_of(ws, water, bone, gw, gb);
    double step = base_step;
    for (int back = 0; back <= cfg.max_backtracks; ++back) {
      for (size_t j = 0; j < water.size(); ++j) {
        try_water[j] = water[j] - step * gw[j];
        try_bone[j] = bone[j] - step * gb[j];
      }
      const double try_cost = cost_of(ws, try_water, try_bone);
      if (std::isfinite(try_cost) && try_cost <= cost) {
        water.swap(try_water);
        bone.swap(try_bone);
        cost = try_cost;
        break;
      }
      step *= 0.5;
    }
    // if every backtrack failed the iterate stays put and the cost repeats
    res.cost_curve.push_back(cost);
  }

  res.water = MaterialImage{ImageGrid(ws.width, ws.height, y.high.pixel_size_mm), Material::Water};
  res.bone = MaterialImage{ImageGrid(ws.width, ws.height, y.high.pixel_size_mm), Material::Bone};
  res.water.grid.data = std::move(water);
  res.bone.grid.data = std::move(bone);
  res.water.grid.validate("EP water result");
  res.bone.grid.validate("EP bone result");
  return res;
}

}  // namespace dect
