#include "dect/physics.hpp"

#include <cmath>
#include <stdexcept>

#include "dect/parallel.hpp"

namespace dect {

void DecompPhysics::validate() const {
  if (!(noise_weight[0] > 0) || !(noise_weight[1] > 0))
    throw std::runtime_error("noise weights must be positive");
  for (double v : {mass_atten.m00, mass_atten.m01, mass_atten.m10, mass_atten.m11})
    if (!std::isfinite(v)) throw std::runtime_error("mass attenuation matrix has non-finite entries");
}

Mat22 calibrate(const CalibrationInputs& in) {
  for (int m = 0; m < 2; ++m) {
    if (!(in.rho[m] > 0)) throw std::invalid_argument("material density must be positive");
    if (!(in.mu_high[m] > 0) || !(in.mu_low[m] > 0))
      throw std::invalid_argument("linear attenuation coefficients must be positive");
  }
  return {in.mu_high[0] / in.rho[0], in.mu_high[1] / in.rho[1],
          in.mu_low[0] / in.rho[0], in.mu_low[1] / in.rho[1]};
}

double estimate_noise_variance(const ImageGrid& grid, const RegionOfInterest& roi) {
  grid.validate("estimate_noise_variance");
  if (roi.width != grid.width || roi.height != grid.height)
    throw std::invalid_argument("ROI geometry does not match the image");
  if (roi.count < 2) throw std::invalid_argument("ROI too small for a variance estimate");
  double mean = 0.0;
  for (std::int64_t j = 0; j < grid.size(); ++j)
    if (roi.mask[j]) mean += grid.data[j];
  mean /= static_cast<double>(roi.count);
  double acc = 0.0;
  for (std::int64_t j = 0; j < grid.size(); ++j)
    if (roi.mask[j]) {
      const double d = grid.data[j] - mean;
      acc += d * d;
    }
  return acc / static_cast<double>(roi.count - 1);
}

namespace {

std::pair<MaterialImage, MaterialImage> make_outputs(const ImageGrid& like) {
  MaterialImage water{ImageGrid(like.width, like.height, like.pixel_size_mm), Material::Water};
  MaterialImage bone{ImageGrid(like.width, like.height, like.pixel_size_mm), Material::Bone};
  return {std::move(water), std::move(bone)};
}

// 2x2 solve carried in long double; keeps the optimality residual of the
// closed-form update a couple of orders below its acceptance bound even for
// large noise weights.
struct Solve2 {
  long double i00, i01, i10, i11;

  explicit Solve2(const Mat22& m) {
    const long double a = m.m00, b = m.m01, c = m.m10, d = m.m11;
    const long double det = a * d - b * c;
    i00 = d / det;
    i01 = -b / det;
    i10 = -c / det;
    i11 = a / det;
  }

  void apply(long double r0, long double r1, double& x0, double& x1) const {
    x0 = static_cast<double>(i00 * r0 + i01 * r1);
    x1 = static_cast<double>(i10 * r0 + i11 * r1);
  }
};

}  // namespace

std::pair<MaterialImage, MaterialImage> direct_inversion(const AttenuationPair& y,
                                                         const DecompPhysics& physics) {
  y.validate();
  physics.validate();
  const Mat22& a0 = physics.mass_atten;
  if (std::abs(a0.det()) < 1e-12 * a0.frobenius_sq())
    throw std::runtime_error("mass attenuation matrix is singular; cannot invert directly");
  const Solve2 solve(a0);
  auto out = make_outputs(y.high);
  auto& water = out.first.grid.data;
  auto& bone = out.second.grid.data;
  const auto& yh = y.high.data;
  const auto& yl = y.low.data;
  parallel_for(y.high.size(), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t j = lo; j < hi; ++j) solve.apply(yh[j], yl[j], water[j], bone[j]);
  });
  return out;
}

std::pair<MaterialImage, MaterialImage> mbid_update(
    const AttenuationPair& y, const std::pair<MaterialImage, MaterialImage>& z,
    const DecompPhysics& physics, double beta) {
  y.validate();
  physics.validate();
  if (!(beta >= 0)) throw std::invalid_argument("beta must be nonnegative");
  if (!y.high.same_geometry(z.first.grid) || !y.high.same_geometry(z.second.grid))
    throw std::invalid_argument("mbid_update inputs are not co-registered");

  const Mat22& a0 = physics.mass_atten;
  const Mat22 w0 = Mat22::diag(physics.noise_weight[0], physics.noise_weight[1]);
  const Mat22 atw = a0.transposed() * w0;
  const Mat22 system = atw * a0 + Mat22::diag(2.0 * beta, 2.0 * beta);
  if (std::abs(system.det()) < 1e-12 * system.frobenius_sq())
    throw std::runtime_error("singular MBID system (beta = 0 with singular physics)");
  const Solve2 solve(system);

  auto out = make_outputs(y.high);
  auto& water = out.first.grid.data;
  auto& bone = out.second.grid.data;
  const auto& yh = y.high.data;
  const auto& yl = y.low.data;
  const auto& zw = z.first.grid.data;
  const auto& zb = z.second.grid.data;
  const long double b2 = 2.0L * beta;
  parallel_for(y.high.size(), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t j = lo; j < hi; ++j) {
      const long double r0 = static_cast<long double>(atw.m00) * yh[j] +
                             static_cast<long double>(atw.m01) * yl[j] + b2 * zw[j];
      const long double r1 = static_cast<long double>(atw.m10) * yh[j] +
                             static_cast<long double>(atw.m11) * yl[j] + b2 * zb[j];
      solve.apply(r0, r1, water[j], bone[j]);
    }
  });
  return out;
}

}  // namespace dect
