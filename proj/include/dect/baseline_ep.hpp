#pragma once

#include <utility>
#include <vector>

#include "dect/physics.hpp"

namespace dect {

// Edge-preserving baseline: weighted least squares plus a material-wise
// hyperbola penalty over the 8-neighborhood differences (periodic wrap, to
// match the patch modules' boundary convention).
struct EpConfig {
  double beta_water = 256.0;    // 2^8
  double beta_bone = 362.03867196751236;  // 2^8.5
  double delta_water = 0.01;    // g/cm^3
  double delta_bone = 0.02;
  int iterations = 500;
  int max_backtracks = 60;

  void validate() const;
};

// psi(t) = (delta^2/3) (sqrt(1 + 3 (t/delta)^2) - 1); quadratic near zero,
// asymptotically linear.
double ep_potential(double t, double delta);
// psi'(t) = t / sqrt(1 + 3 (t/delta)^2)
double ep_potential_deriv(double t, double delta);

struct EpResult {
  MaterialImage water;
  MaterialImage bone;
  std::vector<double> cost_curve;  // cost at x0 plus one entry per iteration
};

// Gradient descent with step 1/L (L from the curvature bounds of both terms)
// and cost-halving backtracks, so the recorded cost sequence never increases.
EpResult ep_decompose(const AttenuationPair& y, const DecompPhysics& physics,
                      const EpConfig& cfg,
                      const std::pair<MaterialImage, MaterialImage>& init);

// Full objective value at the given images; exposed for testing.
double ep_cost(const AttenuationPair& y, const DecompPhysics& physics, const EpConfig& cfg,
               const std::pair<MaterialImage, MaterialImage>& x);

// Analytic gradient, water then bone; exposed for testing.
std::pair<std::vector<double>, std::vector<double>> ep_cost_gradient(
    const AttenuationPair& y, const DecompPhysics& physics, const EpConfig& cfg,
    const std::pair<MaterialImage, MaterialImage>& x);

}  // namespace dect
