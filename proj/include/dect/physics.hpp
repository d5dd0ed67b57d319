#pragma once

#include <array>
#include <utility>

#include "dect/image.hpp"
#include "dect/linalg.hpp"

namespace dect {

// Two-material, two-energy decomposition physics. The full system matrices
// are Kronecker products of these 2x2 blocks with the identity, so they are
// never materialized; everything separates per pixel.
struct DecompPhysics {
  // Mass attenuation coefficients (cm^2/g):
  // rows = (high, low) energy, cols = (water, bone) material.
  Mat22 mass_atten;
  // Inverse noise variances at (high, low) energy.
  std::array<double, 2> noise_weight = {1.0, 1.0};

  void validate() const;
};

struct CalibrationInputs {
  std::array<double, 2> mu_high;  // linear attenuation (cm^-1), per material
  std::array<double, 2> mu_low;
  std::array<double, 2> rho;      // density (g/cm^3), per material
};

// mass_atten[energy][material] = mu / rho.
Mat22 calibrate(const CalibrationInputs& inputs);

// Unbiased sample variance over the masked pixels; needs count >= 2.
double estimate_noise_variance(const ImageGrid& grid, const RegionOfInterest& roi);

// Per pixel x_j = A0^-1 y_j. Also the x^(0) initializer everywhere.
std::pair<MaterialImage, MaterialImage> direct_inversion(const AttenuationPair& y,
                                                         const DecompPhysics& physics);

// Closed-form minimizer, per pixel, of
//   1/2 ||y_j - A0 x||^2_W0 + beta ||x - z_j||^2 :
//   x_j = (A0^T W0 A0 + 2 beta I)^-1 (A0^T W0 y_j + 2 beta z_j).
// The 2x2 system is factored once; the per-pixel cost is O(1).
std::pair<MaterialImage, MaterialImage> mbid_update(
    const AttenuationPair& y, const std::pair<MaterialImage, MaterialImage>& z,
    const DecompPhysics& physics, double beta);

}  // namespace dect
