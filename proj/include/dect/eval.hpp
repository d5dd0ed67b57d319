#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dect/bcdnet.hpp"
#include "dect/image.hpp"

namespace dect {

// Root-mean-square density error over the ROI (g/cm^3).
double rmse(const MaterialImage& estimate, const MaterialImage& truth,
            const RegionOfInterest& roi);

// Default ROI: pixels where the total true density is positive, dilated by
// the given Chebyshev radius.
RegionOfInterest tissue_roi(const MaterialImage& water, const MaterialImage& bone,
                            int dilate_px = 2);

RegionOfInterest full_roi(int width, int height);

struct MethodResult {
  std::string name;
  MaterialImage water;
  MaterialImage bone;
};

// CSV table of per-method, per-material RMSE in 1e-3 g/cm^3 units.
std::string comparison_csv(const std::vector<MethodResult>& methods,
                           const MaterialImage& truth_water, const MaterialImage& truth_bone,
                           const RegionOfInterest& roi);

// CSV rows (iteration, rmse_water, rmse_bone), one per trace entry.
std::string trace_csv(const DecompositionTrace& trace, const MaterialImage& truth_water,
                      const MaterialImage& truth_bone, const RegionOfInterest& roi);

}  // namespace dect
