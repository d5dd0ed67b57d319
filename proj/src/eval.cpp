#include "dect/eval.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace dect {

double rmse(const MaterialImage& estimate, const MaterialImage& truth,
            const RegionOfInterest& roi) {
  if (!estimate.grid.same_geometry(truth.grid))
    throw std::invalid_argument("rmse: images are not co-registered");
  if (roi.width != estimate.grid.width || roi.height != estimate.grid.height)
    throw std::invalid_argument("rmse: ROI geometry mismatch");
  if (roi.count < 1) throw std::invalid_argument("rmse: empty ROI");
  double acc = 0.0;
  for (std::int64_t j = 0; j < estimate.grid.size(); ++j)
    if (roi.mask[j]) {
      const double d = estimate.grid.data[j] - truth.grid.data[j];
      acc += d * d;
    }
  return std::sqrt(acc / static_cast<double>(roi.count));
}

RegionOfInterest tissue_roi(const MaterialImage& water, const MaterialImage& bone,
                            int dilate_px) {
  if (!water.grid.same_geometry(bone.grid))
    throw std::invalid_argument("tissue_roi: images are not co-registered");
  const int W = water.grid.width, H = water.grid.height;
  std::vector<std::uint8_t> mask(static_cast<size_t>(W) * H, 0);
  for (std::int64_t j = 0; j < water.grid.size(); ++j)
    mask[j] = (water.grid.data[j] + bone.grid.data[j]) > 0 ? 1 : 0;
  for (int pass = 0; pass < dilate_px; ++pass) {
    std::vector<std::uint8_t> grown = mask;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (mask[static_cast<size_t>(y) * W + x]) continue;
        bool hit = false;
        for (int dy = -1; dy <= 1 && !hit; ++dy)
          for (int dx = -1; dx <= 1 && !hit; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            hit = mask[static_cast<size_t>(ny) * W + nx] != 0;
          }
        if (hit) grown[static_cast<size_t>(y) * W + x] = 1;
      }
    mask.swap(grown);
  }
  return RegionOfInterest::from_mask(W, H, std::move(mask));
}

RegionOfInterest full_roi(int width, int height) {
  return RegionOfInterest::from_mask(width, height,
                                     std::vector<std::uint8_t>(static_cast<size_t>(width) * height, 1));
}

std::string comparison_csv(const std::vector<MethodResult>& methods,
                           const MaterialImage& truth_water, const MaterialImage& truth_bone,
                           const RegionOfInterest& roi) {
  std::string out = "method,rmse_water_1e-3_g_cm3,rmse_bone_1e-3_g_cm3\n";
  char buf[256];
  for (const auto& m : methods) {
    const double w = 1e3 * rmse(m.water, truth_water, roi);
    const double b = 1e3 * rmse(m.bone, truth_bone, roi);
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f\n", m.name.c_str(), w, b);
    out += buf;
  }
  return out;
}

std::string trace_csv(const DecompositionTrace& trace, const MaterialImage& truth_water,
                      const MaterialImage& truth_bone, const RegionOfInterest& roi) {
  std::string out = "iteration,rmse_water,rmse_bone\n";
  char buf[128];
  for (size_t i = 0; i < trace.iterates.size(); ++i) {
    const double w = rmse(trace.iterates[i].first, truth_water, roi);
    const double b = rmse(trace.iterates[i].second, truth_bone, roi);
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", i, w, b);
    out += buf;
  }
  return out;
}

}  // namespace dect
