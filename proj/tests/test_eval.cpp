#include <cmath>
#include <sstream>

#include "dect/eval.hpp"
#include "dect/rng.hpp"
#include "doctest.h"

using namespace dect;

namespace {

MaterialImage image_of(std::vector<double> values, int w, int h, Material m) {
  MaterialImage img{ImageGrid(w, h), m};
  img.grid.data = std::move(values);
  return img;
}

}  // namespace

TEST_CASE("rmse: worked values and ROI behavior") {
  const auto truth = image_of({1, 2, 3, 4}, 2, 2, Material::Water);
  CHECK(rmse(truth, truth, full_roi(2, 2)) == 0.0);

  auto offset = truth;
  for (double& v : offset.grid.data) v += 0.25;
  CHECK(rmse(offset, truth, full_roi(2, 2)) == doctest::Approx(0.25).epsilon(1e-14));

  // three-pixel ROI with errors (3, 4, 0)
  auto est = truth;
  est.grid.data[0] += 3.0;
  est.grid.data[1] += 4.0;
  est.grid.data[3] += 100.0;  // outside the ROI, must not matter
  const RegionOfInterest roi = RegionOfInterest::from_mask(2, 2, {1, 1, 1, 0});
  CHECK(rmse(est, truth, roi) == doctest::Approx(std::sqrt(25.0 / 3.0)).epsilon(1e-14));

  // triangle inequality over the same ROI
  Rng rng(14);
  for (int t = 0; t < 30; ++t) {
    auto a = truth, b = truth, c = truth;
    for (double& v : a.grid.data) v = rng.gaussian(0, 1);
    for (double& v : b.grid.data) v = rng.gaussian(0, 1);
    for (double& v : c.grid.data) v = rng.gaussian(0, 1);
    CHECK(rmse(a, c, roi) <= rmse(a, b, roi) + rmse(b, c, roi) + 1e-12);
  }
}

TEST_CASE("tissue_roi dilates the support by the requested radius") {
  MaterialImage water{ImageGrid(11, 11), Material::Water};
  MaterialImage bone{ImageGrid(11, 11), Material::Bone};
  water.grid.at(5, 5) = 1.0;
  const RegionOfInterest roi = tissue_roi(water, bone, 2);
  CHECK(roi.count == 25);  // Chebyshev ball of radius 2
  CHECK(roi.contains(5 * 11 + 5));
  CHECK(roi.contains(3 * 11 + 3));
  CHECK(!roi.contains(2 * 11 + 5));
}

TEST_CASE("trace and comparison CSV output") {
  const auto tw = image_of({1, 1, 1, 1}, 2, 2, Material::Water);
  const auto tb = image_of({0.5, 0.5, 0.5, 0.5}, 2, 2, Material::Bone);
  const RegionOfInterest roi = full_roi(2, 2);

  DecompositionTrace perfect;
  perfect.iterates = {{tw, tb}, {tw, tb}, {tw, tb}};
  const std::string csv = trace_csv(perfect, tw, tb, roi);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "iteration,rmse_water,rmse_bone");
  int rows = 0;
  while (std::getline(lines, line)) {
    CHECK(line.substr(1) == ",0,0");
    ++rows;
  }
  CHECK(rows == 3);

  auto off_w = tw;
  for (double& v : off_w.grid.data) v += 0.005;
  std::vector<MethodResult> methods{{"exact", tw, tb}, {"offset", off_w, tb}};
  const std::string table = comparison_csv(methods, tw, tb, roi);
  std::istringstream tl(table);
  std::getline(tl, line);
  CHECK(line == "method,rmse_water_1e-3_g_cm3,rmse_bone_1e-3_g_cm3");
  std::getline(tl, line);
  CHECK(line.substr(0, 6) == "exact,");
  std::getline(tl, line);
  CHECK(line.substr(0, 7) == "offset,");
  CHECK(line.find("5.000000") != std::string::npos);  // 0.005 g/cm^3 in 1e-3 units
}
