#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dect/image.hpp"
#include "dect/linalg.hpp"

namespace dect {

// The four refiner architectures. "Cross" couples the two materials through
// off-diagonal filter blocks; "Identical" ties the decoder to the encoder
// adjoint instead of training it.
enum class RefinerVariant {
  DistinctCross,
  IdenticalCross,
  DistinctIndividual,
  IdenticalIndividual,
};

const char* variant_name(RefinerVariant v);
RefinerVariant variant_from_name(const std::string& name);
bool variant_is_cross(RefinerVariant v);
bool variant_is_identical(RefinerVariant v);

// One iteration's refiner: encode -> soft threshold -> decode on stacked
// two-material patches.
//
// Block layout (R = patch_side^2, K filters per group per material):
//   encode: 2K x 2R, rows grouped [group 1; group 2], cols [water | bone]
//   decode: 2R x 2K, rows [water; bone], cols [group 1 | group 2]
// Row g*K+k of encode block (g,m) is encoder filter k of group g acting on
// material m, vectorized row-major over its r x r support. Column g*K+k of
// decode block (m,g) is the matching decoder filter.
//
// Variant constraints, enforced on construction:
//   IdenticalCross       decode == encode^T
//   DistinctIndividual   off-diagonal blocks of encode and decode are zero
//   IdenticalIndividual  both of the above
struct RefinerParams {
  RefinerVariant variant = RefinerVariant::DistinctCross;
  int patch_side = 0;        // r
  int filters_per_group = 0; // K
  Mat decode;                // 2R x 2K
  Mat encode;                // 2K x 2R
  std::vector<double> log_thresholds;  // 2K; thresholds are exp() of these

  int patch_len() const { return patch_side * patch_side; }

  // Full-size parameter sets. make() re-applies the variant constraints
  // (zeroing tied/unused blocks); the checked variants verify instead.
  static RefinerParams make(RefinerVariant v, int patch_side, int filters_per_group,
                            Mat encode, Mat decode, std::vector<double> log_thresholds);
  // Identical variants carry no free decoder.
  static RefinerParams make_identical(RefinerVariant v, int patch_side, int filters_per_group,
                                      Mat encode, std::vector<double> log_thresholds);
  // Individual variants assembled from per-material pieces (encode_m: K x R,
  // decode_m: R x K, thresholds_m: K).
  static RefinerParams make_individual(RefinerVariant v, int patch_side, int filters_per_group,
                                       const Mat& encode_water, const Mat& decode_water,
                                       const std::vector<double>& thr_water,
                                       const Mat& encode_bone, const Mat& decode_bone,
                                       const std::vector<double>& thr_bone);

  void enforce_constraints();
  void validate() const;
};

// Elementwise soft threshold with dead zone [-a, a]; ties (|b| == a) map to 0.
double soft_threshold(double b, double a);
std::vector<double> soft_threshold(const std::vector<double>& b, const std::vector<double>& a);
// In-place on a matrix, one threshold exp(log_thresholds[r]) per row.
void soft_threshold_rows(Mat& m, const std::vector<double>& log_thresholds);

// Stride-1 patch bookkeeping with periodic wrap. The patch anchored at pixel
// (y, x) covers samples ((y+dy) mod H, (x+dx) mod W) for dy,dx in [0, r);
// there is one patch per pixel, so sum_j P_j^T P_j = R * I exactly.
class PatchExtractor {
 public:
  PatchExtractor(int width, int height, int patch_side);

  int width() const { return width_; }
  int height() const { return height_; }
  int patch_side() const { return side_; }
  int patch_len() const { return side_ * side_; }
  std::int64_t patch_count() const { return static_cast<std::int64_t>(width_) * height_; }

  // R x N, column j = vectorized patch at pixel j (raster order).
  Mat extract(const ImageGrid& img) const;
  // 2R x N, water patch stacked over bone patch per column.
  Mat extract_pair(const ImageGrid& water, const ImageGrid& bone) const;

  // (1/R) sum_j P_j^T col_j, the left inverse of extract.
  ImageGrid aggregate(const Mat& patches, double pixel_size_mm) const;
  std::pair<ImageGrid, ImageGrid> aggregate_pair(const Mat& patches, double pixel_size_mm) const;

 private:
  int width_, height_, side_;
};

// Canonical refiner evaluation: z = (1/R) sum_j Pbar_j^T D T_exp(alpha)(E Pbar_j x).
// Individual variants fall out of the zero cross blocks (materials never mix).
std::pair<MaterialImage, MaterialImage> refine(const RefinerParams& params,
                                               const MaterialImage& water,
                                               const MaterialImage& bone);

// Same contract evaluated with 2D periodic convolutions (encode as circular
// cross-correlation, decode as circular convolution of the filter columns).
// Agrees with refine() to floating-point reordering error; the verification
// suite pins that agreement at 1e-9.
std::pair<MaterialImage, MaterialImage> refine_conv(const RefinerParams& params,
                                                    const MaterialImage& water,
                                                    const MaterialImage& bone);

}  // namespace dect
