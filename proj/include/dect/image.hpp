#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dect {

// Raster of 64-bit samples, row-major, origin at the top-left corner.
struct ImageGrid {
  int width = 0;
  int height = 0;
  double pixel_size_mm = 1.0;  // isotropic
  std::vector<double> data;

  ImageGrid() = default;
  ImageGrid(int w, int h, double pixel_size = 1.0);

  std::int64_t size() const { return static_cast<std::int64_t>(width) * height; }

  double& at(int row, int col) { return data[static_cast<size_t>(row) * width + col]; }
  double at(int row, int col) const { return data[static_cast<size_t>(row) * width + col]; }

  bool same_geometry(const ImageGrid& o) const {
    return width == o.width && height == o.height && pixel_size_mm == o.pixel_size_mm;
  }

  // Checks the type invariants: positive dimensions, positive pixel size,
  // matching buffer length, and finite samples.
  void validate(const char* what = "image") const;
};

enum class Material { Water, Bone };

const char* material_name(Material m);

struct MaterialImage {
  ImageGrid grid;
  Material material = Material::Water;
};

// Co-registered high/low energy attenuation images (cm^-1).
struct AttenuationPair {
  ImageGrid high;
  ImageGrid low;

  void validate() const;
};

struct RegionOfInterest {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> mask;  // 0/1 per pixel
  std::int64_t count = 0;          // number of selected pixels

  static RegionOfInterest from_mask(int width, int height, std::vector<std::uint8_t> mask);
  bool contains(std::int64_t pixel) const { return mask[pixel] != 0; }
};

// MATF container: "MATF" magic, little-endian u32 JSON header length, UTF-8
// JSON header {width, height, pixel_size_mm, dtype, semantic}, then the raw
// payload (f64le row-major samples, or one 0/1 byte per pixel for masks).
inline constexpr const char* kSemanticDensity = "density_g_cm3";
inline constexpr const char* kSemanticAttenuation = "attenuation_cm-1";
inline constexpr const char* kSemanticMask = "mask";

ImageGrid read_image(const std::string& path, std::string* semantic_out = nullptr);
void write_image(const ImageGrid& grid, const std::string& path,
                 const std::string& semantic = kSemanticDensity);

RegionOfInterest read_mask(const std::string& path);
void write_mask(const RegionOfInterest& roi, const std::string& path,
                double pixel_size_mm = 1.0);

// 8-bit grayscale PNG with a linear display window:
// gray = round(255 * clamp((v - lo) / (hi - lo), 0, 1)).
void render_png(const ImageGrid& grid, double window_lo, double window_hi,
                const std::string& path);

}  // namespace dect
