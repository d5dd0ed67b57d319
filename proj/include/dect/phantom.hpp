#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dect/image.hpp"
#include "dect/physics.hpp"

namespace dect {

enum class ShapeKind { Disk, Annulus, Rectangle };

// A filled primitive rasterized at pixel centers. Disks take independent x/y
// radii (set equal for a circle). edge_width > 0 blends linearly into the
// underlying value over that many pixels.
struct Primitive {
  ShapeKind shape = ShapeKind::Disk;
  Material material = Material::Water;
  double density = 0;       // g/cm^3
  double center_x = 0;      // pixels
  double center_y = 0;
  double radius_x = 0;      // disk/annulus outer
  double radius_y = 0;
  double thickness = 0;     // annulus ring width
  double half_width = 0;    // rectangle
  double half_height = 0;
  double edge_width = 0;
};

struct PhantomSpec {
  int size = 128;  // square grid
  double pixel_size_mm = 1.0;
  std::uint64_t seed = 0;
  double background_water = 0;
  double background_bone = 0;
  std::vector<Primitive> primitives;  // drawn in order, later overwrites earlier

  void validate() const;

  // Fixed desk-scale phantom: a water ellipse inside a bone ring plus small
  // bone and soft-tissue inserts.
  static PhantomSpec desk_default(int size = 128);
  // Randomized variant of the desk phantom; the seed fully determines it.
  static PhantomSpec sample(int size, std::uint64_t seed);
};

PhantomSpec phantom_spec_from_json_text(const std::string& text);
std::string phantom_spec_to_json_text(const PhantomSpec& spec);

struct NoiseSpec {
  double sigma_high = 0;  // additive Gaussian std on attenuation (cm^-1)
  double sigma_low = 0;
  std::uint64_t seed = 0;
};

std::pair<MaterialImage, MaterialImage> generate_phantom(const PhantomSpec& spec);

// y = A0 x plus i.i.d. per-pixel Gaussian noise from a counter-based stream
// keyed by (seed, pixel, energy).
AttenuationPair synthesize_measurements(const MaterialImage& water, const MaterialImage& bone,
                                        const DecompPhysics& physics, const NoiseSpec& noise);

// Inverse-variance weights matching the noise spec; sigma = 0 maps to 1.0.
std::array<double, 2> noise_weights(const NoiseSpec& noise);

}  // namespace dect
