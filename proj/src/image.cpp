#include "dect/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace dect {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'M', 'A', 'T', 'F'};
constexpr std::uint32_t kMaxHeaderLen = 1u << 20;

void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof()) throw std::runtime_error("read failure: " + path);
  return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out.good()) throw std::runtime_error("write failure: " + path);
}

struct MatfHeader {
  int width = 0;
  int height = 0;
  double pixel_size_mm = 1.0;
  std::string dtype;
  std::string semantic;
};

// Parses and validates everything up to the payload; returns the payload offset.
size_t parse_header(const std::string& bytes, const std::string& path, MatfHeader& hdr) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("not a MATF file (magic mismatch): " + path);
  std::uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i)
    hlen |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
  if (hlen > kMaxHeaderLen || bytes.size() < 8 + static_cast<size_t>(hlen))
    throw std::runtime_error("MATF header length is corrupt: " + path);
  json j;
  try {
    j = json::parse(bytes.substr(8, hlen));
  } catch (const json::exception& e) {
    throw std::runtime_error("MATF header is not valid JSON (" + std::string(e.what()) +
                             "): " + path);
  }
  try {
    hdr.width = j.at("width").get<int>();
    hdr.height = j.at("height").get<int>();
    hdr.pixel_size_mm = j.at("pixel_size_mm").get<double>();
    hdr.dtype = j.at("dtype").get<std::string>();
    hdr.semantic = j.at("semantic").get<std::string>();
  } catch (const json::exception& e) {
    throw std::runtime_error("MATF header field error (" + std::string(e.what()) + "): " + path);
  }
  if (hdr.width < 1 || hdr.height < 1)
    throw std::runtime_error("MATF header has non-positive dimensions: " + path);
  if (!(hdr.pixel_size_mm > 0))
    throw std::runtime_error("MATF header has non-positive pixel size: " + path);
  return 8 + static_cast<size_t>(hlen);
}

std::string make_header(int width, int height, double pixel_size_mm, const std::string& dtype,
                        const std::string& semantic) {
  json j;
  j["width"] = width;
  j["height"] = height;
  j["pixel_size_mm"] = pixel_size_mm;
  j["dtype"] = dtype;
  j["semantic"] = semantic;
  std::string header = j.dump();
  std::string out(kMagic, 4);
  put_u32le(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  return out;
}

}  // namespace

ImageGrid::ImageGrid(int w, int h, double pixel_size)
    : width(w), height(h), pixel_size_mm(pixel_size) {
  if (w < 1 || h < 1) throw std::invalid_argument("image dimensions must be >= 1");
  if (!(pixel_size > 0)) throw std::invalid_argument("pixel size must be positive");
  data.assign(static_cast<size_t>(w) * h, 0.0);
}

void ImageGrid::validate(const char* what) const {
  if (width < 1 || height < 1)
    throw std::runtime_error(std::string(what) + ": dimensions must be >= 1");
  if (!(pixel_size_mm > 0))
    throw std::runtime_error(std::string(what) + ": pixel size must be positive");
  if (data.size() != static_cast<size_t>(width) * height)
    throw std::runtime_error(std::string(what) + ": data length does not match width*height");
  for (double v : data)
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(what) + ": non-finite samples");
}

const char* material_name(Material m) {
  return m == Material::Water ? "water" : "bone";
}

void AttenuationPair::validate() const {
  high.validate("attenuation (high)");
  low.validate("attenuation (low)");
  if (!high.same_geometry(low))
    throw std::runtime_error("attenuation pair is not co-registered");
}

RegionOfInterest RegionOfInterest::from_mask(int width, int height,
                                             std::vector<std::uint8_t> mask) {
  if (width < 1 || height < 1) throw std::invalid_argument("ROI dimensions must be >= 1");
  if (mask.size() != static_cast<size_t>(width) * height)
    throw std::invalid_argument("ROI mask length does not match width*height");
  RegionOfInterest roi;
  roi.width = width;
  roi.height = height;
  std::int64_t count = 0;
  for (auto& v : mask) {
    v = v ? 1 : 0;
    count += v;
  }
  roi.mask = std::move(mask);
  roi.count = count;
  if (roi.count < 1) throw std::invalid_argument("ROI must select at least one pixel");
  return roi;
}

ImageGrid read_image(const std::string& path, std::string* semantic_out) {
  const std::string bytes = read_file(path);
  MatfHeader hdr;
  const size_t payload_at = parse_header(bytes, path, hdr);
  if (hdr.dtype != "f64le")
    throw std::runtime_error("MATF dtype '" + hdr.dtype + "' is not an image payload: " + path);
  ImageGrid grid(hdr.width, hdr.height, hdr.pixel_size_mm);
  const size_t expected = static_cast<size_t>(grid.size()) * 8;
  if (bytes.size() - payload_at != expected)
    throw std::runtime_error("payload length mismatch: " + path);
  static_assert(sizeof(double) == 8);
  std::memcpy(grid.data.data(), bytes.data() + payload_at, expected);
  for (double v : grid.data)
    if (!std::isfinite(v))
      throw std::runtime_error("non-finite samples in image payload: " + path);
  if (semantic_out) *semantic_out = hdr.semantic;
  return grid;
}

void write_image(const ImageGrid& grid, const std::string& path, const std::string& semantic) {
  grid.validate("write_image");
  std::string out = make_header(grid.width, grid.height, grid.pixel_size_mm, "f64le", semantic);
  const size_t payload_at = out.size();
  out.resize(payload_at + grid.data.size() * 8);
  std::memcpy(out.data() + payload_at, grid.data.data(), grid.data.size() * 8);
  write_file(path, out);
}

RegionOfInterest read_mask(const std::string& path) {
  const std::string bytes = read_file(path);
  MatfHeader hdr;
  const size_t payload_at = parse_header(bytes, path, hdr);
  if (hdr.semantic != kSemanticMask || hdr.dtype != "u8")
    throw std::runtime_error("not a mask file: " + path);
  const size_t expected = static_cast<size_t>(hdr.width) * hdr.height;
  if (bytes.size() - payload_at != expected)
    throw std::runtime_error("payload length mismatch: " + path);
  std::vector<std::uint8_t> mask(expected);
  std::memcpy(mask.data(), bytes.data() + payload_at, expected);
  return RegionOfInterest::from_mask(hdr.width, hdr.height, std::move(mask));
}

void write_mask(const RegionOfInterest& roi, const std::string& path, double pixel_size_mm) {
  std::string out = make_header(roi.width, roi.height, pixel_size_mm, "u8", kSemanticMask);
  const size_t payload_at = out.size();
  out.resize(payload_at + roi.mask.size());
  std::memcpy(out.data() + payload_at, roi.mask.data(), roi.mask.size());
  write_file(path, out);
}

namespace {

void put_u32be(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>(v & 0xFF));
}

void png_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32be(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                         static_cast<uInt>(body.size()));
  put_u32be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void render_png(const ImageGrid& grid, double window_lo, double window_hi,
                const std::string& path) {
  grid.validate("render_png");
  if (!(window_hi > window_lo))
    throw std::invalid_argument("degenerate display window (hi must exceed lo)");

  // Raw scanlines: one filter byte (0 = none) plus one gray byte per pixel.
  const double span = window_hi - window_lo;
  std::string raw;
  raw.reserve(static_cast<size_t>(grid.height) * (grid.width + 1));
  for (int y = 0; y < grid.height; ++y) {
    raw.push_back('\0');
    for (int x = 0; x < grid.width; ++x) {
      double t = (grid.at(y, x) - window_lo) / span;
      t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
      raw.push_back(static_cast<char>(std::lround(255.0 * t)));
    }
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string compressed(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &bound,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                6) != Z_OK)
    throw std::runtime_error("PNG deflate failed");
  compressed.resize(bound);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(grid.width));
  put_u32be(ihdr, static_cast<std::uint32_t>(grid.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);   // deflate
  ihdr.push_back(0);   // adaptive filtering
  ihdr.push_back(0);   // no interlace
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", compressed);
  png_chunk(out, "IEND", "");
  write_file(path, out);
}

}  // namespace dect
