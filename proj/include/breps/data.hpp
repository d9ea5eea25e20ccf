#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "breps/geometry.hpp"
#include "breps/image.hpp"
#include "breps/segmodel.hpp"

namespace breps {

enum class Device { desktop, mobile };

std::string to_string(Device d);
Device parse_device(std::string_view s);  // throws InvalidInput naming the enum

struct UserAnnotation {
  std::string image_id;
  std::string user_id;
  Device device = Device::desktop;
  BBox bbox;  // raw, possibly unordered; clipped at evaluation time

  friend bool operator==(const UserAnnotation&, const UserAnnotation&) = default;
};

// ---- masks ----

// 8-bit grayscale raster. P5 PGM is the canonical format; PNG is read too.
Raster<std::uint8_t> read_gray(const std::filesystem::path& path);
Raster<std::uint8_t> read_pgm(const std::filesystem::path& path);
Raster<std::uint8_t> read_png_gray(const std::filesystem::path& path);
void write_pgm(const Raster<std::uint8_t>& img, const std::filesystem::path& path);
std::string encode_pgm(const Raster<std::uint8_t>& img);
Raster<std::uint8_t> decode_pgm(std::string_view bytes);

// Nonzero -> foreground.
BinaryMask binarize(const Raster<std::uint8_t>& gray);
// Foreground -> 255, for writing masks.
Raster<std::uint8_t> to_gray(const BinaryMask& mask);

// ---- instances ----

// image_id is the mask's file stem. The image, when given, only has to be
// readable and match the mask's dimensions.
Instance load_instance(const std::filesystem::path& image_path,
                       const std::filesystem::path& mask_path);
Instance load_mask_instance(const std::filesystem::path& mask_path, std::string image_id);

// Nearest-neighbour resampling so the longer side equals `limit`; identity
// when the instance already fits.
Instance downscale_longest(const Instance& inst, int limit = 1024);

// Byte serialization of an instance (id, dims, mask, objectness, tight box)
// used to check determinism.
std::string serialize_instance(const Instance& inst);

// ---- toy corpus ----

// Deterministic synthetic masks (rectangles, ellipses, L-shapes, bars,
// multi-blob) of size x size pixels.
std::vector<Instance> make_toy_corpus(int n, int size, std::uint64_t seed);

// <dir>/masks/<id>.pgm plus <dir>/manifest.json.
void save_corpus(const std::vector<Instance>& corpus, const std::filesystem::path& dir);
std::vector<Instance> load_corpus(const std::filesystem::path& dir);

// ---- annotations ----

inline constexpr std::string_view kAnnotationHeader = "image_id,user_id,device,x1,y1,x2,y2";

std::vector<UserAnnotation> load_annotations(const std::filesystem::path& csv_path);
std::vector<UserAnnotation> parse_annotations(std::string_view text);
std::string format_annotations(const std::vector<UserAnnotation>& rows);

// ---- numbers ----

// Shortest decimal that round-trips to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);  // throws InvalidInput

std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace breps
