// Images, the seeded synthetic "aerial-like" dataset, binary PGM/PPM I/O
// and the TSV manifest.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcml/prng.hpp"
#include "gcml/tensor.hpp"

namespace gcml {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Planar C x H x W image with values in [0, 1].
struct Image {
  int channels = 1;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  float at(int c, int y, int x) const {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

/// Binary P5 (grayscale) or P6 (RGB), maxval 255.
Image load_pgm_ppm(const std::filesystem::path& path);
Image decode_pgm_ppm(const std::vector<std::uint8_t>& bytes);
/// P5 for one channel, P6 for three. Values are rounded half-up to 8 bits.
std::vector<std::uint8_t> encode_pgm_ppm(const Image& image);
void save_pgm_ppm(const std::filesystem::path& path, const Image& image);
/// Always writes P6; grayscale input is replicated to three channels.
void save_ppm(const std::filesystem::path& path, const Image& image);

std::uint8_t quantize_u8(float v);

struct SyntheticSpec {
  int num_classes = 10;
  int instances_per_class = 20;
  int views_per_instance = 4;
  int image_size = 32;
  double noise_sigma = 0.03;
  int jitter_px = 1;
  std::uint64_t seed = 7;

  void validate() const;
};

struct ManifestRow {
  std::string relative_path;
  int class_id = 0;
  int instance_id = 0;
  int view_id = 0;
  int rotation_deg = 0;
};

struct Sample {
  ManifestRow meta;
  Image image;
};

using Dataset = std::vector<Sample>;

/// Dense identity label per (class_id, instance_id), numbered in first
/// appearance order.
std::vector<int> identity_labels(const Dataset& data);
std::vector<int> class_labels(const Dataset& data);

/// Every image is a pure function of the SyntheticSpec. Pixel values are already
/// quantized to 8-bit levels so that a disk round trip is exact.
Dataset generate_synthetic(const SyntheticSpec& spec);

void write_manifest(std::ostream& out, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(std::istream& in);

/// Writes `class_<c>/inst_<i>/view_<v>.pgm` files plus manifest.tsv.
void write_dataset(const std::filesystem::path& root, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& root,
                     const std::filesystem::path& manifest = "manifest.tsv");

/// Stacks the selected samples into an N x C x H x W tensor.
Tensor<float> stack_images(const Dataset& data, std::span<const std::size_t> indices);
Tensor<float> stack_images(const Dataset& data);

Dataset select(const Dataset& data, std::span<const std::size_t> indices);

/// Spatial rotation of an image by k quarter turns counter-clockwise.
Image rotate_image(const Image& image, int quarter_turns);

}  // namespace gcml
