#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cip/model.hpp"
#include "cip/rng.hpp"
#include "cip/tensor.hpp"

namespace cip {

enum class ColorMatrix { Bt601, Bt709 };

struct Rgb {
  double r = 0, g = 0, b = 0;
};
struct Ycbcr {
  double y = 0, cb = 0, cr = 0;
};

// Full-range conversion, clamped to [0,1].
Ycbcr rgb_to_ycbcr(Rgb px, ColorMatrix matrix = ColorMatrix::Bt601);

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<double> r, g, b; // row-major, normalized [0,1]
};

// Binary PPM (P6), 8- or 16-bit. PNG is out of scope for the native
// reader; convert externally (e.g. `magick in.png out.ppm`).
Image read_ppm(const std::filesystem::path &path);

Image resample_bilinear(const Image &img, double scale);

struct YcbcrPlanes {
  Tensor y, cb, cr; // rank-2 H x W
};
YcbcrPlanes to_ycbcr_planes(const Image &img, ColorMatrix matrix);

// VVC 6-tap {1,2,1;1,2,1}/8 collocated (type-0) luma downsampling with
// left-edge replication. Dimensions must be even.
Tensor downsample_luma_collocated(const Tensor &luma);

// 2x2 mean for the ground-truth chroma source.
Tensor downsample_chroma_source(const Tensor &ch);

struct BlockSample {
  std::size_t n = 0;
  Tensor x0; // 1 x N x N
  Tensor s0; // 3 x b
  Tensor z;  // 2 x N x N
  std::vector<std::uint8_t> s0_available;
  // provenance (not stored in the container)
  std::string image_id;
  std::uint32_t origin_x = 0, origin_y = 0;
  double resolution_scale = 1.0;
};

struct CorpusConfig {
  std::filesystem::path image_dir;
  std::size_t per_image = 4; // M blocks per size per image
  std::vector<std::size_t> sizes{4, 8, 16};
  std::uint64_t seed = 0;
  ColorMatrix matrix = ColorMatrix::Bt601;
  int bitdepth = 8;
  // optional resolution variants; one is drawn per image
  std::vector<double> prescales{1.0};
};

// M samples per requested size, origins uniform on the valid chroma grid.
// Throws if the image is too small for the largest requested size.
std::vector<BlockSample> extract_blocks(const Image &img,
                                        const CorpusConfig &cfg, Rng &rng,
                                        const std::string &image_id);

// Whole-corpus extraction (alphabetical image order, per-image rng streams).
std::vector<BlockSample> extract_corpus(const CorpusConfig &cfg,
                                        std::ostream *log = nullptr);

// "CIPB" block container, little-endian, samples stored as u16.
void write_container(const std::filesystem::path &path,
                     const std::vector<BlockSample> &samples);
std::vector<BlockSample> read_container(const std::filesystem::path &path);

// "CIPP" prediction container: per record N and 2N^2 u16 samples.
struct PredictionRecord {
  std::size_t n = 0;
  std::vector<std::uint16_t> samples; // 2N^2 at bitdepth scale
};
void write_predictions(const std::filesystem::path &path,
                       const std::vector<PredictionRecord> &records,
                       int bitdepth);
std::vector<PredictionRecord>
read_predictions(const std::filesystem::path &path, int *bitdepth = nullptr);

} // namespace cip
