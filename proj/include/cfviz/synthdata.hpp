#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cfviz/rng.hpp"
#include "cfviz/tensor.hpp"

namespace cfviz {

inline constexpr int kImageSize = 32;
inline constexpr int kBlockSize = 16;

// Quadrants of the 32x32 grid: A top-left, B top-right, C bottom-left,
// D bottom-right. B and C are the off-diagonal confounder blocks.
enum class Block { A = 0, B = 1, C = 2, D = 3 };

inline constexpr std::array<const char*, 4> kBlockNames = {"A", "B", "C", "D"};

// Blob centers sit at the quadrant centers.
inline constexpr std::array<std::pair<int, int>, 4> kBlobCenters = {
    std::pair{8, 8}, {8, 24}, {24, 8}, {24, 24}};

struct BlobSpec {
  int center_row = 0;
  int center_col = 0;
  double sigma = 1.0;      // pixels, > 0
  double amplitude = 1.0;  // > 0
};

struct SyntheticRecord {
  Tensor image;                    // {32,32}, values in [0,4]
  int group = 1;                   // 1 or 2
  std::array<double, 4> sigma{};   // per block A,B,C,D
};

struct Dataset {
  std::vector<SyntheticRecord> records;
  std::vector<std::string> confounder_names;  // {"sigma_B","sigma_C"}
  int n_per_group = 0;
  std::uint64_t seed = 0;
};

// Sampling interval for the blob widths: group 1 U(2,6), group 2 U(4,8).
std::pair<double, double> group_sigma_interval(int group);

// Adds amplitude * exp(-((r-cr)^2+(c-cc)^2)/(2 sigma^2)) evaluated at integer
// pixel centers; the value at the blob's own center pixel is exactly the
// amplitude.
void render_blob(Tensor& image, const BlobSpec& blob);

// One image: four unit-amplitude isotropic Gaussians, one per quadrant, each
// sigma drawn independently from the group interval (draw order A,B,C,D).
SyntheticRecord generate_image(int group, Rng& rng);

// 2*n_per_group records, group 1 first. Record i draws from the stream
// mix_seed(seed, i), so generation order does not affect the result.
Dataset generate_dataset(int n_per_group, std::uint64_t seed);

// The 16x16 quadrant as (row,col) pixel coordinates; the four blocks
// partition the grid.
std::vector<std::pair<int, int>> block_mask(Block block);

double sigma_of(const SyntheticRecord& rec, const std::string& confounder_name);

// Directory layout: manifest.json + data.csv with columns
// id, group, sigma_A..sigma_D, pixel_0..pixel_1023 (row-major).
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace cfviz
