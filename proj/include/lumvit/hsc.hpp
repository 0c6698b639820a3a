#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lumvit/errors.hpp"

namespace lumvit {

// Hyperspectral cube container (HSC). Bit-exact format:
//   line 1: "HSC1 <H> <W> <bands> <dtype=f32|f64> <order=hwc>\n"
//   line 2 (optional): "EXCLUDE <comma-separated 0-based band list>\n"
//   payload: raw little-endian scalars, row-major H, then W, then channel.
// The loader drops excluded bands, so `bands` below is the retained count;
// band_mask keeps the original indices of the retained bands, strictly
// increasing within [0, source_bands).

template <class Real>
struct Cube {
  int H = 0;
  int W = 0;
  int bands = 0;         // channels present in `data`
  int source_bands = 0;  // channels declared in the file header
  std::vector<Real> data;  // H*W*bands
  std::vector<int> band_mask;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(H) * W * bands;
  }
  const Real* pixel(int y, int x) const {
    return data.data() + (static_cast<std::int64_t>(y) * W + x) * bands;
  }
};

// Label map container (HSL): "HSL1 <H> <W> u16\n" + little-endian u16
// payload. Class 0 marks unlabeled pixels.
struct LabelMap {
  int H = 0;
  int W = 0;
  std::vector<std::uint16_t> labels;  // H*W

  std::uint16_t at(int y, int x) const {
    return labels[static_cast<std::size_t>(y) * static_cast<std::size_t>(W) +
                  static_cast<std::size_t>(x)];
  }
};

Cube<float> load_cube_f32(const std::string& path);
Cube<double> load_cube_f64(const std::string& path);

template <class Real>
Cube<Real> load_cube(const std::string& path);

// Writes the cube's current bands (exclusions already applied, so no EXCLUDE
// line). as_f64 selects the payload dtype.
void save_cube(const std::string& path, const Cube<float>& cube, bool as_f64 = false);
void save_cube(const std::string& path, const Cube<double>& cube, bool as_f64 = true);

LabelMap load_labels(const std::string& path);
void save_labels(const std::string& path, const LabelMap& map);

}  // namespace lumvit
