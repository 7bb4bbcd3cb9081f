// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace orient {

/// RGB image, row-major HWC, channels nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0.0) {}

  double& at(int row, int col, int ch) {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
  }
  double at(int row, int col, int ch) const {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
  }
  std::size_t size() const { return rgb.size(); }
  bool operator==(const Image&) const = default;
};

/// 8-bit quantization used by PPM output: round(clamp(v) * 255).
std::uint8_t quantize(double v);

/// Rounds every channel to the nearest 8-bit level, as a PPM round trip would.
Image quantized(const Image& img);

/// Binary P6 PPM, maxval 255.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

/// Little-endian PFM ("PF", scale -1).
void write_pfm(const std::string& path, const Image& img);

/// Box-filter downsampling by an integer factor.
Image downsample(const Image& img, int factor);

/// Tiles images left to right.
Image tile_horizontal(const std::vector<Image>& images);

}  // namespace orient
