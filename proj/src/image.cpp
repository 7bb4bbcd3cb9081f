// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include "orient/image.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "orient/errors.hpp"

namespace orient {

std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

Image quantized(const Image& img) {
  Image out = img;
  for (double& v : out.rgb) v = quantize(v) / 255.0;
  return out;
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> bytes(img.rgb.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(quantize(img.rgb[i]));
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path);
}

namespace {

std::string next_token(std::istream& is) {
  std::string tok;
  char c = 0;
  while (is.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  if (next_token(is) != "P6") throw IoError(path + " is not a binary PPM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(is));
    h = std::stoi(next_token(is));
    maxval = std::stoi(next_token(is));
  } catch (...) {
    throw IoError(path + " has a malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError(path + " has unsupported PPM parameters");
  Image img(h, w);
  std::vector<unsigned char> bytes(img.rgb.size());
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw IoError(path + " is truncated");
  }
  for (std::size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = bytes[i] / 255.0;
  return img;
}

void write_pfm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "PF\n" << img.width << ' ' << img.height << "\n-1.0\n";
  // PFM rows run bottom to top.
  for (int r = img.height - 1; r >= 0; --r) {
    for (int c = 0; c < img.width; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(img.at(r, c, ch)));
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
        os.write(b, 4);
      }
    }
  }
  if (!os) throw IoError("failed writing " + path);
}

Image downsample(const Image& img, int factor) {
  if (factor <= 0 || img.height % factor != 0 || img.width % factor != 0) {
    throw InvalidInput("downsample factor must divide the image size");
  }
  if (factor == 1) return img;
  Image out(img.height / factor, img.width / factor);
  const double norm = 1.0 / (factor * factor);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int dr = 0; dr < factor; ++dr)
          for (int dc = 0; dc < factor; ++dc) acc += img.at(r * factor + dr, c * factor + dc, ch);
        out.at(r, c, ch) = acc * norm;
      }
    }
  }
  return out;
}

Image tile_horizontal(const std::vector<Image>& images) {
  if (images.empty()) throw InvalidInput("nothing to tile");
  const int h = images.front().height;
  int w = 0;
  for (const auto& im : images) {
    if (im.height != h) throw InvalidInput("tiled images must share a height");
    w += im.width;
  }
  Image out(h, w);
  int x0 = 0;
  for (const auto& im : images) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < im.width; ++c)
        for (int ch = 0; ch < 3; ++ch) out.at(r, x0 + c, ch) = im.at(r, c, ch);
    x0 += im.width;
  }
  return out;
}

}  // namespace orient
