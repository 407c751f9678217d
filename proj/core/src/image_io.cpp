// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#include "ctxisp/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace ctxisp {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint16_t quantize(float v, float scale) {
  v = std::clamp(v, 0.0f, 1.0f);
  return uint16_t(std::lround(double(v) * scale));
}

}  // namespace

void write_pgm16(const std::string& path, const std::vector<uint16_t>& data,
                 int width, int height) {
  CTXISP_CHECK(width > 0 && height > 0 &&
                   data.size() == size_t(width) * height,
               "write_pgm16: bad dimensions");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  CTXISP_REQUIRE(f, "write_pgm16: cannot open ", path);
  std::fprintf(f.get(), "P5\n%d %d\n65535\n", width, height);
  std::vector<uint8_t> row(size_t(width) * 2);
  for (int y = 0; y < height; ++y) {
    const uint16_t* src = data.data() + size_t(y) * width;
    for (int x = 0; x < width; ++x) {
      row[size_t(x) * 2] = uint8_t(src[x] >> 8);
      row[size_t(x) * 2 + 1] = uint8_t(src[x] & 0xff);
    }
    CTXISP_REQUIRE(std::fwrite(row.data(), 1, row.size(), f.get()) ==
                       row.size(),
                   "write_pgm16: short write to ", path);
  }
}

std::vector<uint16_t> read_pgm16(const std::string& path, int& width,
                                 int& height) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  CTXISP_REQUIRE(f, "read_pgm16: cannot open ", path);
  char magic[3] = {};
  int maxval = 0;
  CTXISP_REQUIRE(std::fscanf(f.get(), "%2s", magic) == 1 &&
                     magic[0] == 'P' && magic[1] == '5',
                 "read_pgm16: ", path, " is not a P5 PGM");
  // Skip whitespace and '#' comment lines between header tokens.
  auto next_int = [&](int& out) {
    int c;
    do {
      c = std::fgetc(f.get());
      if (c == '#')
        while (c != '\n' && c != EOF) c = std::fgetc(f.get());
    } while (c == ' ' || c == '\t' || c == '\n' || c == '\r');
    CTXISP_REQUIRE(c != EOF, "read_pgm16: truncated header in ", path);
    std::ungetc(c, f.get());
    CTXISP_REQUIRE(std::fscanf(f.get(), "%d", &out) == 1,
                   "read_pgm16: bad header in ", path);
  };
  next_int(width);
  next_int(height);
  next_int(maxval);
  CTXISP_REQUIRE(width > 0 && height > 0 && maxval == 65535,
                 "read_pgm16: expected 16-bit PGM, maxval=", maxval);
  std::fgetc(f.get());  // single whitespace byte before binary data
  std::vector<uint16_t> data(size_t(width) * height);
  std::vector<uint8_t> row(size_t(width) * 2);
  for (int y = 0; y < height; ++y) {
    CTXISP_REQUIRE(std::fread(row.data(), 1, row.size(), f.get()) ==
                       row.size(),
                   "read_pgm16: truncated data in ", path);
    uint16_t* dst = data.data() + size_t(y) * width;
    for (int x = 0; x < width; ++x)
      dst[x] = uint16_t((row[size_t(x) * 2] << 8) | row[size_t(x) * 2 + 1]);
  }
  return data;
}

namespace {

void write_png_rgb(const std::string& path, const Tensor<float>& rgb,
                   int bit_depth) {
  CTXISP_CHECK(rgb.defined() && rgb.rank() == 3 && rgb.dim(0) == 3,
               "write_png_rgb: tensor must be [3,H,W]");
  const int H = rgb.dim(1), W = rgb.dim(2);
  FilePtr f(std::fopen(path.c_str(), "wb"));
  CTXISP_REQUIRE(f, "write_png_rgb: cannot open ", path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  CTXISP_REQUIRE(png, "write_png_rgb: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw std::runtime_error("write_png_rgb: libpng failure on " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, png_uint_32(W), png_uint_32(H), bit_depth,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const float scale = bit_depth == 8 ? 255.0f : 65535.0f;
  const size_t hw = size_t(H) * W;
  const float* r = rgb.data();
  const float* g = r + hw;
  const float* b = g + hw;
  std::vector<uint8_t> row(size_t(W) * 3 * (bit_depth / 8));
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      size_t i = size_t(y) * W + x;
      uint16_t px[3] = {quantize(r[i], scale), quantize(g[i], scale),
                        quantize(b[i], scale)};
      if (bit_depth == 8) {
        for (int c = 0; c < 3; ++c) row[size_t(x) * 3 + c] = uint8_t(px[c]);
      } else {
        for (int c = 0; c < 3; ++c) {
          row[(size_t(x) * 3 + c) * 2] = uint8_t(px[c] >> 8);
          row[(size_t(x) * 3 + c) * 2 + 1] = uint8_t(px[c] & 0xff);
        }
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_rgb8(const std::string& path, const Tensor<float>& rgb) {
  write_png_rgb(path, rgb, 8);
}

void write_png_rgb16(const std::string& path, const Tensor<float>& rgb) {
  write_png_rgb(path, rgb, 16);
}

Tensor<float> read_png_rgb(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  CTXISP_REQUIRE(f, "read_png_rgb: cannot open ", path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  CTXISP_REQUIRE(png, "read_png_rgb: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    throw std::runtime_error("read_png_rgb: libpng failure on " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);

  png_uint_32 w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr,
               nullptr);
  // Normalize every source layout to RGB at its native depth.
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY ||
      color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  bit_depth = png_get_bit_depth(png, info);
  CTXISP_REQUIRE(bit_depth == 8 || bit_depth == 16,
                 "read_png_rgb: unsupported bit depth ", bit_depth);

  const int W = int(w), H = int(h);
  const size_t hw = size_t(H) * W;
  Tensor<float> out = Tensor<float>::uninit({3, H, W});
  float* r = out.data();
  float* g = r + hw;
  float* b = g + hw;
  const float inv = bit_depth == 8 ? 1.0f / 255.0f : 1.0f / 65535.0f;
  std::vector<uint8_t> row(size_t(W) * 3 * (bit_depth / 8));
  for (int y = 0; y < H; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < W; ++x) {
      size_t i = size_t(y) * W + x;
      if (bit_depth == 8) {
        r[i] = float(row[size_t(x) * 3]) * inv;
        g[i] = float(row[size_t(x) * 3 + 1]) * inv;
        b[i] = float(row[size_t(x) * 3 + 2]) * inv;
      } else {
        auto px = [&](int c) {
          return float((row[(size_t(x) * 3 + c) * 2] << 8) |
                       row[(size_t(x) * 3 + c) * 2 + 1]) *
                 inv;
        };
        r[i] = px(0);
        g[i] = px(1);
        b[i] = px(2);
      }
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace ctxisp
