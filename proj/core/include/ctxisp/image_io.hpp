// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxisp/tensor.hpp"

namespace ctxisp {

// 16-bit binary PGM (P5, maxval 65535, big-endian samples).
void write_pgm16(const std::string& path, const std::vector<uint16_t>& data,
                 int width, int height);
std::vector<uint16_t> read_pgm16(const std::string& path, int& width,
                                 int& height);

// RGB PNG. Tensors are [3, H, W] in [0,1]; values are clamped and rounded
// on write and scaled back to [0,1] on read (8- or 16-bit sources).
void write_png_rgb8(const std::string& path, const Tensor<float>& rgb);
void write_png_rgb16(const std::string& path, const Tensor<float>& rgb);
Tensor<float> read_png_rgb(const std::string& path);

}  // namespace ctxisp
