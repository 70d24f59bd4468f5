#pragma once

#include "facepatch/types.hpp"

#include <filesystem>

namespace facepatch {

struct ImageIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Reads PNG (8-bit gray/RGB/RGBA) or binary PNM (P5/P6). Returns values in [0, 1].
Image<float> read_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG, quantizing round(v * 255) after clamping to [0, 1].
void write_png(const std::filesystem::path& path, const Image<float>& image);

/// 8-bit single-channel PNG; same quantization as write_png.
void write_gray_png(const std::filesystem::path& path, const Plane<float>& gray);

/// Reads a PNG or PGM as a single channel (RGB inputs are averaged).
Plane<float> read_gray_image(const std::filesystem::path& path);

/// round(v * 255) with halves rounded up, after clamping to [0, 1].
unsigned char quantize(float v);

}  // namespace facepatch
