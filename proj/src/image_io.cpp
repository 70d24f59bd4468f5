#include "facepatch/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

namespace facepatch {
namespace {

struct Raw {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 or 3
  std::vector<unsigned char> bytes;
};

bool has_png_signature(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  return in && png_sig_cmp(sig, 0, 8) == 0;
}

Raw read_png(const std::filesystem::path& path, bool gray) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw ImageIoError(path.string() + ": " + png.message);
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Raw raw;
  raw.height = static_cast<int>(png.height);
  raw.width = static_cast<int>(png.width);
  raw.channels = gray ? 1 : 3;
  raw.bytes.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raw.bytes.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw ImageIoError(path.string() + ": " + msg);
  }
  return raw;
}

std::string next_token(std::istream& in) {
  std::string tok;
  char ch = 0;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

Raw read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError(path.string() + ": cannot open");
  const std::string magic = next_token(in);
  if (magic != "P5" && magic != "P6") throw ImageIoError(path.string() + ": unsupported image format");
  Raw raw;
  raw.channels = magic == "P6" ? 3 : 1;
  try {
    raw.width = std::stoi(next_token(in));
    raw.height = std::stoi(next_token(in));
    if (std::stoi(next_token(in)) != 255) throw ImageIoError(path.string() + ": only 8-bit PNM supported");
  } catch (const std::logic_error&) {
    throw ImageIoError(path.string() + ": malformed PNM header");
  }
  raw.bytes.resize(static_cast<size_t>(raw.height) * raw.width * raw.channels);
  in.read(reinterpret_cast<char*>(raw.bytes.data()), static_cast<std::streamsize>(raw.bytes.size()));
  if (!in) throw ImageIoError(path.string() + ": truncated PNM data");
  return raw;
}

Raw read_raw(const std::filesystem::path& path, bool gray) {
  if (!std::filesystem::exists(path)) throw ImageIoError(path.string() + ": no such file");
  if (has_png_signature(path)) return read_png(path, gray);
  return read_pnm(path);
}

void write_raw_png(const std::filesystem::path& path, const Raw& raw) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(raw.width);
  png.height = static_cast<png_uint_32>(raw.height);
  png.format = raw.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, raw.bytes.data(), 0, nullptr))
    throw ImageIoError(path.string() + ": " + png.message);
}

}  // namespace

unsigned char quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::floor(c * 255.0f + 0.5f));
}

Image<float> read_image(const std::filesystem::path& path) {
  const Raw raw = read_raw(path, false);
  Image<float> img(raw.height, raw.width);
  for (int r = 0; r < raw.height; ++r)
    for (int c = 0; c < raw.width; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const size_t idx = (static_cast<size_t>(r) * raw.width + c) * raw.channels + (raw.channels == 3 ? ch : 0);
        img.channels[ch](r, c) = raw.bytes[idx] / 255.0f;
      }
  return img;
}

Plane<float> read_gray_image(const std::filesystem::path& path) {
  const Raw raw = read_raw(path, true);
  Plane<float> out(raw.height, raw.width);
  for (int r = 0; r < raw.height; ++r)
    for (int c = 0; c < raw.width; ++c) {
      if (raw.channels == 1) {
        out(r, c) = raw.bytes[static_cast<size_t>(r) * raw.width + c] / 255.0f;
      } else {
        const size_t base = (static_cast<size_t>(r) * raw.width + c) * 3;
        out(r, c) = (raw.bytes[base] + raw.bytes[base + 1] + raw.bytes[base + 2]) / (3.0f * 255.0f);
      }
    }
  return out;
}

void write_png(const std::filesystem::path& path, const Image<float>& image) {
  Raw raw;
  raw.height = image.height();
  raw.width = image.width();
  raw.channels = 3;
  raw.bytes.resize(static_cast<size_t>(raw.height) * raw.width * 3);
  for (int r = 0; r < raw.height; ++r)
    for (int c = 0; c < raw.width; ++c)
      for (int ch = 0; ch < 3; ++ch)
        raw.bytes[(static_cast<size_t>(r) * raw.width + c) * 3 + ch] = quantize(image.channels[ch](r, c));
  write_raw_png(path, raw);
}

void write_gray_png(const std::filesystem::path& path, const Plane<float>& gray) {
  Raw raw;
  raw.height = static_cast<int>(gray.rows());
  raw.width = static_cast<int>(gray.cols());
  raw.channels = 1;
  raw.bytes.resize(static_cast<size_t>(raw.height) * raw.width);
  for (int r = 0; r < raw.height; ++r)
    for (int c = 0; c < raw.width; ++c) raw.bytes[static_cast<size_t>(r) * raw.width + c] = quantize(gray(r, c));
  write_raw_png(path, raw);
}

}  // namespace facepatch
