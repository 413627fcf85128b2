// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace idedit {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_rows(const std::filesystem::path& path, int width, int height, int color_type, int channels,
                const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open for writing", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed", path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

BinaryMask resample_nearest(const BinaryMask& mask, int side) {
  BinaryMask out(side);
  for (int y = 0; y < side; ++y) {
    const int sy = std::min(mask.side - 1, static_cast<int>((y + 0.5) * mask.side / side));
    for (int x = 0; x < side; ++x) {
      const int sx = std::min(mask.side - 1, static_cast<int>((x + 0.5) * mask.side / side));
      out.data(y * side + x) = mask(sy, sx);
    }
  }
  return out;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.side != b.side) throw std::invalid_argument("iou: mask sizes differ");
  const auto inter = (a.data && b.data).count();
  const auto uni = (a.data || b.data).count();
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void write_png(const std::filesystem::path& path, const Image& image) {
  write_png_row(path, {image});
}

void write_png_row(const std::filesystem::path& path, const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("write_png_row: no images");
  const int side = images.front().side;
  const int width = side * static_cast<int>(images.size());
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(width) * side * 3);
  for (std::size_t k = 0; k < images.size(); ++k) {
    if (images[k].side != side) throw std::invalid_argument("write_png_row: size mismatch");
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const std::size_t o = (static_cast<std::size_t>(y) * width + k * side + x) * 3;
        for (int c = 0; c < 3; ++c) bytes[o + c] = quantize(images[k].rgb(c, y * side + x));
      }
    }
  }
  write_rows(path, width, side, PNG_COLOR_TYPE_RGB, 3, bytes);
}

void write_gray_png(const std::filesystem::path& path, int side, const Eigen::VectorXf& values) {
  if (values.size() != static_cast<Eigen::Index>(side) * side) throw std::invalid_argument("write_gray_png: size");
  const float lo = values.minCoeff();
  const float hi = values.maxCoeff();
  const float span = hi > lo ? hi - lo : 1.0f;
  std::vector<std::uint8_t> bytes(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) bytes[i] = quantize((values(i) - lo) / span);
  write_rows(path, side, side, PNG_COLOR_TYPE_GRAY, 1, bytes);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open for reading", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png read failed", path);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto width = static_cast<int>(png_get_image_width(png, info));
  const auto height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8 ||
      width != height) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("expected square 8-bit RGB png", path);
  }
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width) * 3);
  Image image(width);
  for (int y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) image.rgb(c, y * width + x) = static_cast<float>(row[x * 3 + c]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

Eigen::MatrixXf to_model_range(const Image& image) { return (image.rgb.array() * 2.0f - 1.0f).matrix(); }

Image from_model_range(int side, const Eigen::MatrixXf& values) {
  return Image(side, ((values.array() + 1.0f) * 0.5f).cwiseMax(0.0f).cwiseMin(1.0f).matrix());
}

}  // namespace idedit
