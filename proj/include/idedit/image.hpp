// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace idedit {

/// Square RGB image, channel-major (3 x side*side), values in [0, 1].
struct Image {
  int side = 0;
  Eigen::MatrixXf rgb;

  Image() = default;
  explicit Image(int side_) : side(side_), rgb(Eigen::MatrixXf::Zero(3, side_ * side_)) {}
  Image(int side_, Eigen::MatrixXf data) : side(side_), rgb(std::move(data)) {}

  Eigen::Index pixels() const { return rgb.cols(); }
  Eigen::Vector3f at(int y, int x) const { return rgb.col(y * side + x); }
  bool operator==(const Image& other) const { return side == other.side && rgb == other.rgb; }
};

/// Square binary mask, row-major pixel order.
struct BinaryMask {
  int side = 0;
  Eigen::Array<bool, Eigen::Dynamic, 1> data;

  BinaryMask() = default;
  explicit BinaryMask(int side_) : side(side_), data(Eigen::Array<bool, Eigen::Dynamic, 1>::Zero(side_ * side_)) {}

  bool operator()(int y, int x) const { return data(y * side + x); }
  Eigen::Index count() const { return data.count(); }
  Eigen::VectorXf as_float() const { return data.cast<float>().matrix(); }
  bool operator==(const BinaryMask& other) const { return side == other.side && (data == other.data).all(); }
};

/// Nearest-neighbour resampling to a new side length.
BinaryMask resample_nearest(const BinaryMask& mask, int side);

/// Intersection over union; both masks must share a side length.
double iou(const BinaryMask& a, const BinaryMask& b);

class IoError : public std::runtime_error {
 public:
  IoError(const std::string& what, std::filesystem::path path)
      : std::runtime_error(what + ": " + path.string()), path_(std::move(path)) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// 8-bit RGB PNG. Values are rounded to the nearest of 256 levels.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// 8-bit grayscale PNG of a side x side map; values are min-max normalized.
void write_gray_png(const std::filesystem::path& path, int side, const Eigen::VectorXf& values);

/// Equally sized images side by side in one 8-bit RGB PNG.
void write_png_row(const std::filesystem::path& path, const std::vector<Image>& images);

/// Maps [0,1] images to the model range [-1,1] and back (with clamping).
Eigen::MatrixXf to_model_range(const Image& image);
Image from_model_range(int side, const Eigen::MatrixXf& values);

}  // namespace idedit
