// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural scene world: one patterned shape on a flat background, rendered
// together with its exact object mask and a caption derived from its labels.

#pragma once

#include "idedit/image.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace idedit::synth {

enum class Shape { circle, square, triangle, star };
enum class FillColor { red, orange, yellow, green, cyan, blue, purple, pink };
enum class Pattern { solid, striped, dotted };
enum class Accessory { none, hat, ring };
enum class Background { white, gray, blue, green };

inline constexpr std::array kShapes{Shape::circle, Shape::square, Shape::triangle, Shape::star};
inline constexpr std::array kFillColors{FillColor::red,  FillColor::orange, FillColor::yellow, FillColor::green,
                                        FillColor::cyan, FillColor::blue,   FillColor::purple, FillColor::pink};
inline constexpr std::array kPatterns{Pattern::solid, Pattern::striped, Pattern::dotted};
inline constexpr std::array kAccessories{Accessory::none, Accessory::hat, Accessory::ring};
inline constexpr std::array kBackgrounds{Background::white, Background::gray, Background::blue, Background::green};

std::string_view name(Shape v);
std::string_view name(FillColor v);
std::string_view name(Pattern v);
std::string_view name(Accessory v);
std::string_view name(Background v);

std::optional<Shape> parse_shape(std::string_view s);
std::optional<FillColor> parse_fill(std::string_view s);
std::optional<Pattern> parse_pattern(std::string_view s);
std::optional<Accessory> parse_accessory(std::string_view s);
std::optional<Background> parse_background(std::string_view s);

Eigen::Vector3f palette(FillColor c);
Eigen::Vector3f palette(Background c);
/// Colour of accessory pixels.
Eigen::Vector3f accessory_color();
/// Colour of pattern marks on a given fill.
Eigen::Vector3f pattern_shade(FillColor c);

struct SceneSpec {
  Shape shape = Shape::circle;
  FillColor fill = FillColor::red;
  Pattern pattern = Pattern::solid;
  std::uint32_t pattern_seed = 0;
  Accessory accessory = Accessory::none;
  Background background = Background::white;
  double center_x = 0.5;
  double center_y = 0.5;
  double scale = 0.5;

  bool operator==(const SceneSpec&) const = default;
};

void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

struct RenderedScene {
  Image image;
  BinaryMask gt_mask;
  SceneSpec spec;
  std::string caption;
};

/// Distance from the centre to the farthest object pixel, as a multiple of
/// the nominal radius scale/2.
double extent_factor(Shape shape);

/// Deterministic spec for a seed; every attribute is uniform over its values.
SceneSpec sample_spec(std::uint64_t seed);

/// Renders at side length 32 or 64. Throws std::invalid_argument when the
/// object would leave the frame.
RenderedScene render(const SceneSpec& spec, int size);

/// "a <pattern> <color> <shape> [with <accessory>] on a <background> background"
std::string caption(const SceneSpec& spec);

/// Every word a caption can contain, in a fixed order.
std::vector<std::string> caption_words();

struct ManifestRow {
  std::string path;
  std::string caption;
  SceneSpec spec;
};

/// Renders n scenes into <root>/images and writes <root>/manifest.jsonl.
std::vector<ManifestRow> make_dataset(const std::filesystem::path& root, int n, std::uint64_t seed, int size);
std::vector<ManifestRow> load_manifest(const std::filesystem::path& root);

/// Seed of the i-th scene of a dataset generated with `seed`.
std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace idedit::synth
