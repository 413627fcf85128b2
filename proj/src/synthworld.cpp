// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace idedit::synth {

namespace {

template <typename Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view s, const std::array<Enum, N>& values) {
  for (Enum v : values)
    if (name(v) == s) return v;
  return std::nullopt;
}

Eigen::Vector3f rgb8(int r, int g, int b) { return Eigen::Vector3f(r, g, b) / 255.0f; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Rotation period of each shape's symmetry group, in radians.
double symmetry_period(Shape shape) {
  switch (shape) {
    case Shape::circle: return 2 * std::numbers::pi;
    case Shape::square: return std::numbers::pi / 2;
    case Shape::triangle: return 2 * std::numbers::pi / 3;
    case Shape::star: return 2 * std::numbers::pi / 5;
  }
  return 2 * std::numbers::pi;
}

struct Geometry {
  double cx, cy, radius, angle;
};

// Point-in-shape in pixel coordinates.
bool inside(Shape shape, const Geometry& g, double px, double py) {
  const double dx = px - g.cx;
  const double dy = py - g.cy;
  const double c = std::cos(-g.angle);
  const double s = std::sin(-g.angle);
  const double u = c * dx - s * dy;
  const double v = s * dx + c * dy;
  switch (shape) {
    case Shape::circle: return dx * dx + dy * dy <= g.radius * g.radius;
    case Shape::square: {
      const double h = 0.9 * g.radius;
      return std::abs(u) <= h && std::abs(v) <= h;
    }
    case Shape::triangle:
    case Shape::star: {
      const int points = shape == Shape::triangle ? 3 : 5;
      const double outer = extent_factor(shape) * g.radius;
      const double r = std::hypot(u, v);
      if (r > outer) return false;
      if (shape == Shape::triangle) {
        // Equilateral: inside all three half-planes at apothem outer/2.
        for (int k = 0; k < 3; ++k) {
          const double a = -std::numbers::pi / 2 + std::numbers::pi / 3 + k * 2 * std::numbers::pi / 3;
          if (u * std::cos(a) + v * std::sin(a) > outer / 2) return false;
        }
        return true;
      }
      const double inner = 0.62 * g.radius;
      // Star polygon: compare against the edge between the adjacent outer and inner vertex.
      double theta = std::atan2(v, u) + std::numbers::pi / 2;
      const double sector = 2 * std::numbers::pi / points;
      theta = std::fmod(std::fmod(theta, sector) + sector, sector);
      const double half = sector / 2;
      const double t = theta <= half ? theta : sector - theta;  // angle from nearest outer vertex
      // Edge from (outer, 0) to (inner, half) in local polar coordinates.
      const double ax = outer, ay = 0.0;
      const double bx = inner * std::cos(half), by = inner * std::sin(half);
      const double qx = r * std::cos(t), qy = r * std::sin(t);
      const double cross = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax);
      return cross >= 0;
    }
  }
  return false;
}

}  // namespace

std::string_view name(Shape v) {
  static constexpr std::array<std::string_view, 4> n{"circle", "square", "triangle", "star"};
  return n[static_cast<int>(v)];
}
std::string_view name(FillColor v) {
  static constexpr std::array<std::string_view, 8> n{"red", "orange", "yellow", "green",
                                                     "cyan", "blue", "purple", "pink"};
  return n[static_cast<int>(v)];
}
std::string_view name(Pattern v) {
  static constexpr std::array<std::string_view, 3> n{"solid", "striped", "dotted"};
  return n[static_cast<int>(v)];
}
std::string_view name(Accessory v) {
  static constexpr std::array<std::string_view, 3> n{"none", "hat", "ring"};
  return n[static_cast<int>(v)];
}
std::string_view name(Background v) {
  static constexpr std::array<std::string_view, 4> n{"white", "gray", "blue", "green"};
  return n[static_cast<int>(v)];
}

std::optional<Shape> parse_shape(std::string_view s) { return parse_enum(s, kShapes); }
std::optional<FillColor> parse_fill(std::string_view s) { return parse_enum(s, kFillColors); }
std::optional<Pattern> parse_pattern(std::string_view s) { return parse_enum(s, kPatterns); }
std::optional<Accessory> parse_accessory(std::string_view s) { return parse_enum(s, kAccessories); }
std::optional<Background> parse_background(std::string_view s) { return parse_enum(s, kBackgrounds); }

Eigen::Vector3f palette(FillColor c) {
  switch (c) {
    case FillColor::red: return rgb8(230, 25, 25);
    case FillColor::orange: return rgb8(245, 130, 20);
    case FillColor::yellow: return rgb8(240, 225, 30);
    case FillColor::green: return rgb8(30, 190, 50);
    case FillColor::cyan: return rgb8(30, 210, 220);
    case FillColor::blue: return rgb8(30, 60, 235);
    case FillColor::purple: return rgb8(140, 40, 210);
    case FillColor::pink: return rgb8(245, 110, 185);
  }
  return Eigen::Vector3f::Zero();
}

Eigen::Vector3f palette(Background c) {
  switch (c) {
    case Background::white: return rgb8(242, 242, 242);
    case Background::gray: return rgb8(128, 128, 128);
    case Background::blue: return rgb8(150, 180, 240);
    case Background::green: return rgb8(160, 215, 160);
  }
  return Eigen::Vector3f::Zero();
}

Eigen::Vector3f accessory_color() { return rgb8(25, 25, 25); }

Eigen::Vector3f pattern_shade(FillColor c) {
  const Eigen::Vector3f p = palette(c) * 255.0f;
  return rgb8(static_cast<int>(std::lround(p.x() * 0.5f)), static_cast<int>(std::lround(p.y() * 0.5f)),
              static_cast<int>(std::lround(p.z() * 0.5f)));
}

void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = nlohmann::json{{"shape", name(s.shape)},
                     {"fill", name(s.fill)},
                     {"pattern", name(s.pattern)},
                     {"pattern_seed", s.pattern_seed},
                     {"accessory", name(s.accessory)},
                     {"background", name(s.background)},
                     {"center", {s.center_x, s.center_y}},
                     {"scale", s.scale}};
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  auto need = [](auto opt, const std::string& what) {
    if (!opt) throw std::invalid_argument("bad scene spec field: " + what);
    return *opt;
  };
  s.shape = need(parse_shape(j.at("shape").get<std::string>()), "shape");
  s.fill = need(parse_fill(j.at("fill").get<std::string>()), "fill");
  s.pattern = need(parse_pattern(j.at("pattern").get<std::string>()), "pattern");
  s.pattern_seed = j.at("pattern_seed").get<std::uint32_t>();
  s.accessory = need(parse_accessory(j.at("accessory").get<std::string>()), "accessory");
  s.background = need(parse_background(j.at("background").get<std::string>()), "background");
  s.center_x = j.at("center").at(0).get<double>();
  s.center_y = j.at("center").at(1).get<double>();
  s.scale = j.at("scale").get<double>();
}

double extent_factor(Shape shape) {
  switch (shape) {
    case Shape::circle: return 1.0;
    case Shape::square: return 0.9 * std::numbers::sqrt2;
    case Shape::triangle: return 1.25;
    case Shape::star: return 1.3;
  }
  return 1.0;
}

std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ (index * 0x2545f4914f6cdd1dULL));
}

SceneSpec sample_spec(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  SceneSpec s;
  s.shape = kShapes[pick(kShapes.size())];
  s.fill = kFillColors[pick(kFillColors.size())];
  s.pattern = kPatterns[pick(kPatterns.size())];
  s.pattern_seed = static_cast<std::uint32_t>(rng() >> 32);
  s.accessory = kAccessories[pick(kAccessories.size())];
  s.background = kBackgrounds[pick(kBackgrounds.size())];
  s.scale = std::uniform_real_distribution<double>(0.25, 0.5)(rng);
  const double margin = 1.0 / 32.0;
  const double reach = extent_factor(s.shape) * s.scale / 2 + margin;
  std::uniform_real_distribution<double> pos(reach, 1.0 - reach);
  s.center_x = pos(rng);
  s.center_y = pos(rng);
  return s;
}

RenderedScene render(const SceneSpec& spec, int size) {
  if (size != 32 && size != 64) throw std::invalid_argument("render: size must be 32 or 64");
  if (spec.scale < 0.25 || spec.scale > 0.5) throw std::invalid_argument("render: scale outside [0.25, 0.5]");
  const double reach = extent_factor(spec.shape) * spec.scale / 2;
  if (spec.center_x - reach < 0 || spec.center_x + reach > 1 || spec.center_y - reach < 0 ||
      spec.center_y + reach > 1)
    throw std::invalid_argument("render: object would be clipped by the frame");

  const double px_unit = size / 32.0;  // pattern features are sized for 32px and scale with the image
  const std::uint32_t ps = spec.pattern_seed;
  Geometry g{spec.center_x * size, spec.center_y * size, spec.scale * size / 2,
             (ps % 1000) / 1000.0 * symmetry_period(spec.shape)};

  RenderedScene out;
  out.spec = spec;
  out.caption = caption(spec);
  out.gt_mask = BinaryMask(size);
  out.image = Image(size);

  int ymin = size, ymax = -1;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (inside(spec.shape, g, x + 0.5, y + 0.5)) {
        out.gt_mask.data(y * size + x) = true;
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
  }

  const double stripe_angle = ((ps >> 10) % 180) * std::numbers::pi / 180.0;
  const double stripe_period = 4.0 * px_unit;
  const double stripe_phase = ((ps >> 18) % 4) / 4.0;
  const int dot_period = static_cast<int>(5 * px_unit);
  const int dot_dx = static_cast<int>((ps >> 20) % 3) - 1;
  const int dot_dy = static_cast<int>((ps >> 24) % 3) - 1;
  const int cxi = static_cast<int>(std::floor(g.cx)) + dot_dx;
  const int cyi = static_cast<int>(std::floor(g.cy)) + dot_dy;
  const double dot_radius = 1.0 * px_unit;
  const int hat_bottom = ymin + static_cast<int>(std::floor(0.3 * (ymax - ymin)));

  const Eigen::Vector3f bg = palette(spec.background);
  const Eigen::Vector3f fill = palette(spec.fill);
  const Eigen::Vector3f shade = pattern_shade(spec.fill);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int i = y * size + x;
      if (!out.gt_mask.data(i)) {
        out.image.rgb.col(i) = bg;
        continue;
      }
      const double px = x + 0.5 - g.cx;
      const double py = y + 0.5 - g.cy;
      bool accessory = false;
      if (spec.accessory == Accessory::hat) {
        accessory = y <= hat_bottom;
      } else if (spec.accessory == Accessory::ring) {
        const double d = std::hypot(px, py) / g.radius;
        accessory = d >= 0.35 && d <= 0.6;
      }
      bool mark = false;
      if (spec.pattern == Pattern::striped) {
        const double along = px * std::cos(stripe_angle) + py * std::sin(stripe_angle);
        const double f = along / stripe_period + stripe_phase;
        mark = f - std::floor(f) < 0.5;
      } else if (spec.pattern == Pattern::dotted) {
        const int rx = ((x - cxi) % dot_period + dot_period) % dot_period;
        const int ry = ((y - cyi) % dot_period + dot_period) % dot_period;
        const int ox = std::min(rx, dot_period - rx);
        const int oy = std::min(ry, dot_period - ry);
        mark = std::hypot(ox, oy) <= dot_radius + 1e-9;
      }
      out.image.rgb.col(i) = accessory ? accessory_color() : (mark ? shade : fill);
    }
  }
  return out;
}

std::string caption(const SceneSpec& spec) {
  std::ostringstream os;
  os << "a " << name(spec.pattern) << ' ' << name(spec.fill) << ' ' << name(spec.shape);
  if (spec.accessory != Accessory::none) os << " with " << name(spec.accessory);
  os << " on a " << name(spec.background) << " background";
  return os.str();
}

std::vector<std::string> caption_words() {
  std::vector<std::string> words{"a", "with", "on", "background"};
  auto push = [&words](std::string_view w) {
    if (std::find(words.begin(), words.end(), w) == words.end()) words.emplace_back(w);
  };
  for (auto v : kPatterns) push(name(v));
  for (auto v : kFillColors) push(name(v));
  for (auto v : kShapes) push(name(v));
  for (auto v : kAccessories)
    if (v != Accessory::none) push(name(v));
  for (auto v : kBackgrounds) push(name(v));
  return words;
}

std::vector<ManifestRow> make_dataset(const std::filesystem::path& root, int n, std::uint64_t seed, int size) {
  if (n < 1) throw std::invalid_argument("make_dataset: n must be >= 1");
  std::filesystem::create_directories(root / "images");
  std::vector<ManifestRow> rows;
  rows.reserve(static_cast<std::size_t>(n));
  const auto manifest_path = root / "manifest.jsonl";
  std::ofstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot write manifest", manifest_path);
  for (int i = 0; i < n; ++i) {
    const SceneSpec spec = sample_spec(scene_seed(seed, static_cast<std::uint64_t>(i)));
    const RenderedScene scene = render(spec, size);
    char file[32];
    std::snprintf(file, sizeof(file), "images/%06d.png", i);
    write_png(root / file, scene.image);
    ManifestRow row{file, scene.caption, spec};
    manifest << nlohmann::json{{"path", row.path}, {"caption", row.caption}, {"spec", row.spec}}.dump() << '\n';
    rows.push_back(std::move(row));
  }
  if (!manifest.flush()) throw IoError("manifest write failed", manifest_path);
  return rows;
}

std::vector<ManifestRow> load_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest", path);
  std::vector<ManifestRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    rows.push_back({j.at("path").get<std::string>(), j.at("caption").get<std::string>(),
                    j.at("spec").get<SceneSpec>()});
  }
  return rows;
}

}  // namespace idedit::synth
