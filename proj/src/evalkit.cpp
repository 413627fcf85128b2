// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace idedit::eval {

namespace {

void require_same_shape(const Image& a, const Image& b) {
  if (a.side != b.side || a.rgb.cols() != b.rgb.cols()) throw std::invalid_argument("images differ in shape");
}

// Pixel value: the brightest channel.
float value(const Eigen::Vector3f& c) { return c.maxCoeff(); }

constexpr float kAccessoryValue = 0.3f;  // accessory pixels are near black
constexpr float kMarkRatio = 0.75f;      // pattern marks are half as bright as the fill

struct Candidate {
  std::string name;
  Eigen::Vector3f rgb;
};

// Nearest palette entry. Confidence is the softmax share of the winner,
// damped when even the winner is far away.
ProbeResult nearest(AttributeKind kind, const Eigen::Vector3f& mean, const std::vector<Candidate>& palette) {
  constexpr double kSoft = 0.1;
  constexpr double kFar = 0.2;
  std::vector<double> d2;
  for (const auto& c : palette) d2.push_back((c.rgb - mean).squaredNorm());
  const auto best = static_cast<std::size_t>(std::min_element(d2.begin(), d2.end()) - d2.begin());
  double z = 0.0;
  for (double d : d2) z += std::exp(-(d - d2[best]) / (2 * kSoft * kSoft));
  const double conf = (1.0 / z) * std::exp(-d2[best] / (2 * kFar * kFar));
  return {kind, palette[best].name, conf};
}

std::vector<Candidate> fill_palette() {
  std::vector<Candidate> out;
  for (auto c : synth::kFillColors) out.push_back({std::string(synth::name(c)), synth::palette(c)});
  return out;
}

std::vector<Candidate> background_palette() {
  std::vector<Candidate> out;
  for (auto c : synth::kBackgrounds) out.push_back({std::string(synth::name(c)), synth::palette(c)});
  return out;
}

float percentile(std::vector<float> v, double q) {
  std::sort(v.begin(), v.end());
  const auto i = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
  return v[i];
}

struct ObjectPixels {
  std::vector<int> all, bright, marks, dark;
};

ObjectPixels split(const Image& image, const BinaryMask& mask) {
  ObjectPixels p;
  std::vector<float> values;
  for (int i = 0; i < static_cast<int>(mask.data.size()); ++i) {
    if (!mask.data(i)) continue;
    p.all.push_back(i);
    const float v = value(image.rgb.col(i));
    if (v < kAccessoryValue) p.dark.push_back(i);
    else values.push_back(v);
  }
  if (values.empty()) return p;
  const float ref = percentile(values, 0.9);
  for (int i : p.all) {
    const float v = value(image.rgb.col(i));
    if (v < kAccessoryValue) continue;
    (v < kMarkRatio * ref ? p.marks : p.bright).push_back(i);
  }
  return p;
}

ProbeResult probe_pattern(const ObjectPixels& p) {
  const double lit = static_cast<double>(p.bright.size() + p.marks.size());
  if (lit == 0) return {AttributeKind::pattern, "solid", 0.0};
  const double f = static_cast<double>(p.marks.size()) / lit;
  const std::array<std::pair<const char*, double>, 3> protos{{{"solid", 0.0}, {"dotted", 0.2}, {"striped", 0.5}}};
  constexpr double kSigma = 0.05;
  std::array<double, 3> s{};
  for (std::size_t i = 0; i < 3; ++i) s[i] = -std::pow(f - protos[i].second, 2) / (2 * kSigma * kSigma);
  const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
  double z = 0.0;
  for (double v : s) z += std::exp(v - s[best]);
  return {AttributeKind::pattern, protos[best].first, 1.0 / z};
}

ProbeResult probe_accessory(const ObjectPixels& p, int side) {
  const double frac = static_cast<double>(p.dark.size()) / static_cast<double>(p.all.size());
  const double present = std::clamp((frac - 0.02) / 0.08, 0.0, 1.0);
  if (p.dark.empty()) return {AttributeKind::accessory, "none", 1.0 - present};
  int ymin = side, ymax = -1;
  for (int i : p.all) {
    ymin = std::min(ymin, i / side);
    ymax = std::max(ymax, i / side);
  }
  const int hat_bottom = ymin + static_cast<int>(std::floor(0.3 * (ymax - ymin)));
  const double top = static_cast<double>(std::count_if(p.dark.begin(), p.dark.end(), [&](int i) { return i / side <= hat_bottom; }));
  const double f_top = top / static_cast<double>(p.dark.size());
  const std::array<std::pair<const char*, double>, 3> scores{
      {{"none", 1.0 - present}, {"hat", present * f_top}, {"ring", present * (1.0 - f_top)}}};
  const auto best = std::max_element(scores.begin(), scores.end(), [](auto& a, auto& b) { return a.second < b.second; });
  return {AttributeKind::accessory, best->first, best->second};
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b);
  const double mse = (a.rgb - b.rgb).cast<double>().array().square().mean();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

MaskedChange masked_change(const Image& source, const Image& edited, const BinaryMask& mask) {
  require_same_shape(source, edited);
  if (mask.side != source.side) throw std::invalid_argument("masked_change: mask size differs from image");
  const Eigen::Index fg = mask.count();
  const Eigen::Index bg = mask.data.size() - fg;
  if (fg == 0 || bg == 0) throw std::invalid_argument("masked_change: mask or its complement is empty");
  const Eigen::ArrayXd per_pixel = (source.rgb - edited.rgb).cast<double>().cwiseAbs().colwise().mean().transpose().array();
  const Eigen::ArrayXd m = mask.data.cast<double>();
  return {(per_pixel * m).sum() / static_cast<double>(fg), (per_pixel * (1.0 - m)).sum() / static_cast<double>(bg)};
}

std::string_view name(AttributeKind kind) {
  switch (kind) {
    case AttributeKind::fill_color: return "fill_color";
    case AttributeKind::background_color: return "background_color";
    case AttributeKind::pattern: return "pattern";
    case AttributeKind::accessory: return "accessory";
  }
  return "?";
}

ProbeResult attribute_probe(const Image& image, const BinaryMask& mask, AttributeKind kind) {
  if (mask.side != image.side) throw std::invalid_argument("attribute_probe: mask size differs from image");
  if (mask.count() == 0) throw std::invalid_argument("attribute_probe: empty mask");
  if (kind == AttributeKind::background_color) {
    if (mask.count() == mask.data.size()) throw std::invalid_argument("attribute_probe: no background pixels");
    Eigen::Vector3f sum = Eigen::Vector3f::Zero();
    for (int i = 0; i < static_cast<int>(mask.data.size()); ++i)
      if (!mask.data(i)) sum += image.rgb.col(i);
    return nearest(kind, sum / static_cast<float>(mask.data.size() - mask.count()), background_palette());
  }
  const ObjectPixels p = split(image, mask);
  switch (kind) {
    case AttributeKind::fill_color: {
      const std::vector<int>& use = p.bright.empty() ? p.all : p.bright;
      Eigen::Vector3f sum = Eigen::Vector3f::Zero();
      for (int i : use) sum += image.rgb.col(i);
      return nearest(kind, sum / static_cast<float>(use.size()), fill_palette());
    }
    case AttributeKind::pattern: return probe_pattern(p);
    case AttributeKind::accessory: return probe_accessory(p, mask.side);
    default: break;
  }
  throw std::invalid_argument("attribute_probe: unknown attribute");
}

std::map<AttributeKind, std::string> prompt_attributes(const std::string& prompt) {
  std::map<AttributeKind, std::string> out;
  std::istringstream in(prompt);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string& w = words[i];
    if (synth::parse_pattern(w)) out[AttributeKind::pattern] = w;
    else if (synth::parse_fill(w) && !(i + 1 < words.size() && words[i + 1] == "background"))
      out[AttributeKind::fill_color] = w;
    else if (synth::parse_background(w) && i + 1 < words.size() && words[i + 1] == "background")
      out[AttributeKind::background_color] = w;
    else if (w == "with" && i + 1 < words.size()) out[AttributeKind::accessory] = words[i + 1];
  }
  if (!out.count(AttributeKind::accessory)) out[AttributeKind::accessory] = "none";
  return out;
}

std::map<AttributeKind, std::string> changed_attributes(const std::string& source_prompt,
                                                        const std::string& target_prompt) {
  const auto src = prompt_attributes(source_prompt);
  std::map<AttributeKind, std::string> out;
  for (const auto& [kind, v] : prompt_attributes(target_prompt)) {
    auto it = src.find(kind);
    if (it == src.end() || it->second != v) out[kind] = v;
  }
  return out;
}

double alignment_score(const Image& image, const BinaryMask& mask, const std::map<AttributeKind, std::string>& targets) {
  if (targets.empty()) return 1.0;
  double sum = 0.0;
  for (const auto& [kind, want] : targets) {
    const ProbeResult r = attribute_probe(image, mask, kind);
    if (r.value == want) sum += r.confidence;
  }
  return sum / static_cast<double>(targets.size());
}

EditReport make_report(const Image& source, const Image& edited, const BinaryMask& mask,
                       const std::map<AttributeKind, std::string>& targets) {
  EditReport r;
  r.psnr_to_source = psnr(source, edited);
  const MaskedChange mc = masked_change(source, edited, mask);
  r.inside_mask_change = mc.inside;
  r.outside_mask_change = mc.outside;
  r.edit_success = true;
  double sum = 0.0;
  for (auto kind : {AttributeKind::fill_color, AttributeKind::background_color, AttributeKind::pattern,
                    AttributeKind::accessory}) {
    const ProbeResult p = attribute_probe(edited, mask, kind);
    r.attribute_predictions.push_back(p);
    if (auto it = targets.find(kind); it != targets.end()) {
      if (p.value == it->second) sum += p.confidence;
      else r.edit_success = false;
    }
  }
  r.alignment_score = targets.empty() ? 1.0 : sum / static_cast<double>(targets.size());
  return r;
}

nlohmann::json to_json(const EditReport& report) {
  nlohmann::json preds = nlohmann::json::object();
  for (const auto& p : report.attribute_predictions)
    preds[std::string(name(p.kind))] = {{"value", p.value}, {"confidence", p.confidence}};
  nlohmann::json psnr_json = std::isinf(report.psnr_to_source) ? nlohmann::json("inf") : nlohmann::json(report.psnr_to_source);
  return {{"psnr_to_source", psnr_json},
          {"inside_mask_change", report.inside_mask_change},
          {"outside_mask_change", report.outside_mask_change},
          {"attribute_predictions", preds},
          {"alignment_score", report.alignment_score},
          {"edit_success", report.edit_success}};
}

std::vector<SweepRow> sweep(const std::function<SweepRow(double w)>& run, const std::vector<double>& w_list) {
  if (w_list.size() < 2) throw std::invalid_argument("sweep: need at least two guidance values");
  std::vector<SweepRow> rows;
  for (double w : w_list) {
    SweepRow r = run(w);
    r.w = w;
    rows.push_back(r);
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write sweep table", path);
  out << "w,alignment,psnr_to_source\n";
  out.precision(10);
  for (const auto& r : rows) out << r.w << ',' << r.alignment << ',' << r.psnr << '\n';
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace idedit::eval
