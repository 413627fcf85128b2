// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Metrics and generator-grounded attribute probes for judging edits.

#pragma once

#include "idedit/image.hpp"
#include "idedit/synthworld.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace idedit::eval {

/// 10 log10(1 / MSE) for images in [0, 1]; +infinity when identical.
double psnr(const Image& a, const Image& b);

struct MaskedChange {
  double inside = 0.0;
  double outside = 0.0;
};
/// Mean absolute per-pixel difference (averaged over channels) inside and
/// outside the mask. Throws when either region is empty.
MaskedChange masked_change(const Image& source, const Image& edited, const BinaryMask& mask);

enum class AttributeKind { fill_color, background_color, pattern, accessory };
std::string_view name(AttributeKind kind);

struct ProbeResult {
  AttributeKind kind = AttributeKind::fill_color;
  std::string value;        // enum name from synthworld
  double confidence = 0.0;  // in [0, 1]
};

/// Reads one attribute of the object in `mask` (or of the background).
ProbeResult attribute_probe(const Image& image, const BinaryMask& mask, AttributeKind kind);

/// Attribute values named by a caption-style prompt; special tokens ignored.
std::map<AttributeKind, std::string> prompt_attributes(const std::string& prompt);
/// Attributes whose value differs between two prompts, with the target value.
std::map<AttributeKind, std::string> changed_attributes(const std::string& source_prompt,
                                                        const std::string& target_prompt);

/// Confidence-weighted fraction of `targets` the probes confirm; 1 when empty.
double alignment_score(const Image& image, const BinaryMask& mask, const std::map<AttributeKind, std::string>& targets);

struct EditReport {
  double psnr_to_source = 0.0;
  double inside_mask_change = 0.0;
  double outside_mask_change = 0.0;
  std::vector<ProbeResult> attribute_predictions;
  double alignment_score = 0.0;
  bool edit_success = false;  // every target attribute probed as requested
};

EditReport make_report(const Image& source, const Image& edited, const BinaryMask& mask,
                       const std::map<AttributeKind, std::string>& targets);
nlohmann::json to_json(const EditReport& report);

struct SweepRow {
  double w = 0.0;
  double alignment = 0.0;
  double psnr = 0.0;
};

/// Evaluates `run` at every w (at least two values). Rows keep input order.
std::vector<SweepRow> sweep(const std::function<SweepRow(double w)>& run, const std::vector<double>& w_list);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);
double median(std::vector<double> values);

}  // namespace idedit::eval
