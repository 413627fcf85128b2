// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end experiment steps shared by the command line tool and the
// acceptance suite: scene loading, per-scene fine-tune/invert/edit runs for
// the ablation variants, and composition pairs.

#pragma once

#include "idedit/editor.hpp"
#include "idedit/evalkit.hpp"
#include "idedit/identity_ft.hpp"
#include "idedit/inversion.hpp"
#include "idedit/synthworld.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace idedit::pipeline {

struct Scene {
  int id = 0;
  std::string image_key;    // dataset-relative path plus image hash
  synth::RenderedScene scene;  // image as read from disk; mask re-rendered from the spec (evaluation only)
  Eigen::MatrixXf x0;       // model range
};

Scene load_scene(const std::filesystem::path& dataset_root, int id);
/// Renders a scene without touching disk (acceptance and tests).
Scene make_scene(std::uint64_t seed, int id, int size = 32);

/// Fine-tuning ablation ladder.
enum class Variant { none, ift, ift_sec, ift_sec_spc };
std::string_view name(Variant v);
std::optional<Variant> parse_variant(std::string_view s);
inline constexpr std::array kVariants{Variant::none, Variant::ift, Variant::ift_sec, Variant::ift_sec_spc};

struct Settings {
  identity::FinetuneConfig ft;
  inversion::NtiConfig nti;
  double w = 4.5;
  double tau_inj = 0.6;
  bool spatial_control = true;  // the full method's switch; variants below ift_sec_spc force it off
  std::uint64_t seed = 0;
};

/// Fine-tune settings a variant implies on top of `base`.
identity::FinetuneConfig variant_config(Variant v, const Settings& base);

/// The object word of a scene's caption (its shape).
std::string object_word(const synth::SceneSpec& spec);
/// Recolouring target: the palette colour four steps away.
synth::FillColor edit_color(synth::FillColor fill);
/// Replaces the colour word of `prompt` (before the object word).
std::string recolor_prompt(const std::string& prompt, synth::FillColor from, synth::FillColor to);

/// A fine-tuned (or base) model, its inversion, ready for edits.
struct Prepared {
  diffusion::DiffusionModel model;
  std::string hash;             // content hash of the model used
  std::string source_prompt;    // prompt the bundle was inverted with
  inversion::InversionBundle bundle;
  std::vector<identity::LossRecord> trace;
  double final_cos = 0.0;  // |cos(e_P, e_[I])| after fine-tuning; 0 without a token
  bool uses_token = false;
};

/// Fine-tunes (unless `none`) and inverts one scene.
Prepared prepare(const diffusion::DiffusionModel& base, const Scene& scene, Variant variant, const Settings& s);

struct SceneOutcome {
  Image source, reconstruction, edited;
  eval::EditReport report;
  std::string target_prompt;
};

/// Recolour edit of a prepared scene at guidance w.
SceneOutcome color_edit(const Prepared& p, const Scene& scene, double w, const Settings& s);

/// Full one-scene run: prepare + recolour edit.
SceneOutcome run_color_edit(const diffusion::DiffusionModel& base, const Scene& scene, Variant variant,
                            const Settings& s);

/// Model content hash (sha256 of the serialized container).
std::string model_hash(const diffusion::DiffusionModel& model);

struct CompositionOutcome {
  Image source, reconstruction, composed;
  double psnr_recon = 0.0;
  double psnr_composed = 0.0;
  eval::ProbeResult pattern, fill;
  std::string mix_prompt;
};

/// Transfers the reference's pattern onto the source object. With
/// reference == source (same id) this is the identity composition.
CompositionOutcome run_composition(const diffusion::DiffusionModel& base, const Scene& source, const Scene& reference,
                                   const Settings& s);

nlohmann::json to_json(const SceneOutcome& o, int scene_id, Variant v, double w);

/// Runs fn(0..n-1) on up to `threads` workers; the first exception is rethrown
/// after all workers stop. Results must be written to per-index slots.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace idedit::pipeline
