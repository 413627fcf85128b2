// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/pipeline.hpp"

#include "idedit/errors.hpp"

#include <atomic>
#include <mutex>
#include <sstream>
#include <thread>

namespace idedit::pipeline {

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

// Replaces the first occurrence of `from` that is not a background colour.
std::string replace_attribute_word(const std::string& prompt, const std::string& from, const std::string& to) {
  auto words = split_words(prompt);
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i] == from && !(i + 1 < words.size() && words[i + 1] == "background")) {
      words[i] = to;
      return join_words(words);
    }
  }
  throw std::invalid_argument("word '" + from + "' not found in '" + prompt + "'");
}

Image to_image(const Eigen::MatrixXf& z, int side) { return from_model_range(side, z); }

}  // namespace

Scene load_scene(const std::filesystem::path& dataset_root, int id) {
  const auto manifest = synth::load_manifest(dataset_root);
  if (id < 0 || id >= static_cast<int>(manifest.size()))
    throw std::invalid_argument("scene id " + std::to_string(id) + " outside the dataset (" +
                                std::to_string(manifest.size()) + " scenes)");
  const synth::ManifestRow& row = manifest[static_cast<std::size_t>(id)];
  const auto path = dataset_root / row.path;
  Scene s;
  s.id = id;
  s.image_key = row.path + "@" + file_sha256(path);
  Image image = read_png(path);
  s.scene = synth::render(row.spec, image.side);
  s.scene.image = std::move(image);
  s.scene.caption = row.caption;
  s.x0 = to_model_range(s.scene.image);
  return s;
}

Scene make_scene(std::uint64_t seed, int id, int size) {
  Scene s;
  s.id = id;
  s.scene = synth::render(synth::sample_spec(synth::scene_seed(seed, static_cast<std::uint64_t>(id))), size);
  s.image_key = "scene:" + std::to_string(seed) + ":" + std::to_string(id);
  s.x0 = to_model_range(s.scene.image);
  return s;
}

std::string_view name(Variant v) {
  switch (v) {
    case Variant::none: return "none";
    case Variant::ift: return "IFT";
    case Variant::ift_sec: return "IFT+SeC";
    case Variant::ift_sec_spc: return "IFT+SeC+SpC";
  }
  return "?";
}

std::optional<Variant> parse_variant(std::string_view s) {
  for (auto v : kVariants)
    if (name(v) == s) return v;
  return std::nullopt;
}

identity::FinetuneConfig variant_config(Variant v, const Settings& base) {
  identity::FinetuneConfig c = base.ft;
  c.seed = base.seed;
  switch (v) {
    case Variant::none:
    case Variant::ift:
      c.lambda = 0.0;
      c.spatial_control = false;
      break;
    case Variant::ift_sec: c.spatial_control = false; break;
    case Variant::ift_sec_spc: c.spatial_control = base.spatial_control; break;
  }
  return c;
}

std::string object_word(const synth::SceneSpec& spec) { return std::string(synth::name(spec.shape)); }

synth::FillColor edit_color(synth::FillColor fill) {
  return synth::kFillColors[(static_cast<std::size_t>(fill) + 4) % synth::kFillColors.size()];
}

std::string recolor_prompt(const std::string& prompt, synth::FillColor from, synth::FillColor to) {
  return replace_attribute_word(prompt, std::string(synth::name(from)), std::string(synth::name(to)));
}

std::string model_hash(const diffusion::DiffusionModel& model) { return sha256_hex(container_bytes(model.to_container())); }

Prepared prepare(const diffusion::DiffusionModel& base, const Scene& scene, Variant variant, const Settings& s) {
  Prepared p{base.clone(), {}, scene.scene.caption, {}, {}, 0.0, variant != Variant::none};
  std::optional<inversion::SpatialControl> control;
  if (p.uses_token) {
    const std::string word = object_word(scene.scene.spec);
    const identity::EnhancedPrompt ep = identity::build_enhanced_prompt(scene.scene.caption, word);
    const identity::FinetuneConfig cfg = variant_config(variant, s);
    identity::FinetuneResult r = identity::finetune(p.model, scene.x0, ep, cfg);
    p.trace = std::move(r.trace);
    p.final_cos = r.final_cos.front();
    p.source_prompt = ep.text;
    if (cfg.spatial_control)
      control = editor::spatial_control_for(p.model, scene.x0, ep.text, word, ep.token, s.seed, cfg.mask_policy);
  }
  p.hash = model_hash(p.model);
  inversion::InvertOptions opts;
  opts.w = s.w;
  opts.nti = s.nti;
  p.bundle = inversion::invert_image(p.model, scene.x0, p.source_prompt, opts, control, p.hash, scene.image_key);
  return p;
}

SceneOutcome color_edit(const Prepared& p, const Scene& scene, double w, const Settings& s) {
  const int side = scene.scene.image.side;
  const synth::FillColor from = scene.scene.spec.fill;
  editor::EditTask task;
  task.source_prompt = p.source_prompt;
  task.target_prompt = recolor_prompt(p.source_prompt, from, edit_color(from));
  task.w = w;
  task.tau_inj = s.tau_inj;
  task.spatial_control = p.bundle.control.has_value();
  task.identity_token = p.uses_token ? identity::kIdentityToken : "";
  const editor::EditResult r = editor::edit(p.model, p.hash, p.bundle, task);

  SceneOutcome o;
  o.source = scene.scene.image;
  o.reconstruction = to_image(inversion::reconstruct(p.model, p.bundle), side);
  o.edited = to_image(r.edited, side);
  o.target_prompt = task.target_prompt;
  o.report = eval::make_report(o.source, o.edited, scene.scene.gt_mask,
                               eval::changed_attributes(task.source_prompt, task.target_prompt));
  return o;
}

SceneOutcome run_color_edit(const diffusion::DiffusionModel& base, const Scene& scene, Variant variant,
                            const Settings& s) {
  const Prepared p = prepare(base, scene, variant, s);
  return color_edit(p, scene, s.w, s);
}

CompositionOutcome run_composition(const diffusion::DiffusionModel& base, const Scene& source, const Scene& reference,
                                   const Settings& s) {
  const std::string src_pattern(synth::name(source.scene.spec.pattern));
  const std::string ref_pattern(synth::name(reference.scene.spec.pattern));
  editor::ComposeTask task;
  task.source_x0 = source.x0;
  task.source = identity::build_enhanced_prompt(source.scene.caption, object_word(source.scene.spec));
  task.reference_x0 = reference.x0;
  task.reference = identity::build_enhanced_prompt(reference.scene.caption, ref_pattern, identity::kAttributeToken);
  task.reference_mask_word = object_word(reference.scene.spec);
  task.mix_prompt = replace_attribute_word(task.source.text, src_pattern,
                                           std::string(identity::kAttributeToken) + " " + ref_pattern);
  task.w = s.w;
  task.tau_inj = s.tau_inj;
  identity::FinetuneConfig ft = variant_config(Variant::ift_sec_spc, s);
  ft.steps *= 2;  // alternating: each pair gets the single-image budget
  const editor::ComposeResult r = editor::compose(base, task, ft, s.nti);

  const int side = source.scene.image.side;
  CompositionOutcome o;
  o.source = source.scene.image;
  o.reconstruction = to_image(r.reconstruction, side);
  o.composed = to_image(r.composed, side);
  o.psnr_recon = eval::psnr(o.source, o.reconstruction);
  o.psnr_composed = eval::psnr(o.source, o.composed);
  o.pattern = eval::attribute_probe(o.composed, source.scene.gt_mask, eval::AttributeKind::pattern);
  o.fill = eval::attribute_probe(o.composed, source.scene.gt_mask, eval::AttributeKind::fill_color);
  o.mix_prompt = task.mix_prompt;
  return o;
}

nlohmann::json to_json(const SceneOutcome& o, int scene_id, Variant v, double w) {
  nlohmann::json j = eval::to_json(o.report);
  j["scene"] = scene_id;
  j["variant"] = std::string(name(v));
  j["w"] = w;
  j["target_prompt"] = o.target_prompt;
  return j;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int k = 0; k < std::min(threads, n); ++k) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace idedit::pipeline
