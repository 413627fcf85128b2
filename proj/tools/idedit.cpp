// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// idedit: command line front end. Every subcommand writes a resolved config
// snapshot next to its outputs and validates its upstream artifacts.

#include "idedit/errors.hpp"
#include "idedit/pipeline.hpp"
#include "idedit/run_config.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace idedit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitPrerequisite = 3;
constexpr int kExitNumerical = 4;

struct Flags {
  std::string config, out, dataset, ckpt, source_prompt, target_prompt, object_word;
  std::optional<long long> seed;
  std::optional<int> scene_id, steps, parallel;
  std::optional<double> w, lambda, tau_inj;
  bool no_spatial_control = false;
};

// Built-ins < config file < flags. `steps_key` says what --steps means here.
RunConfig resolve(const Flags& f, const std::string& steps_key) {
  RunConfig c;
  if (!f.config.empty()) c.load_file(f.config);
  auto put = [&](const char* key, const std::string& v) {
    if (!v.empty()) c.set(key, v);
  };
  put("out", f.out);
  put("dataset", f.dataset);
  put("ckpt", f.ckpt);
  put("source_prompt", f.source_prompt);
  put("target_prompt", f.target_prompt);
  put("object_word", f.object_word);
  if (f.seed) c.set("seed", std::to_string(*f.seed));
  if (f.scene_id) c.set("scene_id", std::to_string(*f.scene_id));
  if (f.parallel) c.set("parallel", std::to_string(*f.parallel));
  if (f.steps) {
    if (steps_key.empty()) throw ConfigError("--steps has no meaning for this subcommand");
    c.set(steps_key, std::to_string(*f.steps));
  }
  auto real = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  if (f.w) c.set("edit.w", real(*f.w));
  if (f.lambda) c.set("ft.lambda", real(*f.lambda));
  if (f.tau_inj) c.set("edit.tau_inj", real(*f.tau_inj));
  if (f.no_spatial_control) c.set("edit.spatial_control", "false");
  c.seed();
  return c;
}

fs::path out_dir(const RunConfig& c) {
  fs::path out = c.str("out");
  fs::create_directories(out);
  return out;
}

void snapshot(const RunConfig& c, const std::string& subcommand) {
  const fs::path path = out_dir(c) / "config.resolved";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write resolved config", path);
  out << "# idedit " << subcommand << "\n" << c.resolved();
}

pipeline::Settings settings(const RunConfig& c) {
  pipeline::Settings s;
  s.seed = c.seed();
  s.w = c.real("edit.w");
  s.tau_inj = c.real("edit.tau_inj");
  s.spatial_control = c.flag("edit.spatial_control");
  s.ft.lambda = c.real("ft.lambda");
  s.ft.lr = c.real("ft.lr");
  s.ft.token_lr = c.real("ft.token_lr");
  s.ft.steps = c.integer("ft.steps");
  s.ft.batch = c.integer("ft.batch");
  s.ft.mask_refresh = c.integer("ft.mask_refresh");
  s.ft.mask_policy = {c.integer("mask.resolution"), c.real("mask.std_factor"), c.real("mask.fallback_fraction")};
  s.ft.seed = s.seed;
  s.nti.inner_steps = c.integer("nti.inner_steps");
  s.nti.lr = c.real("nti.lr");
  s.nti.tol = c.real("nti.tol");
  return s;
}

diffusion::Checkpoint need_checkpoint(const RunConfig& c, const char* producer) {
  const fs::path p = c.str("ckpt");
  if (p.empty()) throw ConfigError("--ckpt is required");
  if (!fs::exists(p)) throw PrerequisiteError("checkpoint " + p.string() + " not found; run `idedit " + producer + "`");
  return diffusion::load_checkpoint(p);
}

diffusion::Checkpoint need_base(const RunConfig& c) {
  auto ck = need_checkpoint(c, "train-base");
  if (!ck.parent_hash.empty())
    throw PrerequisiteError("checkpoint " + c.str("ckpt") + " is fine-tuned; pass the base checkpoint from train-base");
  return ck;
}

diffusion::Checkpoint need_finetuned(const RunConfig& c) {
  auto ck = need_checkpoint(c, "finetune");
  if (ck.parent_hash.empty())
    throw PrerequisiteError("checkpoint " + c.str("ckpt") + " is a base checkpoint; run `idedit finetune` first");
  return ck;
}

pipeline::Scene need_scene(const RunConfig& c) {
  const fs::path root = c.str("dataset");
  if (!fs::exists(root / "manifest.jsonl"))
    throw PrerequisiteError("no dataset at " + root.string() + "; run `idedit gen-data`");
  return pipeline::load_scene(root, c.integer("scene_id"));
}

void write_jsonl(const fs::path& path, const std::vector<nlohmann::json>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write records", path);
  for (const auto& r : records) out << r.dump() << '\n';
}

// ---- subcommands ----

int gen_data(const RunConfig& c) {
  const fs::path root = c.str("dataset");
  const auto rows = synth::make_dataset(root, c.integer("data.n"), c.seed(), c.integer("data.size"));
  c.write_resolved(root / "config.resolved");
  std::cerr << "wrote " << rows.size() << " scenes to " << root << "\n";
  return kExitOk;
}

int train_base(const RunConfig& c) {
  const fs::path root = c.str("dataset");
  if (!fs::exists(root / "manifest.jsonl"))
    throw PrerequisiteError("no dataset at " + root.string() + "; run `idedit gen-data`");
  const auto rows = synth::load_manifest(root);
  std::vector<diffusion::TrainSample> data;
  for (const auto& r : rows) data.push_back({to_model_range(read_png(root / r.path)), r.caption});

  diffusion::ModelConfig mc;
  mc.denoiser.image_size = c.integer("data.size");
  mc.denoiser.base_channels = c.integer("model.base_channels");
  diffusion::DiffusionModel model(mc, synth::caption_words(), c.seed());
  diffusion::TrainConfig tc;
  tc.steps = c.integer("train.steps");
  tc.batch = c.integer("train.batch");
  tc.lr = c.real("train.lr");
  tc.warmup = c.integer("train.warmup");
  tc.cond_drop = c.real("train.cond_drop");
  tc.seed = c.seed();

  const fs::path out = out_dir(c);
  snapshot(c, "train-base");
  const double initial = diffusion::evaluate_eps_mse(model, data, 256, c.seed());
  std::ofstream trace(out / "train_loss.jsonl");
  diffusion::train_base(model, data, tc, [&](int step, double loss) {
    trace << nlohmann::json{{"step", step}, {"loss", loss}}.dump() << '\n';
    if ((step + 1) % 1000 == 0) std::cerr << "step " << step + 1 << " loss " << loss << "\n";
  });
  const double final_mse = diffusion::evaluate_eps_mse(model, data, 256, c.seed());
  const std::string hash =
      diffusion::save_checkpoint(out / "base.ckpt", model, {},
                                 {{"dataset_manifest", file_sha256(root / "manifest.jsonl")},
                                  {"initial_eps_mse", initial},
                                  {"final_eps_mse", final_mse},
                                  {"steps", tc.steps}});
  std::cerr << "eps-MSE " << initial << " -> " << final_mse << "; base.ckpt " << hash << "\n";
  return kExitOk;
}

int finetune(const RunConfig& c) {
  auto ck = need_base(c);
  const pipeline::Scene scene = need_scene(c);
  const std::string word = c.str("object_word").empty() ? pipeline::object_word(scene.scene.spec) : c.str("object_word");
  const std::string prompt = c.str("source_prompt").empty() ? scene.scene.caption : c.str("source_prompt");
  const auto ep = identity::build_enhanced_prompt(prompt, word);
  const pipeline::Settings s = settings(c);
  identity::FinetuneConfig cfg = s.ft;
  cfg.spatial_control = s.spatial_control;

  const fs::path out = out_dir(c);
  snapshot(c, "finetune");
  const auto r = identity::finetune(ck.model, scene.x0, ep, cfg);
  identity::write_trace(out / "finetune_trace.jsonl", r.trace);
  const std::string hash = diffusion::save_checkpoint(
      out / "finetuned.ckpt", ck.model, ck.hash,
      {{"scene_id", scene.id},
       {"image_key", scene.image_key},
       {"prompt", prompt},
       {"enhanced_prompt", ep.text},
       {"object_word", word},
       {"token", ep.token},
       {"lambda", cfg.lambda},
       {"spatial_control", cfg.spatial_control},
       {"final_abs_cos", r.final_cos.front()}});
  std::cerr << "finetuned.ckpt " << hash << " |cos| " << r.final_cos.front() << "\n";
  return kExitOk;
}

// Checkpoint the scene was fine-tuned on must match the requested scene.
void check_scene_chain(const diffusion::Checkpoint& ck, const pipeline::Scene& scene) {
  if (ck.info.value("image_key", std::string{}) != scene.image_key)
    throw PrerequisiteError("checkpoint was fine-tuned on " + ck.info.value("image_key", std::string{"?"}) +
                            ", not " + scene.image_key + "; rerun finetune for this scene");
}

int invert(const RunConfig& c) {
  auto ck = need_checkpoint(c, "train-base");
  const pipeline::Scene scene = need_scene(c);
  const pipeline::Settings s = settings(c);
  std::string prompt = c.str("source_prompt").empty() ? scene.scene.caption : c.str("source_prompt");
  std::optional<inversion::SpatialControl> control;
  if (!ck.parent_hash.empty()) {
    check_scene_chain(ck, scene);
    if (c.str("source_prompt").empty()) prompt = ck.info.at("enhanced_prompt");
    if (s.spatial_control && ck.info.value("spatial_control", false))
      control = editor::spatial_control_for(ck.model, scene.x0, prompt, ck.info.at("object_word"),
                                            ck.info.at("token"), s.seed, s.ft.mask_policy);
  }
  const fs::path out = out_dir(c);
  snapshot(c, "invert");
  inversion::InvertOptions opts;
  opts.w = s.w;
  opts.nti = s.nti;
  const auto bundle = inversion::invert_image(ck.model, scene.x0, prompt, opts, control, ck.hash, scene.image_key);
  inversion::save_bundle(out / "inversion.bundle", bundle);
  const Image recon = from_model_range(scene.scene.image.side, inversion::reconstruct(ck.model, bundle));
  write_png(out / "reconstruction.png", recon);
  write_jsonl(out / "invert_metrics.jsonl",
               {{{"scene", scene.id}, {"psnr", eval::psnr(scene.scene.image, recon)}, {"w", s.w}}});
  std::cerr << "reconstruction PSNR " << eval::psnr(scene.scene.image, recon) << " dB\n";
  return kExitOk;
}

int edit(const RunConfig& c) {
  auto ck = need_finetuned(c);
  const pipeline::Scene scene = need_scene(c);
  check_scene_chain(ck, scene);
  const fs::path out = out_dir(c);
  const fs::path bundle_path = out / "inversion.bundle";
  if (!fs::exists(bundle_path)) throw PrerequisiteError("no inversion bundle in " + out.string() + "; run `idedit invert`");
  const auto bundle = inversion::load_bundle(bundle_path, ck.hash, scene.image_key);
  const pipeline::Settings s = settings(c);

  editor::EditTask task;
  task.source_prompt = bundle.prompt;
  std::string target = c.str("target_prompt");
  if (target.empty())
    target = pipeline::recolor_prompt(bundle.prompt, scene.scene.spec.fill, pipeline::edit_color(scene.scene.spec.fill));
  if (target.find(identity::kIdentityToken) == std::string::npos)
    target = identity::build_enhanced_prompt(target, ck.info.at("object_word")).text;
  task.target_prompt = target;
  task.w = s.w;
  task.tau_inj = s.tau_inj;
  task.spatial_control = s.spatial_control && bundle.control.has_value();
  snapshot(c, "edit");
  const auto r = editor::edit(ck.model, ck.hash, bundle, task);

  const int side = scene.scene.image.side;
  const Image edited = from_model_range(side, r.edited);
  const Image recon = from_model_range(side, inversion::reconstruct(ck.model, bundle));
  write_png(out / "edited.png", edited);
  write_png_row(out / "grid.png", {scene.scene.image, recon, edited});
  auto report = eval::make_report(scene.scene.image, edited, scene.scene.gt_mask,
                                  eval::changed_attributes(task.source_prompt, task.target_prompt));
  nlohmann::json j = eval::to_json(report);
  j["scene"] = scene.id;
  j["target_prompt"] = task.target_prompt;
  j["w"] = s.w;
  write_jsonl(out / "metrics.jsonl", {j});
  std::cerr << j.dump() << "\n";
  return kExitOk;
}

std::vector<pipeline::Scene> eval_scenes(const RunConfig& c) {
  const fs::path root = c.str("dataset");
  if (!fs::exists(root / "manifest.jsonl"))
    throw PrerequisiteError("no dataset at " + root.string() + "; run `idedit gen-data`");
  std::vector<pipeline::Scene> out;
  const int first = c.integer("eval.first_scene");
  for (int i = 0; i < c.integer("eval.scenes"); ++i) out.push_back(pipeline::load_scene(root, first + i));
  return out;
}

int eval_cmd(const RunConfig& c) {
  auto ck = need_base(c);
  const auto scenes = eval_scenes(c);
  const pipeline::Settings s = settings(c);
  const fs::path out = out_dir(c);
  snapshot(c, "eval");
  std::vector<pipeline::SceneOutcome> results(scenes.size());
  pipeline::parallel_for(static_cast<int>(scenes.size()), c.integer("parallel"), [&](int i) {
    results[static_cast<std::size_t>(i)] =
        pipeline::run_color_edit(ck.model, scenes[static_cast<std::size_t>(i)], pipeline::Variant::ift_sec_spc, s);
  });
  std::vector<nlohmann::json> records;
  std::vector<Image> grid;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    records.push_back(pipeline::to_json(results[i], scenes[i].id, pipeline::Variant::ift_sec_spc, s.w));
    grid.insert(grid.end(), {results[i].source, results[i].reconstruction, results[i].edited});
  }
  write_jsonl(out / "metrics.jsonl", records);
  write_png_row(out / "eval_grid.png", grid);
  return kExitOk;
}

int sweep_cmd(const RunConfig& c) {
  auto ck = need_base(c);
  const auto scenes = eval_scenes(c);
  const pipeline::Settings s = settings(c);
  const auto w_list = c.reals("sweep.w_list");
  const fs::path out = out_dir(c);
  snapshot(c, "sweep");
  // Per scene: one fine-tune and inversion, then one edit per w.
  std::vector<std::vector<pipeline::SceneOutcome>> results(scenes.size());
  pipeline::parallel_for(static_cast<int>(scenes.size()), c.integer("parallel"), [&](int i) {
    const auto& scene = scenes[static_cast<std::size_t>(i)];
    const auto prepared = pipeline::prepare(ck.model, scene, pipeline::Variant::ift_sec_spc, s);
    for (double w : w_list) results[static_cast<std::size_t>(i)].push_back(pipeline::color_edit(prepared, scene, w, s));
  });
  std::vector<nlohmann::json> records;
  std::size_t k = 0;
  const auto rows = eval::sweep(
      [&](double w) {
        std::vector<double> align, psnr;
        for (std::size_t i = 0; i < scenes.size(); ++i) {
          const auto& o = results[i][k];
          align.push_back(o.report.alignment_score);
          psnr.push_back(o.report.psnr_to_source);
          records.push_back(pipeline::to_json(o, scenes[i].id, pipeline::Variant::ift_sec_spc, w));
        }
        ++k;
        return eval::SweepRow{w, eval::median(align), eval::median(psnr)};
      },
      w_list);
  eval::write_sweep_csv(out / "sweep.csv", rows);
  write_jsonl(out / "metrics.jsonl", records);
  std::vector<double> ws, al, ps;
  for (const auto& r : rows) {
    ws.push_back(r.w);
    al.push_back(r.alignment);
    ps.push_back(r.psnr);
  }
  std::cerr << "spearman(w, alignment) " << eval::spearman(ws, al) << ", spearman(w, psnr) " << eval::spearman(ws, ps)
            << "\n";
  return kExitOk;
}

int ablate(const RunConfig& c) {
  auto ck = need_base(c);
  const auto scenes = eval_scenes(c);
  const pipeline::Settings s = settings(c);
  const fs::path out = out_dir(c);
  snapshot(c, "ablate");
  const std::size_t nv = pipeline::kVariants.size();
  std::vector<pipeline::SceneOutcome> results(scenes.size() * nv);
  pipeline::parallel_for(static_cast<int>(results.size()), c.integer("parallel"), [&](int j) {
    const auto i = static_cast<std::size_t>(j) / nv;
    const auto v = pipeline::kVariants[static_cast<std::size_t>(j) % nv];
    results[static_cast<std::size_t>(j)] = pipeline::run_color_edit(ck.model, scenes[i], v, s);
  });
  std::vector<nlohmann::json> records;
  std::vector<Image> grid;
  std::ofstream table(out / "ablation.csv");
  table << "variant,median_alignment,median_outside_change,success_rate\n";
  for (std::size_t v = 0; v < nv; ++v) {
    std::vector<double> align, outside;
    int success = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const auto& o = results[i * nv + v];
      align.push_back(o.report.alignment_score);
      outside.push_back(o.report.outside_mask_change);
      success += o.report.edit_success && o.report.outside_mask_change <= 0.05;
      records.push_back(pipeline::to_json(o, scenes[i].id, pipeline::kVariants[v], s.w));
    }
    table << pipeline::name(pipeline::kVariants[v]) << ',' << eval::median(align) << ',' << eval::median(outside) << ','
          << static_cast<double>(success) / static_cast<double>(scenes.size()) << '\n';
  }
  // Grid rows: source, then one edit per variant.
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    grid.push_back(results[i * nv].source);
    for (std::size_t v = 0; v < nv; ++v) grid.push_back(results[i * nv + v].edited);
  }
  write_png_row(out / "ablation_grid.png", grid);
  write_jsonl(out / "metrics.jsonl", records);
  return kExitOk;
}

int compose_cmd(const RunConfig& c) {
  auto ck = need_base(c);
  const pipeline::Scene source = need_scene(c);
  int ref_id = c.integer("compose.reference");
  const fs::path root = c.str("dataset");
  if (ref_id < 0) {
    // First striped scene other than the source.
    const auto rows = synth::load_manifest(root);
    for (int i = 0; i < static_cast<int>(rows.size()) && ref_id < 0; ++i)
      if (i != source.id && rows[static_cast<std::size_t>(i)].spec.pattern == synth::Pattern::striped) ref_id = i;
    if (ref_id < 0) throw ConfigError("no striped reference scene in the dataset; set compose.reference");
  }
  const pipeline::Scene reference = pipeline::load_scene(root, ref_id);
  const pipeline::Settings s = settings(c);
  const fs::path out = out_dir(c);
  snapshot(c, "compose");
  const auto o = pipeline::run_composition(ck.model, source, reference, s);
  write_png(out / "composed.png", o.composed);
  write_png_row(out / "compose_grid.png", {o.source, reference.scene.image, o.reconstruction, o.composed});
  write_jsonl(out / "metrics.jsonl", {{{"scene", source.id},
                                        {"reference", reference.id},
                                        {"mix_prompt", o.mix_prompt},
                                        {"psnr_reconstruction", o.psnr_recon},
                                        {"psnr_composed", o.psnr_composed},
                                        {"pattern", o.pattern.value},
                                        {"pattern_confidence", o.pattern.confidence},
                                        {"fill", o.fill.value},
                                        {"fill_confidence", o.fill.confidence}}});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identity-preserving text-guided editing on a synthetic scene world"};
  app.require_subcommand(1);
  Flags f;
  std::string steps_key;
  std::function<int(const RunConfig&)> run;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "key = value config file");
    sub->add_option("--seed", f.seed, "root seed");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--dataset", f.dataset, "dataset root");
    sub->add_option("--ckpt", f.ckpt, "checkpoint path");
    sub->add_option("--scene-id", f.scene_id, "scene index in the dataset");
    sub->add_option("--source-prompt", f.source_prompt, "prompt describing the input image");
    sub->add_option("--target-prompt", f.target_prompt, "edit prompt");
    sub->add_option("--object-word", f.object_word, "word the identity token precedes");
    sub->add_option("--w", f.w, "classifier-free guidance scale");
    sub->add_option("--lambda", f.lambda, "semantic loss weight");
    sub->add_option("--steps", f.steps, "training steps (train-base) or fine-tuning steps");
    sub->add_option("--tau-inj", f.tau_inj, "fraction of steps with attention injection");
    sub->add_flag("--no-spatial-control", f.no_spatial_control, "disable the object mask on the identity token");
    sub->add_option("--parallel", f.parallel, "scene-level worker threads");
  };
  struct Entry {
    const char* name;
    const char* help;
    const char* steps;
    int (*fn)(const RunConfig&);
  };
  const std::vector<Entry> entries{
      {"gen-data", "render the synthetic dataset", "", gen_data},
      {"train-base", "train the base text-to-image model", "train.steps", train_base},
      {"invert", "DDIM + null-text inversion of one scene", "", invert},
      {"finetune", "learn the identity token on one scene", "ft.steps", finetune},
      {"edit", "edit an inverted scene with a target prompt", "", edit},
      {"compose", "transfer a reference pattern with two tokens", "ft.steps", compose_cmd},
      {"eval", "recolour edits with the full method over a scene set", "ft.steps", eval_cmd},
      {"sweep", "guidance-scale sweep over a scene set", "ft.steps", sweep_cmd},
      {"ablate", "compare none / IFT / IFT+SeC / IFT+SeC+SpC", "ft.steps", ablate},
  };
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    common(sub);
    sub->callback([&, e] {
      steps_key = e.steps;
      run = e.fn;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  try {
    return run(resolve(f, steps_key));
  } catch (const PrerequisiteError& e) {
    std::cerr << "prerequisite error: " << e.what() << "\n";
    return kExitPrerequisite;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
