// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/inversion.hpp"

#include "idedit/errors.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>

namespace idedit::inversion {

using diffusion::Var;

Trajectory ddim_invert(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& x0, const Var<float>& cond,
                       attn::AttentionController* hook) {
  const auto& sched = model.scheduler();
  const int n = sched.steps();
  Trajectory traj;
  traj.reserve(static_cast<std::size_t>(n) + 1);
  traj.push_back(x0);
  for (int k = n - 1; k >= 0; --k) {
    const int t = sched.timesteps()[static_cast<std::size_t>(k)];
    const int t_prev = sched.previous(k);
    if (hook) hook->set_step(k, t);
    const Eigen::MatrixXf eps = model.predict_noise(traj.back(), t, cond, hook);
    traj.push_back(diffusion::ddim_inverse_step(sched, traj.back(), eps, t_prev, t));
    if (!traj.back().allFinite()) throw NumericalError("non-finite latent during inversion", t);
  }
  return traj;
}

NtiResult null_text_optimize(const diffusion::DiffusionModel& model, const Trajectory& trajectory,
                             const Var<float>& cond, double w, const NtiConfig& config,
                             attn::AttentionController* hook) {
  const auto& sched = model.scheduler();
  const int n = sched.steps();
  if (static_cast<int>(trajectory.size()) != n + 1)
    throw std::invalid_argument("null_text_optimize: trajectory length does not match the schedule");
  NtiResult out;
  Eigen::MatrixXf null = model.null_text().value();
  Eigen::MatrixXf z = trajectory.back();
  const auto wf = static_cast<float>(w);
  for (int k = 0; k < n; ++k) {
    const int t = sched.timesteps()[static_cast<std::size_t>(k)];
    const int t_prev = sched.previous(k);
    const Eigen::MatrixXf& target = trajectory[static_cast<std::size_t>(n - k - 1)];
    if (hook) hook->set_step(k, t);
    const Eigen::MatrixXf eps_c = model.predict_noise(z, t, cond, hook);
    const diffusion::DdimMap map = diffusion::ddim_map(sched, t, t_prev);

    Var<float> param(null, true);
    nn::Adam<float> opt({param}, {.lr = config.lr});
    const Var<float> z_var = ad::constant<float>(z);
    const Var<float> eps_c_var = ad::constant<float>(eps_c);
    const Var<float> target_var = ad::constant<float>(target);
    double best = std::numeric_limits<double>::infinity();
    double before = 0.0;
    double last = std::numeric_limits<double>::infinity();
    int rises = 0;
    Eigen::MatrixXf best_null = null;
    for (int j = 0;; ++j) {
      opt.zero_grad();
      const Var<float> eps_u = model.predict(z_var, t, param);
      const Var<float> eps = ad::weighted_sum(eps_u, 1.0f - wf, eps_c_var, wf);
      const Var<float> z_next = ad::weighted_sum(z_var, static_cast<float>(map.z_coef), eps,
                                                 static_cast<float>(map.eps_coef));
      Var<float> loss = ad::mse(z_next, target_var);
      const double value = loss.item();
      if (!std::isfinite(value)) throw NumericalError("non-finite null-text loss", t);
      if (j == 0) before = value;
      if (value < best) {
        best = value;
        best_null = param.value();
      }
      rises = value > last ? rises + 1 : 0;
      last = value;
      if (rises >= config.divergence_patience) {
        ++out.diverged_steps;
        std::cerr << "warning: null-text optimization diverging at t=" << t << ", keeping best iterate\n";
        break;
      }
      if (value < config.tol || j == config.inner_steps) break;
      ad::backward(loss);
      opt.step();
    }
    null = best_null;
    out.nulls.push_back(null);
    out.loss_before.push_back(before);
    out.loss_after.push_back(best);
    const Eigen::MatrixXf eps_u = model.predict_noise(z, t, ad::constant<float>(null));
    z = diffusion::ddim_step(sched, z, diffusion::cfg_combine(eps_u, eps_c, w), t, t_prev);
    if (!z.allFinite()) throw NumericalError("non-finite latent during null-text optimization", t);
  }
  return out;
}

Eigen::MatrixXf sample(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& z_T, const Var<float>& cond,
                       const std::vector<Eigen::MatrixXf>& nulls, double w, attn::AttentionController* hook) {
  const auto& sched = model.scheduler();
  const int n = sched.steps();
  if (!nulls.empty() && static_cast<int>(nulls.size()) != n)
    throw std::invalid_argument("sample: need one null sequence per inference step");
  Eigen::MatrixXf z = z_T;
  for (int k = 0; k < n; ++k) {
    const int t = sched.timesteps()[static_cast<std::size_t>(k)];
    if (hook) hook->set_step(k, t);
    const Eigen::MatrixXf eps_c = model.predict_noise(z, t, cond, hook);
    Eigen::MatrixXf eps = eps_c;
    if (w != 1.0) {
      const Var<float> uncond =
          nulls.empty() ? model.null_text() : ad::constant<float>(nulls[static_cast<std::size_t>(k)]);
      eps = diffusion::cfg_combine(model.predict_noise(z, t, uncond), eps_c, w);
    }
    z = diffusion::ddim_step(sched, z, eps, t, sched.previous(k));
    if (!z.allFinite()) throw NumericalError("non-finite latent during sampling", t);
  }
  return z;
}

void InversionBundle::validate(int steps) const {
  if (static_cast<int>(trajectory.size()) != steps + 1)
    throw std::invalid_argument("inversion bundle: trajectory has " + std::to_string(trajectory.size()) +
                                " latents, expected " + std::to_string(steps + 1));
  if (!nulls.empty() && static_cast<int>(nulls.size()) != steps)
    throw std::invalid_argument("inversion bundle: null sequence count does not match the schedule");
  for (const auto& z : trajectory)
    if (!z.allFinite()) throw std::invalid_argument("inversion bundle: non-finite latent");
}

attn::AttentionController control_hook(const diffusion::DiffusionModel& model, const std::string& prompt,
                                       const std::optional<SpatialControl>& control) {
  attn::AttentionController ctl;
  if (control) {
    const auto pos = model.tokenize(prompt).position_of(control->token);
    if (!pos) throw std::invalid_argument("spatial control token " + control->token + " not in prompt '" + prompt + "'");
    ctl.set_mask({*pos, control->mask});
  }
  return ctl;
}

InversionBundle invert_image(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& x0,
                             const std::string& prompt, const InvertOptions& options,
                             std::optional<SpatialControl> control, std::string checkpoint_hash,
                             std::string image_key) {
  InversionBundle b;
  b.prompt = prompt;
  b.w = options.w;
  b.control = std::move(control);
  b.checkpoint_hash = std::move(checkpoint_hash);
  b.image_key = std::move(image_key);
  const Var<float> cond = model.encode(prompt).tokens;
  attn::AttentionController ctl = control_hook(model, prompt, b.control);
  b.trajectory = ddim_invert(model, x0, cond, &ctl);
  if (options.optimize_nulls) {
    NtiResult r = null_text_optimize(model, b.trajectory, cond, options.w, options.nti, &ctl);
    b.nulls = std::move(r.nulls);
    b.nti_loss_before = std::move(r.loss_before);
    b.nti_loss_after = std::move(r.loss_after);
  }
  return b;
}

Eigen::MatrixXf reconstruct(const diffusion::DiffusionModel& model, const InversionBundle& bundle) {
  bundle.validate(model.scheduler().steps());
  attn::AttentionController ctl = control_hook(model, bundle.prompt, bundle.control);
  return sample(model, bundle.z_T(), model.encode(bundle.prompt).tokens, bundle.nulls, bundle.w, &ctl);
}

namespace {

std::string indexed(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s.%03zu", prefix, i);
  return buf;
}

}  // namespace

void save_bundle(const std::filesystem::path& path, const InversionBundle& bundle) {
  Container c;
  c.kind = "inversion";
  c.meta = {{"prompt", bundle.prompt},
            {"w", bundle.w},
            {"checkpoint_hash", bundle.checkpoint_hash},
            {"image_key", bundle.image_key},
            {"latents", bundle.trajectory.size()},
            {"nulls", bundle.nulls.size()},
            {"nti_loss_before", bundle.nti_loss_before},
            {"nti_loss_after", bundle.nti_loss_after}};
  for (std::size_t i = 0; i < bundle.trajectory.size(); ++i) c.tensors[indexed("z", i)] = bundle.trajectory[i];
  for (std::size_t i = 0; i < bundle.nulls.size(); ++i) c.tensors[indexed("null", i)] = bundle.nulls[i];
  if (bundle.control) {
    const auto& m = bundle.control->mask;
    std::vector<int> resolutions;
    for (const auto& [r, mask] : m.by_resolution) {
      resolutions.push_back(r);
      c.tensors["mask." + std::to_string(r)] = mask.as_float();
    }
    c.meta["control"] = {{"token", bundle.control->token},   {"mask_token", m.token},
                         {"derived_at", m.derived_at},       {"threshold", m.threshold},
                         {"used_fallback", m.used_fallback}, {"resolutions", resolutions}};
  }
  save_container(path, c);
}

InversionBundle load_bundle(const std::filesystem::path& path, const std::string& expected_checkpoint_hash,
                            const std::string& expected_image_key) {
  const Container c = load_container(path, "inversion");
  InversionBundle b;
  b.prompt = c.meta.at("prompt");
  b.w = c.meta.at("w");
  b.checkpoint_hash = c.meta.at("checkpoint_hash");
  b.image_key = c.meta.at("image_key");
  if (b.checkpoint_hash != expected_checkpoint_hash)
    throw PrerequisiteError("inversion bundle " + path.string() + " was made with checkpoint " + b.checkpoint_hash +
                            ", not " + expected_checkpoint_hash + "; rerun invert");
  if (b.image_key != expected_image_key)
    throw PrerequisiteError("inversion bundle " + path.string() + " belongs to image " + b.image_key + ", not " +
                            expected_image_key);
  b.nti_loss_before = c.meta.at("nti_loss_before").get<std::vector<double>>();
  b.nti_loss_after = c.meta.at("nti_loss_after").get<std::vector<double>>();
  const std::size_t latents = c.meta.at("latents");
  const std::size_t nulls = c.meta.at("nulls");
  for (std::size_t i = 0; i < latents; ++i) b.trajectory.push_back(c.tensor(indexed("z", i)));
  for (std::size_t i = 0; i < nulls; ++i) b.nulls.push_back(c.tensor(indexed("null", i)));
  if (c.meta.contains("control")) {
    const auto& j = c.meta.at("control");
    SpatialControl sc;
    sc.token = j.at("token");
    sc.mask.token = j.at("mask_token");
    sc.mask.derived_at = j.at("derived_at");
    sc.mask.threshold = j.at("threshold");
    sc.mask.used_fallback = j.at("used_fallback");
    for (int r : j.at("resolutions").get<std::vector<int>>()) {
      const Eigen::MatrixXf& v = c.tensor("mask." + std::to_string(r));
      BinaryMask m(r);
      if (v.size() != m.data.size()) throw FormatError("inversion bundle: mask size mismatch");
      m.data = v.reshaped().array() > 0.5f;
      sc.mask.by_resolution[r] = m;
    }
    b.control = std::move(sc);
  }
  return b;
}

}  // namespace idedit::inversion
