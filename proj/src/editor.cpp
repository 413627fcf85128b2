// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/editor.hpp"

#include "idedit/errors.hpp"

namespace idedit::editor {

using diffusion::Var;

namespace {

Eigen::MatrixXf guided_step(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& z, int k,
                            const Var<float>& cond, const std::vector<Eigen::MatrixXf>& nulls, double w,
                            attn::AttentionController& ctl) {
  const auto& sched = model.scheduler();
  const int t = sched.timesteps()[static_cast<std::size_t>(k)];
  ctl.set_step(k, t);
  const Eigen::MatrixXf eps_c = model.predict_noise(z, t, cond, &ctl);
  Eigen::MatrixXf eps = eps_c;
  if (w != 1.0) {
    const Var<float> uncond = nulls.empty() ? model.null_text() : ad::constant<float>(nulls[static_cast<std::size_t>(k)]);
    eps = diffusion::cfg_combine(model.predict_noise(z, t, uncond), eps_c, w);
  }
  Eigen::MatrixXf next = diffusion::ddim_step(sched, z, eps, t, sched.previous(k));
  if (!next.allFinite()) throw NumericalError("non-finite latent during editing", t);
  return next;
}

}  // namespace

EditResult edit(const diffusion::DiffusionModel& model, const std::string& checkpoint_hash,
                const inversion::InversionBundle& bundle, const EditTask& task, bool record_target) {
  if (bundle.checkpoint_hash != checkpoint_hash)
    throw PrerequisiteError("inversion bundle was made with checkpoint " + bundle.checkpoint_hash + ", not " +
                            checkpoint_hash + "; rerun invert with this checkpoint");
  if (bundle.prompt != task.source_prompt)
    throw PrerequisiteError("inversion bundle was made with prompt '" + bundle.prompt + "', not '" +
                            task.source_prompt + "'");
  const int n = model.scheduler().steps();
  bundle.validate(n);

  const text::TokenSeq src_seq = model.tokenize(task.source_prompt);
  const text::TokenSeq tgt_seq = model.tokenize(task.target_prompt);
  if (!task.identity_token.empty() &&
      (!src_seq.position_of(task.identity_token) || !tgt_seq.position_of(task.identity_token)))
    throw std::invalid_argument("edit: " + task.identity_token + " must appear in both prompts");
  const attn::Alignment alignment = task.alignment ? *task.alignment : attn::align_tokens(src_seq, tgt_seq);
  attn::validate_alignment(alignment, src_seq, tgt_seq);

  attn::AttentionController src_ctl;
  attn::AttentionController tgt_ctl;
  if (task.spatial_control) {
    if (!bundle.control) throw std::invalid_argument("edit: spatial control requested but the bundle has no object mask");
    src_ctl = inversion::control_hook(model, task.source_prompt, bundle.control);
    tgt_ctl = inversion::control_hook(model, task.target_prompt, bundle.control);
    for (const auto& token : task.extra_masked_tokens) {
      const auto pos = tgt_seq.position_of(token);
      if (!pos) throw std::invalid_argument("edit: masked token " + token + " not in the target prompt");
      tgt_ctl.set_mask({*pos, bundle.control->mask});
    }
  }

  EditResult result;
  result.injected_steps = attn::injection_steps(task.tau_inj, n);
  attn::AttentionRecord step_record;
  src_ctl.record_into(&step_record);
  tgt_ctl.set_inject({&step_record, alignment, task.tau_inj, n});
  if (record_target) tgt_ctl.record_into(&result.target_attention);

  const Var<float> src_cond = model.encode(task.source_prompt).tokens;
  const Var<float> tgt_cond = model.encode(task.target_prompt).tokens;
  Eigen::MatrixXf z_src = bundle.z_T();
  Eigen::MatrixXf z_tgt = bundle.z_T();
  for (int k = 0; k < n; ++k) {
    // The source pass only matters while its attention is being injected.
    if (k < result.injected_steps) z_src = guided_step(model, z_src, k, src_cond, bundle.nulls, bundle.w, src_ctl);
    z_tgt = guided_step(model, z_tgt, k, tgt_cond, bundle.nulls, task.w, tgt_ctl);
  }
  result.edited = std::move(z_tgt);
  return result;
}

inversion::SpatialControl spatial_control_for(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& x0,
                                              const std::string& prompt, const std::string& word,
                                              const std::string& token, std::uint64_t seed,
                                              const attn::MaskPolicy& policy) {
  return {token, attn::object_mask_for(model, x0, prompt, word, seed, policy)};
}

ComposeResult compose(const diffusion::DiffusionModel& base, const ComposeTask& task,
                      const identity::FinetuneConfig& ft, const inversion::NtiConfig& nti) {
  if (task.source.token == task.reference.token)
    throw std::invalid_argument("compose: source and reference tokens must differ");
  const text::TokenSeq probe = text::tokenize(task.mix_prompt, [&] {
    text::Vocabulary v = base.text().vocab();
    for (const auto& tok : {task.source.token, task.reference.token})
      if (!v.find(tok)) v.add_special(tok);
    return v;
  }());
  for (const auto& tok : {task.source.token, task.reference.token})
    if (!probe.position_of(tok)) throw std::invalid_argument("compose: mix prompt lacks " + tok);

  diffusion::DiffusionModel model = base.clone();
  identity::ensure_token(model, task.source.token, ft.seed);
  identity::ensure_token(model, task.reference.token, ft.seed + 1);
  const std::vector<identity::FinetuneTarget> targets{
      {task.source_x0, task.source, {}},
      {task.reference_x0, task.reference, task.reference_mask_word}};
  identity::FinetuneResult fr = identity::finetune_joint(model, targets, ft);

  std::optional<inversion::SpatialControl> control;
  if (ft.spatial_control)
    control = spatial_control_for(model, task.source_x0, task.source.text, task.source.object_word, task.source.token,
                                  ft.seed, ft.mask_policy);
  inversion::InvertOptions opts;
  opts.w = task.w;
  opts.nti = nti;
  inversion::InversionBundle bundle = inversion::invert_image(model, task.source_x0, task.source.text, opts, control);
  Eigen::MatrixXf recon = inversion::reconstruct(model, bundle);

  EditTask et;
  et.source_prompt = task.source.text;
  et.target_prompt = task.mix_prompt;
  et.w = task.w;
  et.tau_inj = task.tau_inj;
  et.spatial_control = ft.spatial_control;
  et.identity_token = task.source.token;
  et.extra_masked_tokens = {task.reference.token};
  EditResult er = edit(model, bundle.checkpoint_hash, bundle, et);
  return {std::move(model), std::move(bundle), std::move(recon), std::move(er.edited), std::move(fr.trace)};
}

}  // namespace idedit::editor
