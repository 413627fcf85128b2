// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/identity_ft.hpp"

#include "idedit/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace idedit::identity {

using diffusion::Var;

EnhancedPrompt build_enhanced_prompt(const std::string& prompt, const std::string& object_word,
                                     const std::string& token) {
  std::istringstream in(prompt);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  if (std::find(words.begin(), words.end(), token) != words.end())
    throw std::invalid_argument("prompt already contains " + token);
  const auto hits = std::count(words.begin(), words.end(), object_word);
  if (hits == 0) throw std::invalid_argument("object word '" + object_word + "' not in prompt '" + prompt + "'");
  if (hits > 1) throw std::invalid_argument("object word '" + object_word + "' occurs more than once in '" + prompt + "'");
  std::string text;
  for (const auto& w : words) {
    if (!text.empty()) text += ' ';
    if (w == object_word) text += token + ' ';
    text += w;
  }
  return {prompt, object_word, token, text};
}

void ensure_token(diffusion::DiffusionModel& model, const std::string& token, std::uint64_t init_seed) {
  if (!model.text().has_token(token)) model.text().register_token(token, init_seed);
}

double semantic_loss(const Eigen::VectorXf& e_I, const Eigen::VectorXf& e_P) {
  if (e_I.size() != e_P.size()) throw std::invalid_argument("semantic_loss: embedding sizes differ");
  const Eigen::VectorXd a = e_I.cast<double>();
  const Eigen::VectorXd b = e_P.cast<double>();
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("semantic_loss: zero-norm embedding");
  return std::min(1.0, std::abs(a.dot(b)) / (na * nb));
}

Var<float> semantic_loss(const Var<float>& e_I, const Var<float>& e_P) { return ad::abs_cosine(e_I, e_P); }

namespace {

nn::Rng seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return nn::Rng(seq);
}

attn::ObjectMask derive_mask(const diffusion::DiffusionModel& model, const FinetuneTarget& target,
                             const std::string& prompt, const FinetuneConfig& config, int step) {
  const std::string& word = target.mask_word.empty() ? target.prompt.object_word : target.mask_word;
  try {
    return attn::object_mask_for(model, target.x0, prompt, word, config.seed + static_cast<std::uint64_t>(step),
                                 config.mask_policy);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("fine-tuning step " + std::to_string(step) + ": cannot derive the mask of '" + word +
                             "' in '" + prompt + "': " + e.what());
  }
}

}  // namespace

FinetuneResult finetune_joint(diffusion::DiffusionModel& model, const std::vector<FinetuneTarget>& targets,
                              const FinetuneConfig& config, const FinetuneHooks& hooks) {
  if (targets.empty()) throw std::invalid_argument("finetune: no targets");
  if (config.lambda < 0.0) throw std::invalid_argument("finetune: lambda must be >= 0");
  if (config.steps < 1 || config.batch < 1) throw std::invalid_argument("finetune: steps and batch must be >= 1");
  const auto& sched = model.scheduler();
  const int n = static_cast<int>(targets.size());

  std::vector<text::TokenSeq> seqs;
  std::vector<Var<float>> tokens;
  FinetuneResult result;
  for (const auto& target : targets) {
    seqs.push_back(model.tokenize(target.prompt.text));
    tokens.push_back(model.text().token_embedding(target.prompt.token));
    if (config.spatial_control) result.masks.push_back(derive_mask(model, target, target.prompt.base, config, 0));
  }

  model.set_trainable(config.train_model);
  std::vector<Var<float>> model_params;
  for (const auto& p : model.parameters()) {
    const bool is_token = std::any_of(tokens.begin(), tokens.end(), [&](const Var<float>& v) { return v.node() == p.node(); });
    if (!is_token && p.node() != model.null_text().node()) model_params.push_back(p);
  }
  model.null_text().node()->requires_grad = false;
  for (auto& v : tokens) v.set_requires_grad(true);
  nn::Adam<float> model_opt(model_params, {.lr = config.lr});
  nn::Adam<float> token_opt(tokens, {.lr = config.token_lr});

  nn::Rng rng = seeded(config.seed, 5);
  std::uniform_int_distribution<int> pick_t(1, sched.config().train_steps - 1);
  attn::AttentionController ctl;
  int current_step = 0;
  if (hooks.on_attention)
    ctl.set_observer([&](const attn::AttentionSite& site, const attn::Map& m) { hooks.on_attention(current_step, site, m); });

  for (int step = 0; step < config.steps; ++step) {
    current_step = step;
    const int i = step % n;
    const FinetuneTarget& target = targets[static_cast<std::size_t>(i)];
    if (config.spatial_control && config.mask_refresh > 0 && step > 0 && step % (config.mask_refresh * n) == i) {
      ad::NoGradGuard guard;
      result.masks[static_cast<std::size_t>(i)] = derive_mask(model, target, target.prompt.text, config, step);
    }
    ctl.clear_masks();
    if (config.spatial_control)
      ctl.set_mask({*seqs[static_cast<std::size_t>(i)].position_of(target.prompt.token),
                    result.masks[static_cast<std::size_t>(i)]});

    model_opt.zero_grad();
    token_opt.zero_grad();
    double recons = 0.0;
    for (int b = 0; b < config.batch; ++b) {
      const int t = pick_t(rng);
      const Eigen::MatrixXf eps = nn::gaussian<float>(3, target.x0.cols(), rng);
      const Var<float> z = ad::constant<float>(diffusion::add_noise(sched, target.x0, eps, t));
      ctl.set_step(step, t);
      const Var<float> cond = model.text().encode(seqs[static_cast<std::size_t>(i)]).tokens;
      Var<float> loss = ad::mse(model.predict(z, t, cond, &ctl), ad::constant<float>(eps));
      recons += loss.item();
      ad::backward(ad::scale(loss, 1.0f / static_cast<float>(config.batch)));
    }
    recons /= config.batch;

    Var<float> e_P;
    {
      ad::NoGradGuard guard;
      e_P = ad::constant<float>(model.encode(target.prompt.base).pooled.value());
    }
    Var<float> sem = semantic_loss(tokens[static_cast<std::size_t>(i)], e_P);
    const double semantic = sem.item();
    if (config.lambda > 0.0) ad::backward(ad::scale(sem, static_cast<float>(config.lambda)));

    const LossRecord rec{step, i, recons, semantic, recons + config.lambda * semantic};
    if (!std::isfinite(rec.total)) throw NumericalError("non-finite fine-tuning loss", step);
    model_opt.step();
    token_opt.step();
    result.trace.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
  }

  model.set_trainable(false);
  for (std::size_t i = 0; i < targets.size(); ++i)
    result.final_cos.push_back(semantic_loss(tokens[i].value(), model.encode(targets[i].prompt.base).pooled.value()));
  return result;
}

FinetuneResult finetune(diffusion::DiffusionModel& model, const Eigen::MatrixXf& x0, const EnhancedPrompt& prompt,
                        const FinetuneConfig& config, const FinetuneHooks& hooks) {
  ensure_token(model, prompt.token, config.seed);
  return finetune_joint(model, {FinetuneTarget{x0, prompt, {}}}, config, hooks);
}

void write_trace(const std::filesystem::path& path, const std::vector<LossRecord>& trace) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss trace", path);
  for (const auto& r : trace)
    out << nlohmann::json{{"step", r.step},         {"target", r.target},        {"L_recons", r.recons},
                          {"L_semantic", r.semantic}, {"abs_cos", r.semantic}, {"total", r.total}}
               .dump()
        << '\n';
}

}  // namespace idedit::identity
