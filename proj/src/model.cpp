// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/model.hpp"

#include "idedit/errors.hpp"

#include <cmath>
#include <map>
#include <random>

namespace idedit::diffusion {

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"denoiser",
       {{"image_size", c.denoiser.image_size},
        {"base_channels", c.denoiser.base_channels},
        {"channel_mults", c.denoiser.channel_mults},
        {"attention_resolutions", c.denoiser.attention_resolutions},
        {"heads", c.denoiser.heads},
        {"text_width", c.denoiser.text_width},
        {"norm_groups", c.denoiser.norm_groups},
        {"time_width", c.denoiser.time_width}}},
      {"text",
       {{"width", c.text.width}, {"heads", c.text.heads}, {"layers", c.text.layers}, {"mlp_width", c.text.mlp_width}}},
      {"schedule",
       {{"train_steps", c.schedule.train_steps},
        {"beta_start", c.schedule.beta_start},
        {"beta_end", c.schedule.beta_end},
        {"inference_steps", c.schedule.inference_steps}}}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const auto& d = j.at("denoiser");
  c.denoiser.image_size = d.at("image_size");
  c.denoiser.base_channels = d.at("base_channels");
  c.denoiser.channel_mults = d.at("channel_mults").get<std::vector<int>>();
  c.denoiser.attention_resolutions = d.at("attention_resolutions").get<std::set<int>>();
  c.denoiser.heads = d.at("heads");
  c.denoiser.text_width = d.at("text_width");
  c.denoiser.norm_groups = d.at("norm_groups");
  c.denoiser.time_width = d.at("time_width");
  const auto& t = j.at("text");
  c.text.width = t.at("width");
  c.text.heads = t.at("heads");
  c.text.layers = t.at("layers");
  c.text.mlp_width = t.at("mlp_width");
  const auto& s = j.at("schedule");
  c.schedule.train_steps = s.at("train_steps");
  c.schedule.beta_start = s.at("beta_start");
  c.schedule.beta_end = s.at("beta_end");
  c.schedule.inference_steps = s.at("inference_steps");
}

namespace {

nn::Rng seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return nn::Rng(seq);
}

}  // namespace

DiffusionModel::DiffusionModel(const ModelConfig& config, const std::vector<std::string>& words, std::uint64_t seed)
    : config_(config),
      scheduler_(config.schedule),
      text_([&] {
        auto rng = seeded(seed, 1);
        return text::TextEncoder<float>(config.text, text::Vocabulary(words), rng);
      }()),
      unet_([&] {
        auto rng = seeded(seed, 2);
        return Denoiser<float>(config.denoiser, rng);
      }()) {
  if (config_.text.width != config_.denoiser.text_width)
    throw std::invalid_argument("model config: text width differs between encoder and denoiser");
  auto rng = seeded(seed, 3);
  null_text_ = extra_.add("null_text", nn::gaussian<float>(config_.text.width, text::kSeqLen, rng, 1.0));
  set_trainable(false);
}

Var<float> DiffusionModel::predict(const Var<float>& z, int t, const Var<float>& text_tokens,
                                   CrossAttentionHook<float>* hook) const {
  if (t < 0 || t >= config_.schedule.train_steps) throw std::out_of_range("predict: timestep out of range");
  return unet_.forward(z, t, text_tokens, hook);
}

Eigen::MatrixXf DiffusionModel::predict_noise(const Eigen::MatrixXf& z, int t, const Var<float>& text_tokens,
                                              CrossAttentionHook<float>* hook) const {
  ad::NoGradGuard guard;
  if (!z.allFinite()) throw NumericalError("non-finite latent passed to predict_noise", t);
  return predict(ad::constant<float>(z), t, text_tokens, hook).value();
}

std::vector<Var<float>> DiffusionModel::parameters() const {
  std::vector<Var<float>> out;
  for (const auto* store : {&text_.params(), &unet_.params(), &extra_})
    for (const auto& [_, p] : store->entries()) out.push_back(p);
  return out;
}

void DiffusionModel::set_trainable(bool on) {
  text_.params().set_trainable(on);
  unet_.params().set_trainable(on);
  extra_.set_trainable(on);
}

Container DiffusionModel::to_container() const {
  Container c;
  c.kind = "checkpoint";
  c.meta["config"] = config_;
  std::vector<std::string> words(text_.vocab().words().begin() + 2,
                                 text_.vocab().words().begin() + text_.vocab().word_count());
  c.meta["vocab"] = words;
  c.meta["specials"] = text_.vocab().specials();
  for (const auto* store : {&text_.params(), &unet_.params(), &extra_})
    for (const auto& [name, p] : store->entries()) c.tensors[name] = p.value();
  return c;
}

DiffusionModel DiffusionModel::from_container(const Container& c) {
  DiffusionModel model(c.meta.at("config").get<ModelConfig>(), c.meta.at("vocab").get<std::vector<std::string>>(), 0);
  for (const auto& name : c.meta.at("specials").get<std::vector<std::string>>()) model.text_.register_token(name, 0);
  for (auto* store : {&model.text_.params(), &model.unet_.params(), &model.extra_}) {
    for (auto& [name, p] : store->entries()) {
      const Eigen::MatrixXf& m = c.tensor(name);
      if (m.rows() != p.rows() || m.cols() != p.cols()) throw FormatError("tensor shape mismatch for " + name);
      p.mutable_value() = m;
    }
  }
  model.set_trainable(false);
  return model;
}

std::string save_checkpoint(const std::filesystem::path& path, const DiffusionModel& model,
                            const std::string& parent_hash, const nlohmann::json& info) {
  Container c = model.to_container();
  c.meta["parent_hash"] = parent_hash;
  c.meta["info"] = info.is_null() ? nlohmann::json::object() : info;
  save_container(path, c);
  return file_sha256(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Container c = load_container(path, "checkpoint");
  return {DiffusionModel::from_container(c), file_sha256(path), c.meta.value("parent_hash", std::string{}),
          c.meta.value("info", nlohmann::json::object())};
}

std::vector<double> train_base(DiffusionModel& model, const std::vector<TrainSample>& data, const TrainConfig& config,
                               const std::function<void(int, double)>& on_step) {
  if (data.empty()) throw std::invalid_argument("train_base: empty dataset");
  const auto& sched = model.scheduler();
  const int t_max = sched.config().train_steps - 1;
  std::map<std::string, text::TokenSeq> token_cache;
  for (const auto& s : data)
    if (!token_cache.count(s.caption)) token_cache.emplace(s.caption, model.tokenize(s.caption));

  model.set_trainable(true);
  nn::Adam<float> opt(model.parameters(), {.lr = config.lr});
  nn::Rng rng = seeded(config.seed, 7);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, t_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    const double warm = config.warmup > 0 ? std::min(1.0, (step + 1.0) / config.warmup) : 1.0;
    opt.set_lr(config.lr * warm);
    opt.zero_grad();
    double total = 0.0;
    for (int b = 0; b < config.batch; ++b) {
      const TrainSample& s = data[pick(rng)];
      const int t = pick_t(rng);
      const Eigen::MatrixXf eps = nn::gaussian<float>(3, s.x0.cols(), rng);
      const bool drop = unit(rng) < config.cond_drop;
      const Var<float> text = drop ? model.null_text() : model.text().encode(token_cache.at(s.caption)).tokens;
      const Var<float> z = ad::constant<float>(add_noise(sched, s.x0, eps, t));
      Var<float> loss = ad::mse(model.predict(z, t, text), ad::constant<float>(eps));
      total += loss.item();
      ad::backward(ad::scale(loss, 1.0f / static_cast<float>(config.batch)));
    }
    const double mean = total / config.batch;
    if (!std::isfinite(mean)) throw NumericalError("non-finite training loss", step);
    opt.step();
    losses.push_back(mean);
    if (on_step) on_step(step, mean);
  }
  model.set_trainable(false);
  return losses;
}

double evaluate_eps_mse(const DiffusionModel& model, const std::vector<TrainSample>& data, int draws,
                        std::uint64_t seed) {
  ad::NoGradGuard guard;
  nn::Rng rng = seeded(seed, 11);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, model.scheduler().config().train_steps - 1);
  double total = 0.0;
  for (int i = 0; i < draws; ++i) {
    const TrainSample& s = data[pick(rng)];
    const int t = pick_t(rng);
    const Eigen::MatrixXf eps = nn::gaussian<float>(3, s.x0.cols(), rng);
    const Eigen::MatrixXf z = add_noise(model.scheduler(), s.x0, eps, t);
    const Eigen::MatrixXf pred = model.predict_noise(z, t, model.encode(s.caption).tokens);
    total += (pred - eps).squaredNorm() / static_cast<double>(eps.size());
  }
  return total / draws;
}

}  // namespace idedit::diffusion
