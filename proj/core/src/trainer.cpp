// Copyright 2026 The DebiasQE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "qe/trainer.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "qe/error.hpp"

namespace qe {
namespace {

using nlohmann::json;
using nn::Tensor;

constexpr const char* kFormat = "qe-checkpoint-1";

json to_json(const GeneratorConfig& g) {
  return {{"channels", g.channels}, {"num_blocks", g.num_blocks},
          {"in_channels", g.in_channels}, {"out_channels", g.out_channels}};
}

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig g;
  g.channels = j.at("channels");
  g.num_blocks = j.at("num_blocks");
  g.in_channels = j.at("in_channels");
  g.out_channels = j.at("out_channels");
  return g;
}

json to_json(const DiscriminatorConfig& d) {
  return {{"arch", std::string(disc_arch_name(d.arch))}, {"conditional", d.conditional},
          {"spectral_norm", d.spectral_norm}, {"image_channels", d.image_channels},
          {"channels", d.channels}, {"num_stages", d.num_stages}};
}

DiscriminatorConfig discriminator_from_json(const json& j) {
  DiscriminatorConfig d;
  d.arch = parse_disc_arch(j.at("arch").get<std::string>());
  d.conditional = j.at("conditional");
  d.spectral_norm = j.at("spectral_norm");
  d.image_channels = j.at("image_channels");
  d.channels = j.at("channels");
  d.num_stages = j.at("num_stages");
  return d;
}

void set_trainable(const nn::ParameterList& params, bool on) {
  for (const auto& [name, p] : params) {
    Tensor h = p;
    h.set_requires_grad(on);
  }
}

struct Batch {
  Tensor raw, compressed;
};

Batch draw_batch(std::span<const ImageTriplet> data, const TrainConfig& cfg, std::mt19937_64& rng) {
  std::vector<ImageTensor> raw, comp;
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::bernoulli_distribution flip(0.5);
  for (int b = 0; b < cfg.batch_size; ++b) {
    const ImageTriplet& t = data[pick(rng)];
    std::uniform_int_distribution<int> ys(0, t.raw.height() - cfg.patch_size);
    std::uniform_int_distribution<int> xs(0, t.raw.width() - cfg.patch_size);
    const int y = ys(rng), x = xs(rng);
    const bool f = cfg.random_flip && flip(rng);
    ImageTensor r = t.raw.crop(y, x, cfg.patch_size, cfg.patch_size);
    ImageTensor c = t.compressed.crop(y, x, cfg.patch_size, cfg.patch_size);
    if (f) {
      r = r.flipped_horizontal();
      c = c.flipped_horizontal();
    }
    raw.push_back(std::move(r));
    comp.push_back(std::move(c));
  }
  return {nn::images_to_tensor(raw), nn::images_to_tensor(comp)};
}

void check_data(std::span<const ImageTriplet> data, const TrainConfig& cfg) {
  if (data.empty()) throw Error("empty manifest: no training triplets");
  for (const auto& t : data) {
    if (!t.raw.same_shape(t.compressed)) throw ShapeError("shape mismatch in " + t.source_id);
    if (t.raw.channels() != cfg.generator.in_channels) {
      throw ShapeError(t.source_id + " has " + std::to_string(t.raw.channels()) +
                       " channels, generator expects " + std::to_string(cfg.generator.in_channels));
    }
    if (t.raw.height() < cfg.patch_size || t.raw.width() < cfg.patch_size) {
      throw Error("patch larger than image: " + t.source_id + " is smaller than patch_size " +
                  std::to_string(cfg.patch_size));
    }
  }
}

json record_json(const StepRecord& r) {
  return {{"step", r.step},           {"recon", r.gen.recon},           {"percept", r.gen.percept},
          {"discrim", r.gen.discrim}, {"domain_div", r.gen.domain_div}, {"total", r.gen.total},
          {"d_cr", r.gen.d_cr},       {"d_ce", r.gen.d_ce},             {"disc_objective", r.disc_objective},
          {"warmup", r.warmup}};
}

nn::TensorArchive read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  nn::TensorArchive a;
  try {
    a = nn::read_safetensors(path);
  } catch (const IoError& e) {
    throw IoError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  auto it = a.metadata.find("format");
  if (it == a.metadata.end() || it->second != kFormat) {
    throw IoError("corrupt checkpoint " + path.string() + ": missing format tag");
  }
  return a;
}

const std::string& meta(const nn::TensorArchive& a, const std::string& key,
                        const std::filesystem::path& path) {
  auto it = a.metadata.find(key);
  if (it == a.metadata.end()) {
    throw IoError("corrupt checkpoint " + path.string() + ": missing " + key);
  }
  return it->second;
}

void import_checked(const nn::ParameterList& params, const std::string& prefix,
                    const nn::TensorArchive& a, const std::filesystem::path& path) {
  for (const auto& [name, p] : params) {
    if (!a.contains(prefix + name)) {
      throw IoError("architecture mismatch: " + path.string() + " lacks " + prefix + name);
    }
  }
  nn::import_parameters(params, prefix, a);
}

void import_buffers(const nn::BufferList& buffers, const std::string& prefix,
                    const nn::TensorArchive& a, const std::filesystem::path& path) {
  for (const auto& [name, buf] : buffers) {
    if (!a.contains(prefix + name)) {
      throw IoError("architecture mismatch: " + path.string() + " lacks " + prefix + name);
    }
    const auto& v = a.at(prefix + name).values;
    if (v.size() != buf->size()) throw IoError("architecture mismatch: " + prefix + name);
    *buf = v;
  }
}

}  // namespace

std::string_view ablation_name(Ablation a) {
  switch (a) {
    case Ablation::Vanilla: return "vanilla";
    case Ablation::CondDOnly: return "cond_d_only";
    case Ablation::RegOnly: return "reg_only";
    case Ablation::Full: return "full";
  }
  return "full";
}

Ablation parse_ablation(std::string_view name) {
  for (Ablation a : {Ablation::Vanilla, Ablation::CondDOnly, Ablation::RegOnly, Ablation::Full}) {
    std::string upper(ablation_name(a));
    for (auto& ch : upper) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (name == ablation_name(a) || name == upper) return a;
  }
  throw ConfigError("unknown ablation '" + std::string(name) + "'");
}

DiscriminatorConfig TrainConfig::effective_discriminator() const {
  DiscriminatorConfig d = discriminator;
  d.conditional = conditional();
  d.image_channels = generator.out_channels;
  return d;
}

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train.steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (patch_size < 8) throw ConfigError("train.patch_size must be >= 8");
  if (!(lr_g > 0) || !(lr_d > 0)) throw ConfigError("learning rates must be positive");
  if (warmup_steps < 0 || checkpoint_every < 0) throw ConfigError("step counts must be >= 0");
  weights.validate();
  if (regularized() && !(weights.lambda_R > 0)) {
    throw ConfigError("ablation " + std::string(ablation_name(ablation)) + " needs lambda_R > 0");
  }
  if ((weights.lambda_p > 0 || regularized()) && taps.empty()) {
    throw ConfigError("feature losses need at least one tap");
  }
}

TrainState init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.rng.seed(cfg.seed);
  s.generator = Generator(cfg.generator);
  s.generator.init_random(s.rng);
  s.discriminator = Discriminator(cfg.effective_discriminator());
  s.discriminator.init_random(s.rng);
  s.opt_g = nn::Adam(s.generator.parameters(), {cfg.lr_g, 0.9, 0.99, 1e-8});
  s.opt_d = nn::Adam(s.discriminator.parameters(), {cfg.lr_d, 0.9, 0.99, 1e-8});
  return s;
}

void train_steps(TrainState& state, const TrainConfig& cfg, std::span<const ImageTriplet> data,
                 const FeatureExtractor* extractor, int target_step, const TrainHooks& hooks) {
  cfg.validate();
  if (state.step >= target_step) return;
  check_data(data, cfg);
  const bool need_features = cfg.weights.lambda_p > 0 || cfg.regularized();
  if (need_features && !extractor) {
    throw Error("extractor unavailable: feature weights are required when lambda_p > 0 or lambda_R > 0");
  }
  std::ofstream log;
  if (!hooks.out_dir.empty()) {
    std::filesystem::create_directories(hooks.out_dir / "checkpoints");
    log.open(hooks.out_dir / "train_log.jsonl", state.step == 0 ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot write " + (hooks.out_dir / "train_log.jsonl").string());
  }
  const nn::ParameterList g_params = state.generator.parameters();
  const nn::ParameterList d_params = state.discriminator.parameters();
  const bool conditional = cfg.conditional();

  while (state.step < target_step) {
    const int step = state.step + 1;
    const bool warmup = step <= cfg.warmup_steps;
    Batch batch = draw_batch(data, cfg, state.rng);

    // Generator update; D is frozen so its weights collect no gradient.
    set_trainable(d_params, false);
    state.opt_g.zero_grad();
    Tensor enhanced = state.generator.forward(batch.compressed);
    LossWeights w = cfg.weights;
    w.lambda_R = cfg.effective_lambda_R();
    if (warmup) w.lambda_p = w.lambda_d = w.lambda_R = 0.0;
    Tensor recon = recon_loss(enhanced, batch.raw);
    Tensor percept, adv;
    DomainDivergence div;
    if (w.lambda_p > 0) percept = percept_loss(enhanced, batch.raw, *extractor, cfg.taps);
    if (w.lambda_d > 0) {
      adv = gen_adv_loss(state.discriminator, enhanced, batch.raw, batch.compressed, cfg.adv_kind,
                         conditional);
    }
    if (extractor && !cfg.taps.empty()) {
      div = domain_div_loss(enhanced, batch.raw, batch.compressed, *extractor, cfg.taps);
      // Distances are always logged; the hinge only enters when enabled.
      if (w.lambda_R == 0.0) div.loss = Tensor();
    }
    GeneratorLoss g_loss;
    try {
      g_loss = gen_total_loss(recon, percept, adv, div, w);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
    if (g_loss.total.requires_grad()) g_loss.total.backward();
    state.opt_g.step();
    set_trainable(d_params, true);

    StepRecord rec;
    rec.step = step;
    rec.gen = g_loss.report;
    rec.warmup = warmup;
    if (!warmup) {
      state.opt_d.zero_grad();
      Tensor objective = disc_loss(state.discriminator, enhanced, batch.raw, batch.compressed,
                                   cfg.adv_kind, conditional, true);
      rec.disc_objective = objective.item();
      if (!std::isfinite(rec.disc_objective)) {
        throw NumericError("step " + std::to_string(step) + ": non-finite loss: disc");
      }
      nn::mul_scalar(objective, -1.0).backward();
      state.opt_d.step();
    }
    state.step = step;

    if (log) {
      log << record_json(rec).dump() << '\n';
      log.flush();
    }
    if (hooks.on_step) hooks.on_step(rec);
    if (!hooks.out_dir.empty() &&
        ((cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || step == target_step)) {
      save_checkpoint(state, cfg, checkpoint_name(hooks.out_dir / "checkpoints", step));
    }
  }
}

TrainState train(const Manifest& manifest, const TrainConfig& cfg,
                 const FeatureExtractor* extractor, const TrainHooks& hooks) {
  if (manifest.entries.empty()) throw Error("empty manifest: no training triplets");
  TrainState state = init_train_state(cfg);
  const std::vector<ImageTriplet> data = load_triplets(manifest);
  train_steps(state, cfg, data, extractor, cfg.steps, hooks);
  return state;
}

std::filesystem::path checkpoint_name(const std::filesystem::path& dir, int step) {
  return dir / ("step_" + std::to_string(step) + ".ckpt");
}

void save_checkpoint(TrainState& state, const TrainConfig& cfg, const std::filesystem::path& path) {
  nn::TensorArchive a;
  nn::export_parameters(state.generator.parameters(), "generator.", a);
  nn::export_parameters(state.discriminator.parameters(), "discriminator.", a);
  for (const auto& [name, buf] : state.discriminator.buffers()) {
    a.tensors["discriminator." + name] = {{static_cast<std::int64_t>(buf->size())}, *buf};
  }
  state.opt_g.save(a, "opt_g");
  state.opt_d.save(a, "opt_d");
  std::ostringstream rng;
  rng << state.rng;
  a.metadata["format"] = kFormat;
  a.metadata["step"] = std::to_string(state.step);
  a.metadata["rng"] = rng.str();
  a.metadata["generator_config"] = to_json(state.generator.config()).dump();
  a.metadata["discriminator_config"] = to_json(state.discriminator.config()).dump();
  a.metadata["ablation"] = std::string(ablation_name(cfg.ablation));
  nn::write_safetensors(a, path, nn::StorageType::F64);
}

TrainState resume(const std::filesystem::path& path, const TrainConfig& cfg) {
  const nn::TensorArchive a = read_checkpoint(path);
  GeneratorConfig g;
  DiscriminatorConfig d;
  try {
    g = generator_from_json(json::parse(meta(a, "generator_config", path)));
    d = discriminator_from_json(json::parse(meta(a, "discriminator_config", path)));
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  if (!(g == cfg.generator)) {
    throw IoError("architecture mismatch: checkpoint generator " + to_json(g).dump() +
                  " vs config " + to_json(cfg.generator).dump());
  }
  if (!(d == cfg.effective_discriminator())) {
    throw IoError("architecture mismatch: checkpoint discriminator " + to_json(d).dump() +
                  " vs config " + to_json(cfg.effective_discriminator()).dump());
  }
  TrainState s = init_train_state(cfg);
  import_checked(s.generator.parameters(), "generator.", a, path);
  import_checked(s.discriminator.parameters(), "discriminator.", a, path);
  import_buffers(s.discriminator.buffers(), "discriminator.", a, path);
  try {
    s.opt_g.load(a, "opt_g");
    s.opt_d.load(a, "opt_d");
    s.step = std::stoi(meta(a, "step", path));
  } catch (const std::invalid_argument&) {
    throw IoError("corrupt checkpoint " + path.string() + ": bad step counter");
  }
  std::istringstream rng(meta(a, "rng", path));
  rng >> s.rng;
  if (!rng) throw IoError("corrupt checkpoint " + path.string() + ": bad rng state");
  return s;
}

Generator load_generator(const std::filesystem::path& path) {
  const nn::TensorArchive a = read_checkpoint(path);
  GeneratorConfig cfg;
  try {
    cfg = generator_from_json(json::parse(meta(a, "generator_config", path)));
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  Generator g(cfg);
  import_checked(g.parameters(), "generator.", a, path);
  return g;
}

Discriminator load_discriminator(const std::filesystem::path& path) {
  const nn::TensorArchive a = read_checkpoint(path);
  DiscriminatorConfig cfg;
  try {
    cfg = discriminator_from_json(json::parse(meta(a, "discriminator_config", path)));
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  Discriminator d(cfg);
  import_checked(d.parameters(), "discriminator.", a, path);
  import_buffers(d.buffers(), "discriminator.", a, path);
  return d;
}

void save_generator(const Generator& g, const std::filesystem::path& path) {
  nn::TensorArchive a;
  nn::export_parameters(g.parameters(), "generator.", a);
  a.metadata["format"] = kFormat;
  a.metadata["step"] = "0";
  a.metadata["generator_config"] = to_json(g.config()).dump();
  nn::write_safetensors(a, path, nn::StorageType::F64);
}

std::uint64_t weights_digest(const nn::ParameterList& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, p] : params) {
    for (double v : p.values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

}  // namespace qe
