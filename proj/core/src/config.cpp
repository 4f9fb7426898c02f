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

#include "qe/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "qe/error.hpp"

extern char** environ;

namespace qe {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool parse_bool(const std::string& v, bool& out) {
  const std::string s = lower(v);
  if (s == "true" || s == "yes" || s == "on" || s == "1") {
    out = true;
    return true;
  }
  if (s == "false" || s == "no" || s == "off" || s == "0") {
    out = false;
    return true;
  }
  return false;
}

bool parse_int(const std::string& v, long long& out) {
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  return ec == std::errc() && p == end;
}

bool parse_real(const std::string& v, double& out) {
  if (v.empty()) return false;
  char* end = nullptr;
  out = std::strtod(v.c_str(), &end);
  return end == v.c_str() + v.size() && std::isfinite(out);
}

void flatten(const YAML::Node& node, const std::string& prefix,
             std::vector<std::pair<std::string, std::string>>& out, const std::string& origin) {
  if (node.IsMap()) {
    for (const auto& kv : node) {
      const std::string k = kv.first.as<std::string>();
      flatten(kv.second, prefix.empty() ? k : prefix + "." + k, out, origin);
    }
  } else if (node.IsScalar()) {
    out.emplace_back(prefix, node.as<std::string>());
  } else if (node.IsSequence()) {
    // Lists become comma-joined strings ("fid,lpips").
    std::string joined;
    for (const auto& item : node) {
      if (!item.IsScalar()) throw ConfigError(origin + ": nested list under '" + prefix + "'");
      if (!joined.empty()) joined += ",";
      joined += item.as<std::string>();
    }
    out.emplace_back(prefix, joined);
  } else if (node.IsNull()) {
    out.emplace_back(prefix, "");
  }
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  using K = Kind;
  c.define("seed", K::Int, "0");
  c.define("jobs", K::Int, "1");

  c.define("codec.family", K::String, "jpeg");
  c.define("codec.qualities", K::String, "10");
  c.define("codec.bpg_chroma", K::String, "420");
  c.define("codec.require_standard_grid", K::Bool, "true");

  c.define("prepare.synthetic", K::Int, "0");
  c.define("prepare.size", K::Int, "64");
  c.define("prepare.patch_size", K::Int, "0");
  c.define("prepare.patch_stride", K::Int, "0");

  c.define("train.steps", K::Int, "2000");
  c.define("train.batch_size", K::Int, "8");
  c.define("train.patch_size", K::Int, "128");
  c.define("train.lr_g", K::Real, "1e-4");
  c.define("train.lr_d", K::Real, "1e-4");
  c.define("train.ablation", K::String, "full");
  c.define("loss.adv_kind", K::String, "vanilla");
  c.define("train.warmup_steps", K::Int, "0");
  c.define("train.random_flip", K::Bool, "true");
  c.define("train.checkpoint_every", K::Int, "0");

  c.define("loss.lambda_r", K::Real, "1e-2");
  c.define("loss.lambda_p", K::Real, "1.0");
  c.define("loss.lambda_d", K::Real, "5e-3");
  c.define("loss.lambda_R", K::Real, "1e-1");

  c.define("model.generator.channels", K::Int, "64");
  c.define("model.generator.num_blocks", K::Int, "8");
  c.define("model.discriminator.arch", K::String, "vgg_style");
  c.define("model.discriminator.spectral_norm", K::Bool, "false");
  c.define("model.discriminator.channels", K::Int, "64");
  c.define("model.discriminator.num_stages", K::Int, "3");

  c.define("percept.backbone", K::String, "vgg19");
  c.define("percept.weights", K::String, "");
  c.define("percept.seed", K::Int, "7");
  c.define("percept.tap.block", K::Int, "5");
  c.define("percept.tap.pre_activation", K::Bool, "true");
  c.define("percept.tap.blocks", K::String, "");

  c.define("fid.backbone", K::String, "inception");
  c.define("fid.backbone_weights", K::String, "");
  c.define("fid.patch_size", K::Int, "128");

  c.define("lpips.weights", K::String, "");
  c.define("lpips.backbone_weights", K::String, "");

  c.define("eval.metrics", K::String, "psnr,lpips,fid");
  c.define("eval.scorer", K::String, "");

  c.define("bias.patch_size", K::Int, "128");
  c.define("bias.metrics", K::String, "fid,lpips");
  c.define("bias.residual_amplify", K::Real, "5");
  c.define("bias.residual_maps", K::Int, "4");
  return c;
}

void RunConfig::define(const std::string& key, Kind kind, std::string value) {
  kinds_[key] = kind;
  values_[key] = std::move(value);
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("expected key=value, got '" + assignment + "'");
  }
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = kinds_.find(key);
  if (it == kinds_.end()) throw ConfigError("unknown config key '" + key + "'");
  bool b;
  long long i;
  double r;
  const bool ok = it->second == Kind::Bool   ? parse_bool(value, b)
                  : it->second == Kind::Int  ? parse_int(value, i)
                  : it->second == Kind::Real ? parse_real(value, r)
                                             : true;
  if (!ok) throw ConfigError("invalid value '" + value + "' for config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::merge_yaml(const std::string& text, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (root.IsNull()) return;
  if (!root.IsMap()) throw ConfigError(origin + ": top level must be a mapping");
  std::vector<std::pair<std::string, std::string>> flat;
  flatten(root, "", flat, origin);
  for (const auto& [k, v] : flat) {
    try {
      set(k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  merge_yaml(ss.str(), path.string());
}

void RunConfig::merge_env(const std::map<std::string, std::string>& env) {
  const std::string prefix = "QE__";
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    std::string key;
    std::string rest = name.substr(prefix.size());
    std::size_t pos = 0;
    while (true) {
      const auto next = rest.find("__", pos);
      const std::string part = rest.substr(pos, next == std::string::npos ? next : next - pos);
      if (!key.empty()) key += ".";
      key += part;
      if (next == std::string::npos) break;
      pos = next + 2;
    }
    // Environment names are usually upper case, so fold case unless the
    // spelling is exact. loss.lambda_r and loss.lambda_R only differ in case.
    std::vector<std::string> matches;
    if (kinds_.count(key)) {
      matches.push_back(key);
    } else {
      for (const auto& [k, kind] : kinds_) {
        if (lower(k) == lower(key)) matches.push_back(k);
      }
    }
    if (matches.empty()) throw ConfigError("unknown config key from " + name);
    if (matches.size() > 1) {
      throw ConfigError("ambiguous config key from " + name + ": matches " + matches[0] +
                        " and " + matches[1] + "; spell the key with its exact case");
    }
    set(matches.front(), value);
  }
}

void RunConfig::merge_process_env() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry = *e;
    const auto eq = entry.find('=');
    if (eq != std::string::npos) env[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  merge_env(env);
}

const std::string& RunConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::string RunConfig::get_string(const std::string& key) const { return raw(key); }

long long RunConfig::get_int(const std::string& key) const {
  long long v = 0;
  if (!parse_int(raw(key), v)) throw ConfigError("config key '" + key + "' is not an integer");
  return v;
}

double RunConfig::get_real(const std::string& key) const {
  double v = 0;
  if (!parse_real(raw(key), v)) throw ConfigError("config key '" + key + "' is not a number");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  bool v = false;
  if (!parse_bool(raw(key), v)) throw ConfigError("config key '" + key + "' is not a boolean");
  return v;
}

namespace {

struct DumpNode {
  std::map<std::string, DumpNode> children;
  const std::string* value = nullptr;
  bool quoted = false;
};

void emit(YAML::Emitter& out, const DumpNode& node) {
  out << YAML::BeginMap;
  for (const auto& [name, child] : node.children) {
    out << YAML::Key << name << YAML::Value;
    if (child.value) {
      if (child.quoted) {
        out << YAML::DoubleQuoted << *child.value;
      } else {
        out << *child.value;
      }
    } else {
      emit(out, child);
    }
  }
  out << YAML::EndMap;
}

}  // namespace

std::string RunConfig::dump() const {
  DumpNode root;
  for (const auto& [key, value] : values_) {
    DumpNode* node = &root;
    std::stringstream ss(key);
    for (std::string p; std::getline(ss, p, '.');) node = &node->children[p];
    node->value = &value;
    // Strings are quoted so "10" or "true" read back as strings.
    node->quoted = kinds_.at(key) == Kind::String;
  }
  YAML::Emitter out;
  emit(out, root);
  return std::string(out.c_str()) + "\n";
}

void RunConfig::write_resolved(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.resolved");
  out << dump();
  if (!out) throw IoError("cannot write " + (dir / "config.resolved").string());
}

TrainConfig to_train_config(const RunConfig& c) {
  TrainConfig t;
  t.steps = static_cast<int>(c.get_int("train.steps"));
  t.batch_size = static_cast<int>(c.get_int("train.batch_size"));
  t.patch_size = static_cast<int>(c.get_int("train.patch_size"));
  t.lr_g = c.get_real("train.lr_g");
  t.lr_d = c.get_real("train.lr_d");
  t.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  t.ablation = parse_ablation(c.get_string("train.ablation"));
  t.adv_kind = parse_adv_kind(c.get_string("loss.adv_kind"));
  t.warmup_steps = static_cast<int>(c.get_int("train.warmup_steps"));
  t.random_flip = c.get_bool("train.random_flip");
  t.checkpoint_every = static_cast<int>(c.get_int("train.checkpoint_every"));
  t.weights = {c.get_real("loss.lambda_r"), c.get_real("loss.lambda_p"),
               c.get_real("loss.lambda_d"), c.get_real("loss.lambda_R")};
  t.generator.channels = static_cast<int>(c.get_int("model.generator.channels"));
  t.generator.num_blocks = static_cast<int>(c.get_int("model.generator.num_blocks"));
  t.discriminator.arch = parse_disc_arch(c.get_string("model.discriminator.arch"));
  t.discriminator.spectral_norm = c.get_bool("model.discriminator.spectral_norm");
  t.discriminator.channels = static_cast<int>(c.get_int("model.discriminator.channels"));
  t.discriminator.num_stages = static_cast<int>(c.get_int("model.discriminator.num_stages"));
  const bool pre = c.get_bool("percept.tap.pre_activation");
  t.taps.clear();
  const std::string blocks = c.get_string("percept.tap.blocks");
  if (blocks.empty()) {
    t.taps.push_back({Backbone::Vgg19, static_cast<int>(c.get_int("percept.tap.block")), pre});
  } else {
    std::stringstream ss(blocks);
    for (std::string b; std::getline(ss, b, ',');) {
      long long v = 0;
      if (!parse_int(b, v)) throw ConfigError("percept.tap.blocks: bad block '" + b + "'");
      t.taps.push_back({Backbone::Vgg19, static_cast<int>(v), pre});
    }
  }
  t.validate();
  return t;
}

CompressOptions to_compress_options(const RunConfig& c) {
  CompressOptions o;
  o.bpg_chroma = parse_chroma(c.get_string("codec.bpg_chroma"));
  o.require_standard_grid = c.get_bool("codec.require_standard_grid");
  return o;
}

std::shared_ptr<const VggBackbone> build_vgg(const RunConfig& c) {
  const std::string weights = c.get_string("percept.weights");
  const std::string backbone = c.get_string("percept.backbone");
  if (!weights.empty()) return std::make_shared<VggBackbone>(VggBackbone::load(weights));
  if (backbone == "desk") {
    return std::make_shared<VggBackbone>(
        VggBackbone::seeded(desk_vgg_layout(), static_cast<std::uint64_t>(c.get_int("percept.seed"))));
  }
  if (backbone == "vgg19") {
    throw Error("extractor unavailable: percept.weights must name a VGG-19 weight file");
  }
  throw ConfigError("unknown percept.backbone '" + backbone + "' (expected vgg19 or desk)");
}

std::shared_ptr<const PooledBackbone> build_pooled(const RunConfig& c,
                                                   std::shared_ptr<const VggBackbone> vgg) {
  const std::string kind = c.get_string("fid.backbone");
  if (kind == "pooled_vgg") return std::make_shared<PooledVgg>(std::move(vgg));
  if (kind == "inception") {
    const std::string w = c.get_string("fid.backbone_weights");
    if (w.empty()) throw Error("extractor unavailable: fid.backbone_weights is not set");
    return std::make_shared<InceptionV3>(InceptionV3::load(w));
  }
  throw ConfigError("unknown fid.backbone '" + kind + "' (expected inception or pooled_vgg)");
}

FeatureExtractor build_extractor(const RunConfig& c) {
  auto vgg = build_vgg(c);
  return FeatureExtractor(vgg, build_pooled(c, vgg));
}

Lpips build_lpips(const RunConfig& c, std::shared_ptr<const VggBackbone> vgg) {
  const std::string bw = c.get_string("lpips.backbone_weights");
  if (!bw.empty()) vgg = std::make_shared<VggBackbone>(VggBackbone::load(bw));
  const std::string w = c.get_string("lpips.weights");
  if (w.empty()) return Lpips(std::move(vgg));
  return Lpips::load(std::move(vgg), w);
}

}  // namespace qe
