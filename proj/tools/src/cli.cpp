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

#include "qe_cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "plots.hpp"
#include "qe/bias.hpp"
#include "qe/codec.hpp"
#include "qe/config.hpp"
#include "qe/error.hpp"
#include "qe/metrics.hpp"
#include "qe/parallel.hpp"
#include "qe/trainer.hpp"

namespace qe::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::array<const char*, 7> kCommands = {"prepare", "compress",    "train",    "enhance",
                                                  "eval",    "bias-report", "rd-curves"};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(what + ": '" + item + "' is not an integer");
    }
  }
  if (out.empty()) throw ConfigError(what + ": empty list");
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Output bookkeeping for one command: every file written is listed in
/// outputs.json next to config.resolved.
class Outputs {
 public:
  Outputs(std::string command, fs::path dir) : command_(std::move(command)), dir_(std::move(dir)) {
    fs::create_directories(dir_);
  }
  const fs::path& dir() const { return dir_; }
  fs::path add(const fs::path& relative) {
    files_.push_back(relative.generic_string());
    return dir_ / relative;
  }
  void note(const std::string& key, json value) { extra_[key] = std::move(value); }
  void finish(const RunConfig& cfg) {
    cfg.write_resolved(dir_);
    json j;
    j["command"] = command_;
    std::sort(files_.begin(), files_.end());
    files_.erase(std::unique(files_.begin(), files_.end()), files_.end());
    j["outputs"] = files_;
    j["config"] = "config.resolved";
    for (auto& [k, v] : extra_.items()) j[k] = v;
    std::ofstream out(dir_ / "outputs.json");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (dir_ / "outputs.json").string());
    // A record left by an earlier failed run no longer describes this directory.
    std::error_code ec;
    fs::remove(dir_ / "error.json", ec);
  }

 private:
  std::string command_;
  fs::path dir_;
  std::vector<std::string> files_;
  json extra_ = json::object();
};

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  out << std::setprecision(17) << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

json to_json(const TriangleReport& r) {
  const Apex a = apex_position(r);
  return {{"metric_id", r.metric_id}, {"label", r.label},       {"s_ce", r.s_ce},
          {"s_cr", r.s_cr},           {"s_re", r.s_re},         {"deviation_pct", r.deviation_pct},
          {"apex", {{"x", a.x}, {"y", a.y}, {"flattened", a.flattened}}}};
}

json to_json(const RealismReport& r) {
  return {{"mean_score_raw", r.mean_score_raw},
          {"mean_score_compressed", r.mean_score_compressed},
          {"mean_score_enhanced", r.mean_score_enhanced},
          {"delta_enh_to_raw", r.delta_enh_to_raw},
          {"delta_comp_to_raw", r.delta_comp_to_raw},
          {"patch_size", r.patch_size},
          {"n_patches", r.n_patches}};
}

json to_json(const RdCurve& c) {
  json pts = json::array();
  for (const auto& p : c.points) pts.push_back({{"bpp", p.bpp}, {"quality", p.quality}});
  return {{"label", c.label},
          {"codec", std::string(codec_name(c.codec))},
          {"metric_id", c.metric_id},
          {"higher_is_better", c.higher_is_better},
          {"points", pts}};
}

/// Fails with the first source_id that has no enhanced image.
void require_enhanced(const Manifest& m) {
  for (const auto& e : m.entries) {
    if (!e.enhanced_path) throw Error("missing enhanced image for source_id " + e.source_id);
  }
}

std::vector<ImageTriplet> fid_patches(std::span<const ImageTriplet> data, int size) {
  std::vector<ImageTriplet> out;
  for (const auto& t : data) {
    auto p = crop_patches(t, PatchSpec{size, 0, 0, 0});
    out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return out;
}

FeatureStats pooled_stats(std::span<const ImageTriplet> patches, int which,
                          const FeatureExtractor& ex, int jobs) {
  std::vector<ImageTensor> images;
  images.reserve(patches.size());
  for (const auto& t : patches) {
    images.push_back(which == 0 ? t.raw : which == 1 ? t.compressed : *t.enhanced);
  }
  return extract_dataset_stats(images, FeatureTapSpec{Backbone::InceptionPool, 5, true}, ex, jobs);
}

// ---------------------------------------------------------------------------
// Commands. Each returns after writing its outputs; errors propagate.

struct Common {
  std::vector<std::string> config_files;
  std::vector<std::string> sets;
  int jobs = 0;
  std::string out;
};

RunConfig resolve(const Common& c, const std::vector<std::pair<std::string, std::string>>& flags) {
  RunConfig cfg = RunConfig::defaults();
  for (const auto& f : c.config_files) cfg.merge_file(f);
  cfg.merge_process_env();
  for (const auto& s : c.sets) cfg.set(s);
  for (const auto& [k, v] : flags) cfg.set(k, v);
  if (c.jobs > 0) cfg.set("jobs", std::to_string(c.jobs));
  if (cfg.get_int("jobs") < 1) throw ConfigError("jobs must be at least 1");
  return cfg;
}

int jobs_of(const RunConfig& cfg) { return static_cast<int>(cfg.get_int("jobs")); }

void cmd_prepare(const RunConfig& cfg, const std::string& raw_dir, Outputs& out) {
  const int n = static_cast<int>(cfg.get_int("prepare.synthetic"));
  const int size = static_cast<int>(cfg.get_int("prepare.size"));
  const int patch = static_cast<int>(cfg.get_int("prepare.patch_size"));
  const int stride = static_cast<int>(cfg.get_int("prepare.patch_stride"));
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  if (n <= 0 && raw_dir.empty()) {
    throw ConfigError("prepare needs --raw-dir or --synthetic N");
  }
  std::vector<std::pair<std::string, ImageTensor>> images;
  if (n > 0) {
    if (size < 8) throw ConfigError("prepare.size must be at least 8");
    images.resize(n);
    parallel_for(n, jobs_of(cfg), [&](std::size_t i) {
      std::ostringstream name;
      name << "synth_" << std::setw(4) << std::setfill('0') << i;
      images[i] = {name.str(), synthetic_image(size, size, seed * 1000003ull + i)};
    });
  }
  if (!raw_dir.empty()) {
    const auto files = list_images(raw_dir);
    if (files.empty()) throw Error("no input images in " + raw_dir);
    for (const auto& f : files) images.emplace_back(f.stem().string(), read_png(f));
  }
  std::vector<std::pair<std::string, ImageTensor>> written;
  for (auto& [name, img] : images) {
    if (patch <= 0) {
      written.emplace_back(name, std::move(img));
      continue;
    }
    ImageTriplet t;
    t.raw = img;
    t.compressed = img;
    t.source_id = name;
    for (auto& p : crop_patches(t, PatchSpec{patch, stride, 0, seed})) {
      std::string id = p.source_id;
      std::replace(id.begin(), id.end(), '#', '_');
      written.emplace_back(id, std::move(p.raw));
    }
  }
  std::vector<fs::path> paths(written.size());
  for (std::size_t i = 0; i < written.size(); ++i) {
    paths[i] = out.add(fs::path("raw") / (file_stem_for(written[i].first) + ".png"));
  }
  fs::create_directories(out.dir() / "raw");
  parallel_for(written.size(), jobs_of(cfg),
               [&](std::size_t i) { write_png(written[i].second, paths[i]); });
  out.note("images", written.size());
}

void cmd_compress(const RunConfig& cfg, const std::string& raw_dir, const std::string& split,
                  Outputs& out) {
  if (raw_dir.empty()) throw ConfigError("compress needs --raw-dir");
  const CodecId id = parse_codec(cfg.get_string("codec.family"));
  std::vector<CodecSpec> codecs;
  for (int q : parse_int_list(cfg.get_string("codec.qualities"), "codec.qualities")) {
    codecs.push_back({id, q});
  }
  BuildOptions opts;
  opts.compress = to_compress_options(cfg);
  opts.jobs = jobs_of(cfg);
  opts.split = parse_split(split);
  const Manifest m = build_dataset(raw_dir, codecs, out.dir(), opts);
  out.add("manifest.jsonl");
  for (const auto& e : m.entries) {
    out.add(e.compressed_path);
    const fs::path bits = fs::path("bitstreams") / e.codec.tag() /
                          (fs::path(e.compressed_path).stem().string() +
                           (e.codec.id == CodecId::Jpeg ? ".jpg" : ".bpg"));
    out.add(bits);
  }
  out.note("entries", m.entries.size());
}

void cmd_train(const RunConfig& cfg, const std::string& manifest_path, const std::string& resume_from,
               Outputs& out) {
  if (manifest_path.empty()) throw ConfigError("train needs --manifest");
  const TrainConfig tc = to_train_config(cfg);
  const Manifest m = load_manifest(manifest_path);
  if (m.entries.empty()) throw Error("empty manifest: no training triplets");
  std::optional<FeatureExtractor> ex;
  if (tc.weights.lambda_p > 0 || tc.regularized()) ex.emplace(build_vgg(cfg));
  TrainState state = resume_from.empty() ? init_train_state(tc) : resume(resume_from, tc);
  const std::vector<ImageTriplet> data = load_triplets(m);
  TrainHooks hooks;
  hooks.out_dir = out.dir();
  int last_step = state.step;
  hooks.on_step = [&](const StepRecord& r) { last_step = r.step; };
  train_steps(state, tc, data, ex ? &*ex : nullptr, tc.steps, hooks);
  out.add("train_log.jsonl");
  for (const auto& entry : fs::directory_iterator(out.dir() / "checkpoints")) {
    out.add(fs::path("checkpoints") / entry.path().filename());
  }
  out.note("final_step", state.step);
  out.note("final_checkpoint",
           (fs::path("checkpoints") / checkpoint_name("", state.step).filename()).generic_string());
  out.note("generator_digest", std::to_string(weights_digest(state.generator.parameters())));
  (void)last_step;
}

void cmd_enhance(const RunConfig& cfg, const std::string& checkpoint,
                 const std::string& manifest_path, Outputs& out) {
  if (checkpoint.empty() || manifest_path.empty()) {
    throw ConfigError("enhance needs --checkpoint and --manifest");
  }
  const Generator g = load_generator(checkpoint);
  const Manifest m = load_manifest(manifest_path);
  const Manifest updated = enhance_manifest(g, m, out.dir(), jobs_of(cfg));
  save_manifest(updated, out.dir() / "manifest.jsonl");
  out.add("manifest.jsonl");
  for (const auto& e : updated.entries) out.add(*e.enhanced_path);
  out.note("entries", updated.entries.size());
}

void cmd_eval(const RunConfig& cfg, const std::string& manifest_path, Outputs& out) {
  if (manifest_path.empty()) throw ConfigError("eval needs --manifest");
  const Manifest m = load_manifest(manifest_path);
  require_enhanced(m);
  const auto metrics = split_list(cfg.get_string("eval.metrics"));
  const std::string scorer = cfg.get_string("eval.scorer");
  for (const auto& id : metrics) {
    if (id != "psnr" && id != "lpips" && id != "fid") {
      throw ConfigError("unknown metric '" + id + "' (expected psnr, lpips or fid)");
    }
  }
  auto has = [&](const char* id) { return std::find(metrics.begin(), metrics.end(), id) != metrics.end(); };
  const int jobs = jobs_of(cfg);
  const std::vector<ImageTriplet> data = load_triplets(m);

  std::shared_ptr<const VggBackbone> vgg;
  if (has("lpips") || has("fid")) vgg = build_vgg(cfg);
  std::optional<Lpips> lpips;
  if (has("lpips")) lpips.emplace(build_lpips(cfg, vgg));

  struct Row {
    double psnr_c = 0, psnr_e = 0, lp_c = 0, lp_e = 0, sc_c = 0, sc_e = 0;
  };
  std::vector<Row> rows(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    const auto& t = data[i];
    Row& r = rows[i];
    if (has("psnr")) {
      r.psnr_c = psnr(t.compressed, t.raw);
      r.psnr_e = psnr(*t.enhanced, t.raw);
    }
    if (lpips) {
      r.lp_c = lpips->distance(t.compressed, t.raw);
      r.lp_e = lpips->distance(*t.enhanced, t.raw);
    }
  });
  if (!scorer.empty()) {
    // Scorer processes run one at a time; they may hold their own resources.
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& e = m.entries[i];
      rows[i].sc_c = external_score(scorer, m.resolve(e.compressed_path), m.resolve(e.raw_path));
      rows[i].sc_e = external_score(scorer, m.resolve(*e.enhanced_path), m.resolve(e.raw_path));
    }
  }

  std::ofstream csv(out.add("per_image.csv"));
  csv << std::setprecision(10) << "source_id,codec,quality,bpp";
  if (has("psnr")) csv << ",psnr_compressed,psnr_enhanced";
  if (lpips) csv << ",lpips_compressed,lpips_enhanced";
  if (!scorer.empty()) csv << ",scorer_compressed,scorer_enhanced";
  csv << '\n';
  json agg;
  agg["n_images"] = data.size();
  std::vector<double> bpp, pc, pe, lc, le, sc, se;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& t = data[i];
    const Row& r = rows[i];
    csv << t.source_id << ',' << codec_name(t.codec.id) << ',' << t.codec.quality << ',' << t.bpp;
    bpp.push_back(t.bpp);
    if (has("psnr")) {
      csv << ',' << r.psnr_c << ',' << r.psnr_e;
      pc.push_back(r.psnr_c);
      pe.push_back(r.psnr_e);
    }
    if (lpips) {
      csv << ',' << r.lp_c << ',' << r.lp_e;
      lc.push_back(r.lp_c);
      le.push_back(r.lp_e);
    }
    if (!scorer.empty()) {
      csv << ',' << r.sc_c << ',' << r.sc_e;
      sc.push_back(r.sc_c);
      se.push_back(r.sc_e);
    }
    csv << '\n';
  }
  if (!csv) throw IoError("cannot write per_image.csv");
  agg["mean_bpp"] = mean_of(bpp);
  json mj = json::object();
  if (has("psnr")) mj["psnr"] = {{"compressed", mean_of(pc)}, {"enhanced", mean_of(pe)}};
  if (lpips) mj["lpips"] = {{"compressed", mean_of(lc)}, {"enhanced", mean_of(le)}};
  if (!scorer.empty()) mj["scorer"] = {{"compressed", mean_of(sc)}, {"enhanced", mean_of(se)}};
  if (has("fid")) {
    const FeatureExtractor ex(vgg, build_pooled(cfg, vgg));
    const auto patches = fid_patches(data, static_cast<int>(cfg.get_int("fid.patch_size")));
    const FeatureStats raw = pooled_stats(patches, 0, ex, jobs);
    mj["fid"] = {{"compressed", fid(raw, pooled_stats(patches, 1, ex, jobs))},
                 {"enhanced", fid(raw, pooled_stats(patches, 2, ex, jobs))},
                 {"n_patches", patches.size()}};
  }
  agg["metrics"] = mj;
  write_json(agg, out.add("aggregate.json"));
}

void cmd_bias_report(const RunConfig& cfg, const std::string& manifest_path,
                     const std::string& checkpoint, Outputs& out) {
  if (manifest_path.empty() || checkpoint.empty()) {
    throw ConfigError("bias-report needs --manifest and --checkpoint");
  }
  const Manifest m = load_manifest(manifest_path);
  std::vector<ImageTriplet> data = load_triplets(m);
  const int jobs = jobs_of(cfg);
  const bool any_missing = std::any_of(data.begin(), data.end(),
                                       [](const ImageTriplet& t) { return !t.enhanced; });
  if (any_missing) {
    // Enhance on the fly with the checkpoint's generator.
    const Generator g = load_generator(checkpoint);
    parallel_for(data.size(), jobs, [&](std::size_t i) {
      if (!data[i].enhanced) data[i].enhanced = enhance(g, data[i].compressed);
    });
  }
  Discriminator d = load_discriminator(checkpoint);
  const RealismReport realism =
      realism_scores(d, data, static_cast<int>(cfg.get_int("bias.patch_size")), jobs);
  write_json(to_json(realism), out.add("realism.json"));

  const auto vgg = build_vgg(cfg);
  const TrainConfig tc = to_train_config(cfg);
  const FeatureExtractor tap_ex(vgg);
  json dist = json::array();
  for (const auto& tap : tc.taps) {
    const DomainDistances dd = mean_domain_distances(data, tap_ex, tap, jobs);
    dist.push_back({{"block", tap.block},
                    {"pre_activation", tap.pre_activation},
                    {"d_cr", dd.d_cr},
                    {"d_ce", dd.d_ce},
                    {"d_re", dd.d_re}});
  }
  write_json(dist, out.add("domain_distances.json"));

  std::vector<TriangleReport> triangles;
  for (const auto& metric : split_list(cfg.get_string("bias.metrics"))) {
    std::vector<ImageTensor> raw, comp, enh;
    if (metric == "fid") {
      const FeatureExtractor ex(vgg, build_pooled(cfg, vgg));
      for (const auto& p : fid_patches(data, static_cast<int>(cfg.get_int("fid.patch_size")))) {
        raw.push_back(p.raw);
        comp.push_back(p.compressed);
        enh.push_back(*p.enhanced);
      }
      triangles.push_back(
          fid_triangle(raw, comp, enh, ex, {Backbone::InceptionPool, 5, true}, jobs));
    } else if (metric == "lpips") {
      for (const auto& t : data) {
        raw.push_back(t.raw);
        comp.push_back(t.compressed);
        enh.push_back(*t.enhanced);
      }
      triangles.push_back(lpips_triangle(raw, comp, enh, build_lpips(cfg, vgg), jobs));
    } else {
      throw ConfigError("unknown bias metric '" + metric + "' (expected fid or lpips)");
    }
  }
  json tj = json::array();
  for (const auto& t : triangles) tj.push_back(to_json(t));
  write_json(tj, out.add("triangles.json"));
  const auto warnings = triangle_plot(triangles, out.add("triangles.svg"));
  out.note("warnings", warnings);

  const int maps = static_cast<int>(cfg.get_int("bias.residual_maps"));
  const double amplify = cfg.get_real("bias.residual_amplify");
  for (int i = 0; i < std::min<int>(maps, static_cast<int>(data.size())); ++i) {
    const std::string stem = file_stem_for(data[i].source_id);
    write_png(residual_map(*data[i].enhanced, data[i].compressed, amplify),
              out.add(fs::path("residuals") / (stem + "_enh_vs_comp.png")));
    write_png(residual_map(*data[i].enhanced, data[i].raw, amplify),
              out.add(fs::path("residuals") / (stem + "_enh_vs_raw.png")));
  }
}

void cmd_rd_curves(const RunConfig& cfg, const std::vector<std::string>& manifests,
                   const std::string& metric_id, Outputs& out) {
  if (manifests.empty()) throw ConfigError("rd-curves needs at least one --manifest");
  // One point per codec setting; a manifest covering a whole grid splits.
  std::vector<Manifest> ms;
  for (const auto& p : manifests) {
    const Manifest m = load_manifest(p);
    require_enhanced(m);
    std::vector<CodecSpec> seen;
    for (const auto& e : m.entries) {
      if (std::find(seen.begin(), seen.end(), e.codec) == seen.end()) seen.push_back(e.codec);
    }
    for (const auto& c : seen) {
      Manifest sub;
      sub.split = m.split;
      sub.root = m.root;
      for (const auto& e : m.entries) {
        if (e.codec == c) sub.entries.push_back(e);
      }
      ms.push_back(std::move(sub));
    }
  }
  const int jobs = jobs_of(cfg);
  std::shared_ptr<const VggBackbone> vgg;
  std::optional<Lpips> lpips;
  std::optional<FeatureExtractor> ex;
  if (metric_id == "lpips" || metric_id == "fid") vgg = build_vgg(cfg);
  if (metric_id == "lpips") lpips.emplace(build_lpips(cfg, vgg));
  if (metric_id == "fid") ex.emplace(vgg, build_pooled(cfg, vgg));
  if (metric_id != "psnr" && metric_id != "lpips" && metric_id != "fid") {
    throw ConfigError("unknown metric '" + metric_id + "' (expected psnr, lpips or fid)");
  }
  const int fid_patch = static_cast<int>(cfg.get_int("fid.patch_size"));
  auto metric_on = [&](bool enhanced) -> SetMetric {
    return [&, enhanced](std::span<const ImageTriplet> set) {
      if (metric_id == "fid") {
        const auto patches = fid_patches(set, fid_patch);
        return fid(pooled_stats(patches, 0, *ex, jobs), pooled_stats(patches, enhanced ? 2 : 1, *ex, jobs));
      }
      std::vector<double> v(set.size());
      parallel_for(set.size(), jobs, [&](std::size_t i) {
        const ImageTensor& img = enhanced ? *set[i].enhanced : set[i].compressed;
        v[i] = metric_id == "psnr" ? psnr(img, set[i].raw) : lpips->distance(img, set[i].raw);
      });
      return mean_of(v);
    };
  };
  std::vector<RdCurve> curves = {build_rd_curve(ms, metric_id, metric_on(false), "compressed"),
                                 build_rd_curve(ms, metric_id, metric_on(true), "enhanced")};
  json j;
  j["metric_id"] = metric_id;
  j["curves"] = {to_json(curves[0]), to_json(curves[1])};
  if (curves[0].points.size() >= 4) {
    // Curves that never reach a common quality level have no delta rate.
    try {
      j["bd_br_enhanced_vs_compressed"] = bd_br(curves[0], curves[1]);
    } catch (const Error& e) {
      j["bd_br_enhanced_vs_compressed"] = nullptr;
      j["bd_br_note"] = e.what();
    }
  } else {
    j["bd_br_enhanced_vs_compressed"] = nullptr;
    j["bd_br_note"] = "needs at least 4 quality settings";
  }
  write_json(j, out.add("curves.json"));
  write_rd_plot(curves, out.add("rd_" + metric_id + ".svg"));
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const CodecError*>(&e)) return "codec";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const Error*>(&e)) return "runtime";
  return "internal";
}

int report(std::ostream& err, const std::string& command, const std::string& kind,
           const std::string& message, int code, const std::string& out_dir) {
  json rec = {{"status", "error"}, {"command", command}, {"kind", kind}, {"message", message},
              {"exit_code", code}};
  err << rec.dump() << '\n';
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream f(fs::path(out_dir) / "error.json");
    if (f) f << rec.dump(2) << '\n';
  }
  return code;
}

}  // namespace

std::string file_stem_for(const std::string& source_id) {
  std::string s = source_id;
  for (char& c : s) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ||
                      c == '.' || c == '@';
    if (!keep) c = '_';
  }
  if (s.empty() || s[0] == '.') s.insert(s.begin(), '_');
  return s;
}

Manifest enhance_manifest(const Generator& g, const Manifest& manifest, const fs::path& out_dir,
                          int jobs) {
  Manifest out = manifest;
  out.root = out_dir;
  std::vector<std::string> stems(out.entries.size());
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    stems[i] = file_stem_for(out.entries[i].source_id);
    for (std::size_t k = 0; k < i; ++k) {
      if (stems[k] == stems[i]) stems[i] += "_" + std::to_string(i);
    }
  }
  fs::create_directories(out_dir / "enhanced");
  parallel_for(out.entries.size(), jobs, [&](std::size_t i) {
    ManifestEntry& e = out.entries[i];
    const fs::path comp = manifest.resolve(e.compressed_path);
    if (!fs::exists(comp)) {
      throw IoError("source_id " + e.source_id + ": compressed image missing: " + comp.string());
    }
    const ImageTensor enhanced = enhance(g, read_png(comp));
    const std::string rel = (fs::path("enhanced") / (stems[i] + ".png")).generic_string();
    write_png(enhanced, out_dir / rel);
    e.raw_path = fs::absolute(manifest.resolve(e.raw_path)).lexically_normal().string();
    e.compressed_path = fs::absolute(comp).lexically_normal().string();
    e.enhanced_path = rel;
  });
  return out;
}

double external_score(const std::string& exe, const fs::path& image, const fs::path& reference) {
  const ProcessResult r = run_process({exe, image.string(), reference.string()});
  if (r.exit_code != 0) {
    throw Error("scorer " + exe + " exited with status " + std::to_string(r.exit_code) + " on " +
                image.string() + ": " + r.stderr_text);
  }
  std::istringstream in(r.stdout_text);
  double v = 0.0;
  if (!(in >> v) || !std::isfinite(v)) {
    throw Error("scorer " + exe + " printed no number for " + image.string());
  }
  return v;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  // First positional that is not the value of a global option.
  std::string command;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--help" || a == "-h") break;
    if (a == "--config" || a == "--set" || a == "--jobs") {
      ++i;
      continue;
    }
    if (!a.empty() && a[0] != '-') {
      command = a;
      break;
    }
  }
  if (!command.empty() &&
      std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end()) {
    return report(err, command, "usage", "unknown command '" + command + "'", kUsageError, "");
  }

  CLI::App app{"Compression-domain-aware quality enhancement toolkit", "qe"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_files, "YAML config file(s), applied in order");
  app.add_option("--set", common.sets, "key=value override (repeatable)");
  app.add_option("--jobs", common.jobs, "Parallel workers")->check(CLI::PositiveNumber);

  std::vector<std::pair<std::string, std::string>> flags;
  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key,
                  const std::string& help) {
    sub->add_option_function<std::string>(
        name, [&flags, key](const std::string& v) { flags.emplace_back(key, v); }, help);
  };
  auto out_opt = [&](CLI::App* sub) {
    sub->add_option("--out", common.out, "Output directory")->required();
  };

  std::string raw_dir, split = "train", manifest, checkpoint, resume_from, metric = "psnr";
  std::vector<std::string> manifests;

  auto* prepare = app.add_subcommand("prepare", "Write a raw image corpus");
  prepare->add_option("--raw-dir", raw_dir, "Existing PNG directory to tile or copy");
  flag(prepare, "--synthetic", "prepare.synthetic", "Number of procedural images");
  flag(prepare, "--size", "prepare.size", "Side of procedural images");
  flag(prepare, "--patch-size", "prepare.patch_size", "Tile images into patches of this side");
  flag(prepare, "--patch-stride", "prepare.patch_stride", "Tile stride (default: patch size)");
  flag(prepare, "--seed", "seed", "Seed");
  out_opt(prepare);

  auto* compress = app.add_subcommand("compress", "Compress raw images and build a manifest");
  compress->add_option("--raw-dir", raw_dir, "Directory of raw PNGs")->required();
  flag(compress, "--codec", "codec.family", "bpg or jpeg");
  flag(compress, "--qp", "codec.qualities", "BPG QPs, comma separated");
  flag(compress, "--qf", "codec.qualities", "JPEG quality factors, comma separated");
  flag(compress, "--quality", "codec.qualities", "Quality values for the chosen codec");
  flag(compress, "--bpg-chroma", "codec.bpg_chroma", "420 or 444");
  compress->add_option("--split", split, "train or val");
  out_opt(compress);

  auto* train = app.add_subcommand("train", "Train the enhancement GAN");
  train->add_option("--manifest", manifest, "Training manifest")->required();
  train->add_option("--resume", resume_from, "Checkpoint to continue from");
  flag(train, "--steps", "train.steps", "Target step count");
  flag(train, "--ablation", "train.ablation", "vanilla, cond_d_only, reg_only or full");
  flag(train, "--seed", "seed", "Seed");
  out_opt(train);

  auto* enhance = app.add_subcommand("enhance", "Run a generator over a manifest");
  enhance->add_option("--checkpoint", checkpoint, "Checkpoint with generator weights")->required();
  enhance->add_option("--manifest", manifest, "Input manifest")->required();
  out_opt(enhance);

  auto* eval = app.add_subcommand("eval", "Score enhanced images against raw");
  eval->add_option("--manifest", manifest, "Manifest with enhanced images")->required();
  flag(eval, "--metrics", "eval.metrics", "Comma list of psnr, lpips, fid");
  flag(eval, "--scorer", "eval.scorer", "External scorer executable");
  out_opt(eval);

  auto* bias = app.add_subcommand("bias-report", "Realism scores and domain triangles");
  bias->add_option("--manifest", manifest, "Manifest")->required();
  bias->add_option("--checkpoint", checkpoint, "Full training checkpoint")->required();
  flag(bias, "--metrics", "bias.metrics", "Comma list of fid, lpips");
  flag(bias, "--patch-size", "bias.patch_size", "Realism tile side");
  out_opt(bias);

  auto* rd = app.add_subcommand("rd-curves", "Rate-distortion curves and BD-BR");
  rd->add_option("--manifest", manifests, "Enhanced manifest(s); entries group by codec setting")
      ->required();
  rd->add_option("--metric", metric, "psnr, lpips or fid");
  out_opt(rd);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return report(err, command, "usage", e.what(), kUsageError, "");
  }

  try {
    const RunConfig cfg = resolve(common, flags);
    Outputs outputs(command, common.out);
    if (prepare->parsed()) cmd_prepare(cfg, raw_dir, outputs);
    if (compress->parsed()) cmd_compress(cfg, raw_dir, split, outputs);
    if (train->parsed()) cmd_train(cfg, manifest, resume_from, outputs);
    if (enhance->parsed()) cmd_enhance(cfg, checkpoint, manifest, outputs);
    if (eval->parsed()) cmd_eval(cfg, manifest, outputs);
    if (bias->parsed()) cmd_bias_report(cfg, manifest, checkpoint, outputs);
    if (rd->parsed()) cmd_rd_curves(cfg, manifests, metric, outputs);
    outputs.finish(cfg);
    out << json({{"status", "ok"}, {"command", command}, {"out", common.out}}).dump() << '\n';
    return kOk;
  } catch (const ConfigError& e) {
    // Bad keys, values or flag combinations are the caller's to fix.
    return report(err, command, error_kind(e), e.what(), kUsageError, common.out);
  } catch (const std::exception& e) {
    return report(err, command, error_kind(e), e.what(), kRuntimeError, common.out);
  }
}

}  // namespace qe::cli
