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

#include "qe/codec.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

// libjpeg's header needs size_t and FILE declared first.
#include <jpeglib.h>

#include "qe/error.hpp"
#include "qe/parallel.hpp"

extern char** environ;

namespace qe {
namespace {

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

std::vector<unsigned char> jpeg_encode(const ImageTensor& img, int quality) {
  const std::vector<std::uint8_t> samples = img.to_8bit();
  jpeg_compress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw CodecError(std::string("jpeg encode failed: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width());
  cinfo.image_height = static_cast<JDIMENSION>(img.height());
  cinfo.input_components = img.channels();
  cinfo.in_color_space = img.channels() == 3 ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  const std::size_t stride = static_cast<std::size_t>(img.width()) * img.channels();
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(samples.data() + cinfo.next_scanline * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<unsigned char> out(buffer, buffer + size);
  std::free(buffer);
  return out;
}

ImageTensor jpeg_decode(const std::vector<unsigned char>& data, int channels) {
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw CodecError(std::string("jpeg decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data.data(), static_cast<unsigned long>(data.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = channels == 3 ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_start_decompress(&cinfo);
  const int w = static_cast<int>(cinfo.output_width), h = static_cast<int>(cinfo.output_height);
  const int c = cinfo.output_components;
  std::vector<std::uint8_t> samples(static_cast<std::size_t>(w) * h * c);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = samples.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * c;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return ImageTensor::from_8bit(h, w, c, samples);
}

void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

std::filesystem::path scratch_dir(const std::filesystem::path& base) {
  static std::atomic<unsigned> counter{0};
  const auto root = base.empty() ? std::filesystem::temp_directory_path() : base;
  auto dir = root / ("qe_bpg_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir;
}

std::string tail(const std::string& s, std::size_t n = 400) {
  return s.size() <= n ? s : s.substr(s.size() - n);
}

void check_process(const ProcessResult& r, const std::string& name) {
  if (r.exit_code != 0) {
    throw CodecError(name + " exited with status " + std::to_string(r.exit_code) +
                     (r.stderr_text.empty() ? "" : ": " + tail(r.stderr_text)));
  }
}

CompressionResult bpg_roundtrip(const ImageTensor& raw, const CodecSpec& codec,
                                const CompressOptions& o) {
  const auto dir = scratch_dir(o.work_dir);
  struct Cleanup {
    std::filesystem::path p;
    ~Cleanup() {
      std::error_code ec;
      std::filesystem::remove_all(p, ec);
    }
  } cleanup{dir};
  const auto in = dir / "in.png", bits = dir / "out.bpg", out = dir / "out.png";
  write_png(raw, in);
  const std::string chroma = o.bpg_chroma == ChromaFormat::Yuv420 ? "420" : "444";
  check_process(run_process({o.paths.bpgenc, "-q", std::to_string(codec.quality), "-f", chroma,
                             "-o", bits.string(), in.string()}),
                o.paths.bpgenc);
  check_process(run_process({o.paths.bpgdec, "-o", out.string(), bits.string()}), o.paths.bpgdec);
  if (!std::filesystem::exists(bits) || !std::filesystem::exists(out)) {
    throw CodecError("codec produced no output for " + codec.tag());
  }
  CompressionResult r;
  r.bits = std::filesystem::file_size(bits) * 8;
  r.image = read_png(out);
  if (raw.channels() == 1 && r.image.channels() == 3) {
    std::vector<float> g(static_cast<std::size_t>(r.image.height()) * r.image.width());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = r.image.pixels()[3 * i];
    r.image = ImageTensor::from_pixels(r.image.height(), r.image.width(), 1, std::move(g));
  }
  if (o.bitstream_path) {
    if (o.bitstream_path->has_parent_path()) {
      std::filesystem::create_directories(o.bitstream_path->parent_path());
    }
    std::filesystem::copy_file(bits, *o.bitstream_path,
                               std::filesystem::copy_options::overwrite_existing);
  }
  return r;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

CodecPaths CodecPaths::from_env() {
  CodecPaths p;
  if (const char* e = std::getenv("QE_BPGENC"); e && *e) p.bpgenc = e;
  if (const char* d = std::getenv("QE_BPGDEC"); d && *d) p.bpgdec = d;
  return p;
}

ChromaFormat parse_chroma(std::string_view name) {
  if (name == "420") return ChromaFormat::Yuv420;
  if (name == "444") return ChromaFormat::Yuv444;
  throw ConfigError("unknown chroma format '" + std::string(name) + "' (expected 420 or 444)");
}

ProcessResult run_process(const std::vector<std::string>& argv) {
  if (argv.empty()) throw CodecError("empty command");
  char err_template[] = "/tmp/qe_stderr_XXXXXX";
  char out_template[] = "/tmp/qe_stdout_XXXXXX";
  const int err_fd = ::mkstemp(err_template);
  if (err_fd < 0) throw IoError("cannot create stderr capture file");
  const int out_fd = ::mkstemp(out_template);
  if (out_fd < 0) {
    ::close(err_fd);
    std::remove(err_template);
    throw IoError("cannot create stdout capture file");
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, err_fd, STDERR_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_fd, STDOUT_FILENO);
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  auto slurp = [](const char* path, int fd) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    ::close(fd);
    std::remove(path);
    return ss.str();
  };
  auto collect = [&](ProcessResult& r) {
    r.stderr_text = slurp(err_template, err_fd);
    r.stdout_text = slurp(out_template, out_fd);
  };
  ProcessResult r;
  if (rc != 0) {
    collect(r);
    throw CodecError("codec binary missing: " + argv[0] + " (" + std::strerror(rc) + ")");
  }
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) {
      collect(r);
      throw CodecError("waitpid failed for " + argv[0]);
    }
  }
  collect(r);
  if (WIFEXITED(status)) {
    r.exit_code = WEXITSTATUS(status);
    // posix_spawnp reports exec failure of an unfound binary as status 127.
    if (r.exit_code == 127 && r.stderr_text.empty()) {
      throw CodecError("codec binary missing: " + argv[0]);
    }
  } else {
    r.exit_code = 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
  }
  return r;
}

CompressionResult compress(const ImageTensor& raw, const CodecSpec& codec,
                           const CompressOptions& options) {
  if (raw.empty()) throw ShapeError("compress: empty image");
  const auto problems = validate_codec(codec, options.require_standard_grid);
  if (!problems.empty()) throw ConfigError("invalid codec " + codec.tag() + ": " + problems.front());
  CompressionResult r;
  if (codec.id == CodecId::Jpeg) {
    const auto bytes = jpeg_encode(raw, codec.quality);
    r.bits = bytes.size() * 8;
    r.image = jpeg_decode(bytes, raw.channels());
    if (options.bitstream_path) write_bytes(*options.bitstream_path, bytes);
  } else {
    r = bpg_roundtrip(raw, codec, options);
  }
  if (!r.image.same_shape(raw)) {
    throw CodecError("decoded dimensions mismatch for " + codec.tag() + ": got " +
                     std::to_string(r.image.height()) + "x" + std::to_string(r.image.width()) +
                     "x" + std::to_string(r.image.channels()));
  }
  r.bpp = static_cast<double>(r.bits) / (static_cast<double>(raw.height()) * raw.width());
  return r;
}

CompressionResult run_job(const CompressionJob& job, CompressOptions options) {
  options.bitstream_path = job.bitstream_path;
  CompressionResult r = compress(read_png(job.input_path), job.codec, options);
  write_png(r.image, job.output_image_path);
  return r;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Manifest build_dataset(const std::filesystem::path& raw_dir, const std::vector<CodecSpec>& codecs,
                       const std::filesystem::path& out_dir, const BuildOptions& options) {
  const auto images = list_images(raw_dir);
  if (images.empty()) throw Error("no input images in " + raw_dir.string());
  if (codecs.empty()) throw ConfigError("no codec settings given");
  std::filesystem::create_directories(out_dir);
  const auto root = std::filesystem::absolute(out_dir).lexically_normal();

  struct Task {
    std::filesystem::path raw;
    CodecSpec codec;
  };
  std::vector<Task> tasks;
  for (const auto& img : images) {
    for (const auto& c : codecs) tasks.push_back({img, c});
  }
  Manifest m;
  m.split = options.split;
  m.root = out_dir;
  m.entries.resize(tasks.size());
  parallel_for(tasks.size(), options.jobs, [&](std::size_t i) {
    const Task& t = tasks[i];
    const std::string tag = t.codec.tag();
    const std::string stem = t.raw.stem().string();
    const std::string id = stem + "@" + tag;
    CompressionJob job{t.raw, t.codec, out_dir / "compressed" / tag / (stem + ".png"),
                       out_dir / "bitstreams" / tag /
                           (stem + (t.codec.id == CodecId::Jpeg ? ".jpg" : ".bpg"))};
    CompressionResult r;
    try {
      r = run_job(job, options.compress);
    } catch (const Error& e) {
      throw CodecError("source_id " + id + ": " + e.what());
    }
    ManifestEntry& e = m.entries[i];
    e.source_id = id;
    e.raw_path = std::filesystem::absolute(t.raw).lexically_normal().lexically_relative(root).string();
    e.compressed_path = (std::filesystem::path("compressed") / tag / (stem + ".png")).string();
    e.codec = t.codec;
    e.bpp = r.bpp;
  });
  save_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

std::vector<ImageTriplet> crop_patches(const ImageTriplet& t, const PatchSpec& spec) {
  const int h = t.raw.height(), w = t.raw.width();
  if (spec.size < 1) throw ConfigError("patch size must be positive");
  if (spec.size > h || spec.size > w) {
    throw Error("patch larger than image: " + std::to_string(spec.size) + " vs " +
                std::to_string(h) + "x" + std::to_string(w) + " (" + t.source_id + ")");
  }
  std::vector<std::pair<int, int>> pos;
  if (spec.count_per_image > 0) {
    std::mt19937_64 rng(spec.seed ^ fnv1a(t.source_id));
    std::uniform_int_distribution<int> ys(0, h - spec.size), xs(0, w - spec.size);
    for (int i = 0; i < spec.count_per_image; ++i) {
      const int y = ys(rng);
      pos.emplace_back(y, xs(rng));
    }
  } else {
    const int stride = spec.stride > 0 ? spec.stride : spec.size;
    for (int y = 0; y + spec.size <= h; y += stride) {
      for (int x = 0; x + spec.size <= w; x += stride) pos.emplace_back(y, x);
    }
  }
  std::vector<ImageTriplet> out;
  for (const auto& [y, x] : pos) {
    ImageTriplet p;
    p.raw = t.raw.crop(y, x, spec.size, spec.size);
    p.compressed = t.compressed.crop(y, x, spec.size, spec.size);
    if (t.enhanced) p.enhanced = t.enhanced->crop(y, x, spec.size, spec.size);
    p.codec = t.codec;
    p.bpp = t.bpp;
    p.source_id = t.source_id + "#" + std::to_string(y) + "_" + std::to_string(x);
    out.push_back(std::move(p));
  }
  return out;
}

ImageTensor synthetic_image(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> grain(0.0, 1.0);
  std::vector<double> px(static_cast<std::size_t>(height) * width * 3);
  auto at = [&](int y, int x, int c) -> double& {
    return px[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  };
  // Background: linear gradient between two random colours.
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = u(rng);
    c1[c] = u(rng);
  }
  const double angle = u(rng) * 2 * M_PI;
  const double gx = std::cos(angle), gy = std::sin(angle);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double t = 0.5 + 0.5 * ((x / double(width) - 0.5) * gx + (y / double(height) - 0.5) * gy);
      for (int c = 0; c < 3; ++c) at(y, x, c) = c0[c] * (1 - t) + c1[c] * t;
    }
  }
  // Sharp-edged rectangles and discs.
  const int shapes = 2 + static_cast<int>(u(rng) * 4);
  for (int s = 0; s < shapes; ++s) {
    double col[3];
    for (auto& v : col) v = u(rng);
    const double cy = u(rng) * height, cx = u(rng) * width;
    const double r = (0.1 + 0.25 * u(rng)) * std::min(height, width);
    const bool disc = u(rng) < 0.5;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double dy = y - cy, dx = x - cx;
        const bool inside = disc ? dy * dy + dx * dx < r * r : std::abs(dy) < r && std::abs(dx) < 0.7 * r;
        if (inside) for (int c = 0; c < 3; ++c) at(y, x, c) = col[c];
      }
    }
  }
  // A sinusoidal grating in a band, then grain. Both are high-frequency
  // detail that heavy quantization removes.
  const double freq = 0.3 + 0.9 * u(rng), theta = u(rng) * M_PI, amp = 0.1 + 0.15 * u(rng);
  const int band0 = static_cast<int>(u(rng) * height * 0.5);
  const int band1 = std::min(height, band0 + height / 3 + 1);
  for (int y = band0; y < band1; ++y) {
    for (int x = 0; x < width; ++x) {
      const double v = amp * std::sin(freq * (x * std::cos(theta) + y * std::sin(theta)));
      for (int c = 0; c < 3; ++c) at(y, x, c) += v;
    }
  }
  const double sigma = 0.02 + 0.04 * u(rng);
  for (auto& v : px) v += sigma * grain(rng);
  std::vector<std::uint8_t> samples(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    samples[i] = static_cast<std::uint8_t>(std::lround(std::clamp(px[i], 0.0, 1.0) * 255.0));
  }
  return ImageTensor::from_8bit(height, width, 3, samples);
}

}  // namespace qe
