#include "mapo/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "mapo/error.hpp"
#include "mapo/pgm.hpp"
#include "mapo/rng.hpp"

namespace mapo::data {

namespace fs = std::filesystem;

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::blobs: return "blobs";
    case TaskKind::rings: return "rings";
    case TaskKind::curves: return "curves";
  }
  return "?";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "blobs") return TaskKind::blobs;
  if (name == "rings") return TaskKind::rings;
  if (name == "curves") return TaskKind::curves;
  throw ContractViolation("unknown task kind '" + name + "' (expected blobs, rings or curves)");
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ContractViolation("unknown split '" + name + "' (expected train, val or test)");
}

void TaskSpec::validate() const {
  require(count >= 3, "task needs at least 3 samples (one per split)");
  require(height >= 8 && height <= 128 && width >= 8 && width <= 128, "task image extents must lie in [8, 128]");
  require(noise_std >= 0.0 && std::isfinite(noise_std), "noise_std must be non-negative");
  require(boundary_blur >= 0.0 && std::isfinite(boundary_blur), "boundary_blur must be non-negative");
}

std::vector<const Sample*> Dataset::split(Split which) const {
  std::vector<const Sample*> out;
  for (const auto& s : samples)
    if (s.split == which) out.push_back(&s);
  return out;
}

const Sample* Dataset::find(const std::string& id) const {
  for (const auto& s : samples)
    if (s.id == id) return &s;
  return nullptr;
}

SplitSizes split_sizes(std::size_t count) {
  const std::size_t held = std::max<std::size_t>(1, count * 15 / 100);
  return {count - 2 * held, held, held};
}

namespace {

class Uniform {
 public:
  explicit Uniform(std::uint64_t seed) : gen_(seed) {}
  double operator()(double lo, double hi) { return lo + (hi - lo) * rng::to_unit(gen_()); }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

// Point-in-shape predicate in pixel coordinates (pixel (x, y) covers
// [x, x+1) x [y, y+1)).
using Predicate = std::function<bool(double, double)>;

Predicate make_blobs(Uniform& u, double h, double w) {
  struct Ellipse {
    double cx, cy, rx, ry, c, s;
  };
  std::vector<Ellipse> shapes;
  const int n = 1 + static_cast<int>(u(0.0, 3.0));
  const double m = std::min(h, w);
  for (int i = 0; i < n; ++i) {
    const double theta = u(0.0, std::numbers::pi);
    shapes.push_back({u(0.25 * w, 0.75 * w), u(0.25 * h, 0.75 * h), u(0.10, 0.22) * m, u(0.10, 0.22) * m,
                      std::cos(theta), std::sin(theta)});
  }
  return [shapes](double x, double y) {
    for (const auto& e : shapes) {
      const double dx = x - e.cx, dy = y - e.cy;
      const double a = (dx * e.c + dy * e.s) / e.rx, b = (-dx * e.s + dy * e.c) / e.ry;
      if (a * a + b * b <= 1.0) return true;
    }
    return false;
  };
}

Predicate make_rings(Uniform& u, double h, double w) {
  const double m = std::min(h, w);
  const double cx = u(0.4 * w, 0.6 * w), cy = u(0.4 * h, 0.6 * h);
  const double outer = u(0.22, 0.34) * m;
  const double inner = outer * u(0.45, 0.65);
  return [=](double x, double y) {
    const double r = std::hypot(x - cx, y - cy);
    return r >= inner && r <= outer;
  };
}

Predicate make_curves(Uniform& u, double h, double w) {
  struct Wave {
    double base, amp, freq, phase, half_width;
    bool transposed;
  };
  std::vector<Wave> waves;
  const int n = 1 + static_cast<int>(u(0.0, 2.0));
  for (int i = 0; i < n; ++i) {
    const bool t = u(0.0, 1.0) < 0.5;
    const double across = t ? w : h;
    waves.push_back({u(0.3, 0.7) * across, u(0.08, 0.2) * across, u(0.5, 1.5), u(0.0, 2.0 * std::numbers::pi),
                     u(0.6, 1.2), t});
  }
  return [waves, h, w](double x, double y) {
    for (const auto& v : waves) {
      const double along = v.transposed ? y : x;
      const double across = v.transposed ? x : y;
      const double extent = v.transposed ? h : w;
      const double centre = v.base + v.amp * std::sin(2.0 * std::numbers::pi * v.freq * along / extent + v.phase);
      if (std::abs(across - centre) <= v.half_width) return true;
    }
    return false;
  };
}

// Fraction of a 4x4 grid of sub-pixel samples inside the shape.
std::vector<double> coverage(const Predicate& inside, std::size_t h, std::size_t w) {
  constexpr int kSub = 4;
  std::vector<double> cov(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      int hits = 0;
      for (int j = 0; j < kSub; ++j)
        for (int i = 0; i < kSub; ++i)
          hits += inside(static_cast<double>(x) + (i + 0.5) / kSub, static_cast<double>(y) + (j + 0.5) / kSub);
      cov[y * w + x] = hits / static_cast<double>(kSub * kSub);
    }
  return cov;
}

std::vector<double> gaussian_blur(const std::vector<double>& in, std::size_t h, std::size_t w, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;
  auto clampi = [](long v, long n) { return std::clamp<long>(v, 0, n - 1); };
  std::vector<double> tmp(h * w), out(h * w);
  const long lh = static_cast<long>(h), lw = static_cast<long>(w);
  for (long y = 0; y < lh; ++y)
    for (long x = 0; x < lw; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * in[y * lw + clampi(x + i, lw)];
      tmp[y * lw + x] = acc;
    }
  for (long y = 0; y < lh; ++y)
    for (long x = 0; x < lw; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[clampi(y + i, lh) * lw + x];
      out[y * lw + x] = acc;
    }
  return out;
}

std::uint16_t quantize(double v) { return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0)); }

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

Sample render(const TaskSpec& spec, std::size_t index) {
  Uniform u(rng::derive(spec.seed, {0x5A3D, index}));
  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  const std::size_t pixels = spec.height * spec.width;
  std::vector<double> cov;
  BinaryMask gt;
  // Redraw until the label is neither empty nor full-frame.
  for (int attempt = 0;; ++attempt) {
    Predicate inside = spec.kind == TaskKind::blobs   ? make_blobs(u, h, w)
                       : spec.kind == TaskKind::rings ? make_rings(u, h, w)
                                                      : make_curves(u, h, w);
    cov = coverage(inside, spec.height, spec.width);
    gt = BinaryMask(spec.height, spec.width);
    for (std::size_t i = 0; i < pixels; ++i) gt.set(i, cov[i] >= 0.5);
    const std::size_t n = gt.count();
    if ((n > 0 && n < pixels) || attempt >= 100) break;
  }
  const auto soft = gaussian_blur(cov, spec.height, spec.width, spec.boundary_blur);
  std::normal_distribution<double> noise(0.0, 1.0);
  Tensor image(Shape{1, spec.height, spec.width});
  for (std::size_t i = 0; i < pixels; ++i) {
    double v = kBackground + (kForeground - kBackground) * soft[i];
    if (spec.noise_std > 0.0) v += spec.noise_std * noise(u.engine());
    image[i] = quantize(v) / 65535.0;
  }
  return {fmt::format("s{:04d}", index), std::move(image), std::move(gt), Split::train};
}

}  // namespace

Dataset generate_dataset(const TaskSpec& spec) {
  spec.validate();
  Dataset ds{spec, std::vector<Sample>(spec.count)};
  const long n = static_cast<long>(spec.count);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) ds.samples[static_cast<std::size_t>(i)] = render(spec, static_cast<std::size_t>(i));

  // Order samples by a key hashed from (seed, id); the first block of that
  // order is train, then val, then test.
  std::vector<std::pair<std::uint64_t, std::size_t>> order;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    order.emplace_back(rng::counter_bits(rng::derive(spec.seed, {0x5B117}), fnv1a(ds.samples[i].id)), i);
  std::sort(order.begin(), order.end());
  const SplitSizes sizes = split_sizes(spec.count);
  for (std::size_t r = 0; r < order.size(); ++r) {
    Split s = r < sizes.train ? Split::train : (r < sizes.train + sizes.val ? Split::val : Split::test);
    ds.samples[order[r].second].split = s;
  }
  return ds;
}

namespace {

pgm::Image image_to_pgm(const Tensor& image) {
  pgm::Image out{image.shape()[2], image.shape()[1], 65535, {}};
  out.pixels.reserve(image.size());
  for (double v : image.data()) out.pixels.push_back(quantize(v));
  return out;
}

pgm::Image mask_to_pgm(const BinaryMask& mask) {
  pgm::Image out{mask.width(), mask.height(), 65535, {}};
  for (auto b : mask.bits()) out.pixels.push_back(b ? 65535 : 0);
  return out;
}

std::string manifest_text(const Dataset& ds) {
  const TaskSpec& s = ds.spec;
  std::string out = "# mapo-dataset\t1\n";
  out += fmt::format("# kind\t{}\n# height\t{}\n# width\t{}\n# count\t{}\n", to_string(s.kind), s.height, s.width,
                     s.count);
  out += fmt::format("# noise_std\t{}\n# boundary_blur\t{}\n# seed\t{}\n", s.noise_std, s.boundary_blur, s.seed);
  out += "id\timage\tmask\tsplit\n";
  for (const auto& sample : ds.samples)
    out += fmt::format("{0}\timages/{0}.pgm\tmasks/{0}.pgm\t{1}\n", sample.id, to_string(sample.split));
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, '\t')) out.push_back(field);
  return out;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& dataset) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  for (const auto& s : dataset.samples) {
    pgm::write((fs::path(dir) / "images" / (s.id + ".pgm")).string(), image_to_pgm(s.image));
    pgm::write((fs::path(dir) / "masks" / (s.id + ".pgm")).string(), mask_to_pgm(s.gt));
  }
  std::ofstream out(fs::path(dir) / "manifest.tsv", std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest in " + dir);
  out << manifest_text(dataset);
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  const std::string manifest_path = (root / "manifest.tsv").string();
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw DataError("cannot open " + manifest_path);

  std::map<std::string, std::string> header;
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool columns_seen = false;
  auto fail = [&](const std::string& why) -> DataError {
    return DataError(manifest_path + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.starts_with("# ")) {
      auto f = split_tabs(line.substr(2));
      if (f.size() != 2) throw fail("malformed header line");
      header[f[0]] = f[1];
      continue;
    }
    auto f = split_tabs(line);
    if (!columns_seen) {
      if (f != std::vector<std::string>{"id", "image", "mask", "split"}) throw fail("missing column header");
      columns_seen = true;
      try {
        if (header.at("mapo-dataset") != "1") throw fail("unsupported manifest version");
        ds.spec.kind = parse_task_kind(header.at("kind"));
        ds.spec.height = std::stoul(header.at("height"));
        ds.spec.width = std::stoul(header.at("width"));
        ds.spec.count = std::stoul(header.at("count"));
        ds.spec.noise_std = std::stod(header.at("noise_std"));
        ds.spec.boundary_blur = std::stod(header.at("boundary_blur"));
        ds.spec.seed = std::stoull(header.at("seed"));
      } catch (const DataError&) {
        throw;
      } catch (const std::exception& e) {
        throw fail(std::string("bad task header: ") + e.what());
      }
      continue;
    }
    if (f.size() != 4) throw fail("expected 4 tab-separated fields");
    Sample s;
    s.id = f[0];
    try {
      s.split = parse_split(f[3]);
    } catch (const ContractViolation& e) {
      throw fail(e.what());
    }
    const std::string image_path = (root / f[1]).string();
    const std::string mask_path = (root / f[2]).string();
    const pgm::Image img = pgm::read(image_path);
    const pgm::Image msk = pgm::read(mask_path);
    if (img.width != ds.spec.width || img.height != ds.spec.height)
      throw DataError(image_path + ": size does not match the task spec");
    if (msk.width != ds.spec.width || msk.height != ds.spec.height)
      throw DataError(mask_path + ": size does not match the task spec");
    s.image = Tensor(Shape{1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) s.image[i] = img.pixels[i] / static_cast<double>(img.maxval);
    std::vector<std::uint8_t> bits(msk.pixels.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (msk.pixels[i] != 0 && msk.pixels[i] != msk.maxval) throw DataError(mask_path + ": mask is not binary");
      bits[i] = msk.pixels[i] ? 1 : 0;
    }
    s.gt = BinaryMask(msk.height, msk.width, std::move(bits));
    ds.samples.push_back(std::move(s));
  }
  if (!columns_seen) throw DataError(manifest_path + ": no sample table");
  if (ds.samples.size() != ds.spec.count)
    throw DataError(manifest_path + ": manifest lists " + std::to_string(ds.samples.size()) +
                    " samples but the header says " + std::to_string(ds.spec.count));
  return ds;
}

}  // namespace mapo::data
