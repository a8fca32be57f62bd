#include "core/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <utility>

#include "core/encoder.hpp"    // znorm_inplace, resample_linear
#include "core/icl_model.hpp"  // encode_label_bits

namespace tict {
namespace {

constexpr double kPi = 3.14159265358979323846;

// Seed-stream indices. Every random decision inside a task comes from one of
// these streams, all derived from the task seed, so generation is a pure
// function of the config and tasks are independent across seeds.
constexpr uint64_t kMetaStream = 1;              // labels, t, pipeline choice
constexpr uint64_t kSampleStream = 2;            // per-sample r / class / aug params
constexpr uint64_t kTemplateStream = 0x10000;    // + template index
constexpr uint64_t kBatchTaskStream = 0x20000;   // + task index within a batch

constexpr double kWhiteNoiseVar = 0.1;
constexpr double kLinearBias = 0.01;
constexpr double kMulticlassJitterSigma = 0.05;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// In-place lower-triangular Cholesky; returns false on a non-positive pivot.
bool cholesky_lower(std::vector<double>& a, int n) {
  for (int j = 0; j < n; ++j) {
    double d = a[static_cast<size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      double v = a[static_cast<size_t>(j) * n + k];
      d -= v * v;
    }
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    double root = std::sqrt(d);
    a[static_cast<size_t>(j) * n + j] = root;
    for (int i = j + 1; i < n; ++i) {
      double s = a[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k) {
        s -= a[static_cast<size_t>(i) * n + k] * a[static_cast<size_t>(j) * n + k];
      }
      a[static_cast<size_t>(i) * n + j] = s / root;
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) a[static_cast<size_t>(i) * n + j] = 0.0;
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace kernels {

const std::vector<Spec>& bank() {
  static const std::vector<Spec> entries = {
      {Kind::kLinear, 0.0},
      {Kind::kRbf, 0.02},
      {Kind::kRbf, 0.1},
      {Kind::kRbf, 0.5},
      {Kind::kPeriodic, 8.0},
      {Kind::kPeriodic, 16.0},
      {Kind::kPeriodic, 32.0},
      {Kind::kPeriodic, 64.0},
      {Kind::kPeriodic, 128.0},
      {Kind::kWhite, 0.0},
      {Kind::kConstant, 0.0},
  };
  return entries;
}

void covariance(const Spec& spec, int length, std::vector<double>& cov) {
  if (length < 1) fail(ErrCode::kInput, "covariance requires length >= 1");
  const size_t n = static_cast<size_t>(length);
  cov.assign(n * n, 0.0);
  // linear and RBF kernels live on the normalized domain u = i/(L-1) so their
  // character does not depend on L; the periodic kernel's period is in samples
  // so a stated period is an exact lag.
  const double denom = length > 1 ? static_cast<double>(length - 1) : 1.0;
  switch (spec.kind) {
    case Kind::kLinear:
      for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j <= i; ++j) {
          double v = kLinearBias + (i / denom) * (j / denom);
          cov[i * n + j] = v;
          cov[j * n + i] = v;
        }
      }
      break;
    case Kind::kRbf: {
      const double ell = spec.param;
      for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j <= i; ++j) {
          double d = (static_cast<double>(i) - static_cast<double>(j)) / denom;
          double v = std::exp(-d * d / (2.0 * ell * ell));
          cov[i * n + j] = v;
          cov[j * n + i] = v;
        }
      }
      break;
    }
    case Kind::kPeriodic: {
      const double period = spec.param;
      for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j <= i; ++j) {
          double s = std::sin(kPi * (static_cast<double>(i) - static_cast<double>(j)) / period);
          double v = std::exp(-2.0 * s * s);
          cov[i * n + j] = v;
          cov[j * n + i] = v;
        }
      }
      break;
    }
    case Kind::kWhite:
      for (size_t i = 0; i < n; ++i) cov[i * n + i] = kWhiteNoiseVar;
      break;
    case Kind::kConstant:
      std::fill(cov.begin(), cov.end(), 1.0);
      break;
  }
}

std::vector<double> gp_draw(const std::vector<double>& cov, int length, Rng& rng) {
  const size_t n = static_cast<size_t>(length);
  if (length < 1 || cov.size() != n * n) {
    fail(ErrCode::kDimension, "gp_draw: covariance size does not match length");
  }
  std::vector<double> chol;
  bool ok = false;
  for (int attempt = 0; attempt <= 3 && !ok; ++attempt) {
    chol = cov;
    if (attempt > 0) {
      double jitter = 1e-6 * attempt;
      for (size_t i = 0; i < n; ++i) chol[i * n + i] += jitter;
    }
    ok = cholesky_lower(chol, length);
  }
  if (!ok) {
    fail(ErrCode::kNumeric,
         "gp_draw: covariance not positive definite after 3 jitter retries");
  }
  std::vector<double> z(n);
  for (size_t i = 0; i < n; ++i) z[i] = rng.normal();
  std::vector<double> path(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (size_t j = 0; j <= i; ++j) acc += chol[i * n + j] * z[j];
    path[i] = acc;
  }
  return path;
}

}  // namespace kernels

std::vector<double> kernel_synth(uint64_t seed, int length) {
  if (length < 16) {
    fail(ErrCode::kInput,
         "kernel_synth requires length >= 16, got " + std::to_string(length));
  }
  Rng rng(seed);
  const auto& bk = kernels::bank();
  const int bank_size = static_cast<int>(bk.size());
  std::vector<double> cov, part;
  // A draw can fail in two ways: the composed covariance resists Cholesky even
  // with jitter, or the path is (near-)constant and cannot be normalized to
  // unit variance. Both are rare; regenerate with a fresh kernel draw.
  for (int regen = 0; regen < 32; ++regen) {
    int count = 1 + rng.below_int(5);
    kernels::covariance(bk[static_cast<size_t>(rng.below_int(bank_size))], length, cov);
    for (int j = 1; j < count; ++j) {
      bool add = rng.coin();
      kernels::covariance(bk[static_cast<size_t>(rng.below_int(bank_size))], length, part);
      for (size_t i = 0; i < cov.size(); ++i) {
        cov[i] = add ? cov[i] + part[i] : cov[i] * part[i];
      }
    }
    std::vector<double> path;
    try {
      path = kernels::gp_draw(cov, length, rng);
    } catch (const TictError& e) {
      if (e.code() == ErrCode::kNumeric) continue;
      throw;
    }
    double mean = 0.0;
    for (double v : path) mean += v;
    mean /= static_cast<double>(length);
    double var = 0.0;
    for (double v : path) var += (v - mean) * (v - mean);
    var /= static_cast<double>(length);
    if (var < 1e-12) continue;
    znorm_inplace(path);
    return path;
  }
  fail(ErrCode::kNumeric,
       "kernel_synth: no usable path after 32 kernel draws (seed " +
           std::to_string(seed) + ")");
}

// ---------------------------------------------------------------------------
// Augmentation primitives
// ---------------------------------------------------------------------------

namespace aug {

void jitter(std::vector<double>& x, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  for (double& v : x) v += rng.normal(0.0, sigma);
}

void smooth(std::vector<double>& x, int width) {
  if (width < 1 || width % 2 == 0) {
    fail(ErrCode::kInput, "smooth width must be odd and positive, got " +
                              std::to_string(width));
  }
  if (width == 1) return;
  const int n = static_cast<int>(x.size());
  const int half = width / 2;
  std::vector<double> out(x.size());
  for (int i = 0; i < n; ++i) {
    int lo = std::max(0, i - half);
    int hi = std::min(n - 1, i + half);
    double acc = 0.0;
    for (int j = lo; j <= hi; ++j) acc += x[static_cast<size_t>(j)];
    out[static_cast<size_t>(i)] = acc / static_cast<double>(hi - lo + 1);
  }
  x = std::move(out);
}

void slope(std::vector<double>& x, double rise) {
  const int n = static_cast<int>(x.size());
  if (n < 2) return;
  for (int i = 0; i < n; ++i) {
    x[static_cast<size_t>(i)] += rise * static_cast<double>(i) / static_cast<double>(n - 1);
  }
}

void spike(std::vector<double>& x, int pos, double magnitude) {
  if (pos < 0 || pos >= static_cast<int>(x.size())) {
    fail(ErrCode::kIndex, "spike position " + std::to_string(pos) + " out of range");
  }
  x[static_cast<size_t>(pos)] += magnitude;
}

void step(std::vector<double>& x, int pos, double magnitude) {
  if (pos < 0 || pos >= static_cast<int>(x.size())) {
    fail(ErrCode::kIndex, "step position " + std::to_string(pos) + " out of range");
  }
  for (size_t i = static_cast<size_t>(pos); i < x.size(); ++i) x[i] += magnitude;
}

void crop(std::vector<double>& x, int start, int keep) {
  const int n = static_cast<int>(x.size());
  if (start < 0 || keep < 2 || start + keep > n) {
    fail(ErrCode::kIndex, "crop window [" + std::to_string(start) + ", " +
                              std::to_string(start + keep) + ") invalid for length " +
                              std::to_string(n));
  }
  std::vector<double> segment(x.begin() + start, x.begin() + start + keep);
  x = resample_linear(segment, n);
}

void mask(std::vector<double>& x, int start, int width) {
  const int n = static_cast<int>(x.size());
  if (start < 0 || width < 0 || start + width > n) {
    fail(ErrCode::kIndex, "mask window [" + std::to_string(start) + ", " +
                              std::to_string(start + width) + ") invalid for length " +
                              std::to_string(n));
  }
  std::fill(x.begin() + start, x.begin() + start + width, 0.0);
}

void shift(std::vector<double>& x, int offset) {
  const int n = static_cast<int>(x.size());
  if (n == 0) return;
  int m = ((offset % n) + n) % n;
  if (m == 0) return;
  std::vector<double> out(x.size());
  for (int i = 0; i < n; ++i) {
    out[static_cast<size_t>((i + m) % n)] = x[static_cast<size_t>(i)];
  }
  x = std::move(out);
}

void time_warp(std::vector<double>& x, double amp, int cycles, double phase) {
  const int n = static_cast<int>(x.size());
  if (n < 2 || amp == 0.0) return;
  if (amp < 0.0 || amp > 0.99 || cycles < 1) {
    fail(ErrCode::kInput, "time_warp requires amp in [0, 0.99] and cycles >= 1");
  }
  // tau(0) = 0 and tau(1) = 1 hold exactly because the warp speed
  // 1 + amp*sin(2*pi*cycles*u + phase) integrates to u over whole cycles.
  const double w = 2.0 * kPi * static_cast<double>(cycles);
  std::vector<double> out(x.size());
  for (int i = 0; i < n; ++i) {
    double u = static_cast<double>(i) / static_cast<double>(n - 1);
    double tau = u + (amp / w) * (std::cos(phase) - std::cos(w * u + phase));
    tau = std::min(1.0, std::max(0.0, tau));
    double pos = tau * static_cast<double>(n - 1);
    int lo = static_cast<int>(pos);
    if (lo >= n - 1) lo = n - 2;
    double frac = pos - static_cast<double>(lo);
    out[static_cast<size_t>(i)] = x[static_cast<size_t>(lo)] * (1.0 - frac) +
                                  x[static_cast<size_t>(lo) + 1] * frac;
  }
  x = std::move(out);
}

}  // namespace aug

// ---------------------------------------------------------------------------
// Augmentation bank and pipeline
// ---------------------------------------------------------------------------

const std::vector<Augmentation>& augmentation_bank() {
  static const std::vector<Augmentation> bank = [] {
    std::vector<Augmentation> b;
    b.push_back({"jitter", [](std::vector<double>& x, Rng& rng) {
                   double sigma = rng.uniform(0.01, 0.1);
                   aug::jitter(x, sigma, rng);
                 }});
    b.push_back({"smoothing", [](std::vector<double>& x, Rng& rng) {
                   static const int widths[3] = {3, 5, 9};
                   aug::smooth(x, widths[rng.below_int(3)]);
                 }});
    b.push_back({"slope", [](std::vector<double>& x, Rng& rng) {
                   aug::slope(x, rng.uniform(-1.0, 1.0));
                 }});
    b.push_back({"spike", [](std::vector<double>& x, Rng& rng) {
                   int pos = rng.below_int(static_cast<int>(x.size()));
                   double mag = rng.uniform(1.0, 3.0);
                   aug::spike(x, pos, rng.coin() ? mag : -mag);
                 }});
    b.push_back({"step", [](std::vector<double>& x, Rng& rng) {
                   int pos = rng.below_int(static_cast<int>(x.size()));
                   double mag = rng.uniform(0.5, 1.5);
                   aug::step(x, pos, rng.coin() ? mag : -mag);
                 }});
    b.push_back({"cropping", [](std::vector<double>& x, Rng& rng) {
                   const int n = static_cast<int>(x.size());
                   double frac = rng.uniform(0.5, 0.9);
                   int keep = std::min(n, std::max(2, static_cast<int>(std::lround(frac * n))));
                   int start = rng.below_int(n - keep + 1);
                   aug::crop(x, start, keep);
                 }});
    b.push_back({"masking", [](std::vector<double>& x, Rng& rng) {
                   const int n = static_cast<int>(x.size());
                   double frac = rng.uniform(0.05, 0.2);
                   int width = std::min(n, std::max(1, static_cast<int>(std::lround(frac * n))));
                   int start = rng.below_int(n - width + 1);
                   aug::mask(x, start, width);
                 }});
    b.push_back({"shifting", [](std::vector<double>& x, Rng& rng) {
                   const int range = static_cast<int>(x.size()) / 4;
                   int offset = rng.below_int(2 * range + 1) - range;
                   aug::shift(x, offset);
                 }});
    b.push_back({"time_warp", [](std::vector<double>& x, Rng& rng) {
                   double amp = rng.uniform(0.0, 0.2);
                   int cycles = 1 + rng.below_int(3);
                   double phase = rng.uniform(0.0, 2.0 * kPi);
                   if (amp > 0.0) aug::time_warp(x, amp, cycles, phase);
                 }});
    return b;
  }();
  return bank;
}

std::vector<std::string> AugPipeline::names() const {
  const auto& bank = augmentation_bank();
  std::vector<std::string> out;
  out.reserve(selected.size());
  for (int idx : selected) out.push_back(bank[static_cast<size_t>(idx)].name);
  return out;
}

void AugPipeline::apply(std::vector<double>& x, Rng& rng) const {
  const auto& bank = augmentation_bank();
  for (int idx : selected) bank[static_cast<size_t>(idx)].apply(x, rng);
}

AugPipeline select_rand_augs(int n_max, Rng& rng) {
  const int bank_size = static_cast<int>(augmentation_bank().size());
  if (n_max < 0 || n_max > bank_size) {
    fail(ErrCode::kConfig, "n_max must be in [0, " + std::to_string(bank_size) +
                               "], got " + std::to_string(n_max));
  }
  int count = rng.below_int(n_max + 1);
  // Partial Fisher-Yates: the first `count` pool entries become a uniform
  // ordered sample without replacement.
  std::vector<int> pool(static_cast<size_t>(bank_size));
  std::iota(pool.begin(), pool.end(), 0);
  AugPipeline pipeline;
  pipeline.selected.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    int j = i + rng.below_int(bank_size - i);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    pipeline.selected.push_back(pool[static_cast<size_t>(i)]);
  }
  return pipeline;
}

AugPipeline select_rand_augs(int n_max, uint64_t seed) {
  Rng rng(seed);
  return select_rand_augs(n_max, rng);
}

// ---------------------------------------------------------------------------
// Task generation
// ---------------------------------------------------------------------------

void GenConfig::validate() const {
  if (n <= 0 || n % 2 != 0) {
    fail(ErrCode::kConfig, "n must be positive and even, got " + std::to_string(n));
  }
  if (n_bit < 1 || n_bit > 30) {
    fail(ErrCode::kConfig, "n_bit must be in [1, 30], got " + std::to_string(n_bit));
  }
  if (n_max < 0 || n_max > 9) {
    fail(ErrCode::kConfig, "n_max must be in [0, 9], got " + std::to_string(n_max));
  }
  if (length < 16) {
    fail(ErrCode::kConfig, "length must be >= 16, got " + std::to_string(length));
  }
  if (use_mixup) {
    if (multiclass_templates != 0) {
      fail(ErrCode::kConfig,
           "multiclass_templates requires use_mixup=false (mixup tasks always "
           "have 2 classes)");
    }
  } else {
    if (multiclass_templates < 2 || multiclass_templates > 1024) {
      fail(ErrCode::kConfig, "multiclass_templates must be in [2, 1024], got " +
                                 std::to_string(multiclass_templates));
    }
    if (multiclass_templates > (1 << n_bit)) {
      fail(ErrCode::kConfig,
           "multiclass_templates = " + std::to_string(multiclass_templates) +
               " exceeds the 2^n_bit = " + std::to_string(1 << n_bit) +
               " distinct bit labels");
    }
  }
}

TaskDataset generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  TaskDataset task;
  task.seed = cfg.seed;
  task.n_bit = cfg.n_bit;
  task.length = cfg.length;
  task.mixup = cfg.use_mixup;
  task.num_classes = cfg.use_mixup ? 2 : cfg.multiclass_templates;

  std::vector<std::vector<double>> templates;
  templates.reserve(static_cast<size_t>(task.num_classes));
  for (int k = 0; k < task.num_classes; ++k) {
    uint64_t ts = mix_seed(cfg.seed, kTemplateStream + static_cast<uint64_t>(k));
    task.template_seeds.push_back(ts);
    templates.push_back(kernel_synth(ts, cfg.length));
  }

  Rng meta(mix_seed(cfg.seed, kMetaStream));
  // Distinct random bit labels, uniform without replacement over [0, 2^n_bit).
  const int cap = 1 << cfg.n_bit;
  for (int c = 0; c < task.num_classes; ++c) {
    int pattern;
    do {
      pattern = static_cast<int>(meta.below(static_cast<uint64_t>(cap)));
    } while (std::find(task.bit_patterns.begin(), task.bit_patterns.end(), pattern) !=
             task.bit_patterns.end());
    task.bit_patterns.push_back(pattern);
  }
  task.threshold = 0.5;
  if (cfg.use_mixup && cfg.use_imbalance) task.threshold = meta.uniform(0.1, 0.9);
  AugPipeline pipeline;
  if (cfg.use_augmentation) pipeline = select_rand_augs(cfg.n_max, meta);
  task.augmentation_names = pipeline.names();

  Rng samp(mix_seed(cfg.seed, kSampleStream));
  task.x.reserve(static_cast<size_t>(cfg.n));
  task.y.reserve(static_cast<size_t>(cfg.n));
  if (cfg.use_mixup) task.mix_ratio.reserve(static_cast<size_t>(cfg.n));
  for (int i = 0; i < cfg.n; ++i) {
    std::vector<double> x;
    int label;
    if (cfg.use_mixup) {
      double r = samp.uniform();
      x.resize(static_cast<size_t>(cfg.length));
      for (int j = 0; j < cfg.length; ++j) {
        x[static_cast<size_t>(j)] = r * templates[0][static_cast<size_t>(j)] +
                                    (1.0 - r) * templates[1][static_cast<size_t>(j)];
      }
      label = r > task.threshold ? 0 : 1;
      task.mix_ratio.push_back(r);
    } else {
      label = samp.below_int(task.num_classes);
      x = templates[static_cast<size_t>(label)];
      aug::jitter(x, kMulticlassJitterSigma, samp);
    }
    pipeline.apply(x, samp);
    task.x.push_back(std::move(x));
    task.y.push_back(label);
  }
  return task;
}

PretrainBatch make_pretrain_batch(const GenConfig& cfg, int batch_size) {
  cfg.validate();
  if (batch_size < 1) {
    fail(ErrCode::kConfig, "batch_size must be >= 1, got " + std::to_string(batch_size));
  }
  PretrainBatch batch;
  batch.context_count = cfg.n / 2;
  batch.tasks.reserve(static_cast<size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    GenConfig task_cfg = cfg;
    task_cfg.seed = mix_seed(cfg.seed, kBatchTaskStream + static_cast<uint64_t>(i));
    batch.tasks.push_back(generate_dataset(task_cfg));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrCode::kIo, "cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out.good()) fail(ErrCode::kIo, "write failed for " + path);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrCode::kIo, "cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (;;) {
    size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

[[noreturn]] void parse_fail(const std::string& file, size_t line_no,
                             const std::string& what) {
  fail(ErrCode::kParse, file + " line " + std::to_string(line_no) + ": " + what);
}

long long parse_int(const std::string& s, const std::string& file, size_t line_no) {
  if (s.empty()) parse_fail(file, line_no, "expected integer, got empty field");
  char* end = nullptr;
  errno = 0;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size()) {
    parse_fail(file, line_no, "malformed integer '" + s + "'");
  }
  return v;
}

uint64_t parse_u64(const std::string& s, const std::string& file, size_t line_no) {
  if (s.empty() || s[0] == '-') parse_fail(file, line_no, "expected unsigned integer");
  char* end = nullptr;
  errno = 0;
  uint64_t v = std::strtoull(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size()) {
    parse_fail(file, line_no, "malformed unsigned integer '" + s + "'");
  }
  return v;
}

double parse_double(const std::string& s, const std::string& file, size_t line_no) {
  if (s.empty()) parse_fail(file, line_no, "expected number, got empty field");
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) {
    parse_fail(file, line_no, "malformed number '" + s + "'");
  }
  if (!std::isfinite(v)) parse_fail(file, line_no, "non-finite number '" + s + "'");
  return v;
}

template <class T, class Fmt>
std::string join_csv(const std::vector<T>& values, Fmt&& fmt) {
  std::string out;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += fmt(values[i]);
  }
  return out;
}

}  // namespace

void write_task_dir(const TaskDataset& task, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrCode::kIo, "cannot create directory " + dir + ": " + ec.message());

  std::ostringstream meta;
  meta << "n=" << task.n() << '\n'
       << "length=" << task.length << '\n'
       << "n_bit=" << task.n_bit << '\n'
       << "num_classes=" << task.num_classes << '\n'
       << "variant=" << (task.mixup ? "mixup" : "multiclass") << '\n'
       << "seed=" << task.seed << '\n'
       << "t=" << fmt_double(task.threshold) << '\n'
       << "bit_patterns="
       << join_csv(task.bit_patterns, [](int v) { return std::to_string(v); }) << '\n'
       << "template_seeds="
       << join_csv(task.template_seeds, [](uint64_t v) { return std::to_string(v); })
       << '\n'
       << "augmentations="
       << join_csv(task.augmentation_names, [](const std::string& s) { return s; })
       << '\n'
       << "mix_ratio=" << join_csv(task.mix_ratio, fmt_double) << '\n';
  write_file(dir + "/metadata.txt", meta.str());

  std::string samples;
  for (int i = 0; i < task.n(); ++i) {
    samples += std::to_string(task.y[static_cast<size_t>(i)]);
    for (double v : task.x[static_cast<size_t>(i)]) {
      samples += '\t';
      samples += fmt_double(v);
    }
    samples += '\n';
  }
  write_file(dir + "/samples.tsv", samples);

  std::string bits;
  for (int i = 0; i < task.n(); ++i) {
    auto code = encode_label_bits(
        task.bit_patterns[static_cast<size_t>(task.y[static_cast<size_t>(i)])],
        task.n_bit);
    for (int b = 0; b < task.n_bit; ++b) {
      if (b) bits += '\t';
      bits += code[static_cast<size_t>(b)] ? '1' : '0';
    }
    bits += '\n';
  }
  write_file(dir + "/bitlabels.tsv", bits);
}

TaskDataset read_task_dir(const std::string& dir) {
  const std::string meta_path = dir + "/metadata.txt";
  auto meta_lines = read_lines(meta_path);
  std::map<std::string, std::pair<std::string, size_t>> kv;
  for (size_t i = 0; i < meta_lines.size(); ++i) {
    const std::string& line = meta_lines[i];
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) parse_fail(meta_path, i + 1, "expected key=value");
    kv[line.substr(0, eq)] = {line.substr(eq + 1), i + 1};
  }
  auto need = [&](const std::string& key) -> std::pair<std::string, size_t> {
    auto it = kv.find(key);
    if (it == kv.end()) {
      fail(ErrCode::kParse, meta_path + ": missing key '" + key + "'");
    }
    return it->second;
  };

  TaskDataset task;
  auto [n_str, n_line] = need("n");
  int n = static_cast<int>(parse_int(n_str, meta_path, n_line));
  auto [len_str, len_line] = need("length");
  task.length = static_cast<int>(parse_int(len_str, meta_path, len_line));
  auto [bit_str, bit_line] = need("n_bit");
  task.n_bit = static_cast<int>(parse_int(bit_str, meta_path, bit_line));
  auto [nc_str, nc_line] = need("num_classes");
  task.num_classes = static_cast<int>(parse_int(nc_str, meta_path, nc_line));
  auto [var_str, var_line] = need("variant");
  if (var_str == "mixup") {
    task.mixup = true;
  } else if (var_str == "multiclass") {
    task.mixup = false;
  } else {
    parse_fail(meta_path, var_line, "unknown variant '" + var_str + "'");
  }
  auto [seed_str, seed_line] = need("seed");
  task.seed = parse_u64(seed_str, meta_path, seed_line);
  auto [t_str, t_line] = need("t");
  task.threshold = parse_double(t_str, meta_path, t_line);
  if (n <= 0 || task.length < 2 || task.n_bit < 1 || task.n_bit > 30 ||
      task.num_classes < 2) {
    fail(ErrCode::kParse, meta_path + ": inconsistent dimensions");
  }

  auto [pat_str, pat_line] = need("bit_patterns");
  for (const auto& f : split(pat_str, ',')) {
    int p = static_cast<int>(parse_int(f, meta_path, pat_line));
    if (p < 0 || p >= (1 << task.n_bit)) {
      parse_fail(meta_path, pat_line, "bit pattern " + f + " out of range");
    }
    task.bit_patterns.push_back(p);
  }
  if (static_cast<int>(task.bit_patterns.size()) != task.num_classes) {
    parse_fail(meta_path, pat_line, "expected one bit pattern per class");
  }
  auto [ts_str, ts_line] = need("template_seeds");
  for (const auto& f : split(ts_str, ',')) {
    task.template_seeds.push_back(parse_u64(f, meta_path, ts_line));
  }
  auto [aug_str, aug_line] = need("augmentations");
  (void)aug_line;
  if (!aug_str.empty()) task.augmentation_names = split(aug_str, ',');
  auto [mr_str, mr_line] = need("mix_ratio");
  if (!mr_str.empty()) {
    for (const auto& f : split(mr_str, ',')) {
      task.mix_ratio.push_back(parse_double(f, meta_path, mr_line));
    }
  }
  if (task.mixup && static_cast<int>(task.mix_ratio.size()) != n) {
    parse_fail(meta_path, mr_line, "expected one mix ratio per sample");
  }
  if (!task.mixup && !task.mix_ratio.empty()) {
    parse_fail(meta_path, mr_line, "multiclass tasks store no mix ratios");
  }

  const std::string samples_path = dir + "/samples.tsv";
  auto sample_lines = read_lines(samples_path);
  if (static_cast<int>(sample_lines.size()) != n) {
    fail(ErrCode::kParse, samples_path + ": expected " + std::to_string(n) +
                              " rows, got " + std::to_string(sample_lines.size()));
  }
  for (size_t i = 0; i < sample_lines.size(); ++i) {
    auto fields = split(sample_lines[i], '\t');
    if (static_cast<int>(fields.size()) != task.length + 1) {
      parse_fail(samples_path, i + 1,
                 "expected " + std::to_string(task.length + 1) + " fields, got " +
                     std::to_string(fields.size()));
    }
    int label = static_cast<int>(parse_int(fields[0], samples_path, i + 1));
    if (label < 0 || label >= task.num_classes) {
      parse_fail(samples_path, i + 1, "class id " + fields[0] + " out of range");
    }
    std::vector<double> row(static_cast<size_t>(task.length));
    for (int j = 0; j < task.length; ++j) {
      row[static_cast<size_t>(j)] =
          parse_double(fields[static_cast<size_t>(j) + 1], samples_path, i + 1);
    }
    task.y.push_back(label);
    task.x.push_back(std::move(row));
  }
  // Replay the label rule so a corrupted file cannot silently ship
  // inconsistent labels.
  if (task.mixup) {
    for (int i = 0; i < n; ++i) {
      int expect = task.mix_ratio[static_cast<size_t>(i)] > task.threshold ? 0 : 1;
      if (task.y[static_cast<size_t>(i)] != expect) {
        parse_fail(samples_path, static_cast<size_t>(i) + 1,
                   "label inconsistent with stored mix ratio and threshold");
      }
    }
  }

  const std::string bits_path = dir + "/bitlabels.tsv";
  auto bit_lines = read_lines(bits_path);
  if (static_cast<int>(bit_lines.size()) != n) {
    fail(ErrCode::kParse, bits_path + ": expected " + std::to_string(n) +
                              " rows, got " + std::to_string(bit_lines.size()));
  }
  for (size_t i = 0; i < bit_lines.size(); ++i) {
    auto fields = split(bit_lines[i], '\t');
    if (static_cast<int>(fields.size()) != task.n_bit) {
      parse_fail(bits_path, i + 1, "expected " + std::to_string(task.n_bit) +
                                       " bit columns, got " +
                                       std::to_string(fields.size()));
    }
    auto code = encode_label_bits(
        task.bit_patterns[static_cast<size_t>(task.y[i])], task.n_bit);
    for (int b = 0; b < task.n_bit; ++b) {
      const std::string& f = fields[static_cast<size_t>(b)];
      if (f != "0" && f != "1") parse_fail(bits_path, i + 1, "bit must be 0 or 1");
      if ((f == "1") != (code[static_cast<size_t>(b)] != 0)) {
        parse_fail(bits_path, i + 1, "bits do not match the class's pattern");
      }
    }
  }
  return task;
}

}  // namespace tict
