#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/rng.hpp"

namespace tict {

// ---------------------------------------------------------------------------
// Configuration for synthetic in-context task generation.
// ---------------------------------------------------------------------------

struct GenConfig {
  int n = 128;        // samples per task (split in half for context/query)
  int n_bit = 6;      // bit-label width; tasks may use up to 2^n_bit classes
  int n_max = 9;      // max augmentations per task (bank holds 9)
  int length = 512;   // series length L
  uint64_t seed = 0;  // generation is a pure function of this config

  // Ablation switches. The default is the full generator: two mixed templates,
  // random augmentations, and a random class-imbalance threshold.
  bool use_mixup = true;
  bool use_augmentation = true;
  bool use_imbalance = true;
  // Class count for the no-mixup variant (one template per class plus jitter).
  // Must be 0 when use_mixup is true and >= 2 otherwise.
  int multiclass_templates = 0;

  void validate() const;
};

// One generated in-context task. Labels are class ids; the one-hot and bit
// representations are derived views: row i of Y_onehot is onehot(y[i]) and row
// i of Y_bit is the little-endian bit pattern bit_patterns[y[i]].
struct TaskDataset {
  std::vector<std::vector<double>> x;  // n series, each length L
  std::vector<int> y;                  // class ids in 0..num_classes-1
  std::vector<int> bit_patterns;       // per class: its random bit-label value
  int n_bit = 0;
  int num_classes = 0;
  int length = 0;

  // Generation metadata, retained so any sample's label can be replayed.
  double threshold = 0.5;               // t: class 0 iff r > t (mixup variant)
  std::vector<double> mix_ratio;        // r per sample; empty for multiclass
  std::vector<uint64_t> template_seeds;
  std::vector<std::string> augmentation_names;  // pipeline, in applied order
  uint64_t seed = 0;
  bool mixup = true;

  int n() const { return static_cast<int>(x.size()); }
};

// ---------------------------------------------------------------------------
// Gaussian-process template sampling.
// ---------------------------------------------------------------------------

namespace kernels {

enum class Kind { kLinear, kRbf, kPeriodic, kWhite, kConstant };

// One bank entry. `param` is the RBF length-scale on the normalized [0,1]
// domain, or the periodic kernel's period in samples; unused otherwise.
struct Spec {
  Kind kind;
  double param;
};

// The fixed 11-entry bank: linear, RBF at 3 length-scales, periodic at 5
// periods, white noise, constant.
const std::vector<Spec>& bank();

// Fills `cov` (length*length, row-major) with the kernel's covariance over
// `length` evenly spaced points.
void covariance(const Spec& spec, int length, std::vector<double>& cov);

// Draws one zero-mean GP path with the given covariance. Cholesky failures
// retry with cumulative 1e-6 diagonal jitter up to 3 times, then raise
// kNumeric (the caller regenerates with a fresh kernel draw).
std::vector<double> gp_draw(const std::vector<double>& cov, int length,
                            Rng& rng);

}  // namespace kernels

// Samples one z-normalized template series: compose J ~ U{1..5} kernels from
// the bank with random +/* operations, draw a GP path, z-normalize.
// Degenerate (near-constant) paths are re-drawn so the output always has unit
// variance. Requires length >= 16.
std::vector<double> kernel_synth(uint64_t seed, int length);

// ---------------------------------------------------------------------------
// Augmentations.
// ---------------------------------------------------------------------------

// Deterministic transform primitives with explicit parameters. The bank wraps
// these with the randomized parameter draws.
namespace aug {

// Adds N(0, sigma) noise to every element.
void jitter(std::vector<double>& x, double sigma, Rng& rng);
// Centered moving average; the window shrinks at the edges. Width must be odd.
void smooth(std::vector<double>& x, int width);
// Adds a linear ramp from 0 at the first element to `rise` at the last.
void slope(std::vector<double>& x, double rise);
// Adds `magnitude` to the single element at `pos`.
void spike(std::vector<double>& x, int pos, double magnitude);
// Adds `magnitude` to every element from `pos` onward.
void step(std::vector<double>& x, int pos, double magnitude);
// Keeps x[start, start+keep) and linearly resamples it back to the original
// length.
void crop(std::vector<double>& x, int start, int keep);
// Zeroes the window x[start, start+width).
void mask(std::vector<double>& x, int start, int width);
// Circular shift; positive offsets move values toward higher indices.
void shift(std::vector<double>& x, int offset);
// Smooth monotone time reparameterization tau(u) = u + (amp/(2*pi*cycles)) *
// (cos(phase) - cos(2*pi*cycles*u + phase)); local stretch stays within
// 1 +/- amp, so amp <= 0.2 caps it at 20%.
void time_warp(std::vector<double>& x, double amp, int cycles, double phase);

}  // namespace aug

// A named stochastic transform: applying it draws its own parameters from the
// provided stream, so repeated applications differ per sample.
struct Augmentation {
  std::string name;
  std::function<void(std::vector<double>&, Rng&)> apply;
};

// The 9 fixed transforms: jitter, smoothing, slope, spike, step, cropping,
// masking, shifting, time_warp.
const std::vector<Augmentation>& augmentation_bank();

// A composed pipeline: bank indices in application order (possibly empty).
struct AugPipeline {
  std::vector<int> selected;

  std::vector<std::string> names() const;
  void apply(std::vector<double>& x, Rng& rng) const;
};

// Draws u ~ U{0..n_max}, then u distinct transforms without replacement,
// composed in the sampled order. u = 0 yields the identity pipeline.
AugPipeline select_rand_augs(int n_max, Rng& rng);
AugPipeline select_rand_augs(int n_max, uint64_t seed);

// ---------------------------------------------------------------------------
// Task generation.
// ---------------------------------------------------------------------------

// Generates one in-context task from the config (a pure function of it).
//
// Mixup variant: two templates, one-hot labels fixed to [1,0]/[0,1], two
// distinct random bit labels, t ~ U(0.1, 0.9) (0.5 when use_imbalance is
// off); each sample mixes the templates with r ~ U(0,1), passes through the
// task's augmentation pipeline, and is labeled class 0 iff r > t.
//
// Multiclass variant (use_mixup=false): one template per class; each sample
// copies a uniformly chosen template, gets small jitter, then the pipeline.
TaskDataset generate_dataset(const GenConfig& cfg);

// batch_size independent tasks with seeds derived from cfg.seed; each task's
// first n/2 samples serve as context and the rest as queries.
struct PretrainBatch {
  std::vector<TaskDataset> tasks;
  int context_count = 0;
};
PretrainBatch make_pretrain_batch(const GenConfig& cfg, int batch_size);

// ---------------------------------------------------------------------------
// On-disk task format.
// ---------------------------------------------------------------------------

// Writes a task as a directory of three files:
//   metadata.txt   key=value lines (n, n_bit, t, seed, augmentations, ...)
//   samples.tsv    one row per sample: integer class id, then series values
//   bitlabels.tsv  one row per sample: n_bit 0/1 columns
// Values are printed with enough digits to round-trip doubles exactly, so a
// write/read/write cycle is byte-identical.
void write_task_dir(const TaskDataset& task, const std::string& dir);
TaskDataset read_task_dir(const std::string& dir);

}  // namespace tict
