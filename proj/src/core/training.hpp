#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "core/common.hpp"
#include "core/icl_model.hpp"
#include "core/rng.hpp"
#include "core/synthgen.hpp"

namespace tict {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers, one slot per parameter tensor, sized lazily on
// the first update.
struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  int64_t step = 0;
};

// One bias-corrected adaptive-moment update from each parameter's accumulated
// gradient (an unallocated gradient counts as zero).
void adam_update(const std::vector<Tensor*>& params, AdamState& state,
                 const AdamConfig& opt);

// Scales all gradients in place so their global L2 norm is at most clip_norm;
// returns the pre-clip norm.
double clip_gradients(const std::vector<Tensor*>& params, double clip_norm);

// Stable-order list of (name, parameter) pairs for one model.
std::vector<std::pair<std::string, Tensor*>> collect_params(IclModel& model);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 50;
  int tasks_per_epoch = 1024;
  int batch_size = 16;  // tasks per optimization step
  AdamConfig adam;
  double clip_norm = 1.0;
  uint64_t seed = 0;
  int checkpoint_every = 256;  // steps; 0 disables periodic saves
  GenConfig gen;               // task generator; gen.seed is ignored (the
                               // loop draws per-batch seeds from its stream)
  IclConfig model;

  void validate() const;
};

struct TrainState {
  IclModel model;
  AdamState adam;
  Rng data_rng{0};  // source of per-batch generator seeds
  int64_t step = 0;
  double last_grad_norm = 0.0;
  bool grad_coverage_checked = false;
};

TrainState make_train_state(const TrainConfig& cfg);

// The next task batch in the deterministic stream (advances data_rng).
PretrainBatch make_next_batch(TrainState& state, const TrainConfig& cfg);

// One optimization step: forward every task (context half conditions the
// model, query half is scored), mean NLL over all queries of all tasks,
// backward, global-norm clip, optimizer update. Returns the pre-step loss.
double train_step(TrainState& state, const PretrainBatch& batch,
                  const TrainConfig& cfg);

// Mean query NLL over a batch without touching gradients or parameters.
double evaluate_batch_loss(IclModel& model, const PretrainBatch& batch,
                           bool second_softmax);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

// Sectioned binary format, version 1 (full layout documented in README):
// a text magic/version line and model-hyperparameter block, then tagged
// sections for parameters (name -> shape -> float32 little-endian values),
// optimizer moments, the data-stream RNG state, and the step counter.
void save_checkpoint(TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

struct TrainLogRow {
  int64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;  // pre-clip
  double wall_seconds = 0.0;
};

struct PretrainResult {
  int64_t steps = 0;
  double final_loss = 0.0;
  std::string checkpoint_path;
};

// Full pre-training run: epochs * (tasks_per_epoch / batch_size) steps,
// appending one TSV row per step to <out_dir>/train_log.tsv and saving
// checkpoints to <out_dir>/checkpoint.bin. A nonempty resume_path continues
// from that checkpoint's exact state instead of initializing fresh.
PretrainResult run_pretraining(
    const TrainConfig& cfg, const std::string& out_dir,
    const std::string& resume_path = "",
    const std::function<void(const TrainLogRow&)>& on_step = nullptr);

}  // namespace tict
