#pragma once

// Benchmarking against UCR-format datasets (accuracy + average rank), the
// retrieval-fed ICL evaluation path, the label-representation study, and the
// pre-training ablation suite.

#include <functional>
#include <string>
#include <vector>

#include "common.hpp"
#include "icl_model.hpp"
#include "nn.hpp"
#include "retrieval.hpp"
#include "rng.hpp"
#include "synthgen.hpp"
#include "training.hpp"

namespace tict {

// ---------------------------------------------------------------------------
// UCR-format datasets
// ---------------------------------------------------------------------------

struct UcrSplit {
  std::vector<std::vector<double>> x;
  std::vector<int> y;  // remapped to 0..C-1, shared across both splits
  int n() const { return static_cast<int>(x.size()); }
};

struct UcrDataset {
  std::string name;
  UcrSplit train;
  UcrSplit test;
  int num_classes = 0;
  std::vector<int> raw_labels;  // class id -> label value as written in the file
};

// Parses one TSV split: each row is an integer label followed by the series
// values, whitespace-separated. Trailing NaN cells (variable-length padding)
// are stripped; any other non-finite or non-numeric cell is a parse error
// with its line number. Returns raw (unremapped) labels.
void parse_ucr_split(const std::string& path, std::vector<std::vector<double>>& x,
                     std::vector<int>& raw_labels);

// Writes one split in the same format, values at 6 significant digits.
void write_ucr_split(const std::string& path, const std::vector<std::vector<double>>& x,
                     const std::vector<int>& raw_labels);

// Loads <prefix>_TRAIN.tsv and <prefix>_TEST.tsv; labels from both splits are
// remapped together (sorted raw values -> 0..C-1), so e.g. {-1,1} -> {0,1}.
UcrDataset load_ucr_tsv(const std::string& prefix);

// ---------------------------------------------------------------------------
// ICL evaluation with retrieved context
// ---------------------------------------------------------------------------

struct SampleRecord {
  int predicted = -1;
  int truth = -1;
  // True when the retrieved context contains every class at least once; a
  // query whose context misses a class can never be assigned that class.
  bool full_coverage = false;
};

struct IclEvalResult {
  double accuracy = 0.0;
  std::vector<SampleRecord> records;
};

// For each test sample: retrieve its k nearest training series (z-normalized
// Euclidean), condition the model on them, take the argmax class.
IclEvalResult evaluate_icl(IclModel& model, const UcrDataset& ds, int k = 64);

// 1NN Euclidean baseline on the same preprocessed view (L = 0 keeps the
// native training-series length).
double evaluate_1nn(const UcrDataset& ds, int L = 0);

// Views a generated task as a benchmark dataset: first half context pool
// (train), second half queries (test), labels kept as-is.
UcrDataset task_as_benchmark(const TaskDataset& task);

// ---------------------------------------------------------------------------
// Rank aggregation
// ---------------------------------------------------------------------------

// Ranks of one dataset row by descending accuracy, 1 = best, ties averaged.
std::vector<double> tied_ranks_desc(const std::vector<double>& accuracies);

// accuracy[dataset][method] -> average rank per method (lower is better).
std::vector<double> average_rank(const std::vector<std::vector<double>>& accuracy);

struct EvalReport {
  std::vector<std::string> datasets;
  std::vector<std::string> methods;
  std::vector<std::vector<double>> accuracy;  // [dataset][method]
  std::vector<std::vector<double>> ranks;     // [dataset][method]
  std::vector<double> avg_rank;               // [method]
};

EvalReport make_eval_report(std::vector<std::string> datasets,
                            std::vector<std::string> methods,
                            std::vector<std::vector<double>> accuracy);

// TSV table plus a short human-readable summary block.
void write_eval_report(const EvalReport& report, const std::string& path);

// ---------------------------------------------------------------------------
// Label-representation study
// ---------------------------------------------------------------------------

enum class LabelRepr { kNumerical, kOneHot, kBit };

std::string label_repr_name(LabelRepr r);

struct LabelStudyConfig {
  LabelRepr repr = LabelRepr::kBit;
  int n_bit = 8;   // labels drawn from 2^n_bit classes
  int n_ctx = 15;  // context items per instance
  int d = 64;
  int layers = 4;
  int heads = 2;
  int ffn_mult = 4;
  int epochs = 60;
  int tasks_per_epoch = 1024;
  int batch_size = 32;
  int test_tasks = 512;
  double lr = 1e-3;
  uint64_t seed = 0;

  void validate() const;
  int repr_dim() const {
    switch (repr) {
      case LabelRepr::kNumerical: return 1;
      case LabelRepr::kOneHot: return 1 << n_bit;
      default: return n_bit;
    }
  }
};

// One matching instance: a query class plus n_ctx context labels, each either
// the query class or a distractor; targets mark the matching positions.
struct MatchingInstance {
  int query = 0;
  std::vector<int> labels;
  std::vector<float> targets;
};

MatchingInstance make_matching_instance(int n_ctx, int n_bit, Rng& rng);

// Plain pre-norm transformer over n_ctx+1 label tokens (query first). The
// input layer is the experiment's variable: repr_dim -> d. A per-position
// learned embedding lets the model tell the query token from the context.
struct LabelStudyModel {
  LabelStudyConfig cfg;
  LinearT<float> input;
  Tensor pos;  // (n_ctx+1, d)
  std::vector<EncoderBlockT<float>> blocks;
  LayerNormT<float> ln_final;
  LinearT<float> head;  // d -> 1 match logit per context token

  void init(const LabelStudyConfig& c, uint64_t seed);

  // batch -> (B, n_ctx) match logits.
  Tensor forward(const std::vector<MatchingInstance>& batch) const;

  // Fraction of context positions classified correctly at threshold 0.
  double accuracy(const std::vector<MatchingInstance>& instances) const;

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    input.visit(prefix + ".input", v);
    v(prefix + ".pos", pos);
    for (size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].visit(prefix + ".blk" + std::to_string(i), v);
    }
    ln_final.visit(prefix + ".ln_final", v);
    head.visit(prefix + ".head", v);
  }
};

struct LabelStudyPoint {
  int epoch = 0;  // 0 = before any training
  double accuracy = 0.0;
};

// Trains one model on the matching task and returns the per-epoch accuracy
// curve on a fixed pre-generated test set (including the untrained point).
// When out_tsv is nonempty the curve is also written as (epoch, accuracy).
std::vector<LabelStudyPoint> label_study_run(
    const LabelStudyConfig& cfg, const std::string& out_tsv = "",
    const std::function<void(const LabelStudyPoint&)>& on_epoch = nullptr);

// ---------------------------------------------------------------------------
// Ablation suite
// ---------------------------------------------------------------------------

struct AblationVariant {
  std::string name;
  EncoderVariant encoder = EncoderVariant::kResNet;
  bool mixup = true;
  bool augmentation = true;
  bool imbalance = true;
  int multiclass_templates = 8;  // used when mixup is off
};

std::vector<AblationVariant> default_ablation_variants();

struct AblationConfig {
  TrainConfig base;        // shared recipe; generator flags overridden per variant
  int eval_tasks = 20;     // held-out synthetic benchmark family
  uint64_t eval_seed = 7777;
  int k = 64;              // retrieval context size at evaluation
  bool train_missing = true;  // false: a missing checkpoint is an error
  std::vector<AblationVariant> variants = default_ablation_variants();
};

struct AblationReport {
  std::vector<std::string> variant_names;
  std::vector<std::string> flags;  // per-variant settings echoed verbatim
  std::vector<std::string> task_names;
  std::vector<std::vector<double>> accuracy;  // [task][variant]
  std::vector<std::vector<double>> ranks;     // [task][variant]
  std::vector<double> avg_rank;               // [variant]
};

// Trains (or loads) one model per variant under work_dir, evaluates all of
// them on the same held-out task family, and ranks them.
AblationReport run_ablation_suite(const AblationConfig& cfg, const std::string& work_dir);

void write_ablation_report(const AblationReport& report, const std::string& path);

}  // namespace tict
