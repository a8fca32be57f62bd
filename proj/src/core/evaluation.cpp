#include "core/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace tict {

// ---------------------------------------------------------------------------
// UCR-format parsing
// ---------------------------------------------------------------------------

namespace {

double parse_cell(const std::string& token, const std::string& path, int line_no,
                  int col_no) {
  const char* begin = token.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    fail(ErrCode::kParse, path + " line " + std::to_string(line_no) + ": cell " +
                              std::to_string(col_no) + " is not a number: '" +
                              token + "'");
  }
  return v;
}

std::string basename_of(const std::string& path) {
  size_t slash = path.find_last_of('/');
  return slash == std::string::npos ? path : path.substr(slash + 1);
}

}  // namespace

void parse_ucr_split(const std::string& path, std::vector<std::vector<double>>& x,
                     std::vector<int>& raw_labels) {
  std::ifstream in(path);
  if (!in) fail(ErrCode::kIo, "cannot open " + path);
  x.clear();
  raw_labels.clear();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    if (tokens.empty()) continue;  // blank lines are harmless
    if (tokens.size() < 3) {
      fail(ErrCode::kParse, path + " line " + std::to_string(line_no) +
                                ": a row needs a label and at least 2 values");
    }
    double label_value = parse_cell(tokens[0], path, line_no, 0);
    long long rounded = std::llround(label_value);
    if (std::abs(label_value - static_cast<double>(rounded)) > 1e-6) {
      fail(ErrCode::kParse, path + " line " + std::to_string(line_no) +
                                ": label '" + tokens[0] + "' is not an integer");
    }
    std::vector<double> series;
    series.reserve(tokens.size() - 1);
    for (size_t c = 1; c < tokens.size(); ++c) {
      series.push_back(parse_cell(tokens[c], path, line_no, static_cast<int>(c)));
    }
    // Variable-length rows pad the tail with NaN; strip it. Anything
    // non-finite before the tail is real corruption.
    while (!series.empty() && std::isnan(series.back())) series.pop_back();
    for (size_t c = 0; c < series.size(); ++c) {
      if (!std::isfinite(series[c])) {
        fail(ErrCode::kParse, path + " line " + std::to_string(line_no) +
                                  ": cell " + std::to_string(c + 1) +
                                  " is not finite");
      }
    }
    if (series.size() < 2) {
      fail(ErrCode::kParse, path + " line " + std::to_string(line_no) +
                                ": series has fewer than 2 usable values");
    }
    raw_labels.push_back(static_cast<int>(rounded));
    x.push_back(std::move(series));
  }
  if (x.empty()) fail(ErrCode::kParse, path + ": no data rows");
}

void write_ucr_split(const std::string& path, const std::vector<std::vector<double>>& x,
                     const std::vector<int>& raw_labels) {
  if (x.size() != raw_labels.size()) {
    fail(ErrCode::kInput, "write_ucr_split: " + std::to_string(x.size()) +
                              " series vs " + std::to_string(raw_labels.size()) +
                              " labels");
  }
  std::ofstream out(path);
  if (!out) fail(ErrCode::kIo, "cannot open " + path + " for writing");
  char buf[64];
  for (size_t i = 0; i < x.size(); ++i) {
    out << raw_labels[i];
    for (double v : x[i]) {
      std::snprintf(buf, sizeof buf, "%.6g", v);
      out << '\t' << buf;
    }
    out << '\n';
  }
  if (!out.good()) fail(ErrCode::kIo, "write failed for " + path);
}

UcrDataset load_ucr_tsv(const std::string& prefix) {
  UcrDataset ds;
  ds.name = basename_of(prefix);
  std::vector<int> train_raw, test_raw;
  parse_ucr_split(prefix + "_TRAIN.tsv", ds.train.x, train_raw);
  parse_ucr_split(prefix + "_TEST.tsv", ds.test.x, test_raw);

  std::set<int> values(train_raw.begin(), train_raw.end());
  values.insert(test_raw.begin(), test_raw.end());
  ds.raw_labels.assign(values.begin(), values.end());  // sorted ascending
  ds.num_classes = static_cast<int>(ds.raw_labels.size());
  std::map<int, int> to_id;
  for (int i = 0; i < ds.num_classes; ++i) to_id[ds.raw_labels[static_cast<size_t>(i)]] = i;

  ds.train.y.reserve(train_raw.size());
  for (int raw : train_raw) ds.train.y.push_back(to_id[raw]);
  ds.test.y.reserve(test_raw.size());
  for (int raw : test_raw) ds.test.y.push_back(to_id[raw]);
  return ds;
}

// ---------------------------------------------------------------------------
// ICL evaluation
// ---------------------------------------------------------------------------

namespace {

int argmax_row(const float* row, int width) {
  int best = 0;
  for (int c = 1; c < width; ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

}  // namespace

IclEvalResult evaluate_icl(IclModel& model, const UcrDataset& ds, int k) {
  if (k < 1) fail(ErrCode::kInput, "evaluate_icl: k must be >= 1");
  const int C = ds.num_classes;
  model.check_capacity(C);
  const int L = model.cfg.enc.L;
  const int d = model.cfg.enc.d;

  auto index = build_index(ds.train.x, ds.train.y, L);
  auto train_emb = model.embed_series(index.series);

  std::vector<std::vector<double>> test_prepped;
  test_prepped.reserve(ds.test.x.size());
  for (const auto& row : ds.test.x) test_prepped.push_back(preprocess(row, L));
  auto test_emb = model.embed_series(test_prepped);

  auto assignment = identity_assignment(C);
  IclEvalResult result;
  result.records.reserve(ds.test.x.size());
  int correct = 0;
  for (size_t i = 0; i < ds.test.x.size(); ++i) {
    auto ctx = knn(index, ds.test.x[i], k);
    const int kk = static_cast<int>(ctx.neighbors.size());

    std::vector<float> rows(static_cast<size_t>(kk) * d);
    std::vector<int> y_ctx(static_cast<size_t>(kk));
    std::set<int> seen;
    for (int j = 0; j < kk; ++j) {
      const int src = ctx.neighbors[static_cast<size_t>(j)].index;
      const float* from = train_emb.data() + static_cast<int64_t>(src) * d;
      std::copy(from, from + d, rows.begin() + static_cast<int64_t>(j) * d);
      y_ctx[static_cast<size_t>(j)] = ds.train.y[static_cast<size_t>(src)];
      seen.insert(y_ctx[static_cast<size_t>(j)]);
    }
    auto e_ctx = Tensor::from_vector({kk, d}, std::move(rows));
    auto e_test = slice_axis(test_emb, 0, static_cast<int>(i), 1);
    auto att = model.forward_embeddings(e_ctx, y_ctx, C, e_test, assignment);

    SampleRecord rec;
    rec.predicted = argmax_row(att.logits.data(), C);
    rec.truth = ds.test.y[i];
    rec.full_coverage = static_cast<int>(seen.size()) == C;
    if (rec.predicted == rec.truth) ++correct;
    result.records.push_back(rec);
  }
  result.accuracy = result.records.empty()
                        ? 0.0
                        : static_cast<double>(correct) /
                              static_cast<double>(result.records.size());
  return result;
}

double evaluate_1nn(const UcrDataset& ds, int L) {
  if (ds.train.x.empty()) fail(ErrCode::kInput, "evaluate_1nn: empty train split");
  if (L == 0) L = static_cast<int>(ds.train.x.front().size());
  auto index = build_index(ds.train.x, ds.train.y, L);
  int correct = 0;
  for (size_t i = 0; i < ds.test.x.size(); ++i) {
    int pred = index.raw_labels[static_cast<size_t>(
        one_nn_ed_classify(index, ds.test.x[i]))];
    if (pred == ds.test.y[i]) ++correct;
  }
  return ds.test.x.empty() ? 0.0
                           : static_cast<double>(correct) /
                                 static_cast<double>(ds.test.x.size());
}

// ---------------------------------------------------------------------------
// Rank aggregation
// ---------------------------------------------------------------------------

std::vector<double> tied_ranks_desc(const std::vector<double>& accuracies) {
  const int M = static_cast<int>(accuracies.size());
  if (M == 0) fail(ErrCode::kInput, "tied_ranks_desc: empty row");
  for (double a : accuracies) {
    if (!std::isfinite(a)) fail(ErrCode::kInput, "tied_ranks_desc: non-finite cell");
  }
  std::vector<int> order(static_cast<size_t>(M));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return accuracies[static_cast<size_t>(a)] > accuracies[static_cast<size_t>(b)];
  });
  std::vector<double> ranks(static_cast<size_t>(M));
  int at = 0;
  while (at < M) {
    int end = at;
    while (end + 1 < M &&
           accuracies[static_cast<size_t>(order[static_cast<size_t>(end + 1)])] ==
               accuracies[static_cast<size_t>(order[static_cast<size_t>(at)])]) {
      ++end;
    }
    // Positions at..end (0-based) share the averaged 1-based rank.
    double shared = (static_cast<double>(at) + static_cast<double>(end)) / 2.0 + 1.0;
    for (int p = at; p <= end; ++p) {
      ranks[static_cast<size_t>(order[static_cast<size_t>(p)])] = shared;
    }
    at = end + 1;
  }
  return ranks;
}

std::vector<double> average_rank(const std::vector<std::vector<double>>& accuracy) {
  if (accuracy.empty()) fail(ErrCode::kInput, "average_rank: no datasets");
  const size_t M = accuracy.front().size();
  std::vector<double> total(M, 0.0);
  for (const auto& row : accuracy) {
    if (row.size() != M) {
      fail(ErrCode::kInput, "average_rank: ragged accuracy table");
    }
    auto ranks = tied_ranks_desc(row);
    for (size_t m = 0; m < M; ++m) total[m] += ranks[m];
  }
  for (double& t : total) t /= static_cast<double>(accuracy.size());
  return total;
}

EvalReport make_eval_report(std::vector<std::string> datasets,
                            std::vector<std::string> methods,
                            std::vector<std::vector<double>> accuracy) {
  if (datasets.size() != accuracy.size()) {
    fail(ErrCode::kInput, "make_eval_report: dataset/row count mismatch");
  }
  EvalReport report;
  report.datasets = std::move(datasets);
  report.methods = std::move(methods);
  report.accuracy = std::move(accuracy);
  report.ranks.reserve(report.accuracy.size());
  for (const auto& row : report.accuracy) {
    if (row.size() != report.methods.size()) {
      fail(ErrCode::kInput, "make_eval_report: row width != method count");
    }
    report.ranks.push_back(tied_ranks_desc(row));
  }
  report.avg_rank = average_rank(report.accuracy);
  return report;
}

void write_eval_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrCode::kIo, "cannot open " + path + " for writing");
  out << "dataset";
  for (const auto& m : report.methods) out << '\t' << m;
  out << '\n';
  char buf[64];
  for (size_t i = 0; i < report.datasets.size(); ++i) {
    out << report.datasets[i];
    for (double a : report.accuracy[i]) {
      std::snprintf(buf, sizeof buf, "%.6g", a);
      out << '\t' << buf;
    }
    out << '\n';
  }
  out << "# average rank (lower is better)\n";
  for (size_t m = 0; m < report.methods.size(); ++m) {
    std::snprintf(buf, sizeof buf, "%.4g", report.avg_rank[m]);
    out << "# " << report.methods[m] << '\t' << buf << '\n';
  }
  if (!out.good()) fail(ErrCode::kIo, "write failed for " + path);
}

// ---------------------------------------------------------------------------
// Label-representation study
// ---------------------------------------------------------------------------

std::string label_repr_name(LabelRepr r) {
  switch (r) {
    case LabelRepr::kNumerical: return "numerical";
    case LabelRepr::kOneHot: return "onehot";
    default: return "bit";
  }
}

void LabelStudyConfig::validate() const {
  if (n_bit < 1 || n_bit > 16) {
    fail(ErrCode::kConfig, "label study n_bit must be in [1,16], got " +
                               std::to_string(n_bit));
  }
  if (n_ctx < 1) fail(ErrCode::kConfig, "label study needs at least 1 context item");
  if (d <= 0 || layers <= 0 || ffn_mult <= 0) {
    fail(ErrCode::kConfig, "label study model dims must be positive");
  }
  if (heads <= 0 || d % heads != 0) {
    fail(ErrCode::kConfig, "embed dim " + std::to_string(d) +
                               " not divisible by " + std::to_string(heads) +
                               " heads");
  }
  if (epochs <= 0 || tasks_per_epoch <= 0 || batch_size <= 0 || test_tasks <= 0) {
    fail(ErrCode::kConfig, "label study sizes must be positive");
  }
  if (tasks_per_epoch % batch_size != 0) {
    fail(ErrCode::kConfig, "tasks_per_epoch must be a multiple of batch_size");
  }
  if (lr <= 0.0) fail(ErrCode::kConfig, "learning rate must be positive");
}

MatchingInstance make_matching_instance(int n_ctx, int n_bit, Rng& rng) {
  const int C = 1 << n_bit;
  MatchingInstance inst;
  inst.query = rng.below_int(C);
  inst.labels.resize(static_cast<size_t>(n_ctx));
  inst.targets.resize(static_cast<size_t>(n_ctx));
  for (int i = 0; i < n_ctx; ++i) {
    if (rng.uniform() < 0.5) {
      inst.labels[static_cast<size_t>(i)] = inst.query;
      inst.targets[static_cast<size_t>(i)] = 1.0f;
    } else {
      int p;
      do {
        p = rng.below_int(C);
      } while (p == inst.query);
      inst.labels[static_cast<size_t>(i)] = p;
      inst.targets[static_cast<size_t>(i)] = 0.0f;
    }
  }
  return inst;
}

void LabelStudyModel::init(const LabelStudyConfig& c, uint64_t seed) {
  c.validate();
  cfg = c;
  Rng rng(mix_seed(seed, 1));
  input.init(c.repr_dim(), c.d, rng);
  const int tokens = c.n_ctx + 1;
  {
    std::vector<float> pv(static_cast<size_t>(tokens) * c.d);
    for (auto& v : pv) v = static_cast<float>(rng.normal() * 0.02);
    pos = Tensor::from_vector({tokens, c.d}, std::move(pv));
    pos.set_requires_grad(true);
  }
  blocks.assign(static_cast<size_t>(c.layers), {});
  for (auto& blk : blocks) blk.init(c.d, c.heads, c.d * c.ffn_mult, rng);
  ln_final.init(c.d);
  head.init(c.d, 1, rng);
}

Tensor LabelStudyModel::forward(const std::vector<MatchingInstance>& batch) const {
  const int B = static_cast<int>(batch.size());
  if (B == 0) fail(ErrCode::kInput, "label study forward: empty batch");
  const int T = cfg.n_ctx + 1;
  const int R = cfg.repr_dim();
  const int C = 1 << cfg.n_bit;

  std::vector<float> feat(static_cast<size_t>(B) * T * R, 0.0f);
  auto fill_token = [&](int b, int t, int label) {
    float* cell = feat.data() + (static_cast<size_t>(b) * T + static_cast<size_t>(t)) * R;
    switch (cfg.repr) {
      case LabelRepr::kNumerical:
        // Scaled to [0,1) so the lone input feature is well conditioned.
        cell[0] = static_cast<float>(label) / static_cast<float>(C);
        break;
      case LabelRepr::kOneHot:
        cell[label] = 1.0f;
        break;
      default: {
        auto bits = encode_label_bits(label, cfg.n_bit);
        for (int j = 0; j < cfg.n_bit; ++j) cell[j] = static_cast<float>(bits[static_cast<size_t>(j)]);
        break;
      }
    }
  };
  for (int b = 0; b < B; ++b) {
    const auto& inst = batch[static_cast<size_t>(b)];
    if (static_cast<int>(inst.labels.size()) != cfg.n_ctx) {
      fail(ErrCode::kInput, "label study forward: instance has " +
                                std::to_string(inst.labels.size()) +
                                " labels, expected " + std::to_string(cfg.n_ctx));
    }
    fill_token(b, 0, inst.query);
    for (int i = 0; i < cfg.n_ctx; ++i) {
      fill_token(b, i + 1, inst.labels[static_cast<size_t>(i)]);
    }
  }

  auto h = add(input.forward(Tensor::from_vector({B, T, R}, std::move(feat))), pos);
  for (const auto& blk : blocks) h = blk.forward(h);
  h = ln_final.forward(h);
  auto ctx_tokens = slice_axis(h, 1, 1, cfg.n_ctx);
  return reshape(head.forward(ctx_tokens), {B, cfg.n_ctx});
}

double LabelStudyModel::accuracy(const std::vector<MatchingInstance>& instances) const {
  if (instances.empty()) fail(ErrCode::kInput, "label study accuracy: no instances");
  int64_t correct = 0, total = 0;
  const size_t chunk = 64;
  for (size_t start = 0; start < instances.size(); start += chunk) {
    size_t stop = std::min(instances.size(), start + chunk);
    std::vector<MatchingInstance> part(instances.begin() + static_cast<int64_t>(start),
                                       instances.begin() + static_cast<int64_t>(stop));
    auto logits = forward(part);
    const float* z = logits.data();
    for (size_t b = 0; b < part.size(); ++b) {
      for (int i = 0; i < cfg.n_ctx; ++i) {
        bool said_match = z[b * static_cast<size_t>(cfg.n_ctx) + static_cast<size_t>(i)] > 0.0f;
        bool is_match = part[b].targets[static_cast<size_t>(i)] > 0.5f;
        correct += said_match == is_match;
        ++total;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<LabelStudyPoint> label_study_run(
    const LabelStudyConfig& cfg, const std::string& out_tsv,
    const std::function<void(const LabelStudyPoint&)>& on_epoch) {
  cfg.validate();
  LabelStudyModel model;
  model.init(cfg, cfg.seed);

  std::vector<Tensor*> params;
  model.visit("study", [&](const std::string&, Tensor& t) { params.push_back(&t); });
  AdamState adam;
  AdamConfig opt;
  opt.lr = cfg.lr;

  Rng test_rng(mix_seed(cfg.seed, 3));
  std::vector<MatchingInstance> test_set;
  test_set.reserve(static_cast<size_t>(cfg.test_tasks));
  for (int i = 0; i < cfg.test_tasks; ++i) {
    test_set.push_back(make_matching_instance(cfg.n_ctx, cfg.n_bit, test_rng));
  }

  std::ofstream tsv;
  if (!out_tsv.empty()) {
    tsv.open(out_tsv);
    if (!tsv) fail(ErrCode::kIo, "cannot open " + out_tsv + " for writing");
    tsv << "epoch\taccuracy\n";
  }
  std::vector<LabelStudyPoint> curve;
  auto emit = [&](int epoch, double acc) {
    LabelStudyPoint pt{epoch, acc};
    curve.push_back(pt);
    if (tsv.is_open()) {
      tsv << pt.epoch << '\t' << pt.accuracy << '\n';
      tsv.flush();
    }
    if (on_epoch) on_epoch(pt);
  };
  emit(0, model.accuracy(test_set));

  Rng train_rng(mix_seed(cfg.seed, 2));
  const int steps = cfg.tasks_per_epoch / cfg.batch_size;
  std::vector<MatchingInstance> batch(static_cast<size_t>(cfg.batch_size));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int s = 0; s < steps; ++s) {
      for (auto& inst : batch) {
        inst = make_matching_instance(cfg.n_ctx, cfg.n_bit, train_rng);
      }
      std::vector<float> targets;
      targets.reserve(batch.size() * static_cast<size_t>(cfg.n_ctx));
      for (const auto& inst : batch) {
        targets.insert(targets.end(), inst.targets.begin(), inst.targets.end());
      }
      for (Tensor* p : params) p->zero_grad();
      Tape tape;
      Tape::Scope scope(tape);
      auto loss = bce_logits(model.forward(batch), targets);
      if (!std::isfinite(loss.item())) {
        fail(ErrCode::kNumeric, "label study: non-finite loss at epoch " +
                                    std::to_string(epoch));
      }
      tape.backward(loss);
      adam_update(params, adam, opt);
    }
    emit(epoch, model.accuracy(test_set));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Ablation suite
// ---------------------------------------------------------------------------

std::vector<AblationVariant> default_ablation_variants() {
  std::vector<AblationVariant> v(5);
  v[0].name = "full";
  v[1].name = "no_augmentation";
  v[1].augmentation = false;
  v[2].name = "no_mixup";
  v[2].mixup = false;
  v[3].name = "no_imbalance";
  v[3].imbalance = false;
  v[4].name = "transformer_encoder";
  v[4].encoder = EncoderVariant::kTransformer;
  return v;
}

namespace {

std::string variant_flags(const AblationVariant& v) {
  std::string s = "name=" + v.name;
  s += " encoder=";
  s += v.encoder == EncoderVariant::kResNet ? "resnet" : "transformer";
  s += " mixup=";
  s += v.mixup ? "on" : "off";
  s += " augmentation=";
  s += v.augmentation ? "on" : "off";
  s += " imbalance=";
  s += v.imbalance ? "on" : "off";
  if (!v.mixup) s += " multiclass_templates=" + std::to_string(v.multiclass_templates);
  return s;
}

}  // namespace

UcrDataset task_as_benchmark(const TaskDataset& task) {
  UcrDataset ds;
  ds.name = "task" + std::to_string(task.seed);
  ds.num_classes = task.num_classes;
  ds.raw_labels.resize(static_cast<size_t>(task.num_classes));
  std::iota(ds.raw_labels.begin(), ds.raw_labels.end(), 0);
  const int half = task.n() / 2;
  for (int i = 0; i < task.n(); ++i) {
    auto& split = i < half ? ds.train : ds.test;
    split.x.push_back(task.x[static_cast<size_t>(i)]);
    split.y.push_back(task.y[static_cast<size_t>(i)]);
  }
  return ds;
}

AblationReport run_ablation_suite(const AblationConfig& cfg, const std::string& work_dir) {
  if (cfg.variants.empty()) fail(ErrCode::kConfig, "ablation: no variants");
  if (cfg.eval_tasks < 1) fail(ErrCode::kConfig, "ablation: eval_tasks must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(work_dir, ec);
  if (ec) fail(ErrCode::kIo, "cannot create " + work_dir + ": " + ec.message());

  // One trained model per variant, cached as a checkpoint under work_dir.
  std::vector<TrainState> models;
  models.reserve(cfg.variants.size());
  AblationReport report;
  for (const auto& v : cfg.variants) {
    TrainConfig tc = cfg.base;
    tc.model.enc.variant = v.encoder;
    tc.gen.use_mixup = v.mixup;
    tc.gen.use_augmentation = v.augmentation;
    tc.gen.use_imbalance = v.imbalance;
    tc.gen.multiclass_templates = v.mixup ? 0 : v.multiclass_templates;
    tc.validate();

    const std::string dir = work_dir + "/" + v.name;
    const std::string ckpt = dir + "/checkpoint.bin";
    if (!std::filesystem::exists(ckpt)) {
      if (!cfg.train_missing) {
        fail(ErrCode::kIo, "ablation: missing checkpoint for variant '" + v.name +
                               "' at " + ckpt);
      }
      run_pretraining(tc, dir, "", nullptr);
    }
    models.push_back(load_checkpoint(ckpt));
    report.variant_names.push_back(v.name);
    report.flags.push_back(variant_flags(v));
  }

  // Shared held-out benchmark: standard two-class tasks, full distribution,
  // split half context pool / half queries.
  GenConfig fam = cfg.base.gen;
  fam.use_mixup = true;
  fam.use_augmentation = true;
  fam.use_imbalance = true;
  fam.multiclass_templates = 0;
  for (int t = 0; t < cfg.eval_tasks; ++t) {
    fam.seed = mix_seed(cfg.eval_seed, 0x30000 + static_cast<uint64_t>(t));
    auto ds = task_as_benchmark(generate_dataset(fam));
    report.task_names.push_back(ds.name);
    std::vector<double> row;
    row.reserve(models.size());
    for (auto& m : models) {
      row.push_back(evaluate_icl(m.model, ds, cfg.k).accuracy);
    }
    report.accuracy.push_back(std::move(row));
  }
  for (const auto& row : report.accuracy) report.ranks.push_back(tied_ranks_desc(row));
  report.avg_rank = average_rank(report.accuracy);
  return report;
}

void write_ablation_report(const AblationReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrCode::kIo, "cannot open " + path + " for writing");
  out << "task";
  for (const auto& name : report.variant_names) out << '\t' << name;
  out << '\n';
  char buf[64];
  for (size_t t = 0; t < report.accuracy.size(); ++t) {
    out << report.task_names[t];
    for (double a : report.accuracy[t]) {
      std::snprintf(buf, sizeof buf, "%.6g", a);
      out << '\t' << buf;
    }
    out << '\n';
  }
  out << "# variant settings\n";
  for (const auto& f : report.flags) out << "# " << f << '\n';
  out << "# average rank (lower is better)\n";
  for (size_t m = 0; m < report.variant_names.size(); ++m) {
    std::snprintf(buf, sizeof buf, "%.4g", report.avg_rank[m]);
    out << "# " << report.variant_names[m] << '\t' << buf << '\n';
  }
  if (!out.good()) fail(ErrCode::kIo, "write failed for " + path);
}

}  // namespace tict
