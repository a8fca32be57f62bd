#include "tict/tict.h"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "core/evaluation.hpp"

struct tict_options {
  std::map<std::string, std::string> kv;
};

struct tict_model {
  tict::TrainState state;
};

namespace {

namespace fs = std::filesystem;

thread_local std::string g_error;

tict_status map_code(tict::ErrCode c) {
  switch (c) {
    case tict::ErrCode::kDimension: return TICT_E_DIMENSION;
    case tict::ErrCode::kInput: return TICT_E_INPUT;
    case tict::ErrCode::kConfig: return TICT_E_CONFIG;
    case tict::ErrCode::kCapacity: return TICT_E_CAPACITY;
    case tict::ErrCode::kContract: return TICT_E_CONTRACT;
    case tict::ErrCode::kIndex: return TICT_E_INDEX;
    case tict::ErrCode::kParse: return TICT_E_PARSE;
    case tict::ErrCode::kIo: return TICT_E_IO;
    case tict::ErrCode::kNumeric: return TICT_E_NUMERIC;
  }
  return TICT_E_UNKNOWN;
}

template <class F>
tict_status guarded(F&& f) {
  try {
    std::forward<F>(f)();
    return TICT_OK;
  } catch (const tict::TictError& e) {
    g_error = e.what();
    return map_code(e.code());
  } catch (const std::exception& e) {
    g_error = e.what();
    return TICT_E_UNKNOWN;
  } catch (...) {
    g_error = "unknown failure";
    return TICT_E_UNKNOWN;
  }
}

void need(bool ok, const char* what) {
  if (!ok) tict::fail(tict::ErrCode::kInput, std::string(what) + " must not be null");
}

// ---------------------------------------------------------------------------
// Option parsing
// ---------------------------------------------------------------------------

int64_t to_i64(const std::string& key, const std::string& v) {
  const char* begin = v.c_str();
  char* end = nullptr;
  long long out = std::strtoll(begin, &end, 10);
  if (end == begin || *end != '\0') {
    tict::fail(tict::ErrCode::kConfig, "option " + key + ": '" + v + "' is not an integer");
  }
  return out;
}

int to_pos_int(const std::string& key, const std::string& v) {
  int64_t out = to_i64(key, v);
  if (out < 1 || out > 1'000'000'000) {
    tict::fail(tict::ErrCode::kConfig, "option " + key + ": '" + v + "' out of range");
  }
  return static_cast<int>(out);
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  const char* begin = v.c_str();
  char* end = nullptr;
  unsigned long long out = std::strtoull(begin, &end, 10);
  if (end == begin || *end != '\0' || v.front() == '-') {
    tict::fail(tict::ErrCode::kConfig, "option " + key + ": '" + v + "' is not an unsigned integer");
  }
  return out;
}

double to_f64(const std::string& key, const std::string& v) {
  const char* begin = v.c_str();
  char* end = nullptr;
  double out = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    tict::fail(tict::ErrCode::kConfig, "option " + key + ": '" + v + "' is not a number");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  tict::fail(tict::ErrCode::kConfig,
             "option " + key + ": '" + v + "' is not a boolean (use 0/1/true/false/on/off)");
}

std::array<int, 3> to_i3(const std::string& key, const std::string& v) {
  std::array<int, 3> out{};
  size_t at = 0;
  for (int i = 0; i < 3; ++i) {
    size_t comma = v.find(',', at);
    bool last = i == 2;
    if (last != (comma == std::string::npos)) {
      tict::fail(tict::ErrCode::kConfig, "option " + key + ": expected three comma-separated integers");
    }
    out[static_cast<size_t>(i)] =
        to_pos_int(key, v.substr(at, last ? std::string::npos : comma - at));
    at = comma + 1;
  }
  return out;
}

tict::EncoderVariant to_encoder(const std::string& key, const std::string& v) {
  if (v == "resnet") return tict::EncoderVariant::kResNet;
  if (v == "transformer") return tict::EncoderVariant::kTransformer;
  tict::fail(tict::ErrCode::kConfig,
             "option " + key + ": '" + v + "' is not an encoder (resnet|transformer)");
}

tict::LabelRepr to_repr(const std::string& key, const std::string& v) {
  if (v == "numerical") return tict::LabelRepr::kNumerical;
  if (v == "one-hot" || v == "onehot") return tict::LabelRepr::kOneHot;
  if (v == "bit") return tict::LabelRepr::kBit;
  tict::fail(tict::ErrCode::kConfig,
             "option " + key + ": '" + v + "' is not a representation (numerical|one-hot|bit)");
}

// Every documented key, resolved over the library defaults.
struct OptionBundle {
  uint64_t seed = 0;
  int threads = 0;  // 0 = one worker per available core
  int gen_count = 8;
  tict::TrainConfig train;
  int eval_k = 64;
  tict::LabelStudyConfig study;
};

OptionBundle parse_options(const tict_options* opts) {
  OptionBundle b;
  if (opts) {
    for (const auto& [key, v] : opts->kv) {
      auto& t = b.train;
      if (key == "seed") b.seed = to_u64(key, v);
      else if (key == "threads") b.threads = static_cast<int>(to_i64(key, v));
      else if (key == "n_bit") t.gen.n_bit = t.model.n_bit = to_pos_int(key, v);
      else if (key == "gen.count") b.gen_count = to_pos_int(key, v);
      else if (key == "gen.n") t.gen.n = to_pos_int(key, v);
      else if (key == "gen.length") t.gen.length = to_pos_int(key, v);
      else if (key == "gen.n_max") t.gen.n_max = to_pos_int(key, v);
      else if (key == "gen.mixup") t.gen.use_mixup = to_bool(key, v);
      else if (key == "gen.augmentation") t.gen.use_augmentation = to_bool(key, v);
      else if (key == "gen.imbalance") t.gen.use_imbalance = to_bool(key, v);
      else if (key == "gen.multiclass_templates")
        t.gen.multiclass_templates = static_cast<int>(to_i64(key, v));
      else if (key == "enc.variant") t.model.enc.variant = to_encoder(key, v);
      else if (key == "enc.d") t.model.enc.d = to_pos_int(key, v);
      else if (key == "enc.L") t.model.enc.L = to_pos_int(key, v);
      else if (key == "enc.filters") t.model.enc.filters = to_i3(key, v);
      else if (key == "enc.kernels") t.model.enc.kernels = to_i3(key, v);
      else if (key == "enc.patch_len") t.model.enc.patch_len = to_pos_int(key, v);
      else if (key == "enc.tf_layers") t.model.enc.tf_layers = to_pos_int(key, v);
      else if (key == "enc.tf_heads") t.model.enc.tf_heads = to_pos_int(key, v);
      else if (key == "enc.ffn_mult") t.model.enc.ffn_mult = to_pos_int(key, v);
      else if (key == "enc_layers") t.model.enc_layers = static_cast<int>(to_i64(key, v));
      else if (key == "dec_layers") t.model.dec_layers = static_cast<int>(to_i64(key, v));
      else if (key == "heads") t.model.heads = to_pos_int(key, v);
      else if (key == "ffn_mult") t.model.ffn_mult = to_pos_int(key, v);
      else if (key == "second_softmax") t.model.second_softmax = to_bool(key, v);
      else if (key == "epochs") t.epochs = to_pos_int(key, v);
      else if (key == "tasks_per_epoch") t.tasks_per_epoch = to_pos_int(key, v);
      else if (key == "batch_size") t.batch_size = to_pos_int(key, v);
      else if (key == "lr") t.adam.lr = to_f64(key, v);
      else if (key == "beta1") t.adam.beta1 = to_f64(key, v);
      else if (key == "beta2") t.adam.beta2 = to_f64(key, v);
      else if (key == "eps") t.adam.eps = to_f64(key, v);
      else if (key == "clip_norm") t.clip_norm = to_f64(key, v);
      else if (key == "checkpoint_every")
        t.checkpoint_every = static_cast<int>(to_i64(key, v));
      else if (key == "eval.k") b.eval_k = to_pos_int(key, v);
      else if (key == "study.repr") b.study.repr = to_repr(key, v);
      else if (key == "study.n_bit") b.study.n_bit = to_pos_int(key, v);
      else if (key == "study.n_ctx") b.study.n_ctx = to_pos_int(key, v);
      else if (key == "study.d") b.study.d = to_pos_int(key, v);
      else if (key == "study.layers") b.study.layers = to_pos_int(key, v);
      else if (key == "study.heads") b.study.heads = to_pos_int(key, v);
      else if (key == "study.ffn_mult") b.study.ffn_mult = to_pos_int(key, v);
      else if (key == "study.epochs") b.study.epochs = to_pos_int(key, v);
      else if (key == "study.tasks_per_epoch") b.study.tasks_per_epoch = to_pos_int(key, v);
      else if (key == "study.batch_size") b.study.batch_size = to_pos_int(key, v);
      else if (key == "study.test_tasks") b.study.test_tasks = to_pos_int(key, v);
      else if (key == "study.lr") b.study.lr = to_f64(key, v);
      else tict::fail(tict::ErrCode::kConfig, "unknown option key '" + key + "'");
    }
  }
  b.train.seed = b.seed;
  b.study.seed = b.seed;
  return b;
}

// ---------------------------------------------------------------------------
// Worker fan-out. Work item i must not depend on any other item; exceptions
// surface after the join.
// ---------------------------------------------------------------------------

template <class F>
void parallel_for(int64_t n, int threads, F&& fn) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(std::min<int64_t>(n, 64))));
  if (workers == 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::atomic<bool> bad{false};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto body = [&] {
    for (;;) {
      int64_t i = next.fetch_add(1);
      if (i >= n || bad.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        bad.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Dataset discovery for tict_evaluate
// ---------------------------------------------------------------------------

struct DataRef {
  std::string name;
  std::string path;
  bool is_task_dir = false;
};

const char kTrainSuffix[] = "_TRAIN.tsv";

std::vector<DataRef> discover_datasets(const std::string& data_path) {
  std::vector<DataRef> refs;
  auto add_prefix = [&](const std::string& prefix) {
    std::string name = fs::path(prefix).filename().string();
    refs.push_back({name, prefix, false});
  };
  if (fs::exists(data_path + kTrainSuffix)) {
    add_prefix(data_path);
    return refs;
  }
  if (fs::is_directory(data_path)) {
    if (fs::exists(fs::path(data_path) / "samples.tsv")) {
      refs.push_back({fs::path(data_path).filename().string(), data_path, true});
      return refs;
    }
    for (const auto& entry : fs::directory_iterator(data_path)) {
      std::string fname = entry.path().filename().string();
      if (entry.is_directory() && fs::exists(entry.path() / "samples.tsv")) {
        refs.push_back({fname, entry.path().string(), true});
      } else if (entry.is_regular_file() && fname.size() > sizeof(kTrainSuffix) - 1 &&
                 fname.ends_with(kTrainSuffix)) {
        std::string stem = fname.substr(0, fname.size() - (sizeof(kTrainSuffix) - 1));
        add_prefix((fs::path(data_path) / stem).string());
      }
    }
    std::sort(refs.begin(), refs.end(),
              [](const DataRef& a, const DataRef& b) { return a.name < b.name; });
  }
  if (refs.empty()) {
    tict::fail(tict::ErrCode::kIo,
               "no datasets at '" + data_path + "' (expected <path>" + kTrainSuffix +
                   ", a generated task directory, or a directory of either)");
  }
  return refs;
}

tict::UcrDataset load_ref(const DataRef& ref) {
  if (ref.is_task_dir) return tict::task_as_benchmark(tict::read_task_dir(ref.path));
  return tict::load_ucr_tsv(ref.path);
}

}  // namespace

// ---------------------------------------------------------------------------
// Public surface
// ---------------------------------------------------------------------------

extern "C" {

const char* tict_version(void) { return tict::kVersion; }

const char* tict_last_error(void) { return g_error.c_str(); }

tict_status tict_options_create(tict_options** out) {
  return guarded([&] {
    need(out, "out");
    *out = new tict_options();
  });
}

void tict_options_destroy(tict_options* opts) { delete opts; }

tict_status tict_options_set(tict_options* opts, const char* key, const char* value) {
  return guarded([&] {
    need(opts, "opts");
    need(key, "key");
    need(value, "value");
    if (*key == '\0') tict::fail(tict::ErrCode::kInput, "option key must not be empty");
    opts->kv[key] = value;
  });
}

tict_status tict_options_get(const tict_options* opts, const char* key, char* buf,
                             size_t buf_len) {
  return guarded([&] {
    need(opts, "opts");
    need(key, "key");
    need(buf, "buf");
    auto it = opts->kv.find(key);
    if (it == opts->kv.end()) {
      tict::fail(tict::ErrCode::kIndex, std::string("option '") + key + "' is not set");
    }
    if (it->second.size() + 1 > buf_len) {
      tict::fail(tict::ErrCode::kInput,
                 std::string("buffer too small for option '") + key + "' (need " +
                     std::to_string(it->second.size() + 1) + " bytes)");
    }
    std::memcpy(buf, it->second.c_str(), it->second.size() + 1);
  });
}

tict_status tict_options_load_file(tict_options* opts, const char* path) {
  return guarded([&] {
    need(opts, "opts");
    need(path, "path");
    std::ifstream in(path);
    if (!in) tict::fail(tict::ErrCode::kIo, std::string("cannot open ") + path);
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string text = trim(line);
      if (text.empty() || text[0] == '#') continue;
      size_t eq = text.find('=');
      if (eq == std::string::npos || eq == 0) {
        tict::fail(tict::ErrCode::kParse, std::string(path) + " line " +
                                              std::to_string(line_no) +
                                              ": expected key=value");
      }
      opts->kv[trim(text.substr(0, eq))] = trim(text.substr(eq + 1));
    }
  });
}

tict_status tict_options_resolve(tict_options* opts) {
  return guarded([&] {
    need(opts, "opts");
    parse_options(opts);  // reject unknown keys and malformed values first
    // One entry per documented key, mirroring the library defaults.
    static constexpr std::pair<const char*, const char*> kDefaults[] = {
        {"seed", "0"},
        {"threads", "0"},
        {"n_bit", "6"},
        {"gen.count", "8"},
        {"gen.n", "128"},
        {"gen.length", "512"},
        {"gen.n_max", "9"},
        {"gen.mixup", "1"},
        {"gen.augmentation", "1"},
        {"gen.imbalance", "1"},
        {"gen.multiclass_templates", "0"},
        {"enc.variant", "resnet"},
        {"enc.d", "128"},
        {"enc.L", "512"},
        {"enc.filters", "64,128,128"},
        {"enc.kernels", "8,5,3"},
        {"enc.patch_len", "16"},
        {"enc.tf_layers", "2"},
        {"enc.tf_heads", "4"},
        {"enc.ffn_mult", "4"},
        {"enc_layers", "4"},
        {"dec_layers", "2"},
        {"heads", "4"},
        {"ffn_mult", "4"},
        {"second_softmax", "0"},
        {"epochs", "50"},
        {"tasks_per_epoch", "1024"},
        {"batch_size", "16"},
        {"lr", "0.0001"},
        {"beta1", "0.9"},
        {"beta2", "0.999"},
        {"eps", "1e-08"},
        {"clip_norm", "1"},
        {"checkpoint_every", "256"},
        {"eval.k", "64"},
        {"study.repr", "bit"},
        {"study.n_bit", "8"},
        {"study.n_ctx", "15"},
        {"study.d", "64"},
        {"study.layers", "4"},
        {"study.heads", "2"},
        {"study.ffn_mult", "4"},
        {"study.epochs", "60"},
        {"study.tasks_per_epoch", "1024"},
        {"study.batch_size", "32"},
        {"study.test_tasks", "512"},
        {"study.lr", "0.001"},
    };
    for (const auto& [key, value] : kDefaults) {
      opts->kv.emplace(key, value);  // no-op when the key is already set
    }
  });
}

tict_status tict_options_each(const tict_options* opts, tict_kv_fn fn, void* user) {
  return guarded([&] {
    need(opts, "opts");
    need(reinterpret_cast<const void*>(fn), "fn");
    for (const auto& [key, value] : opts->kv) fn(key.c_str(), value.c_str(), user);
  });
}

tict_status tict_generate_tasks(const tict_options* opts, const char* out_dir) {
  return guarded([&] {
    need(out_dir, "out_dir");
    OptionBundle b = parse_options(opts);
    b.train.gen.seed = b.seed;
    b.train.gen.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
      tict::fail(tict::ErrCode::kIo,
                 std::string("cannot create ") + out_dir + ": " + ec.message());
    }
    // Task i is a pure function of (seed, i): reruns and any worker count
    // produce identical bytes.
    parallel_for(b.gen_count, b.threads, [&](int64_t i) {
      tict::GenConfig g = b.train.gen;
      g.seed = tict::mix_seed(b.seed, static_cast<uint64_t>(i));
      char name[16];
      std::snprintf(name, sizeof name, "task%04lld", static_cast<long long>(i));
      tict::write_task_dir(tict::generate_dataset(g), std::string(out_dir) + "/" + name);
    });
  });
}

tict_status tict_pretrain(const tict_options* opts, const char* out_dir,
                          const char* resume_checkpoint, int64_t* steps_out,
                          double* final_loss_out) {
  return guarded([&] {
    need(out_dir, "out_dir");
    OptionBundle b = parse_options(opts);
    auto result = tict::run_pretraining(b.train, out_dir,
                                        resume_checkpoint ? resume_checkpoint : "");
    if (steps_out) *steps_out = result.steps;
    if (final_loss_out) *final_loss_out = result.final_loss;
  });
}

tict_status tict_model_load(const char* checkpoint_path, tict_model** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint_path");
    need(out, "out");
    auto state = tict::load_checkpoint(checkpoint_path);
    *out = new tict_model{std::move(state)};
  });
}

void tict_model_destroy(tict_model* model) { delete model; }

tict_status tict_model_describe(const tict_model* model, tict_model_info* info) {
  return guarded([&] {
    need(model, "model");
    need(info, "info");
    const auto& cfg = model->state.model.cfg;
    info->n_bit = cfg.n_bit;
    info->max_classes = cfg.capacity();
    info->embed_dim = cfg.enc.d;
    info->series_length = cfg.enc.L;
    int64_t total = 0;
    for (const auto& [name, tensor] :
         tict::collect_params(const_cast<tict_model*>(model)->state.model)) {
      total += tensor->size();
    }
    info->parameters = total;
    info->trained_steps = model->state.step;
  });
}

tict_status tict_predict(const tict_model* model, const double* const* context,
                         const int64_t* context_lengths, const int32_t* context_labels,
                         int64_t context_count, int32_t num_classes, const double* query,
                         int64_t query_length, double* probs_out) {
  return guarded([&] {
    need(model, "model");
    need(context, "context");
    need(context_lengths, "context_lengths");
    need(context_labels, "context_labels");
    need(query, "query");
    need(probs_out, "probs_out");
    if (context_count < 1) {
      tict::fail(tict::ErrCode::kInput, "context_count must be >= 1");
    }
    if (num_classes < 2) tict::fail(tict::ErrCode::kInput, "num_classes must be >= 2");
    std::vector<std::vector<double>> ctx(static_cast<size_t>(context_count));
    std::vector<int> labels(static_cast<size_t>(context_count));
    for (int64_t i = 0; i < context_count; ++i) {
      const double* row = context[i];
      need(row, "context series");
      if (context_lengths[i] < 2) {
        tict::fail(tict::ErrCode::kInput,
                   "context series " + std::to_string(i) + " needs >= 2 values");
      }
      ctx[static_cast<size_t>(i)].assign(row, row + context_lengths[i]);
      int32_t label = context_labels[i];
      if (label < 0 || label >= num_classes) {
        tict::fail(tict::ErrCode::kInput,
                   "context label " + std::to_string(label) + " outside [0, " +
                       std::to_string(num_classes) + ")");
      }
      labels[static_cast<size_t>(i)] = label;
    }
    if (query_length < 2) tict::fail(tict::ErrCode::kInput, "query needs >= 2 values");
    std::vector<double> q(query, query + query_length);
    auto probs = model->state.model.predict(ctx, labels, q, num_classes);
    std::copy(probs.begin(), probs.end(), probs_out);
  });
}

tict_status tict_evaluate(tict_model* model, const tict_options* opts,
                          const char* data_path, const char* report_path,
                          int with_baseline, tict_eval_summary* summary) {
  return guarded([&] {
    need(model, "model");
    need(data_path, "data_path");
    OptionBundle b = parse_options(opts);
    auto refs = discover_datasets(data_path);
    const size_t n = refs.size();

    std::vector<std::vector<double>> accuracy(n);
    std::vector<std::string> names(n);
    std::vector<int64_t> samples(n, 0);
    parallel_for(static_cast<int64_t>(n), b.threads, [&](int64_t i) {
      auto ds = load_ref(refs[static_cast<size_t>(i)]);
      names[static_cast<size_t>(i)] = ds.name;
      auto res = tict::evaluate_icl(model->state.model, ds, b.eval_k);
      samples[static_cast<size_t>(i)] = static_cast<int64_t>(res.records.size());
      auto& row = accuracy[static_cast<size_t>(i)];
      row.push_back(res.accuracy);
      if (with_baseline) row.push_back(tict::evaluate_1nn(ds));
    });

    std::vector<std::string> methods{"tict"};
    if (with_baseline) methods.push_back("1nn-ed");
    auto report = tict::make_eval_report(names, methods, accuracy);
    if (report_path) tict::write_eval_report(report, report_path);

    if (summary) {
      summary->datasets = static_cast<int64_t>(n);
      summary->samples = 0;
      for (int64_t s : samples) summary->samples += s;
      double icl = 0, base = 0;
      for (const auto& row : accuracy) {
        icl += row[0];
        if (with_baseline) base += row[1];
      }
      summary->mean_accuracy = icl / static_cast<double>(n);
      summary->baseline_accuracy = with_baseline ? base / static_cast<double>(n) : -1.0;
    }
  });
}

tict_status tict_label_study(const tict_options* opts, const char* representation,
                             const char* curve_path, double* final_accuracy_out) {
  return guarded([&] {
    OptionBundle b = parse_options(opts);
    if (representation) b.study.repr = to_repr("representation", representation);
    auto curve = tict::label_study_run(b.study, curve_path ? curve_path : "");
    if (final_accuracy_out) *final_accuracy_out = curve.back().accuracy;
  });
}

}  // extern "C"
