#include "core/training.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace tict {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Tensor*>> collect_params(IclModel& model) {
  std::vector<std::pair<std::string, Tensor*>> out;
  model.visit("model", [&](const std::string& name, Tensor& t) {
    out.emplace_back(name, &t);
  });
  return out;
}

void adam_update(const std::vector<Tensor*>& params, AdamState& state,
                 const AdamConfig& opt) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<size_t>(params[i]->size()), 0.0f);
      state.v[i].assign(static_cast<size_t>(params[i]->size()), 0.0f);
    }
  }
  if (state.m.size() != params.size()) {
    fail(ErrCode::kContract, "adam_update: optimizer state holds " +
                                 std::to_string(state.m.size()) +
                                 " slots but the model has " +
                                 std::to_string(params.size()) + " parameters");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (state.m[i].size() != static_cast<size_t>(p.size())) {
      fail(ErrCode::kContract, "adam_update: moment size mismatch on parameter " +
                                   std::to_string(i));
    }
    const bool has = p.has_grad();
    const auto& g = p.grad();
    float* values = p.data();
    for (size_t e = 0; e < state.m[i].size(); ++e) {
      double ge = has ? static_cast<double>(g[e]) : 0.0;
      double me = opt.beta1 * state.m[i][e] + (1.0 - opt.beta1) * ge;
      double ve = opt.beta2 * state.v[i][e] + (1.0 - opt.beta2) * ge * ge;
      state.m[i][e] = static_cast<float>(me);
      state.v[i][e] = static_cast<float>(ve);
      double update = opt.lr * (me / bc1) / (std::sqrt(ve / bc2) + opt.eps);
      values[e] = static_cast<float>(values[e] - update);
    }
  }
}

double clip_gradients(const std::vector<Tensor*>& params, double clip_norm) {
  double total = 0.0;
  for (Tensor* p : params) {
    if (!p->has_grad()) continue;
    for (float g : p->grad()) total += static_cast<double>(g) * g;
  }
  double norm = std::sqrt(total);
  if (!std::isfinite(norm)) {
    fail(ErrCode::kNumeric, "gradient norm is not finite");
  }
  if (norm > clip_norm && norm > 0.0) {
    float factor = static_cast<float>(clip_norm / norm);
    for (Tensor* p : params) {
      if (!p->has_grad()) continue;
      for (float& g : p->grad_mutable()) g *= factor;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs <= 0 || tasks_per_epoch <= 0 || batch_size <= 0) {
    fail(ErrCode::kConfig, "epochs, tasks_per_epoch, and batch_size must be positive");
  }
  if (tasks_per_epoch % batch_size != 0) {
    fail(ErrCode::kConfig, "tasks_per_epoch (" + std::to_string(tasks_per_epoch) +
                               ") must be a multiple of batch_size (" +
                               std::to_string(batch_size) + ")");
  }
  if (adam.lr <= 0.0 || clip_norm <= 0.0) {
    fail(ErrCode::kConfig, "learning rate and clip norm must be positive");
  }
  if (checkpoint_every < 0) fail(ErrCode::kConfig, "checkpoint_every must be >= 0");
  gen.validate();
  model.validate();
  if (gen.n_bit != model.n_bit) {
    fail(ErrCode::kConfig, "generator n_bit (" + std::to_string(gen.n_bit) +
                               ") must match model n_bit (" +
                               std::to_string(model.n_bit) + ")");
  }
}

TrainState make_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState state;
  state.model.init(cfg.model, cfg.seed);
  state.data_rng = Rng(mix_seed(cfg.seed, 0xDA7A));
  return state;
}

PretrainBatch make_next_batch(TrainState& state, const TrainConfig& cfg) {
  GenConfig gen = cfg.gen;
  gen.seed = state.data_rng.next_u64();
  return make_pretrain_batch(gen, cfg.batch_size);
}

namespace {

// Mean NLL over one task's query half. Records onto the active tape if any.
Tensor task_query_loss(IclModel& model, const TaskDataset& task,
                       int context_count, bool second_softmax) {
  const int k = context_count;
  const int m = task.n() - k;
  std::vector<std::vector<double>> prepped;
  prepped.reserve(task.x.size());
  for (const auto& row : task.x) prepped.push_back(preprocess(row, model.cfg.enc.L));
  std::vector<int> y_ctx(task.y.begin(), task.y.begin() + k);
  std::vector<int> y_test(task.y.begin() + k, task.y.end());

  auto emb = model.embed_series(prepped);
  auto e_ctx = slice_axis(emb, 0, 0, k);
  auto e_test = slice_axis(emb, 0, k, m);
  auto att = model.forward_embeddings(e_ctx, y_ctx, task.num_classes, e_test,
                                      task.bit_patterns);
  return second_softmax ? cross_entropy_rows(att.logits, y_test)
                        : nll_probs(att.logits, y_test);
}

int64_t count_queries(const PretrainBatch& batch) {
  int64_t total = 0;
  for (const auto& task : batch.tasks) total += task.n() - batch.context_count;
  return total;
}

}  // namespace

double train_step(TrainState& state, const PretrainBatch& batch,
                  const TrainConfig& cfg) {
  if (batch.tasks.empty()) fail(ErrCode::kInput, "train_step: empty batch");
  auto named = collect_params(state.model);
  std::vector<Tensor*> params;
  params.reserve(named.size());
  for (auto& [name, p] : named) params.push_back(p);
  for (Tensor* p : params) p->zero_grad();

  int64_t total_queries = count_queries(batch);
  if (total_queries <= 0) fail(ErrCode::kInput, "train_step: batch has no queries");

  // One tape per task keeps peak memory at a single task's graph; gradients
  // accumulate additively across the backwards, which with the 1/total_queries
  // scaling reproduces the gradient of the batch-mean NLL exactly.
  double batch_loss = 0.0;
  for (const auto& task : batch.tasks) {
    const int m = task.n() - batch.context_count;
    Tape tape;
    Tape::Scope scope(tape);
    auto loss = task_query_loss(state.model, task, batch.context_count,
                                cfg.model.second_softmax);
    double task_loss = static_cast<double>(loss.item());
    if (!std::isfinite(task_loss)) {
      fail(ErrCode::kNumeric, "train_step: non-finite loss on task seed " +
                                  std::to_string(task.seed));
    }
    double weight = static_cast<double>(m) / static_cast<double>(total_queries);
    tape.backward(scale(loss, static_cast<float>(weight)));
    batch_loss += task_loss * weight;
  }

  if (!state.grad_coverage_checked) {
    for (auto& [name, p] : named) {
      if (!p->has_grad()) {
        fail(ErrCode::kContract,
             "parameter " + name + " received no gradient on the first step");
      }
    }
    state.grad_coverage_checked = true;
  }

  state.last_grad_norm = clip_gradients(params, cfg.clip_norm);
  adam_update(params, state.adam, cfg.adam);
  state.step += 1;
  return batch_loss;
}

double evaluate_batch_loss(IclModel& model, const PretrainBatch& batch,
                           bool second_softmax) {
  if (batch.tasks.empty()) fail(ErrCode::kInput, "evaluate_batch_loss: empty batch");
  int64_t total_queries = count_queries(batch);
  if (total_queries <= 0) {
    fail(ErrCode::kInput, "evaluate_batch_loss: batch has no queries");
  }
  double batch_loss = 0.0;
  for (const auto& task : batch.tasks) {
    const int m = task.n() - batch.context_count;
    auto loss = task_query_loss(model, task, batch.context_count, second_softmax);
    double weight = static_cast<double>(m) / static_cast<double>(total_queries);
    batch_loss += static_cast<double>(loss.item()) * weight;
  }
  return batch_loss;
}

// ---------------------------------------------------------------------------
// Checkpoints (sectioned binary, version 1)
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCkptMagic = "TICTCKPT";
constexpr int kCkptVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<uint32_t>(f)); }

void put_tag(std::string& out, const char* tag) {
  // 8-byte section tag, zero padded.
  size_t len = std::strlen(tag);
  for (size_t i = 0; i < 8; ++i) out.push_back(i < len ? tag[i] : '\0');
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t count, const char* what) const {
    if (pos + count > buf.size()) {
      fail(ErrCode::kParse, "checkpoint truncated at offset " + std::to_string(pos) +
                                " while reading " + std::string(what));
    }
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string bytes(size_t count, const char* what) {
    need(count, what);
    std::string s = buf.substr(pos, count);
    pos += count;
    return s;
  }
  void expect_tag(const char* tag) {
    size_t at = pos;
    std::string got = bytes(8, "section tag");
    std::string want(tag);
    want.resize(8, '\0');
    if (got != want) {
      fail(ErrCode::kParse, "checkpoint: expected section '" + std::string(tag) +
                                "' at offset " + std::to_string(at));
    }
  }
  std::string line(const char* what) {
    size_t nl = buf.find('\n', pos);
    if (nl == std::string::npos) {
      fail(ErrCode::kParse, "checkpoint truncated at offset " + std::to_string(pos) +
                                " while reading " + std::string(what));
    }
    std::string s = buf.substr(pos, nl - pos);
    pos = nl + 1;
    return s;
  }
};

std::string encoder_variant_name(EncoderVariant v) {
  return v == EncoderVariant::kResNet ? "resnet" : "transformer";
}

void append_config_block(std::string& out, const IclConfig& cfg) {
  std::ostringstream ss;
  const auto& e = cfg.enc;
  ss << "enc.variant=" << encoder_variant_name(e.variant) << '\n'
     << "enc.d=" << e.d << '\n'
     << "enc.L=" << e.L << '\n'
     << "enc.filters=" << e.filters[0] << ',' << e.filters[1] << ',' << e.filters[2] << '\n'
     << "enc.kernels=" << e.kernels[0] << ',' << e.kernels[1] << ',' << e.kernels[2] << '\n'
     << "enc.patch_len=" << e.patch_len << '\n'
     << "enc.tf_layers=" << e.tf_layers << '\n'
     << "enc.tf_heads=" << e.tf_heads << '\n'
     << "enc.ffn_mult=" << e.ffn_mult << '\n'
     << "n_bit=" << cfg.n_bit << '\n'
     << "enc_layers=" << cfg.enc_layers << '\n'
     << "dec_layers=" << cfg.dec_layers << '\n'
     << "heads=" << cfg.heads << '\n'
     << "ffn_mult=" << cfg.ffn_mult << '\n'
     << "second_softmax=" << (cfg.second_softmax ? 1 : 0) << '\n'
     << "---\n";
  out += ss.str();
}

int config_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) fail(ErrCode::kParse, "checkpoint: missing config key '" + key + "'");
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    fail(ErrCode::kParse, "checkpoint: malformed config value for '" + key + "'");
  }
}

void config_triplet(const std::map<std::string, std::string>& kv, const std::string& key,
                    std::array<int, 3>& out) {
  auto it = kv.find(key);
  if (it == kv.end()) fail(ErrCode::kParse, "checkpoint: missing config key '" + key + "'");
  std::istringstream ss(it->second);
  std::string part;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(ss, part, ',')) {
      fail(ErrCode::kParse, "checkpoint: malformed config value for '" + key + "'");
    }
    try {
      out[static_cast<size_t>(i)] = std::stoi(part);
    } catch (const std::exception&) {
      fail(ErrCode::kParse, "checkpoint: malformed config value for '" + key + "'");
    }
  }
}

IclConfig parse_config_block(Reader& r) {
  std::map<std::string, std::string> kv;
  for (;;) {
    std::string line = r.line("config block");
    if (line == "---") break;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrCode::kParse, "checkpoint: malformed config line '" + line + "'");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  IclConfig cfg;
  auto variant = kv.find("enc.variant");
  if (variant == kv.end()) fail(ErrCode::kParse, "checkpoint: missing config key 'enc.variant'");
  if (variant->second == "resnet") {
    cfg.enc.variant = EncoderVariant::kResNet;
  } else if (variant->second == "transformer") {
    cfg.enc.variant = EncoderVariant::kTransformer;
  } else {
    fail(ErrCode::kParse, "checkpoint: unknown encoder variant '" + variant->second + "'");
  }
  cfg.enc.d = config_int(kv, "enc.d");
  cfg.enc.L = config_int(kv, "enc.L");
  config_triplet(kv, "enc.filters", cfg.enc.filters);
  config_triplet(kv, "enc.kernels", cfg.enc.kernels);
  cfg.enc.patch_len = config_int(kv, "enc.patch_len");
  cfg.enc.tf_layers = config_int(kv, "enc.tf_layers");
  cfg.enc.tf_heads = config_int(kv, "enc.tf_heads");
  cfg.enc.ffn_mult = config_int(kv, "enc.ffn_mult");
  cfg.n_bit = config_int(kv, "n_bit");
  cfg.enc_layers = config_int(kv, "enc_layers");
  cfg.dec_layers = config_int(kv, "dec_layers");
  cfg.heads = config_int(kv, "heads");
  cfg.ffn_mult = config_int(kv, "ffn_mult");
  cfg.second_softmax = config_int(kv, "second_softmax") != 0;
  return cfg;
}

}  // namespace

void save_checkpoint(TrainState& state, const std::string& path) {
  std::string out;
  out += kCkptMagic;
  out += ' ';
  out += std::to_string(kCkptVersion);
  out += '\n';
  append_config_block(out, state.model.cfg);

  auto named = collect_params(state.model);
  put_tag(out, "PARAMS");
  put_u32(out, static_cast<uint32_t>(named.size()));
  for (auto& [name, p] : named) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(p->rank()));
    for (int d : p->shape()) put_u32(out, static_cast<uint32_t>(d));
    put_u64(out, static_cast<uint64_t>(p->size()));
    const float* values = p->data();
    for (int64_t e = 0; e < p->size(); ++e) put_f32(out, values[e]);
  }

  put_tag(out, "ADAM");
  put_u64(out, static_cast<uint64_t>(state.adam.step));
  put_u32(out, static_cast<uint32_t>(state.adam.m.size()));
  for (size_t i = 0; i < state.adam.m.size(); ++i) {
    put_u64(out, static_cast<uint64_t>(state.adam.m[i].size()));
    for (float f : state.adam.m[i]) put_f32(out, f);
    for (float f : state.adam.v[i]) put_f32(out, f);
  }

  put_tag(out, "RNG");
  std::string rng_state = state.data_rng.state_string();
  put_u32(out, static_cast<uint32_t>(rng_state.size()));
  out += rng_state;

  put_tag(out, "STEP");
  put_u64(out, static_cast<uint64_t>(state.step));
  put_u64(out, state.grad_coverage_checked ? 1 : 0);
  put_tag(out, "END");

  std::ofstream file(path, std::ios::binary);
  if (!file) fail(ErrCode::kIo, "cannot open " + path + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file.good()) fail(ErrCode::kIo, "write failed for " + path);
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) fail(ErrCode::kIo, "cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << file.rdbuf();
  std::string buf = ss.str();
  Reader r{buf};

  std::string magic_line = r.line("magic");
  std::string expect = std::string(kCkptMagic) + " ";
  if (magic_line.rfind(expect, 0) != 0) {
    fail(ErrCode::kParse, "not a checkpoint file (bad magic)");
  }
  std::string version = magic_line.substr(expect.size());
  if (version != std::to_string(kCkptVersion)) {
    fail(ErrCode::kParse, "unsupported checkpoint version " + version +
                              " (supported: " + std::to_string(kCkptVersion) + ")");
  }
  IclConfig cfg = parse_config_block(r);

  TrainState state;
  state.model.init(cfg, 0);
  auto named = collect_params(state.model);

  r.expect_tag("PARAMS");
  uint32_t count = r.u32("parameter count");
  if (count != named.size()) {
    fail(ErrCode::kParse, "checkpoint holds " + std::to_string(count) +
                              " parameters but the model has " +
                              std::to_string(named.size()));
  }
  for (auto& [name, p] : named) {
    uint32_t name_len = r.u32("parameter name length");
    std::string stored = r.bytes(name_len, "parameter name");
    if (stored != name) {
      fail(ErrCode::kParse, "checkpoint parameter '" + stored +
                                "' does not match expected '" + name + "'");
    }
    uint32_t rank = r.u32("parameter rank");
    if (rank != static_cast<uint32_t>(p->rank())) {
      fail(ErrCode::kParse, "checkpoint shape rank mismatch on " + name);
    }
    for (int d = 0; d < p->rank(); ++d) {
      uint32_t extent = r.u32("parameter extent");
      if (extent != static_cast<uint32_t>(p->dim(d))) {
        fail(ErrCode::kParse, "checkpoint shape mismatch on " + name);
      }
    }
    uint64_t numel = r.u64("parameter size");
    if (numel != static_cast<uint64_t>(p->size())) {
      fail(ErrCode::kParse, "checkpoint element count mismatch on " + name);
    }
    float* values = p->data();
    for (uint64_t e = 0; e < numel; ++e) values[e] = r.f32("parameter values");
  }

  r.expect_tag("ADAM");
  state.adam.step = static_cast<int64_t>(r.u64("optimizer step"));
  uint32_t slots = r.u32("optimizer slot count");
  if (slots != 0 && slots != named.size()) {
    fail(ErrCode::kParse, "checkpoint optimizer slots do not match parameters");
  }
  state.adam.m.resize(slots);
  state.adam.v.resize(slots);
  for (uint32_t i = 0; i < slots; ++i) {
    uint64_t numel = r.u64("optimizer moment size");
    if (numel != static_cast<uint64_t>(named[i].second->size())) {
      fail(ErrCode::kParse, "checkpoint optimizer moment size mismatch on " +
                                named[i].first);
    }
    state.adam.m[i].resize(numel);
    state.adam.v[i].resize(numel);
    for (uint64_t e = 0; e < numel; ++e) state.adam.m[i][e] = r.f32("first moment");
    for (uint64_t e = 0; e < numel; ++e) state.adam.v[i][e] = r.f32("second moment");
  }

  r.expect_tag("RNG");
  uint32_t rng_len = r.u32("rng state length");
  std::string rng_state = r.bytes(rng_len, "rng state");
  if (!state.data_rng.set_state_string(rng_state)) {
    fail(ErrCode::kParse, "checkpoint: malformed rng state");
  }

  r.expect_tag("STEP");
  state.step = static_cast<int64_t>(r.u64("step counter"));
  state.grad_coverage_checked = r.u64("coverage flag") != 0;
  r.expect_tag("END");
  return state;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

PretrainResult run_pretraining(const TrainConfig& cfg, const std::string& out_dir,
                               const std::string& resume_path,
                               const std::function<void(const TrainLogRow&)>& on_step) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrCode::kIo, "cannot create directory " + out_dir + ": " + ec.message());

  TrainState state = resume_path.empty() ? make_train_state(cfg)
                                         : load_checkpoint(resume_path);
  const int64_t steps_per_epoch = cfg.tasks_per_epoch / cfg.batch_size;
  const int64_t total_steps = static_cast<int64_t>(cfg.epochs) * steps_per_epoch;
  const std::string log_path = out_dir + "/train_log.tsv";
  const std::string ckpt_path = out_dir + "/checkpoint.bin";

  bool fresh_log = !std::filesystem::exists(log_path);
  std::ofstream log(log_path, std::ios::app);
  if (!log) fail(ErrCode::kIo, "cannot open " + log_path + " for appending");
  if (fresh_log) log << "step\tloss\tgrad_norm\twall_seconds\n";

  auto t0 = std::chrono::steady_clock::now();
  double last_loss = 0.0;
  while (state.step < total_steps) {
    auto batch = make_next_batch(state, cfg);
    last_loss = train_step(state, batch, cfg);
    double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    TrainLogRow row{state.step, last_loss, state.last_grad_norm, elapsed};
    log << row.step << '\t' << row.loss << '\t' << row.grad_norm << '\t'
        << row.wall_seconds << '\n';
    log.flush();
    if (on_step) on_step(row);
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0) {
      save_checkpoint(state, ckpt_path);
    }
  }
  save_checkpoint(state, ckpt_path);
  return PretrainResult{state.step, last_loss, ckpt_path};
}

}  // namespace tict
