// tict — command-line front end for the tict shared library.
//
// Subcommands: gen-data, pretrain, eval, label-study. Every run writes a
// manifest that records the fully resolved configuration plus the paths of
// all files the run produces; the manifest doubles as a config file, so
// feeding it back through --config reproduces the run bit-for-bit.
//
// Exit codes: 0 success, 1 usage error, 2 data/config/IO error,
// 3 numerical abort.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "tict/tict.h"

namespace fs = std::filesystem;

namespace {

struct Options {
  tict_options* ptr = nullptr;
  Options() {
    if (tict_options_create(&ptr) != TICT_OK)
      throw std::runtime_error("cannot allocate options");
  }
  ~Options() { tict_options_destroy(ptr); }
  Options(const Options&) = delete;
  Options& operator=(const Options&) = delete;
};

struct Model {
  tict_model* ptr = nullptr;
  Model() = default;
  ~Model() { tict_model_destroy(ptr); }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
};

int code_of(tict_status st) { return st == TICT_E_NUMERIC ? 3 : 2; }

// Prints the library's explanation of a failed call and maps the status to
// the process exit code.
int fail(tict_status st, const char* subcommand) {
  std::cerr << "tict: " << subcommand << ": " << tict_last_error() << "\n";
  return code_of(st);
}

tict_status set_kv(tict_options* opts, const char* key,
                   const std::string& value) {
  return tict_options_set(opts, key, value.c_str());
}

bool has_key(const tict_options* opts, const char* key) {
  char buf[256];
  return tict_options_get(opts, key, buf, sizeof buf) == TICT_OK;
}

std::string get_key(const tict_options* opts, const char* key) {
  char buf[256];
  if (tict_options_get(opts, key, buf, sizeof buf) != TICT_OK) return "";
  return buf;
}

// Seed precedence: --seed flag > config file > TICT_SEED environment
// variable > built-in default. The first two land in the option set before
// this runs, so it only fills a still-missing seed from the environment.
void seed_from_env(tict_options* opts) {
  if (has_key(opts, "seed")) return;
  if (const char* env = std::getenv("TICT_SEED")) set_kv(opts, "seed", env);
}

std::string iso_utc_now() {
  std::time_t now = std::time(nullptr);
  std::tm tm {};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// A manifest is itself a loadable config file: '#' lines carry the run
// record, the plain lines are the resolved key=value snapshot.
bool write_manifest(const std::string& path, const char* subcommand,
                    const tict_options* opts,
                    const std::vector<std::string>& artifacts,
                    const std::string& started, const std::string& finished) {
  std::error_code ec;
  fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent, ec);
  std::ofstream out(path, std::ios::trunc);
  if (!out) return false;
  out << "# tict run manifest\n";
  out << "# subcommand: " << subcommand << "\n";
  out << "# version: " << tict_version() << "\n";
  out << "# started: " << started << "\n";
  out << "# finished: " << finished << "\n";
  out << "# manifest: " << path << "\n";
  for (const std::string& a : artifacts) out << "# artifact: " << a << "\n";
  tict_options_each(
      opts,
      [](const char* key, const char* value, void* user) {
        *static_cast<std::ofstream*>(user) << key << "=" << value << "\n";
      },
      &out);
  out.flush();
  return static_cast<bool>(out);
}

int manifest_failed(const std::string& path) {
  std::cerr << "tict: cannot write manifest: " << path << "\n";
  return 2;
}

// One staged option: set `key` to `value` iff the flag was passed.
struct Staged {
  const CLI::Option* flag;
  const char* key;
  std::string value;
};

// Applies config file then explicit flags, in that order, so flags win.
int consume_inputs(tict_options* opts, const char* subcommand,
                   const std::string& config_path,
                   const std::vector<Staged>& staged) {
  if (!config_path.empty()) {
    tict_status st = tict_options_load_file(opts, config_path.c_str());
    if (st != TICT_OK) return fail(st, subcommand);
  }
  for (const Staged& s : staged) {
    if (s.flag == nullptr || s.flag->count() == 0) continue;
    tict_status st = set_kv(opts, s.key, s.value);
    if (st != TICT_OK) return fail(st, subcommand);
  }
  return 0;
}

/* ------------------------------------------------------------------------ */
/* gen-data                                                                  */
/* ------------------------------------------------------------------------ */

struct GenArgs {
  std::string out, config, manifest;
  std::uint64_t seed = 0;
  std::int64_t count = 0, n = 0, n_bit = 0, n_max = 0, length = 0,
               multiclass = 0;
  int threads = 0;
  CLI::Option *o_seed = nullptr, *o_count = nullptr, *o_n = nullptr,
              *o_n_bit = nullptr, *o_n_max = nullptr, *o_length = nullptr,
              *o_multiclass = nullptr, *o_threads = nullptr,
              *o_no_mixup = nullptr, *o_no_augmentation = nullptr,
              *o_no_imbalance = nullptr;
};

int run_gen_data(const GenArgs& a) {
  Options opts;
  tict_options* o = opts.ptr;
  int rc = consume_inputs(
      o, "gen-data", a.config,
      {{a.o_count, "gen.count", std::to_string(a.count)},
       {a.o_n, "gen.n", std::to_string(a.n)},
       {a.o_n_bit, "n_bit", std::to_string(a.n_bit)},
       {a.o_n_max, "gen.n_max", std::to_string(a.n_max)},
       {a.o_length, "gen.length", std::to_string(a.length)},
       {a.o_seed, "seed", std::to_string(a.seed)},
       {a.o_threads, "threads", std::to_string(a.threads)},
       {a.o_multiclass, "gen.multiclass_templates",
        std::to_string(a.multiclass)},
       {a.o_no_mixup, "gen.mixup", "0"},
       {a.o_no_augmentation, "gen.augmentation", "0"},
       {a.o_no_imbalance, "gen.imbalance", "0"}});
  if (rc != 0) return rc;
  seed_from_env(o);
  tict_status st = tict_options_resolve(o);
  if (st != TICT_OK) return fail(st, "gen-data");

  long long count = std::atoll(get_key(o, "gen.count").c_str());
  std::vector<std::string> artifacts;
  for (long long i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "task%04lld", i);
    fs::path task = fs::path(a.out) / name;
    artifacts.push_back((task / "metadata.txt").string());
    artifacts.push_back((task / "samples.tsv").string());
    artifacts.push_back((task / "bitlabels.tsv").string());
  }
  std::string manifest = a.manifest.empty()
                             ? (fs::path(a.out) / "manifest.txt").string()
                             : a.manifest;
  std::string started = iso_utc_now();
  if (!write_manifest(manifest, "gen-data", o, artifacts, started, "pending"))
    return manifest_failed(manifest);
  st = tict_generate_tasks(o, a.out.c_str());
  if (st != TICT_OK) return fail(st, "gen-data");
  if (!write_manifest(manifest, "gen-data", o, artifacts, started,
                      iso_utc_now()))
    return manifest_failed(manifest);
  std::printf("generated %lld tasks under %s\n", count, a.out.c_str());
  std::printf("manifest: %s\n", manifest.c_str());
  return 0;
}

/* ------------------------------------------------------------------------ */
/* pretrain                                                                  */
/* ------------------------------------------------------------------------ */

struct PretrainArgs {
  std::string config, out, resume, manifest;
};

int run_pretrain(const PretrainArgs& a) {
  Options opts;
  tict_options* o = opts.ptr;
  int rc = consume_inputs(o, "pretrain", a.config, {});
  if (rc != 0) return rc;
  seed_from_env(o);
  tict_status st = tict_options_resolve(o);
  if (st != TICT_OK) return fail(st, "pretrain");

  fs::path ckpt(a.out);
  fs::path out_dir = ckpt.parent_path();
  if (out_dir.empty()) out_dir = ".";
  std::string train_log = (out_dir / "train_log.tsv").string();
  std::string manifest = a.manifest.empty()
                             ? (out_dir / "manifest.txt").string()
                             : a.manifest;
  std::string started = iso_utc_now();
  if (!write_manifest(manifest, "pretrain", o, {a.out, train_log}, started,
                      "pending"))
    return manifest_failed(manifest);

  std::int64_t steps = 0;
  double final_loss = 0.0;
  st = tict_pretrain(o, out_dir.string().c_str(),
                     a.resume.empty() ? nullptr : a.resume.c_str(), &steps,
                     &final_loss);
  if (st != TICT_OK) return fail(st, "pretrain");
  fs::path written = out_dir / "checkpoint.bin";
  if (written != ckpt) {
    std::error_code ec;
    fs::rename(written, ckpt, ec);
    if (ec) {
      std::cerr << "tict: pretrain: cannot move checkpoint to "
                << ckpt.string() << ": " << ec.message() << "\n";
      return 2;
    }
  }
  if (!write_manifest(manifest, "pretrain", o, {a.out, train_log}, started,
                      iso_utc_now()))
    return manifest_failed(manifest);
  std::printf("trained %" PRId64 " steps, final loss %.9g\n", steps,
              final_loss);
  std::printf("checkpoint: %s\n", a.out.c_str());
  std::printf("train log: %s\n", train_log.c_str());
  std::printf("manifest: %s\n", manifest.c_str());
  return 0;
}

/* ------------------------------------------------------------------------ */
/* eval                                                                      */
/* ------------------------------------------------------------------------ */

struct EvalArgs {
  std::string ckpt, data, report, baseline, config, manifest;
  std::int64_t k = 0;
  int threads = 0;
  CLI::Option *o_k = nullptr, *o_threads = nullptr;
};

int run_eval(const EvalArgs& a) {
  Options opts;
  tict_options* o = opts.ptr;
  int rc = consume_inputs(o, "eval", a.config,
                          {{a.o_k, "eval.k", std::to_string(a.k)},
                           {a.o_threads, "threads", std::to_string(a.threads)}});
  if (rc != 0) return rc;
  tict_status st = tict_options_resolve(o);
  if (st != TICT_OK) return fail(st, "eval");

  Model model;
  st = tict_model_load(a.ckpt.c_str(), &model.ptr);
  if (st != TICT_OK) return fail(st, "eval");

  std::string manifest = !a.manifest.empty() ? a.manifest
                         : !a.report.empty() ? a.report + ".manifest.txt"
                                             : "eval-manifest.txt";
  std::vector<std::string> artifacts;
  if (!a.report.empty()) artifacts.push_back(a.report);
  std::string started = iso_utc_now();
  if (!write_manifest(manifest, "eval", o, artifacts, started, "pending"))
    return manifest_failed(manifest);

  tict_eval_summary summary {};
  st = tict_evaluate(model.ptr, o, a.data.c_str(),
                     a.report.empty() ? nullptr : a.report.c_str(),
                     a.baseline.empty() ? 0 : 1, &summary);
  if (st != TICT_OK) return fail(st, "eval");
  if (!write_manifest(manifest, "eval", o, artifacts, started, iso_utc_now()))
    return manifest_failed(manifest);
  std::printf("datasets: %" PRId64 "\n", summary.datasets);
  std::printf("samples: %" PRId64 "\n", summary.samples);
  std::printf("accuracy: %.4f\n", summary.mean_accuracy);
  if (!a.baseline.empty())
    std::printf("baseline (%s): %.4f\n", a.baseline.c_str(),
                summary.baseline_accuracy);
  if (!a.report.empty()) std::printf("report: %s\n", a.report.c_str());
  std::printf("manifest: %s\n", manifest.c_str());
  return 0;
}

/* ------------------------------------------------------------------------ */
/* label-study                                                               */
/* ------------------------------------------------------------------------ */

struct StudyArgs {
  std::string representation, out, config, manifest;
  std::uint64_t seed = 0;
  CLI::Option *o_repr = nullptr, *o_seed = nullptr;
};

int run_label_study(const StudyArgs& a) {
  Options opts;
  tict_options* o = opts.ptr;
  int rc = consume_inputs(o, "label-study", a.config,
                          {{a.o_repr, "study.repr", a.representation},
                           {a.o_seed, "seed", std::to_string(a.seed)}});
  if (rc != 0) return rc;
  seed_from_env(o);
  tict_status st = tict_options_resolve(o);
  if (st != TICT_OK) return fail(st, "label-study");

  std::string manifest =
      a.manifest.empty() ? a.out + ".manifest.txt" : a.manifest;
  std::string started = iso_utc_now();
  if (!write_manifest(manifest, "label-study", o, {a.out}, started, "pending"))
    return manifest_failed(manifest);

  double final_accuracy = 0.0;
  st = tict_label_study(o, nullptr, a.out.c_str(), &final_accuracy);
  if (st != TICT_OK) return fail(st, "label-study");
  if (!write_manifest(manifest, "label-study", o, {a.out}, started,
                      iso_utc_now()))
    return manifest_failed(manifest);
  std::printf("representation: %s\n", get_key(o, "study.repr").c_str());
  std::printf("final accuracy: %.4f\n", final_accuracy);
  std::printf("curve: %s\n", a.out.c_str());
  std::printf("manifest: %s\n", manifest.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tict — in-context time-series classification toolkit"};
  app.set_version_flag("--version", tict_version());
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* gen_cmd = app.add_subcommand(
      "gen-data", "Generate synthetic classification tasks");
  gen_cmd->add_option("--out", gen.out, "Directory for task0000/, task0001/, ...")
      ->required();
  gen.o_count = gen_cmd->add_option("--count", gen.count,
                                    "Number of tasks (default 8)");
  gen.o_n = gen_cmd->add_option("--n", gen.n, "Series per task (default 128)");
  gen.o_n_bit =
      gen_cmd->add_option("--n-bit", gen.n_bit, "Bit-label width (default 6)");
  gen.o_n_max = gen_cmd->add_option("--n-max", gen.n_max,
                                    "Max augmentations per task (default 9)");
  gen.o_length = gen_cmd->add_option("--length", gen.length,
                                     "Series length (default 512)");
  gen.o_seed = gen_cmd->add_option("--seed", gen.seed, "Generation seed");
  gen.o_no_mixup =
      gen_cmd->add_flag("--no-mixup", "Disable mixup class combination");
  gen.o_no_augmentation =
      gen_cmd->add_flag("--no-augmentation", "Disable augmentations");
  gen.o_no_imbalance =
      gen_cmd->add_flag("--no-imbalance", "Disable imbalance rejection");
  gen.o_multiclass = gen_cmd->add_option(
      "--multiclass", gen.multiclass,
      "Class count for no-mixup tasks (one template per class)");
  gen.o_threads =
      gen_cmd->add_option("--threads", gen.threads,
                          "Worker threads (default: one per core)");
  gen_cmd->add_option("--config", gen.config, "key=value config file");
  gen_cmd->add_option("--manifest", gen.manifest,
                      "Manifest path (default OUT/manifest.txt)");

  PretrainArgs pre;
  CLI::App* pre_cmd =
      app.add_subcommand("pretrain", "Pre-train a model on synthetic tasks");
  pre_cmd->add_option("--config", pre.config, "key=value config file")
      ->required();
  pre_cmd->add_option("--out", pre.out, "Checkpoint file to write")->required();
  pre_cmd->add_option("--resume", pre.resume,
                      "Continue from an existing checkpoint");
  pre_cmd->add_option("--manifest", pre.manifest,
                      "Manifest path (default alongside checkpoint)");

  EvalArgs ev;
  CLI::App* ev_cmd =
      app.add_subcommand("eval", "Evaluate a checkpoint on datasets");
  ev_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  ev_cmd->add_option("--data", ev.data,
                     "Split prefix, task directory, or directory of datasets")
      ->required();
  ev.o_k = ev_cmd->add_option("--k", ev.k, "Context size (default 64)");
  ev_cmd->add_option("--report", ev.report, "Write the accuracy table here");
  ev_cmd->add_option("--baseline", ev.baseline,
                     "Also score this baseline (choices: 1nn-ed)")
      ->check(CLI::IsMember({"1nn-ed"}));
  ev.o_threads = ev_cmd->add_option(
      "--threads", ev.threads, "Worker threads (default: one per core)");
  ev_cmd->add_option("--config", ev.config, "key=value config file");
  ev_cmd->add_option("--manifest", ev.manifest,
                     "Manifest path (default REPORT.manifest.txt)");

  StudyArgs study;
  CLI::App* study_cmd = app.add_subcommand(
      "label-study", "Compare label representations on the matching task");
  study.o_repr =
      study_cmd
          ->add_option("--representation", study.representation,
                       "Label representation")
          ->check(CLI::IsMember({"numerical", "one-hot", "bit"}));
  study_cmd->add_option("--out", study.out, "Accuracy-curve TSV to write")
      ->required();
  study.o_seed = study_cmd->add_option("--seed", study.seed, "Study seed");
  study_cmd->add_option("--config", study.config, "key=value config file");
  study_cmd->add_option("--manifest", study.manifest,
                        "Manifest path (default OUT.manifest.txt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help / --version
  } catch (const CLI::ParseError& e) {
    std::cerr << "tict: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*pre_cmd) return run_pretrain(pre);
    if (*ev_cmd) return run_eval(ev);
    return run_label_study(study);
  } catch (const std::exception& e) {
    std::cerr << "tict: " << e.what() << "\n";
    return 2;
  }
}
