#ifndef TICT_TICT_H
#define TICT_TICT_H

/*
 * C interface to the tict library: synthetic task generation, model
 * pre-training, checkpoint loading, in-context prediction, benchmark
 * evaluation, and the label-representation study.
 *
 * Conventions
 *   - Every fallible call returns a tict_status; TICT_OK is 0.
 *   - On failure, tict_last_error() returns a human-readable message for the
 *     most recent failing call on the same thread.
 *   - Objects created by *_create / *_load are released with the matching
 *     *_destroy. Destroy functions accept NULL.
 *   - All strings are NUL-terminated UTF-8 paths or values.
 *
 * Options
 *   Configuration travels as an opaque key=value set (tict_options). The same
 *   keys appear in config files (one `key=value` per line, `#` comments).
 *   Unknown keys are rejected when the options are consumed, naming the key.
 *   Booleans accept 0/1/true/false/on/off. Defaults in parentheses.
 *
 *     seed                     uint64  master seed (0)
 *     threads                  int     worker threads for generation and
 *                                      per-dataset evaluation; 0 = one per
 *                                      available core (0)
 *     n_bit                    int     bit-label width shared by the task
 *                                      generator and the model (6)
 *     gen.count                int     tasks written by tict_generate_tasks (8)
 *     gen.n                    int     samples per task (128)
 *     gen.length               int     generated series length (512)
 *     gen.n_max                int     max augmentations per task (9)
 *     gen.mixup                bool    template mixing on/off (1)
 *     gen.augmentation         bool    augmentation pipeline on/off (1)
 *     gen.imbalance            bool    random class-imbalance threshold (1)
 *     gen.multiclass_templates int     class count when gen.mixup=0 (0)
 *     enc.variant              string  resnet | transformer (resnet)
 *     enc.d                    int     embedding width (128)
 *     enc.L                    int     model input length; series are
 *                                      resampled to this (512)
 *     enc.filters              i,i,i   resnet filter counts (64,128,128)
 *     enc.kernels              i,i,i   resnet kernel sizes (8,5,3)
 *     enc.patch_len            int     transformer patch length (16)
 *     enc.tf_layers            int     transformer encoder depth (2)
 *     enc.tf_heads             int     transformer encoder heads (4)
 *     enc.ffn_mult             int     encoder feed-forward multiplier (4)
 *     enc_layers               int     context-transformer depth (4)
 *     dec_layers               int     decoder depth (2)
 *     heads                    int     attention heads (4)
 *     ffn_mult                 int     feed-forward multiplier (4)
 *     second_softmax           bool    renormalize output attention in the
 *                                      training loss (0)
 *     epochs                   int     training epochs (50)
 *     tasks_per_epoch          int     tasks per epoch (1024)
 *     batch_size               int     tasks per optimizer step (16)
 *     lr                       double  Adam learning rate (1e-4)
 *     beta1, beta2, eps        double  Adam moments and epsilon
 *     clip_norm                double  global gradient-norm clip (1.0)
 *     checkpoint_every         int     steps between saves, 0 = final only (256)
 *     eval.k                   int     retrieved context size (64)
 *     study.repr               string  numerical | one-hot | bit (bit)
 *     study.n_bit              int     study label width (8)
 *     study.n_ctx              int     context labels per instance (15)
 *     study.d                  int     study embedding width (64)
 *     study.layers             int     study transformer depth (4)
 *     study.heads              int     study attention heads (2)
 *     study.ffn_mult           int     study feed-forward multiplier (4)
 *     study.epochs             int     study epochs (60)
 *     study.tasks_per_epoch    int     study instances per epoch (1024)
 *     study.batch_size         int     study batch size (32)
 *     study.test_tasks         int     held-out study instances (512)
 *     study.lr                 double  study learning rate (1e-3)
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TICT_API __declspec(dllexport)
#else
#define TICT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tict_status {
  TICT_OK = 0,
  TICT_E_DIMENSION = 1, /* tensor shape or rank mismatch */
  TICT_E_INPUT = 2,     /* malformed or out-of-domain caller data */
  TICT_E_CONFIG = 3,    /* invalid configuration combination */
  TICT_E_CAPACITY = 4,  /* class count exceeds 2^n_bit */
  TICT_E_CONTRACT = 5,  /* operation precondition violated */
  TICT_E_INDEX = 6,     /* out-of-range index */
  TICT_E_PARSE = 7,     /* malformed file content */
  TICT_E_IO = 8,        /* filesystem failure */
  TICT_E_NUMERIC = 9,   /* non-finite value where finite required */
  TICT_E_UNKNOWN = 10   /* unexpected internal failure */
} tict_status;

typedef struct tict_options tict_options;
typedef struct tict_model tict_model;

/* Library version, e.g. "0.1.0". Never NULL. */
TICT_API const char* tict_version(void);

/* Message of this thread's most recent failing call ("" if none). The pointer
 * stays valid until the next failing call on the same thread. */
TICT_API const char* tict_last_error(void);

/* ------------------------------------------------------------------------ */
/* Options                                                                   */
/* ------------------------------------------------------------------------ */

TICT_API tict_status tict_options_create(tict_options** out);
TICT_API void tict_options_destroy(tict_options* opts);

/* Sets one key; overwrites any previous value. Key validity is checked when
 * the options are consumed, not here. */
TICT_API tict_status tict_options_set(tict_options* opts, const char* key,
                                      const char* value);

/* Copies the stored value for `key` into buf (NUL-terminated). Fails with
 * TICT_E_INDEX when the key was never set, TICT_E_INPUT when buf_len is too
 * small for the value. */
TICT_API tict_status tict_options_get(const tict_options* opts, const char* key,
                                      char* buf, size_t buf_len);

/* Merges `key=value` lines from a file into opts (later sources win). Blank
 * lines and lines starting with `#` are skipped. */
TICT_API tict_status tict_options_load_file(tict_options* opts, const char* path);

/* Makes every default explicit: validates the stored entries, then fills in
 * each documented key that is absent with its built-in default. Stored values
 * are never rewritten, so a resolved set consumes identically to the
 * original. */
TICT_API tict_status tict_options_resolve(tict_options* opts);

/* Calls fn(key, value, user) for every stored entry in sorted key order. */
typedef void (*tict_kv_fn)(const char* key, const char* value, void* user);
TICT_API tict_status tict_options_each(const tict_options* opts, tict_kv_fn fn,
                                       void* user);

/* ------------------------------------------------------------------------ */
/* Synthetic task generation                                                 */
/* ------------------------------------------------------------------------ */

/* Writes gen.count tasks under out_dir as task0000/, task0001/, ... Each task
 * directory holds metadata.txt, samples.tsv, and bitlabels.tsv. Task i is a
 * pure function of (seed, i), so reruns are byte-identical and thread count
 * does not affect output. NULL opts means all defaults. */
TICT_API tict_status tict_generate_tasks(const tict_options* opts,
                                         const char* out_dir);

/* ------------------------------------------------------------------------ */
/* Pre-training                                                              */
/* ------------------------------------------------------------------------ */

/* Runs the pre-training loop, appending per-step rows to
 * <out_dir>/train_log.tsv and saving <out_dir>/checkpoint.bin. A non-NULL
 * resume_checkpoint continues from that file's exact optimizer/RNG state.
 * steps_out and final_loss_out may be NULL. */
TICT_API tict_status tict_pretrain(const tict_options* opts, const char* out_dir,
                                   const char* resume_checkpoint,
                                   int64_t* steps_out, double* final_loss_out);

/* ------------------------------------------------------------------------ */
/* Models                                                                    */
/* ------------------------------------------------------------------------ */

TICT_API tict_status tict_model_load(const char* checkpoint_path,
                                     tict_model** out);
TICT_API void tict_model_destroy(tict_model* model);

typedef struct tict_model_info {
  int32_t n_bit;         /* bit-label width */
  int32_t max_classes;   /* 2^n_bit */
  int32_t embed_dim;     /* encoder output width */
  int32_t series_length; /* model input length (resample target) */
  int64_t parameters;    /* total learned scalars */
  int64_t trained_steps; /* optimizer steps recorded in the checkpoint */
} tict_model_info;

TICT_API tict_status tict_model_describe(const tict_model* model,
                                         tict_model_info* info);

/* In-context prediction for one query. context is an array of context_count
 * series (each context_lengths[i] >= 2 values); context_labels are class ids
 * in [0, num_classes); probs_out receives num_classes probabilities summing
 * to 1. Series of any length are accepted (the model resamples internally).
 */
TICT_API tict_status tict_predict(const tict_model* model,
                                  const double* const* context,
                                  const int64_t* context_lengths,
                                  const int32_t* context_labels,
                                  int64_t context_count, int32_t num_classes,
                                  const double* query, int64_t query_length,
                                  double* probs_out);

/* ------------------------------------------------------------------------ */
/* Evaluation                                                                */
/* ------------------------------------------------------------------------ */

typedef struct tict_eval_summary {
  int64_t datasets;         /* datasets evaluated */
  int64_t samples;          /* total test samples */
  double mean_accuracy;     /* model accuracy, averaged over datasets */
  double baseline_accuracy; /* 1NN-ED mean accuracy; -1 when not requested */
} tict_eval_summary;

/* Evaluates a model on one of:
 *   - a split prefix: <data_path>_TRAIN.tsv / <data_path>_TEST.tsv exist;
 *   - a generated task directory (contains samples.tsv): first half context,
 *     second half queries;
 *   - a directory of either of the above (scanned in name order).
 * Retrieval uses eval.k from opts. with_baseline != 0 also scores the 1NN
 * Euclidean baseline. A non-NULL report_path receives a TSV accuracy table
 * with average ranks. summary may be NULL. */
TICT_API tict_status tict_evaluate(tict_model* model, const tict_options* opts,
                                   const char* data_path,
                                   const char* report_path, int with_baseline,
                                   tict_eval_summary* summary);

/* ------------------------------------------------------------------------ */
/* Label-representation study                                                */
/* ------------------------------------------------------------------------ */

/* Trains a matching-task transformer with the given label representation
 * ("numerical", "one-hot", or "bit"; NULL defers to study.repr) and writes
 * the per-epoch test-accuracy curve to curve_path (NULL for no file).
 * final_accuracy_out may be NULL. */
TICT_API tict_status tict_label_study(const tict_options* opts,
                                      const char* representation,
                                      const char* curve_path,
                                      double* final_accuracy_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* TICT_TICT_H */
