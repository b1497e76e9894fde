#pragma once

// Self-supervised reordering training: batches of freshly augmented examples,
// AdamW updates, per-epoch checkpoints and a best-by-validation checkpoint.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "psrp/augment.hpp"
#include "psrp/checkpoint.hpp"
#include "psrp/encoder.hpp"
#include "psrp/kv.hpp"
#include "psrp/optim.hpp"
#include "psrp/perm.hpp"
#include "psrp/rng.hpp"

namespace psrp {

struct PretrainConfig {
  int epochs = 200;
  double lr = 5e-5;
  int batch_size = 64;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  SinkhornConfig sinkhorn{};
  int eval_sinkhorn_iterations = 50;  ///< Sinkhorn depth used for validation rounding
  NoiseSpec noise{};
  std::uint64_t global_seed = 0;
  double validation_fraction = 0.05;
  int validation_views = 2;  ///< augmented views scored per validation protein
  bool keep_epoch_checkpoints = false;
  int log_tail_rows = 32;

  void validate() const {
    if (epochs < 1) throw ValidationError("PretrainConfig: epochs must be >= 1");
    if (!(lr > 0.0)) throw ValidationError("PretrainConfig: lr must be > 0");
    if (batch_size < 1) throw ValidationError("PretrainConfig: batch_size must be >= 1");
    if (!(weight_decay >= 0.0)) throw ValidationError("PretrainConfig: weight_decay must be >= 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
      throw ValidationError("PretrainConfig: validation_fraction must lie in [0, 1)");
    }
    if (validation_views < 1) throw ValidationError("PretrainConfig: validation_views must be >= 1");
    if (eval_sinkhorn_iterations < 0) {
      throw ValidationError("PretrainConfig: eval_sinkhorn_iterations must be >= 0");
    }
    if (log_tail_rows < 0) throw ValidationError("PretrainConfig: log_tail_rows must be >= 0");
    sinkhorn.validate();
    noise.validate();
    adam().validate();
  }

  AdamConfig adam() const { return {lr, beta1, beta2, adam_eps, weight_decay}; }
  SinkhornConfig eval_sinkhorn() const { return {eval_sinkhorn_iterations, sinkhorn.eps}; }
};

inline void write_kv(const SinkhornConfig& c, KeyValues& kv, const std::string& prefix = "sinkhorn") {
  kv[prefix + ".iterations"] = std::to_string(c.m);
  kv[prefix + ".eps"] = format_double(c.eps);
}

inline SinkhornConfig sinkhorn_config_from_kv(const KeyValues& kv, const SinkhornConfig& defaults = {},
                                              const std::string& prefix = "sinkhorn") {
  const KvReader r(kv);
  SinkhornConfig c = defaults;
  c.m = static_cast<int>(r.get_int(prefix + ".iterations", c.m));
  c.eps = r.get_double(prefix + ".eps", c.eps);
  c.validate();
  return c;
}

inline void write_kv(const PretrainConfig& c, KeyValues& kv) {
  kv["pretrain.epochs"] = std::to_string(c.epochs);
  kv["pretrain.lr"] = format_double(c.lr);
  kv["pretrain.batch_size"] = std::to_string(c.batch_size);
  kv["pretrain.weight_decay"] = format_double(c.weight_decay);
  kv["pretrain.beta1"] = format_double(c.beta1);
  kv["pretrain.beta2"] = format_double(c.beta2);
  kv["pretrain.adam_eps"] = format_double(c.adam_eps);
  kv["pretrain.eval_sinkhorn_iterations"] = std::to_string(c.eval_sinkhorn_iterations);
  kv["pretrain.validation_fraction"] = format_double(c.validation_fraction);
  kv["pretrain.validation_views"] = std::to_string(c.validation_views);
  kv["pretrain.keep_epoch_checkpoints"] = c.keep_epoch_checkpoints ? "true" : "false";
  kv["pretrain.log_tail_rows"] = std::to_string(c.log_tail_rows);
  kv["seed"] = std::to_string(c.global_seed);
  write_kv(c.sinkhorn, kv);
  write_kv(c.noise, kv);
}

/// Missing keys keep the values in `defaults`; the result is not validated so
/// callers can report config errors themselves.
inline PretrainConfig pretrain_config_from_kv(const KeyValues& kv, const PretrainConfig& defaults = {}) {
  const KvReader r(kv);
  PretrainConfig c = defaults;
  c.epochs = static_cast<int>(r.get_int("pretrain.epochs", c.epochs));
  c.lr = r.get_double("pretrain.lr", c.lr);
  c.batch_size = static_cast<int>(r.get_int("pretrain.batch_size", c.batch_size));
  c.weight_decay = r.get_double("pretrain.weight_decay", c.weight_decay);
  c.beta1 = r.get_double("pretrain.beta1", c.beta1);
  c.beta2 = r.get_double("pretrain.beta2", c.beta2);
  c.adam_eps = r.get_double("pretrain.adam_eps", c.adam_eps);
  c.eval_sinkhorn_iterations =
      static_cast<int>(r.get_int("pretrain.eval_sinkhorn_iterations", c.eval_sinkhorn_iterations));
  c.validation_fraction = r.get_double("pretrain.validation_fraction", c.validation_fraction);
  c.validation_views = static_cast<int>(r.get_int("pretrain.validation_views", c.validation_views));
  c.keep_epoch_checkpoints = r.get_bool("pretrain.keep_epoch_checkpoints", c.keep_epoch_checkpoints);
  c.log_tail_rows = static_cast<int>(r.get_int("pretrain.log_tail_rows", c.log_tail_rows));
  c.global_seed = r.get_u64("seed", c.global_seed);
  c.sinkhorn = sinkhorn_config_from_kv(kv, c.sinkhorn);
  c.noise = noise_spec_from_kv(kv, c.noise);
  return c;
}

struct StepRecord {
  int epoch = 0;
  std::uint64_t step = 0;
  double loss = 0.0;
  double perm_acc = 0.0;
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;

  static constexpr const char* kHeader = "epoch,step,loss,perm_acc,wall_ms";

  static std::string format_row(const StepRecord& r, bool with_wall = true) {
    char buf[160];
    if (with_wall) {
      std::snprintf(buf, sizeof buf, "%d,%llu,%.17g,%.17g,%.3f", r.epoch,
                    static_cast<unsigned long long>(r.step), r.loss, r.perm_acc, r.wall_ms);
    } else {
      std::snprintf(buf, sizeof buf, "%d,%llu,%.17g,%.17g", r.epoch,
                    static_cast<unsigned long long>(r.step), r.loss, r.perm_acc);
    }
    return buf;
  }

  void write_csv(std::ostream& os) const {
    os << kHeader << '\n';
    for (const auto& r : steps) os << format_row(r) << '\n';
  }

  /// Last `rows` records without wall time, so the tail is reproducible.
  std::string tail(int rows) const {
    std::string out = "epoch,step,loss,perm_acc\n";
    const auto count = std::min<std::size_t>(steps.size(), static_cast<std::size_t>(std::max(rows, 0)));
    for (auto i = steps.size() - count; i < steps.size(); ++i) out += format_row(steps[i], false) + "\n";
    return out;
  }
};

/// Mean permutation accuracy of the rounded predictions over `examples`.
inline double reorder_accuracy(const EncoderState& state, std::span<const PretrainExample> examples,
                               const SinkhornConfig& sk) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples) {
    total += permutation_accuracy(round_to_permutation(predict_q(state, ex.shuffled, sk)), ex.target);
  }
  return total / static_cast<double>(examples.size());
}

namespace detail {

inline std::string describe_batch(std::span<const PretrainExample> batch) {
  std::ostringstream os;
  os << "batch of " << batch.size() << " example(s), seeds:";
  for (const auto& ex : batch) os << ' ' << ex.seed;
  return os.str();
}

}  // namespace detail

/// One AdamW update on the mean reorder loss over `batch`. The reported loss
/// adds (weight_decay / 2) * ||theta||^2 measured before the update; accuracy
/// comes from rounding each example's Q.
inline StepRecord pretrain_step(EncoderState& state, AdamState& opt,
                                std::span<const PretrainExample> batch, const PretrainConfig& config) {
  if (batch.empty()) throw ValidationError("pretrain_step: empty batch");
  const auto start = std::chrono::steady_clock::now();
  for (const auto& ex : batch) {
    if (ex.shuffled.n != state.config.n || ex.target.size() != state.config.n) {
      throw DimensionError("pretrain_step: example with n=" + std::to_string(ex.shuffled.n) +
                           " for an encoder with n=" + std::to_string(state.config.n));
    }
  }

  nn::zero_grad(state);
  double nll = 0.0;
  double acc = 0.0;
  for (const auto& ex : batch) {
    ReorderStep r;
    try {
      r = reorder_loss_and_backward(state, ex, config.sinkhorn);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " [example seed " + std::to_string(ex.seed) + "]");
    }
    nll += r.loss;
    acc += permutation_accuracy(round_to_permutation(r.q), ex.target);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  nll *= inv_b;
  acc *= inv_b;
  const double loss = nll + 0.5 * config.weight_decay * nn::squared_norm(state);
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "pretrain_step: non-finite loss (mean nll " << nll << ", step " << opt.step + 1 << "); "
       << detail::describe_batch(batch);
    throw NumericError(os.str());
  }
  state.for_each_param([&](const std::string&, nn::Param& p) { p.grad *= inv_b; });
  adam_step(state, opt, config.adam());

  StepRecord rec;
  rec.step = opt.step;
  rec.loss = loss;
  rec.perm_acc = acc;
  rec.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kEncoderSection = "encoder";

inline void write_param_shapes(const std::vector<nn::ParamShape>& shapes, KeyValues& kv,
                               const std::string& prefix) {
  kv[prefix + ".count"] = std::to_string(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    char key[64];
    std::snprintf(key, sizeof key, "%s.%04zu", prefix.c_str(), i);
    kv[key] = shapes[i].name + ":" + std::to_string(shapes[i].rows) + "x" + std::to_string(shapes[i].cols);
  }
}

inline std::vector<std::string> read_param_shapes(const KeyValues& kv, const std::string& prefix) {
  const KvReader r(kv);
  const auto count = r.get_int(prefix + ".count", -1);
  if (count < 0) throw CheckpointError("checkpoint header lacks " + prefix + ".count");
  std::vector<std::string> out;
  for (std::int64_t i = 0; i < count; ++i) {
    char key[64];
    std::snprintf(key, sizeof key, "%s.%04lld", prefix.c_str(), static_cast<long long>(i));
    out.push_back(r.get(key, "<missing>"));
  }
  return out;
}

/// Lists every differing entry between two shape lists.
inline std::string shape_diff(const std::vector<std::string>& stored,
                              const std::vector<std::string>& expected) {
  std::string out;
  const auto count = std::max(stored.size(), expected.size());
  for (std::size_t i = 0; i < count; ++i) {
    const std::string a = i < stored.size() ? stored[i] : "<absent>";
    const std::string b = i < expected.size() ? expected[i] : "<absent>";
    if (a != b) out += "\n  [" + std::to_string(i) + "] checkpoint " + a + " vs expected " + b;
  }
  return out;
}

inline std::vector<std::string> shape_strings(const std::vector<nn::ParamShape>& shapes) {
  std::vector<std::string> out;
  for (const auto& s : shapes) out.push_back(s.name + ":" + std::to_string(s.rows) + "x" + std::to_string(s.cols));
  return out;
}

struct EncoderProvenance {
  std::uint64_t global_seed = 0;
  int epoch = 0;
  std::uint64_t step = 0;
};

inline Checkpoint make_encoder_checkpoint(const EncoderState& state, const AdamState& opt,
                                          const RAcutConfig& racut_cfg, const PretrainConfig& config,
                                          const EncoderProvenance& where, const TrainLog& log,
                                          const KeyValues& extra = {}) {
  Checkpoint ckpt;
  ckpt.section = kEncoderSection;
  ckpt.header = extra;
  write_kv(state.config, ckpt.header);
  write_kv(racut_cfg, ckpt.header);
  write_kv(config, ckpt.header);
  write_param_shapes(nn::parameter_shapes(state), ckpt.header, "shape");
  ckpt.header["provenance.global_seed"] = std::to_string(where.global_seed);
  ckpt.header["provenance.epoch"] = std::to_string(where.epoch);
  ckpt.header["provenance.step"] = std::to_string(where.step);
  ckpt.parameters = nn::flatten_values(state);
  ckpt.moment1 = opt.m;
  ckpt.moment2 = opt.v;
  ckpt.optimizer_step = opt.step;
  ckpt.log_tail = log.tail(config.log_tail_rows);
  return ckpt;
}

/// Rebuilds the encoder stored in `ckpt`. When `expected` is given, a
/// checkpoint with different parameter shapes is rejected with the diff.
inline EncoderState encoder_from_checkpoint(const Checkpoint& ckpt,
                                            const std::optional<EncoderConfig>& expected = {}) {
  if (ckpt.section != kEncoderSection) {
    throw CheckpointError("checkpoint section '" + ckpt.section + "' is not an encoder");
  }
  const auto stored_cfg = encoder_config_from_kv(ckpt.header);
  const auto stored_shapes = read_param_shapes(ckpt.header, "shape");
  if (expected) {
    const auto want = shape_strings(nn::parameter_shapes(EncoderState(*expected)));
    if (stored_shapes != want) {
      throw DimensionError("checkpoint parameter shapes do not match the configured encoder:" +
                           shape_diff(stored_shapes, want));
    }
  }
  EncoderState state(stored_cfg);
  const auto own = shape_strings(nn::parameter_shapes(state));
  if (stored_shapes != own) {
    throw CheckpointError("checkpoint header shapes disagree with its encoder config:" +
                          shape_diff(stored_shapes, own));
  }
  nn::assign_values(state, ckpt.parameters);
  return state;
}

inline AdamState adam_state_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.moment1.size() != ckpt.parameters.size() || ckpt.moment2.size() != ckpt.parameters.size()) {
    throw CheckpointError("checkpoint optimizer moments do not match its parameters");
  }
  return {ckpt.moment1, ckpt.moment2, ckpt.optimizer_step};
}

// ---------------------------------------------------------------------------
// Training loop

/// Stream tags mixed into derive_seed so that initialization, splitting,
/// validation views and per-epoch augmentation never share a generator.
namespace seed_stream {
inline constexpr std::uint64_t kInit = 0x1d17;
inline constexpr std::uint64_t kSplit = 0x5b17;
inline constexpr std::uint64_t kValidation = 0x7a11d;
inline constexpr std::uint64_t kOrder = 0x0bde;
inline constexpr std::uint64_t kEpochBase = 0x1000000;
}  // namespace seed_stream

/// Seed of the example built from dataset entry `index` during `epoch` (1-based).
inline std::uint64_t example_seed(std::uint64_t global_seed, int epoch, std::size_t index) {
  return derive_seed(global_seed, seed_stream::kEpochBase + static_cast<std::uint64_t>(epoch), index);
}

struct PretrainResult {
  EncoderState state;
  AdamState optimizer;
  TrainLog log;
  Checkpoint last;
  Checkpoint best;
  std::vector<double> validation_accuracy;  ///< one entry per epoch
  int best_epoch = 0;
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
  std::size_t skipped = 0;  ///< proteins shorter than n
};

struct PretrainOutputs {
  std::filesystem::path dir;  ///< empty: keep everything in memory
  KeyValues extra_header;     ///< copied into every checkpoint header
};

/// Trains an encoder on `dataset`. Proteins shorter than n are skipped; a
/// fixed validation slice is scored each epoch on views that never change.
inline PretrainResult pretrain_run(const PretrainDataset& dataset, const EncoderConfig& enc_cfg,
                                   const RAcutConfig& racut_cfg, const PretrainConfig& config,
                                   const PretrainOutputs& outputs = {}) {
  config.validate();
  enc_cfg.validate();
  racut_cfg.validate();
  if (enc_cfg.n != racut_cfg.n || enc_cfg.f_max != racut_cfg.f_max) {
    throw ValidationError("pretrain_run: encoder (n=" + std::to_string(enc_cfg.n) + ", f_max=" +
                          std::to_string(enc_cfg.f_max) + ") disagrees with RAcut (n=" +
                          std::to_string(racut_cfg.n) + ", f_max=" + std::to_string(racut_cfg.f_max) + ")");
  }

  std::vector<std::size_t> admissible;
  for (std::size_t i = 0; i < dataset.proteins.size(); ++i) {
    if (static_cast<int>(dataset.proteins[i].tokens.size()) >= racut_cfg.n) admissible.push_back(i);
  }
  if (admissible.empty()) {
    throw ValidationError("pretrain_run: no protein with at least n=" + std::to_string(racut_cfg.n) +
                          " residues (dataset size " + std::to_string(dataset.proteins.size()) + ")");
  }

  PretrainResult result;
  result.skipped = dataset.proteins.size() - admissible.size();

  // Hold out a fixed slice; keep at least one training protein.
  {
    Rng split_rng(derive_seed(config.global_seed, seed_stream::kSplit));
    for (std::size_t i = admissible.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(split_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(admissible[i - 1], admissible[j]);
    }
  }
  auto n_valid = static_cast<std::size_t>(std::llround(config.validation_fraction * admissible.size()));
  if (config.validation_fraction > 0.0 && n_valid == 0 && admissible.size() > 1) n_valid = 1;
  n_valid = std::min(n_valid, admissible.size() - 1);
  std::vector<std::size_t> valid_idx(admissible.begin(), admissible.begin() + n_valid);
  std::vector<std::size_t> train_idx(admissible.begin() + n_valid, admissible.end());
  std::sort(valid_idx.begin(), valid_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  result.train_size = train_idx.size();
  result.validation_size = valid_idx.size();

  std::vector<PretrainExample> valid_examples;
  for (std::size_t v = 0; v < valid_idx.size(); ++v) {
    for (int k = 0; k < config.validation_views; ++k) {
      const auto seed = derive_seed(config.global_seed, seed_stream::kValidation,
                                    valid_idx[v] * static_cast<std::size_t>(config.validation_views) + k);
      valid_examples.push_back(make_pretrain_example(dataset.proteins[valid_idx[v]], racut_cfg, config.noise, seed));
    }
  }

  result.state = init_encoder(enc_cfg, derive_seed(config.global_seed, seed_stream::kInit));
  result.optimizer = make_adam_state(result.state);

  std::ofstream log_file;
  if (!outputs.dir.empty()) {
    std::filesystem::create_directories(outputs.dir);
    log_file.open(outputs.dir / "train_log.csv", std::ios::trunc);
    if (!log_file) throw Error("cannot write '" + (outputs.dir / "train_log.csv").string() + "'");
    log_file << TrainLog::kHeader << '\n';
  }

  double best_acc = -1.0;
  std::vector<PretrainExample> batch;
  batch.reserve(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    Rng order_rng(derive_seed(config.global_seed, seed_stream::kOrder, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (auto k = begin; k < end; ++k) {
        const auto idx = order[k];
        batch.push_back(make_pretrain_example(dataset.proteins[idx], racut_cfg, config.noise,
                                              example_seed(config.global_seed, epoch, idx)));
      }
      auto rec = pretrain_step(result.state, result.optimizer, batch, config);
      rec.epoch = epoch;
      result.log.steps.push_back(rec);
      if (log_file.is_open()) log_file << TrainLog::format_row(rec) << '\n' << std::flush;
    }

    const double acc = valid_examples.empty()
                           ? result.log.steps.back().perm_acc
                           : reorder_accuracy(result.state, valid_examples, config.eval_sinkhorn());
    result.validation_accuracy.push_back(acc);

    const EncoderProvenance where{config.global_seed, epoch, result.optimizer.step};
    KeyValues header = outputs.extra_header;
    header["validation.accuracy"] = format_double(acc);
    result.last = make_encoder_checkpoint(result.state, result.optimizer, racut_cfg, config, where,
                                          result.log, header);
    if (acc > best_acc) {
      best_acc = acc;
      result.best_epoch = epoch;
      result.best = result.last;
      if (!outputs.dir.empty()) save_checkpoint(outputs.dir / "best.ckpt", result.best);
    }
    if (!outputs.dir.empty()) {
      save_checkpoint(outputs.dir / "last.ckpt", result.last);
      if (config.keep_epoch_checkpoints) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
        save_checkpoint(outputs.dir / name, result.last);
      }
    }
  }
  return result;
}

}  // namespace psrp
