#pragma once

// Compound-protein interaction head trained on top of a frozen protein encoder.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psrp/augment.hpp"
#include "psrp/checkpoint.hpp"
#include "psrp/corpus.hpp"
#include "psrp/encoder.hpp"
#include "psrp/eval.hpp"
#include "psrp/kv.hpp"
#include "psrp/nn.hpp"
#include "psrp/optim.hpp"
#include "psrp/pretrain.hpp"
#include "psrp/rng.hpp"

namespace psrp {

struct CpiConfig {
  int compound_dim = 256;
  int compound_layers = 2;
  int compound_heads = 8;
  int compound_ffn_dim = 512;
  int max_atoms = kDefaultMaxAtoms;
  int fusion_dim = 256;
  int epochs = 200;
  double lr = 5e-5;
  int batch_size = 64;
  double lambda = 1e-4;  ///< coefficient of (lambda / 2) * ||theta||^2
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (compound_dim < 1 || compound_layers < 1 || compound_heads < 1 || compound_ffn_dim < 1 ||
        max_atoms < 1 || fusion_dim < 1) {
      throw ValidationError("CpiConfig: all dimensions must be >= 1");
    }
    if (compound_dim % compound_heads != 0) {
      throw ValidationError("CpiConfig: compound_dim must be divisible by compound_heads");
    }
    if (epochs < 1) throw ValidationError("CpiConfig: epochs must be >= 1");
    if (!(lr > 0.0)) throw ValidationError("CpiConfig: lr must be > 0");
    if (batch_size < 1) throw ValidationError("CpiConfig: batch_size must be >= 1");
    if (!(lambda >= 0.0)) throw ValidationError("CpiConfig: lambda must be >= 0");
    adam().validate();
  }

  AdamConfig adam() const { return {lr, beta1, beta2, adam_eps, 0.0}; }

  bool operator==(const CpiConfig&) const = default;
};

inline void write_kv(const CpiConfig& c, KeyValues& kv) {
  kv["cpi.compound_dim"] = std::to_string(c.compound_dim);
  kv["cpi.compound_layers"] = std::to_string(c.compound_layers);
  kv["cpi.compound_heads"] = std::to_string(c.compound_heads);
  kv["cpi.compound_ffn_dim"] = std::to_string(c.compound_ffn_dim);
  kv["corpus.max_atoms"] = std::to_string(c.max_atoms);
  kv["cpi.fusion_dim"] = std::to_string(c.fusion_dim);
  kv["cpi.epochs"] = std::to_string(c.epochs);
  kv["cpi.lr"] = format_double(c.lr);
  kv["cpi.batch_size"] = std::to_string(c.batch_size);
  kv["cpi.lambda"] = format_double(c.lambda);
  kv["cpi.beta1"] = format_double(c.beta1);
  kv["cpi.beta2"] = format_double(c.beta2);
  kv["cpi.adam_eps"] = format_double(c.adam_eps);
  kv["seed"] = std::to_string(c.seed);
}

inline CpiConfig cpi_config_from_kv(const KeyValues& kv, const CpiConfig& defaults = {}) {
  const KvReader r(kv);
  CpiConfig c = defaults;
  c.compound_dim = static_cast<int>(r.get_int("cpi.compound_dim", c.compound_dim));
  c.compound_layers = static_cast<int>(r.get_int("cpi.compound_layers", c.compound_layers));
  c.compound_heads = static_cast<int>(r.get_int("cpi.compound_heads", c.compound_heads));
  c.compound_ffn_dim = static_cast<int>(r.get_int("cpi.compound_ffn_dim", c.compound_ffn_dim));
  c.max_atoms = static_cast<int>(r.get_int("corpus.max_atoms", c.max_atoms));
  c.fusion_dim = static_cast<int>(r.get_int("cpi.fusion_dim", c.fusion_dim));
  c.epochs = static_cast<int>(r.get_int("cpi.epochs", c.epochs));
  c.lr = r.get_double("cpi.lr", c.lr);
  c.batch_size = static_cast<int>(r.get_int("cpi.batch_size", c.batch_size));
  c.lambda = r.get_double("cpi.lambda", c.lambda);
  c.beta1 = r.get_double("cpi.beta1", c.beta1);
  c.beta2 = r.get_double("cpi.beta2", c.beta2);
  c.adam_eps = r.get_double("cpi.adam_eps", c.adam_eps);
  c.seed = r.get_u64("seed", c.seed);
  return c;
}

/// Trainable CPI parameters. The protein encoder is not part of the model; it
/// is passed by const reference wherever protein embeddings are needed.
struct CpiModel {
  CpiConfig config;
  int protein_dim = 0;
  nn::Param char_embedding;      // compound vocabulary x compound_dim
  nn::Param atom_position;       // max_atoms x compound_dim
  nn::TransformerStack compound_stack;
  nn::Linear fusion1;            // compound_dim + protein_dim -> fusion_dim
  nn::Linear fusion2;            // fusion_dim -> fusion_dim
  nn::Linear decoder;            // fusion_dim -> 1 (W_f, b_joint)

  CpiModel() = default;
  CpiModel(const CpiConfig& cfg, int protein_dim_)
      : config(cfg),
        protein_dim(protein_dim_),
        char_embedding(CompoundVocabulary::kSize, cfg.compound_dim),
        atom_position(cfg.max_atoms, cfg.compound_dim),
        compound_stack(cfg.compound_layers, cfg.compound_dim, cfg.compound_heads, cfg.compound_ffn_dim),
        fusion1(cfg.compound_dim + protein_dim_, cfg.fusion_dim),
        fusion2(cfg.fusion_dim, cfg.fusion_dim),
        decoder(cfg.fusion_dim, 1) {
    cfg.validate();
    if (protein_dim_ < 1) throw ValidationError("CpiModel: protein_dim must be >= 1");
  }

  template <class F>
  void for_each_param(F&& f) {
    f(std::string("char_embedding"), char_embedding);
    f(std::string("atom_position"), atom_position);
    compound_stack.for_each_param("compound_stack", f);
    fusion1.for_each_param("fusion1", f);
    fusion2.for_each_param("fusion2", f);
    decoder.for_each_param("decoder", f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f(std::string("char_embedding"), char_embedding);
    f(std::string("atom_position"), atom_position);
    compound_stack.for_each_param("compound_stack", f);
    fusion1.for_each_param("fusion1", f);
    fusion2.for_each_param("fusion2", f);
    decoder.for_each_param("decoder", f);
  }
};

inline CpiModel init_cpi_model(const CpiConfig& config, int protein_dim, std::uint64_t seed) {
  CpiModel m(config, protein_dim);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.compound_dim));
  m.char_embedding.init_uniform(bound, rng);
  m.atom_position.init_uniform(bound, rng);
  m.compound_stack.init(rng);
  m.fusion1.init(rng);
  m.fusion2.init(rng);
  m.decoder.init(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Forward pieces

struct CompoundTrace {
  std::vector<TokenId> tokens;
  nn::TransformerStack::Cache stack;
  Matrix hidden;
};

/// Character + position embeddings, attention stack, mean over all characters.
inline nn::RowVector encode_compound(const CpiModel& model, const CompoundRecord& compound,
                                     CompoundTrace& trace) {
  const auto& cfg = model.config;
  if (compound.tokens.empty()) throw ValidationError("encode_compound: empty token list");
  const auto len = std::min<std::size_t>(compound.tokens.size(), static_cast<std::size_t>(cfg.max_atoms));
  trace.tokens.assign(compound.tokens.begin(), compound.tokens.begin() + static_cast<std::ptrdiff_t>(len));
  Matrix x(static_cast<Eigen::Index>(len), cfg.compound_dim);
  for (std::size_t i = 0; i < len; ++i) {
    const auto t = trace.tokens[i];
    if (t < 0 || t >= CompoundVocabulary::kSize) {
      throw ValidationError("encode_compound: token id " + std::to_string(t) + " out of range");
    }
    x.row(static_cast<Eigen::Index>(i)) =
        model.char_embedding.value.row(t) + model.atom_position.value.row(static_cast<Eigen::Index>(i));
  }
  const std::vector<char> valid(len, 1);
  trace.hidden = model.compound_stack.forward(x, valid, trace.stack);
  return trace.hidden.colwise().mean();
}

inline nn::RowVector encode_compound(const CpiModel& model, const CompoundRecord& compound) {
  CompoundTrace trace;
  return encode_compound(model, compound, trace);
}

struct FusionTrace {
  Matrix input, pre1, act1, pre2;
};

/// concat(z_comp, z_prot) -> Linear -> GELU -> Linear -> GELU.
inline nn::RowVector fuse(const CpiModel& model, const nn::RowVector& z_comp, const nn::RowVector& z_prot,
                          FusionTrace& trace) {
  if (z_comp.size() != model.config.compound_dim || z_prot.size() != model.protein_dim) {
    throw DimensionError("fuse: got compound/protein dims " + std::to_string(z_comp.size()) + "/" +
                         std::to_string(z_prot.size()) + ", model expects " +
                         std::to_string(model.config.compound_dim) + "/" + std::to_string(model.protein_dim));
  }
  trace.input.resize(1, z_comp.size() + z_prot.size());
  trace.input << z_comp, z_prot;
  trace.pre1 = model.fusion1.forward(trace.input);
  trace.act1 = nn::gelu(trace.pre1);
  trace.pre2 = model.fusion2.forward(trace.act1);
  return nn::gelu(trace.pre2);
}

inline nn::RowVector fuse(const CpiModel& model, const nn::RowVector& z_comp, const nn::RowVector& z_prot) {
  FusionTrace trace;
  return fuse(model, z_comp, z_prot, trace);
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double decoder_logit(const CpiModel& model, const nn::RowVector& z_joint) {
  if (z_joint.size() != model.config.fusion_dim) {
    throw DimensionError("predict: joint embedding has " + std::to_string(z_joint.size()) +
                         " entries, model expects " + std::to_string(model.config.fusion_dim));
  }
  return z_joint.dot(model.decoder.weight.value.col(0)) + model.decoder.bias.value(0, 0);
}

/// sigmoid(W_f z_joint + b_joint).
inline double predict(const CpiModel& model, const nn::RowVector& z_joint) {
  return sigmoid(decoder_logit(model, z_joint));
}

inline constexpr double kProbabilityClamp = 1e-9;

inline double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

inline double binary_cross_entropy(double p, int y) {
  const double q = clamp_probability(p);
  return -(y * std::log(q) + (1 - y) * std::log(1.0 - q));
}

/// Summed binary cross-entropy plus (lambda / 2) * ||theta||^2.
inline double cpi_loss(std::span<const double> predictions, std::span<const int> labels,
                       std::span<const double> theta, double lambda) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("cpi_loss: " + std::to_string(predictions.size()) + " predictions but " +
                         std::to_string(labels.size()) + " labels");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) loss += binary_cross_entropy(predictions[i], labels[i]);
  double sq = 0.0;
  for (double t : theta) sq += t * t;
  return loss + 0.5 * lambda * sq;
}

// ---------------------------------------------------------------------------
// Protein embeddings from the frozen encoder

/// Z_prot per distinct sequence, computed once with the equal-split pathway.
class ProteinEmbeddingCache {
 public:
  ProteinEmbeddingCache(const EncoderState& encoder, const RAcutConfig& racut_cfg)
      : encoder_(encoder), racut_(racut_cfg) {}

  const nn::RowVector& get(const ProteinRecord& protein) {
    auto it = cache_.find(protein.raw);
    if (it != cache_.end()) return it->second;
    if (static_cast<int>(protein.tokens.size()) < racut_.n) {
      throw ValidationError("protein of length " + std::to_string(protein.tokens.size()) +
                            " is shorter than n=" + std::to_string(racut_.n) + ": " + protein.raw.substr(0, 40));
    }
    return cache_.emplace(protein.raw, protein_embedding(encoder_, protein, racut_)).first->second;
  }

  std::size_t size() const { return cache_.size(); }
  int dim() const { return encoder_.config.embed_dim; }

 private:
  const EncoderState& encoder_;
  RAcutConfig racut_;
  std::map<std::string, nn::RowVector> cache_;
};

inline double predict_pair(const CpiModel& model, ProteinEmbeddingCache& proteins, const InteractionRecord& r) {
  return predict(model, fuse(model, encode_compound(model, r.compound), proteins.get(r.protein)));
}

inline std::vector<double> predict_pairs(const CpiModel& model, ProteinEmbeddingCache& proteins,
                                         const std::vector<InteractionRecord>& records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(predict_pair(model, proteins, r));
  return out;
}

inline std::vector<int> labels_of(const std::vector<InteractionRecord>& records) {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

/// Mean per-pair binary cross-entropy (no regularizer).
inline double mean_bce(const CpiModel& model, ProteinEmbeddingCache& proteins,
                       const std::vector<InteractionRecord>& records) {
  if (records.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : records) total += binary_cross_entropy(predict_pair(model, proteins, r), r.label);
  return total / static_cast<double>(records.size());
}

// ---------------------------------------------------------------------------
// Gradients

/// Adds the gradient of the pair's cross-entropy term to the model buffers
/// and returns that term. The protein embedding is treated as a constant.
inline double cpi_pair_backward(CpiModel& model, const CompoundRecord& compound, const nn::RowVector& z_prot,
                                int label) {
  CompoundTrace ct;
  const auto z_comp = encode_compound(model, compound, ct);
  FusionTrace ft;
  const auto z_joint = fuse(model, z_comp, z_prot, ft);
  const double p = predict(model, z_joint);
  const double loss = binary_cross_entropy(p, label);

  // d(-y log p - (1-y) log(1-p)) / dlogit = p - y, zero where the clamp is active.
  const bool clamped = p < kProbabilityClamp || p > 1.0 - kProbabilityClamp;
  const double d_logit = clamped ? 0.0 : p - label;
  Matrix d_out(1, 1);
  d_out(0, 0) = d_logit;
  const Matrix d_joint = model.decoder.backward(z_joint, d_out);
  const Matrix d_pre2 = nn::gelu_backward(ft.pre2, d_joint);
  const Matrix d_act1 = model.fusion2.backward(ft.act1, d_pre2);
  const Matrix d_pre1 = nn::gelu_backward(ft.pre1, d_act1);
  const Matrix d_input = model.fusion1.backward(ft.input, d_pre1);

  const auto dc = model.config.compound_dim;
  const auto len = static_cast<Eigen::Index>(ct.tokens.size());
  Matrix d_hidden(len, dc);
  d_hidden.rowwise() = d_input.leftCols(dc).row(0) / static_cast<double>(len);
  const Matrix dx = model.compound_stack.backward(ct.stack, d_hidden);
  for (Eigen::Index i = 0; i < len; ++i) {
    model.char_embedding.grad.row(ct.tokens[static_cast<std::size_t>(i)]) += dx.row(i);
    model.atom_position.grad.row(i) += dx.row(i);
  }
  return loss;
}

/// Full objective on `records` with gradients: summed cross-entropy plus
/// (lambda / 2) * ||theta||^2. Buffers are zeroed first.
inline double cpi_loss_and_backward(CpiModel& model, ProteinEmbeddingCache& proteins,
                                    std::span<const InteractionRecord> records) {
  nn::zero_grad(model);
  double loss = 0.0;
  for (const auto& r : records) loss += cpi_pair_backward(model, r.compound, proteins.get(r.protein), r.label);
  const double lambda = model.config.lambda;
  loss += 0.5 * lambda * nn::squared_norm(model);
  if (lambda > 0.0) {
    model.for_each_param([&](const std::string&, nn::Param& p) { p.grad += lambda * p.value; });
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct FinetuneEpoch {
  int epoch = 0;
  std::uint64_t step = 0;
  double train_loss = 0.0;  ///< objective summed over the epoch's batches
  double train_bce = 0.0;   ///< mean per-pair cross-entropy seen during the epoch
  std::optional<double> valid_auroc;
  double valid_bce = 0.0;
  double wall_ms = 0.0;
};

struct FinetuneLog {
  std::vector<FinetuneEpoch> epochs;

  static constexpr const char* kHeader = "epoch,step,train_loss,train_bce,valid_auroc,valid_bce,wall_ms";

  static std::string format_row(const FinetuneEpoch& e, bool with_wall = true) {
    char auroc_text[32] = "nan";
    if (e.valid_auroc) std::snprintf(auroc_text, sizeof auroc_text, "%.17g", *e.valid_auroc);
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%llu,%.17g,%.17g,%s,%.17g", e.epoch,
                  static_cast<unsigned long long>(e.step), e.train_loss, e.train_bce, auroc_text, e.valid_bce);
    std::string row = buf;
    if (with_wall) {
      std::snprintf(buf, sizeof buf, ",%.3f", e.wall_ms);
      row += buf;
    }
    return row;
  }

  std::string tail(std::size_t rows) const {
    std::string out = "epoch,step,train_loss,train_bce,valid_auroc,valid_bce\n";
    const auto count = std::min(rows, epochs.size());
    for (auto i = epochs.size() - count; i < epochs.size(); ++i) out += format_row(epochs[i], false) + "\n";
    return out;
  }
};

/// Index of the epoch to keep: highest validation AUROC; ties (and epochs
/// without a defined AUROC) fall back to the lowest validation cross-entropy,
/// then the earliest epoch.
inline std::size_t select_best_epoch(const std::vector<FinetuneEpoch>& log) {
  if (log.empty()) throw ValidationError("select_best_epoch: empty log");
  const auto key = [](const FinetuneEpoch& e) {
    return e.valid_auroc.value_or(-std::numeric_limits<double>::infinity());
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < log.size(); ++i) {
    const double a = key(log[i]), b = key(log[best]);
    if (a > b || (a == b && log[i].valid_bce < log[best].valid_bce)) best = i;
  }
  return best;
}

struct FinetuneResult {
  CpiModel model;
  FinetuneLog log;
  int best_epoch = 0;
};

inline constexpr std::uint64_t kCpiInitStream = 0xc91;
inline constexpr std::uint64_t kCpiOrderStream = 0xc92;

/// Trains compound encoder, fusion and decoder with Adam on the summed
/// objective; the encoder behind `proteins` is only read.
inline FinetuneResult finetune_run(const std::vector<InteractionRecord>& train,
                                   const std::vector<InteractionRecord>& valid, ProteinEmbeddingCache& proteins,
                                   const CpiConfig& config, const std::filesystem::path& log_path = {}) {
  config.validate();
  if (train.empty()) throw ValidationError("finetune_run: empty training split");
  if (valid.empty()) throw ValidationError("finetune_run: empty validation split");

  FinetuneResult result;
  CpiModel model = init_cpi_model(config, proteins.dim(), derive_seed(config.seed, kCpiInitStream));
  AdamState opt = make_adam_state(model);
  std::vector<double> best_params;

  std::ofstream log_file;
  if (!log_path.empty()) {
    if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
    log_file.open(log_path, std::ios::trunc);
    if (!log_file) throw Error("cannot write '" + log_path.string() + "'");
    log_file << FinetuneLog::kHeader << '\n';
  }

  const auto valid_labels = labels_of(valid);
  std::vector<InteractionRecord> batch;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, kCpiOrderStream, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    FinetuneEpoch rec;
    rec.epoch = epoch;
    double bce_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (auto k = begin; k < end; ++k) batch.push_back(train[order[k]]);
      const double loss = cpi_loss_and_backward(model, proteins, batch);
      if (!std::isfinite(loss)) {
        throw NumericError("finetune_run: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(opt.step + 1));
      }
      rec.train_loss += loss;
      bce_sum += loss - 0.5 * config.lambda * nn::squared_norm(model);
      adam_step(model, opt, config.adam());
    }
    rec.step = opt.step;
    rec.train_bce = bce_sum / static_cast<double>(train.size());

    const auto scores = predict_pairs(model, proteins, valid);
    double vb = 0.0;
    for (std::size_t i = 0; i < valid.size(); ++i) vb += binary_cross_entropy(scores[i], valid_labels[i]);
    rec.valid_bce = vb / static_cast<double>(valid.size());
    try {
      rec.valid_auroc = auroc(scores, valid_labels);
    } catch (const MetricError&) {
      rec.valid_auroc.reset();
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.epochs.push_back(rec);
    if (log_file.is_open()) log_file << FinetuneLog::format_row(rec) << '\n' << std::flush;

    if (select_best_epoch(result.log.epochs) == result.log.epochs.size() - 1) {
      best_params = nn::flatten_values(model);
      result.best_epoch = epoch;
    }
  }
  nn::assign_values(model, best_params);
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kCpiSection = "cpi";

inline Checkpoint make_cpi_checkpoint(const CpiModel& model, const FinetuneResult* run = nullptr,
                                      const KeyValues& extra = {}) {
  Checkpoint ckpt;
  ckpt.section = kCpiSection;
  ckpt.header = extra;
  write_kv(model.config, ckpt.header);
  ckpt.header["cpi.protein_dim"] = std::to_string(model.protein_dim);
  write_param_shapes(nn::parameter_shapes(model), ckpt.header, "shape");
  ckpt.parameters = nn::flatten_values(model);
  if (run != nullptr) {
    ckpt.header["cpi.best_epoch"] = std::to_string(run->best_epoch);
    ckpt.log_tail = run->log.tail(32);
  }
  return ckpt;
}

inline CpiModel cpi_model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.section != kCpiSection) {
    throw CheckpointError("checkpoint section '" + ckpt.section + "' is not a CPI model");
  }
  const auto cfg = cpi_config_from_kv(ckpt.header);
  const auto protein_dim = static_cast<int>(KvReader(ckpt.header).get_int("cpi.protein_dim", 0));
  CpiModel model(cfg, protein_dim);
  const auto stored = read_param_shapes(ckpt.header, "shape");
  const auto own = shape_strings(nn::parameter_shapes(model));
  if (stored != own) throw DimensionError("CPI checkpoint shapes disagree with its config:" + shape_diff(stored, own));
  nn::assign_values(model, ckpt.parameters);
  return model;
}

}  // namespace psrp
