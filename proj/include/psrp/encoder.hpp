#pragma once

// Protein encoder: shuffled blocks -> per-slot embeddings -> positive score
// matrix whose Sinkhorn projection predicts the shuffle.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "psrp/augment.hpp"
#include "psrp/corpus.hpp"
#include "psrp/nn.hpp"
#include "psrp/perm.hpp"

namespace psrp {

struct EncoderConfig {
  int embed_dim = 256;
  int layers = 8;
  int heads = 8;
  int ffn_dim = 1024;
  int n = 24;
  int f_max = 50;
  int vocab_size = ResidueVocabulary::kSize;

  void validate() const {
    if (embed_dim < 1 || layers < 1 || heads < 1 || ffn_dim < 1 || n < 1 || f_max < 1) {
      throw ValidationError("EncoderConfig: all dimensions must be >= 1");
    }
    if (embed_dim % heads != 0) {
      throw ValidationError("EncoderConfig: embed_dim " + std::to_string(embed_dim) +
                            " is not divisible by heads " + std::to_string(heads));
    }
    if (vocab_size < ResidueVocabulary::kSize) {
      throw ValidationError("EncoderConfig: vocab_size must cover residues, pad and mask");
    }
  }

  bool operator==(const EncoderConfig&) const = default;
};

inline void write_kv(const EncoderConfig& c, KeyValues& kv) {
  kv["encoder.embed_dim"] = std::to_string(c.embed_dim);
  kv["encoder.layers"] = std::to_string(c.layers);
  kv["encoder.heads"] = std::to_string(c.heads);
  kv["encoder.ffn_dim"] = std::to_string(c.ffn_dim);
  kv["encoder.n"] = std::to_string(c.n);
  kv["encoder.f_max"] = std::to_string(c.f_max);
  kv["encoder.vocab_size"] = std::to_string(c.vocab_size);
}

inline EncoderConfig encoder_config_from_kv(const KeyValues& kv, const EncoderConfig& defaults = {}) {
  const KvReader r(kv);
  EncoderConfig c = defaults;
  c.embed_dim = static_cast<int>(r.get_int("encoder.embed_dim", c.embed_dim));
  c.layers = static_cast<int>(r.get_int("encoder.layers", c.layers));
  c.heads = static_cast<int>(r.get_int("encoder.heads", c.heads));
  c.ffn_dim = static_cast<int>(r.get_int("encoder.ffn_dim", c.ffn_dim));
  c.n = static_cast<int>(r.get_int("encoder.n", c.n));
  c.f_max = static_cast<int>(r.get_int("encoder.f_max", c.f_max));
  c.vocab_size = static_cast<int>(r.get_int("encoder.vocab_size", c.vocab_size));
  c.validate();
  return c;
}

/// Logits are clamped to this magnitude before exponentiation.
inline constexpr double kLogitClamp = 30.0;

struct EncoderState {
  EncoderConfig config;
  nn::Param token_embedding;     // vocab_size x d
  nn::Param position_embedding;  // f_max x d, position within a block
  nn::Param slot_embedding;      // n x d, slot in the (shuffled) input
  nn::TransformerStack stack;
  nn::Linear score_head;         // d -> n

  EncoderState() = default;

  /// Correct shapes; values zero (LayerNorm gains one).
  explicit EncoderState(const EncoderConfig& cfg)
      : config(cfg),
        token_embedding(cfg.vocab_size, cfg.embed_dim),
        position_embedding(cfg.f_max, cfg.embed_dim),
        slot_embedding(cfg.n, cfg.embed_dim),
        stack(cfg.layers, cfg.embed_dim, cfg.heads, cfg.ffn_dim),
        score_head(cfg.embed_dim, cfg.n) {
    cfg.validate();
  }

  template <class F>
  void for_each_param(F&& f) {
    f(std::string("token_embedding"), token_embedding);
    f(std::string("position_embedding"), position_embedding);
    f(std::string("slot_embedding"), slot_embedding);
    stack.for_each_param("stack", f);
    score_head.for_each_param("score_head", f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f(std::string("token_embedding"), token_embedding);
    f(std::string("position_embedding"), position_embedding);
    f(std::string("slot_embedding"), slot_embedding);
    stack.for_each_param("stack", f);
    score_head.for_each_param("score_head", f);
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias, with
/// embedding tables using fan_in = embed_dim. LayerNorm starts at (1, 0).
inline EncoderState init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  EncoderState s(config);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.embed_dim));
  s.token_embedding.init_uniform(bound, rng);
  s.position_embedding.init_uniform(bound, rng);
  s.slot_embedding.init_uniform(bound, rng);
  s.stack.init(rng);
  s.score_head.init(rng);
  return s;
}

struct EncoderOutput {
  Matrix embeddings;  ///< n x d, mean over the residue positions of each block
  Matrix scores;      ///< n x n, strictly positive
};

/// Activations kept for the backward pass.
struct EncoderTrace {
  std::vector<TokenId> tokens;  // pad positions replaced by the pad id
  std::vector<int> lengths;
  std::vector<char> key_valid;
  nn::TransformerStack::Cache stack;
  Matrix hidden;
  Matrix embeddings;
  Matrix logits;
  Matrix scores;
};

namespace detail {

inline void check_encoder_input(const EncoderConfig& cfg, const SubsequenceSet& input) {
  if (input.n != cfg.n || input.f_max != cfg.f_max) {
    throw DimensionError("encoder: input has n=" + std::to_string(input.n) +
                         " f_max=" + std::to_string(input.f_max) + ", encoder expects n=" +
                         std::to_string(cfg.n) + " f_max=" + std::to_string(cfg.f_max));
  }
  if (input.tokens.size() != static_cast<std::size_t>(cfg.n) * cfg.f_max ||
      input.lengths.size() != static_cast<std::size_t>(cfg.n)) {
    throw DimensionError("encoder: malformed subsequence set");
  }
  int total = 0;
  for (int i = 0; i < cfg.n; ++i) {
    const int len = input.lengths[i];
    if (len < 0 || len > cfg.f_max) throw DimensionError("encoder: block length out of range");
    total += len;
    const auto blk = input.block(i);
    for (int t = 0; t < len; ++t) {
      if (blk[t] < 0 || blk[t] >= cfg.vocab_size) {
        throw ValidationError("encoder: token id " + std::to_string(blk[t]) + " out of range");
      }
    }
  }
  if (total == 0) throw ValidationError("encoder: input holds no residues");
}

}  // namespace detail

inline EncoderOutput forward(const EncoderState& state, const SubsequenceSet& input,
                             EncoderTrace& trace) {
  const auto& cfg = state.config;
  detail::check_encoder_input(cfg, input);
  const int n = cfg.n;
  const int f = cfg.f_max;
  const int len = n * f;

  trace.lengths = input.lengths;
  trace.tokens.assign(len, ResidueVocabulary::kPadId);
  trace.key_valid.assign(len, 0);
  Matrix x(len, cfg.embed_dim);
  for (int i = 0; i < n; ++i) {
    const auto blk = input.block(i);
    for (int t = 0; t < f; ++t) {
      const int row = i * f + t;
      if (t < input.lengths[i]) {
        trace.tokens[row] = blk[t];
        trace.key_valid[row] = 1;
      }
      x.row(row) = state.token_embedding.value.row(trace.tokens[row]) +
                   state.position_embedding.value.row(t) + state.slot_embedding.value.row(i);
    }
  }

  trace.hidden = state.stack.forward(x, trace.key_valid, trace.stack);

  trace.embeddings = Matrix::Zero(n, cfg.embed_dim);
  for (int i = 0; i < n; ++i) {
    const int l = input.lengths[i];
    if (l > 0) trace.embeddings.row(i) = trace.hidden.middleRows(i * f, l).colwise().sum() / l;
  }
  trace.logits = state.score_head.forward(trace.embeddings);
  trace.scores =
      trace.logits.unaryExpr([](double v) { return std::exp(std::clamp(v, -kLogitClamp, kLogitClamp)); });
  if (!trace.scores.allFinite() || !trace.embeddings.allFinite()) {
    throw NumericError("encoder: non-finite activation in forward pass");
  }
  return {trace.embeddings, trace.scores};
}

inline EncoderOutput forward(const EncoderState& state, const SubsequenceSet& input) {
  EncoderTrace trace;
  return forward(state, input, trace);
}

/// Accumulates parameter gradients for upstream gradients with respect to the
/// score matrix and (optionally) the pooled embeddings.
inline void backward(EncoderState& state, const EncoderTrace& trace, const Matrix& d_scores,
                     const Matrix* d_embeddings = nullptr) {
  const auto& cfg = state.config;
  const int n = cfg.n;
  const int f = cfg.f_max;
  if (d_scores.rows() != n || d_scores.cols() != n) {
    throw DimensionError("encoder backward: score gradient must be n x n");
  }
  Matrix d_logits(n, n);
  for (Eigen::Index i = 0; i < d_logits.size(); ++i) {
    const double lg = trace.logits.data()[i];
    d_logits.data()[i] = (lg > -kLogitClamp && lg < kLogitClamp)
                             ? d_scores.data()[i] * trace.scores.data()[i]
                             : 0.0;
  }
  Matrix d_emb = state.score_head.backward(trace.embeddings, d_logits);
  if (d_embeddings != nullptr) d_emb += *d_embeddings;

  Matrix d_hidden = Matrix::Zero(n * f, cfg.embed_dim);
  for (int i = 0; i < n; ++i) {
    const int l = trace.lengths[i];
    for (int t = 0; t < l; ++t) d_hidden.row(i * f + t) = d_emb.row(i) / l;
  }
  const Matrix dx = state.stack.backward(trace.stack, d_hidden);
  if (!dx.allFinite()) throw NumericError("encoder backward: non-finite gradient");
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < f; ++t) {
      const int row = i * f + t;
      state.token_embedding.grad.row(trace.tokens[row]) += dx.row(row);
      state.position_embedding.grad.row(t) += dx.row(row);
      state.slot_embedding.grad.row(i) += dx.row(row);
    }
  }
}

inline DoublyStochasticMatrix predict_q(const EncoderState& state, const SubsequenceSet& input,
                                        const SinkhornConfig& sk) {
  return sinkhorn(forward(state, input).scores, sk);
}

struct ReorderStep {
  double loss = 0.0;
  DoublyStochasticMatrix q;
};

/// Forward, Sinkhorn, reorder loss and full backward for one example.
/// Gradients are added to the state's buffers.
inline ReorderStep reorder_loss_and_backward(EncoderState& state, const PretrainExample& ex,
                                             const SinkhornConfig& sk) {
  EncoderTrace trace;
  const auto out = forward(state, ex.shuffled, trace);
  auto q = sinkhorn(out.scores, sk);
  const double loss = reorder_loss(ex.target, q.values, sk.eps);
  const Matrix d_q = reorder_loss_grad(ex.target, q.values, sk.eps);
  const Matrix d_scores = sinkhorn_backward(out.scores, sk, d_q);
  backward(state, trace, d_scores);
  return {loss, std::move(q)};
}

/// Deterministic inference segmentation: block i holds residues
/// [i*f_max, (i+1)*f_max) of the truncated sequence, natural order, no noise.
inline SubsequenceSet equal_split(const std::vector<TokenId>& protein, const RAcutConfig& config) {
  const int total = static_cast<int>(protein.size());
  if (total < config.n) {
    throw AugmentError("equal_split: protein has " + std::to_string(total) +
                       " residues, fewer than n=" + std::to_string(config.n));
  }
  SubsequenceSet set;
  set.n = config.n;
  set.f_max = config.f_max;
  set.tokens.assign(static_cast<std::size_t>(config.n) * config.f_max, ResidueVocabulary::kPadId);
  set.lengths.assign(config.n, 0);
  const int used = std::min(total, config.capacity());
  for (int i = 0; i < config.n; ++i) {
    const int start = i * config.f_max;
    const int l = std::clamp(used - start, 0, config.f_max);
    set.lengths[i] = l;
    std::copy_n(protein.begin() + start, l, set.block(i).begin());
  }
  return set;
}

/// Mean of the pooled block vectors over non-empty blocks.
inline nn::RowVector protein_embedding(const EncoderState& state, const ProteinRecord& protein,
                                       const RAcutConfig& config) {
  if (config.n != state.config.n || config.f_max != state.config.f_max) {
    throw DimensionError("protein_embedding: segmentation does not match the encoder");
  }
  const auto set = equal_split(protein.tokens, config);
  const auto out = forward(state, set);
  nn::RowVector z = nn::RowVector::Zero(state.config.embed_dim);
  int used = 0;
  for (int i = 0; i < set.n; ++i) {
    if (set.lengths[i] == 0) continue;
    z += out.embeddings.row(i);
    ++used;
  }
  return z / used;
}

}  // namespace psrp
