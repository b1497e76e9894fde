#pragma once

// Pretraining example construction: random adaptive cuts, subsequence
// shuffling and identity/mask noise.

#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "psrp/corpus.hpp"
#include "psrp/error.hpp"
#include "psrp/kv.hpp"
#include "psrp/rng.hpp"

namespace psrp {

struct RAcutConfig {
  int n = 24;
  int l_max = kDefaultMaxProteinLength;
  int f_max = 50;

  /// Block length is the smallest that still lets n blocks hold l_max residues.
  static RAcutConfig make(int n, int l_max) {
    if (n < 1) throw ValidationError("RAcutConfig: n must be >= 1");
    if (l_max < 1) throw ValidationError("RAcutConfig: l_max must be >= 1");
    return {n, l_max, (l_max + n - 1) / n};
  }

  void validate() const {
    if (n < 1 || l_max < 1) throw ValidationError("RAcutConfig: n and l_max must be >= 1");
    if (f_max != (l_max + n - 1) / n) {
      throw ValidationError("RAcutConfig: f_max must equal ceil(l_max / n)");
    }
  }

  int capacity() const { return n * f_max; }

  bool operator==(const RAcutConfig&) const = default;
};

/// n blocks of f_max tokens each, stored contiguously; block i occupies
/// tokens[i*f_max, (i+1)*f_max) and its first lengths[i] entries are residues.
struct SubsequenceSet {
  int n = 0;
  int f_max = 0;
  std::vector<TokenId> tokens;
  std::vector<int> lengths;

  std::span<const TokenId> block(int i) const {
    return {tokens.data() + static_cast<std::size_t>(i) * f_max, static_cast<std::size_t>(f_max)};
  }
  std::span<TokenId> block(int i) {
    return {tokens.data() + static_cast<std::size_t>(i) * f_max, static_cast<std::size_t>(f_max)};
  }

  int total_length() const { return std::accumulate(lengths.begin(), lengths.end(), 0); }

  bool operator==(const SubsequenceSet&) const = default;
};

/// Permutation matrix stored as the map slot -> original block:
/// entry (i, j) is 1 exactly when perm[i] == j.
class ShuffleMatrix {
 public:
  ShuffleMatrix() = default;

  explicit ShuffleMatrix(std::vector<int> perm) : perm_(std::move(perm)) {
    std::vector<char> seen(perm_.size(), 0);
    for (int j : perm_) {
      if (j < 0 || j >= size() || seen[j]) throw ValidationError("ShuffleMatrix: not a permutation");
      seen[j] = 1;
    }
  }

  static ShuffleMatrix identity(int n) {
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 0);
    return ShuffleMatrix(std::move(p));
  }

  /// Accepts only exact 0/1 matrices with one unit entry per row and column.
  static ShuffleMatrix from_matrix(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) throw DimensionError("ShuffleMatrix: matrix is not square");
    std::vector<int> p(m.rows(), -1);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (m(i, j) == 1.0) {
          if (p[i] != -1) throw ValidationError("ShuffleMatrix: row with two unit entries");
          p[i] = static_cast<int>(j);
        } else if (m(i, j) != 0.0) {
          throw ValidationError("ShuffleMatrix: entries must be 0 or 1");
        }
      }
      if (p[i] == -1) throw ValidationError("ShuffleMatrix: row without a unit entry");
    }
    return ShuffleMatrix(std::move(p));
  }

  int size() const { return static_cast<int>(perm_.size()); }
  int operator[](int slot) const { return perm_[slot]; }
  const std::vector<int>& perm() const { return perm_; }

  Eigen::MatrixXd matrix() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(size(), size());
    for (int i = 0; i < size(); ++i) m(i, perm_[i]) = 1.0;
    return m;
  }

  /// The transpose, which is also the inverse permutation.
  ShuffleMatrix transpose() const {
    std::vector<int> inv(perm_.size());
    for (int i = 0; i < size(); ++i) inv[perm_[i]] = i;
    return ShuffleMatrix(std::move(inv));
  }

  bool operator==(const ShuffleMatrix&) const = default;

 private:
  std::vector<int> perm_;
};

struct NoiseSpec {
  enum class Kind { Identity, Mask };

  Kind kind = Kind::Mask;
  double mask_prob = 0.15;

  static NoiseSpec identity() { return {Kind::Identity, 0.0}; }
  static NoiseSpec mask(double p = 0.15) { return {Kind::Mask, p}; }

  void validate() const {
    if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) {
      throw ValidationError("NoiseSpec: mask_prob must lie in [0, 1]");
    }
  }
};

struct PretrainExample {
  SubsequenceSet shuffled;
  ShuffleMatrix target;
  std::uint64_t seed = 0;

  bool operator==(const PretrainExample&) const = default;
};

inline void write_kv(const RAcutConfig& c, KeyValues& kv) {
  kv["racut.n"] = std::to_string(c.n);
  kv["racut.l_max"] = std::to_string(c.l_max);
}

inline RAcutConfig racut_config_from_kv(const KeyValues& kv, const RAcutConfig& defaults = {}) {
  const KvReader r(kv);
  return RAcutConfig::make(static_cast<int>(r.get_int("racut.n", defaults.n)),
                           static_cast<int>(r.get_int("racut.l_max", defaults.l_max)));
}

inline void write_kv(const NoiseSpec& s, KeyValues& kv) {
  kv["noise.kind"] = s.kind == NoiseSpec::Kind::Mask ? "mask" : "identity";
  kv["noise.mask_prob"] = format_double(s.mask_prob);
}

inline NoiseSpec noise_spec_from_kv(const KeyValues& kv, const NoiseSpec& defaults = {}) {
  const KvReader r(kv);
  NoiseSpec s = defaults;
  const auto kind = r.get("noise.kind", s.kind == NoiseSpec::Kind::Mask ? "mask" : "identity");
  if (kind == "mask") {
    s.kind = NoiseSpec::Kind::Mask;
  } else if (kind == "identity") {
    s.kind = NoiseSpec::Kind::Identity;
  } else {
    throw ParseError("noise.kind must be 'mask' or 'identity', got '" + kind + "'");
  }
  s.mask_prob = r.get_double("noise.mask_prob", s.mask_prob);
  s.validate();
  return s;
}

/// Cuts a protein into n contiguous blocks of random length in [1, f_max].
/// Lengths are drawn one at a time from the range that keeps the rest of the
/// partition feasible; input beyond n*f_max residues is dropped.
inline SubsequenceSet racut(const std::vector<TokenId>& protein, const RAcutConfig& config,
                            Rng& rng) {
  const int n = config.n;
  const int f_max = config.f_max;
  const int total = static_cast<int>(protein.size());
  if (total < n) {
    throw AugmentError("racut: protein has " + std::to_string(total) + " residues, fewer than n=" +
                       std::to_string(n));
  }
  const int used = std::min(total, config.capacity());

  SubsequenceSet set;
  set.n = n;
  set.f_max = f_max;
  set.lengths.resize(n);
  int rem = used;
  for (int i = 1; i < n; ++i) {
    const int later = n - i;  // blocks still to fill after this one
    const int lo = std::max(1, rem - later * f_max);
    const int hi = std::min(f_max, rem - later);
    const int len = static_cast<int>(rng.uniform_int(lo, hi));
    set.lengths[i - 1] = len;
    rem -= len;
  }
  set.lengths[n - 1] = rem;

  set.tokens.assign(static_cast<std::size_t>(n) * f_max, ResidueVocabulary::kPadId);
  int offset = 0;
  for (int i = 0; i < n; ++i) {
    auto dst = set.block(i);
    std::copy_n(protein.begin() + offset, set.lengths[i], dst.begin());
    offset += set.lengths[i];
  }
  return set;
}

inline SubsequenceSet racut(const ProteinRecord& protein, const RAcutConfig& config, Rng& rng) {
  return racut(protein.tokens, config, rng);
}

/// Uniform permutation by Fisher-Yates.
inline ShuffleMatrix sample_shuffle(int n, Rng& rng) {
  if (n < 1) throw ValidationError("sample_shuffle: n must be >= 1");
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.uniform_int(0, i));
    std::swap(p[i], p[j]);
  }
  return ShuffleMatrix(std::move(p));
}

/// Output block i is input block p[i].
inline SubsequenceSet shuffle_apply(const SubsequenceSet& set, const ShuffleMatrix& p) {
  if (p.size() != set.n) {
    throw DimensionError("shuffle_apply: " + std::to_string(p.size()) + "x" +
                         std::to_string(p.size()) + " shuffle for " + std::to_string(set.n) +
                         " blocks");
  }
  SubsequenceSet out = set;
  for (int i = 0; i < set.n; ++i) {
    const auto src = set.block(p[i]);
    std::copy(src.begin(), src.end(), out.block(i).begin());
    out.lengths[i] = set.lengths[p[i]];
  }
  return out;
}

inline SubsequenceSet apply_noise(const SubsequenceSet& set, const NoiseSpec& spec, Rng& rng) {
  spec.validate();
  SubsequenceSet out = set;
  if (spec.kind == NoiseSpec::Kind::Identity) return out;
  for (int i = 0; i < set.n; ++i) {
    auto blk = out.block(i);
    for (int t = 0; t < set.lengths[i]; ++t) {
      if (rng.bernoulli(spec.mask_prob)) blk[t] = ResidueVocabulary::kMaskId;
    }
  }
  return out;
}

/// racut -> sample_shuffle -> shuffle_apply -> apply_noise, all driven by one
/// generator seeded with `seed`.
inline PretrainExample make_pretrain_example(const ProteinRecord& protein,
                                             const RAcutConfig& config, const NoiseSpec& spec,
                                             std::uint64_t seed) {
  Rng rng(seed);
  const auto cut = racut(protein, config, rng);
  auto target = sample_shuffle(config.n, rng);
  const auto shuffled = shuffle_apply(cut, target);
  return {apply_noise(shuffled, spec, rng), std::move(target), seed};
}

/// Blocks rendered one per line, `·` for padding and `#` for masked residues.
inline void dump_example(std::ostream& os, const SubsequenceSet& set) {
  const ResidueVocabulary vocab;
  for (int i = 0; i < set.n; ++i) {
    os << i << '\t';
    for (TokenId t : set.block(i)) {
      if (t == ResidueVocabulary::kPadId) {
        os << "·";
      } else {
        os << vocab.symbol(t);
      }
    }
    os << '\n';
  }
}

inline void dump_example(std::ostream& os, const PretrainExample& ex) {
  os << "seed=" << ex.seed << " target=";
  for (int i = 0; i < ex.target.size(); ++i) os << (i ? "," : "") << ex.target[i];
  os << '\n';
  dump_example(os, ex.shuffled);
}

}  // namespace psrp
