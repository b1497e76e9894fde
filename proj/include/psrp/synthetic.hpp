#pragma once

// Synthetic corpora for self-contained end-to-end runs.
//
// Motif proteins are concatenations of segments, each drawn from one
// "family": a family prefers a small group of residues and falls back to the
// uniform background otherwise. Because families appear in a fixed order,
// the original order of cut blocks is recoverable from content alone.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "psrp/corpus.hpp"
#include "psrp/error.hpp"
#include "psrp/rng.hpp"

namespace psrp {

inline constexpr std::string_view kCanonicalResidues = "ACDEFGHIKLMNPQRSTVWY";

struct MotifConfig {
  int families = 4;
  int segment_min = 11;
  int segment_max = 12;
  double fidelity = 0.85;  ///< probability of drawing from the family group

  void validate() const {
    if (families < 1 || families > 20) throw ValidationError("MotifConfig: families must lie in [1, 20]");
    if (segment_min < 1 || segment_max < segment_min) {
      throw ValidationError("MotifConfig: need 1 <= segment_min <= segment_max");
    }
    if (!(fidelity >= 0.0 && fidelity <= 1.0)) throw ValidationError("MotifConfig: fidelity must lie in [0, 1]");
  }

  /// Residues preferred by family f: a contiguous run of the canonical
  /// alphabet, 20 / families residues wide.
  std::string_view group(int f) const {
    const auto width = static_cast<std::size_t>(std::max(1, 20 / families));
    return kCanonicalResidues.substr(static_cast<std::size_t>(f) * width, width);
  }
};

/// One segment per entry of `families`, in the given order.
inline std::string motif_sequence(const std::vector<int>& families, const MotifConfig& cfg, Rng& rng) {
  std::string out;
  for (int f : families) {
    const auto grp = cfg.group(f);
    const auto len = rng.uniform_int(cfg.segment_min, cfg.segment_max);
    for (std::int64_t i = 0; i < len; ++i) {
      if (rng.bernoulli(cfg.fidelity)) {
        out += grp[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(grp.size()) - 1))];
      } else {
        out += kCanonicalResidues[static_cast<std::size_t>(rng.uniform_int(0, 19))];
      }
    }
  }
  return out;
}

/// `count` sequences, each made of families 0..families-1 in order.
inline std::vector<std::string> motif_corpus(std::size_t count, const MotifConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<int> order(cfg.families);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(motif_sequence(order, cfg, rng));
  return out;
}

inline PretrainDataset motif_dataset(std::size_t count, const MotifConfig& cfg, std::uint64_t seed,
                                     int l_max) {
  PretrainDataset ds;
  const ResidueVocabulary vocab;
  for (const auto& s : motif_corpus(count, cfg, seed)) ds.proteins.push_back(encode_protein(s, vocab, l_max));
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic interaction task: a compound class binds exactly the proteins that
// contain both families of the class's family pair.

struct SyntheticCpiConfig {
  MotifConfig motif{8, 11, 12, 0.85};
  int families_per_protein = 4;
  std::size_t proteins = 1500;
  std::size_t compounds = 1000;
  std::size_t pairs = 2000;
  double hard_negative_fraction = 0.7;  ///< negatives sharing one family of the pair

  void validate() const {
    motif.validate();
    if (families_per_protein < 2 || families_per_protein > motif.families) {
      throw ValidationError("SyntheticCpiConfig: families_per_protein must lie in [2, families]");
    }
    if (proteins == 0 || compounds == 0 || pairs == 0) {
      throw ValidationError("SyntheticCpiConfig: proteins, compounds and pairs must be positive");
    }
  }
};

inline constexpr std::array<std::pair<int, int>, 6> kClassFamilyPairs = {
    {{0, 1}, {2, 5}, {3, 7}, {4, 6}, {0, 6}, {1, 3}}};

inline constexpr std::array<std::string_view, 6> kClassCores = {
    "c1ccccc1", "C(=O)N", "S(=O)(=O)", "C#N", "C1CCNCC1", "[N+](=O)[O-]"};

/// Class core wrapped in random aliphatic filler, e.g. `CCOc1ccccc1NCC`.
inline std::string synthetic_smiles(int cls, Rng& rng) {
  static constexpr std::string_view kFiller = "CCCNO";
  std::string s;
  const auto pre = rng.uniform_int(2, 6);
  for (std::int64_t i = 0; i < pre; ++i) s += kFiller[static_cast<std::size_t>(rng.uniform_int(0, 4))];
  s += kClassCores[static_cast<std::size_t>(cls)];
  const auto post = rng.uniform_int(2, 6);
  for (std::int64_t i = 0; i < post; ++i) s += kFiller[static_cast<std::size_t>(rng.uniform_int(0, 4))];
  return s;
}

struct SyntheticCpiTask {
  std::vector<InteractionRecord> records;
  std::vector<std::vector<int>> protein_families;  ///< families of each distinct protein
};

/// Balanced interaction pairs over pools of distinct proteins and compounds.
/// Positives pair a class with a protein holding both of its families;
/// negatives hold one of them (hard) or neither.
inline SyntheticCpiTask synthetic_cpi_task(const SyntheticCpiConfig& cfg, std::uint64_t seed,
                                           int l_max = kDefaultMaxProteinLength,
                                           int max_atoms = kDefaultMaxAtoms) {
  cfg.validate();
  Rng rng(seed);
  const ResidueVocabulary rvocab;
  const CompoundVocabulary cvocab;
  const int nf = cfg.motif.families;

  SyntheticCpiTask task;
  std::vector<ProteinRecord> proteins;
  for (std::size_t i = 0; i < cfg.proteins; ++i) {
    std::vector<int> all(nf);
    std::iota(all.begin(), all.end(), 0);
    for (int k = nf - 1; k > 0; --k) std::swap(all[k], all[static_cast<std::size_t>(rng.uniform_int(0, k))]);
    std::vector<int> fam(all.begin(), all.begin() + cfg.families_per_protein);
    std::sort(fam.begin(), fam.end());
    proteins.push_back(encode_protein(motif_sequence(fam, cfg.motif, rng), rvocab, l_max));
    task.protein_families.push_back(std::move(fam));
  }

  std::vector<CompoundRecord> compounds;
  std::vector<int> compound_class;
  for (std::size_t i = 0; i < cfg.compounds; ++i) {
    const int cls = static_cast<int>(i % kClassCores.size());
    compounds.push_back(encode_smiles(synthetic_smiles(cls, rng), max_atoms, cvocab));
    compound_class.push_back(cls);
  }

  const auto has = [](const std::vector<int>& fam, int f) { return std::find(fam.begin(), fam.end(), f) != fam.end(); };
  // kind: 2 = both families, 1 = exactly one, 0 = neither.
  std::array<std::array<std::vector<std::size_t>, 3>, kClassFamilyPairs.size()> by_kind;
  for (std::size_t c = 0; c < kClassFamilyPairs.size(); ++c) {
    const auto [a, b] = kClassFamilyPairs[c];
    if (a >= nf || b >= nf) throw ValidationError("synthetic_cpi_task: class families exceed motif families");
    for (std::size_t p = 0; p < proteins.size(); ++p) {
      const int kind = int{has(task.protein_families[p], a)} + int{has(task.protein_families[p], b)};
      by_kind[c][static_cast<std::size_t>(kind)].push_back(p);
    }
  }

  for (std::size_t i = 0; i < cfg.pairs; ++i) {
    const auto ci = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(compounds.size()) - 1));
    const auto cls = static_cast<std::size_t>(compound_class[ci]);
    const int label = rng.bernoulli(0.5) ? 1 : 0;
    std::size_t kind = 2;
    if (label == 0) kind = rng.bernoulli(cfg.hard_negative_fraction) ? 1 : 0;
    if (by_kind[cls][kind].empty()) kind = label == 1 ? 2 : (kind == 1 ? 0 : 1);
    const auto& pool = by_kind[cls][kind];
    if (pool.empty()) throw ValidationError("synthetic_cpi_task: protein pool too small for a class");
    const auto pi = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
    task.records.push_back({compounds[ci], proteins[pi], label});
  }
  return task;
}

}  // namespace psrp
