#pragma once

// Central finite-difference checks of the hand-written backward passes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "psrp/augment.hpp"
#include "psrp/cpi.hpp"
#include "psrp/encoder.hpp"
#include "psrp/perm.hpp"
#include "psrp/rng.hpp"

namespace psrp {

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("relative_error: length mismatch");
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

struct GradcheckOptions {
  double sinkhorn_tolerance = 1e-5;
  double model_tolerance = 1e-4;
  std::vector<int> sinkhorn_iterations{1, 3, 10};
  int sinkhorn_n = 4;
  int sinkhorn_trials = 5;
  int model_coordinates = 20;
  double step = 1e-6;
  std::uint64_t seed = 0;
  /// Test hook: added to the first analytic coordinate of every check.
  double perturb = 0.0;
};

struct GradcheckEntry {
  std::string component;
  double rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;

  bool pass() const { return rel_error < tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass(); });
  }

  void print(std::ostream& os) const {
    for (const auto& e : entries) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "%-28s coords=%-4zu max_rel_error=%.3e tol=%.0e %s\n", e.component.c_str(),
                    e.coordinates, e.rel_error, e.tolerance, e.pass() ? "PASS" : "FAIL");
      os << buf;
    }
  }
};

namespace detail {

inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

inline std::vector<std::size_t> pick_coordinates(std::size_t total, int count, Rng& rng) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  const auto k = std::min<std::size_t>(total, static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(idx[i], idx[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                    static_cast<std::int64_t>(total) - 1))]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Pointer to the flat coordinate `index` of a module, in for_each_param order.
template <class Module>
double* coordinate(Module& m, std::size_t index) {
  double* out = nullptr;
  std::size_t offset = 0;
  m.for_each_param([&](const std::string&, nn::Param& p) {
    const auto size = static_cast<std::size_t>(p.size());
    if (out == nullptr && index < offset + size) out = p.value.data() + (index - offset);
    offset += size;
  });
  if (out == nullptr) throw DimensionError("coordinate index out of range");
  return out;
}

}  // namespace detail

/// Worst relative error of sinkhorn_backward over several random instances
/// of the scalar <G, S^m(Q)>, every entry of Q differenced.
inline GradcheckEntry check_sinkhorn_gradient(int iterations, const GradcheckOptions& opt) {
  GradcheckEntry entry{"sinkhorn m=" + std::to_string(iterations), 0.0, opt.sinkhorn_tolerance, 0};
  Rng rng(derive_seed(opt.seed, 0x51, static_cast<std::uint64_t>(iterations)));
  const SinkhornConfig cfg{iterations, 1e-9};
  const int n = opt.sinkhorn_n;
  for (int trial = 0; trial < opt.sinkhorn_trials; ++trial) {
    Matrix q(n, n), g(n, n);
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      q.data()[i] = rng.uniform(0.2, 2.0);
      g.data()[i] = rng.uniform(-1.0, 1.0);
    }
    const Matrix analytic = sinkhorn_backward(q, cfg, g);
    std::vector<double> a(analytic.data(), analytic.data() + analytic.size());
    std::vector<double> numeric(a.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      numeric[static_cast<std::size_t>(i)] = detail::central_difference(
          [&] { return (g.array() * sinkhorn(q, cfg).values.array()).sum(); }, q.data()[i], opt.step);
    }
    a[0] += opt.perturb;
    entry.rel_error = std::max(entry.rel_error, relative_error(a, numeric));
    entry.coordinates += a.size();
  }
  return entry;
}

/// Reorder loss of a tiny encoder (embed_dim 8, one layer, n = 3) on a masked
/// example, differenced along randomly chosen parameter coordinates.
inline GradcheckEntry check_encoder_gradient(const GradcheckOptions& opt) {
  GradcheckEntry entry{"encoder+sinkhorn+loss", 0.0, opt.model_tolerance, 0};
  const EncoderConfig ecfg{8, 1, 2, 16, 3, 4, ResidueVocabulary::kSize};
  const auto racut_cfg = RAcutConfig::make(3, 12);
  auto state = init_encoder(ecfg, derive_seed(opt.seed, 0xe1));
  const SinkhornConfig sk{3, 1e-9};

  const ResidueVocabulary vocab;
  const auto protein = encode_protein("MKTAYIAKQRQ", vocab, racut_cfg.l_max);
  const auto ex = make_pretrain_example(protein, racut_cfg, NoiseSpec::mask(0.2), derive_seed(opt.seed, 0xe2));

  nn::zero_grad(state);
  reorder_loss_and_backward(state, ex, sk);
  const auto grads = nn::flatten_grads(state);
  Rng rng(derive_seed(opt.seed, 0xe3));
  const auto coords = detail::pick_coordinates(grads.size(), opt.model_coordinates, rng);

  std::vector<double> a, numeric;
  const auto loss = [&] { return reorder_loss(ex.target, predict_q(state, ex.shuffled, sk).values, sk.eps); };
  for (auto c : coords) {
    a.push_back(grads[c]);
    numeric.push_back(detail::central_difference(loss, *detail::coordinate(state, c), opt.step));
  }
  if (!a.empty()) a[0] += opt.perturb;
  entry.rel_error = relative_error(a, numeric);
  entry.coordinates = a.size();
  return entry;
}

/// Summed cross-entropy plus L2 term of a tiny CPI head on a few pairs.
inline GradcheckEntry check_cpi_gradient(const GradcheckOptions& opt) {
  GradcheckEntry entry{"cpi head+loss", 0.0, opt.model_tolerance, 0};
  const EncoderConfig ecfg{8, 1, 2, 16, 3, 4, ResidueVocabulary::kSize};
  const auto racut_cfg = RAcutConfig::make(3, 12);
  const auto encoder = init_encoder(ecfg, derive_seed(opt.seed, 0xc1));
  ProteinEmbeddingCache cache(encoder, racut_cfg);

  CpiConfig cfg;
  cfg.compound_dim = 8;
  cfg.compound_layers = 1;
  cfg.compound_heads = 2;
  cfg.compound_ffn_dim = 16;
  cfg.max_atoms = 16;
  cfg.fusion_dim = 6;
  cfg.lambda = 0.01;
  auto model = init_cpi_model(cfg, ecfg.embed_dim, derive_seed(opt.seed, 0xc2));

  const ResidueVocabulary rv;
  const CompoundVocabulary cv;
  const std::vector<InteractionRecord> pairs = {
      {encode_smiles("CC(=O)O", cfg.max_atoms, cv), encode_protein("MKTAYIAKQRQ", rv, 12), 1},
      {encode_smiles("c1ccccc1N", cfg.max_atoms, cv), encode_protein("GSHMLEDPVAG", rv, 12), 0},
      {encode_smiles("N#CC", cfg.max_atoms, cv), encode_protein("MKTAYIAKQRQ", rv, 12), 0}};

  cpi_loss_and_backward(model, cache, pairs);
  const auto grads = nn::flatten_grads(model);
  Rng rng(derive_seed(opt.seed, 0xc3));
  const auto coords = detail::pick_coordinates(grads.size(), opt.model_coordinates, rng);
  const auto theta_loss = [&] {
    std::vector<double> preds = predict_pairs(model, cache, pairs);
    return cpi_loss(preds, labels_of(pairs), nn::flatten_values(model), cfg.lambda);
  };
  std::vector<double> a, numeric;
  for (auto c : coords) {
    a.push_back(grads[c]);
    numeric.push_back(detail::central_difference(theta_loss, *detail::coordinate(model, c), opt.step));
  }
  if (!a.empty()) a[0] += opt.perturb;
  entry.rel_error = relative_error(a, numeric);
  entry.coordinates = a.size();
  return entry;
}

inline GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
  GradcheckReport report;
  for (int m : opt.sinkhorn_iterations) report.entries.push_back(check_sinkhorn_gradient(m, opt));
  report.entries.push_back(check_encoder_gradient(opt));
  report.entries.push_back(check_cpi_gradient(opt));
  return report;
}

}  // namespace psrp
