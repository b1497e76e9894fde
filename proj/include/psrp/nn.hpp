#pragma once

// Dense layers with explicit backward passes. Every layer keeps its
// parameters in `Param` objects (value + accumulated gradient); forward
// passes are const and write activations into a caller-owned cache.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "psrp/error.hpp"
#include "psrp/rng.hpp"

namespace psrp::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Param {
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(Eigen::Index rows, Eigen::Index cols)
      : value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }

  void init_uniform(double bound, Rng& rng) {
    for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = rng.uniform(-bound, bound);
  }
};

struct ParamShape {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  bool operator==(const ParamShape&) const = default;
};

// Helpers shared by every module exposing for_each_param(f(name, Param&)).

template <class Module>
std::size_t parameter_count(const Module& m) {
  std::size_t total = 0;
  m.for_each_param([&](const std::string&, const Param& p) { total += p.size(); });
  return total;
}

template <class Module>
std::vector<ParamShape> parameter_shapes(const Module& m) {
  std::vector<ParamShape> out;
  m.for_each_param([&](const std::string& name, const Param& p) {
    out.push_back({name, p.value.rows(), p.value.cols()});
  });
  return out;
}

template <class Module>
void zero_grad(Module& m) {
  m.for_each_param([](const std::string&, Param& p) { p.zero_grad(); });
}

template <class Module>
std::vector<double> flatten_values(const Module& m) {
  std::vector<double> out;
  out.reserve(parameter_count(m));
  m.for_each_param([&](const std::string&, const Param& p) {
    out.insert(out.end(), p.value.data(), p.value.data() + p.size());
  });
  return out;
}

template <class Module>
std::vector<double> flatten_grads(const Module& m) {
  std::vector<double> out;
  out.reserve(parameter_count(m));
  m.for_each_param([&](const std::string&, const Param& p) {
    out.insert(out.end(), p.grad.data(), p.grad.data() + p.size());
  });
  return out;
}

template <class Module>
void assign_values(Module& m, std::span<const double> flat) {
  if (flat.size() != parameter_count(m)) {
    throw DimensionError("assign_values: expected " + std::to_string(parameter_count(m)) +
                         " parameters, got " + std::to_string(flat.size()));
  }
  std::size_t offset = 0;
  m.for_each_param([&](const std::string&, Param& p) {
    std::copy_n(flat.data() + offset, p.size(), p.value.data());
    offset += static_cast<std::size_t>(p.size());
  });
}

template <class Module>
double squared_norm(const Module& m) {
  double total = 0.0;
  m.for_each_param([&](const std::string&, const Param& p) { total += p.value.squaredNorm(); });
  return total;
}

template <class Module>
bool all_finite(const Module& m) {
  bool ok = true;
  m.for_each_param([&](const std::string&, const Param& p) { ok = ok && p.value.allFinite(); });
  return ok;
}

/// x W + b with W stored (in x out).
struct Linear {
  Param weight;
  Param bias;

  Linear() = default;
  Linear(int in, int out) : weight(in, out), bias(1, out) {}

  int in_dim() const { return static_cast<int>(weight.value.rows()); }
  int out_dim() const { return static_cast<int>(weight.value.cols()); }

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim()));
    weight.init_uniform(bound, rng);
    bias.init_uniform(bound, rng);
  }

  Matrix forward(const Matrix& x) const {
    Matrix y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy) {
    weight.grad.noalias() += x.transpose() * dy;
    bias.grad += dy.colwise().sum();
    return dy * weight.value.transpose();
  }

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
  template <class F>
  void for_each_param(const std::string& prefix, F&& f) const {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

struct LayerNorm {
  static constexpr double kEps = 1e-5;

  Param gamma;
  Param beta;

  struct Cache {
    Matrix xhat;
    Eigen::VectorXd inv_std;
  };

  LayerNorm() = default;
  explicit LayerNorm(int dim) : gamma(1, dim), beta(1, dim) { gamma.value.setOnes(); }

  Matrix forward(const Matrix& x, Cache& cache) const {
    const Eigen::Index d = x.cols();
    cache.xhat.resize(x.rows(), d);
    cache.inv_std.resize(x.rows());
    Matrix y(x.rows(), d);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mean = x.row(r).mean();
      const double var = (x.row(r).array() - mean).square().sum() / static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + kEps);
      cache.inv_std(r) = inv;
      cache.xhat.row(r) = (x.row(r).array() - mean) * inv;
      y.row(r) = cache.xhat.row(r).cwiseProduct(gamma.value.row(0)) + beta.value.row(0);
    }
    return y;
  }

  Matrix backward(const Cache& cache, const Matrix& dy) {
    const auto d = static_cast<double>(dy.cols());
    gamma.grad += dy.cwiseProduct(cache.xhat).colwise().sum();
    beta.grad += dy.colwise().sum();
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const RowVector dxhat = dy.row(r).cwiseProduct(gamma.value.row(0));
      const double mean_d = dxhat.sum() / d;
      const double mean_dx = dxhat.dot(cache.xhat.row(r)) / d;
      dx.row(r) = cache.inv_std(r) *
                  (dxhat.array() - mean_d - cache.xhat.row(r).array() * mean_dx).matrix();
    }
    return dx;
  }

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
  template <class F>
  void for_each_param(const std::string& prefix, F&& f) const {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

// tanh approximation of GELU
inline double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
  constexpr double c = 0.7978845608028654;
  const double t = std::tanh(c * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

inline Matrix gelu(const Matrix& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

inline Matrix gelu_backward(const Matrix& pre, const Matrix& dy) {
  return dy.cwiseProduct(pre.unaryExpr([](double v) { return gelu_grad(v); }));
}

/// Multi-head scaled dot-product self-attention. Keys flagged invalid in
/// `key_valid` receive zero attention weight.
struct MultiHeadAttention {
  int heads = 1;
  Linear query, key, value, output;

  struct Cache {
    Matrix q, k, v;
    std::vector<Matrix> probs;  // one (T x T) matrix per head
    Matrix context;             // concatenated head outputs
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(int dim, int num_heads)
      : heads(num_heads), query(dim, dim), key(dim, dim), value(dim, dim), output(dim, dim) {}

  void init(Rng& rng) {
    query.init(rng);
    key.init(rng);
    value.init(rng);
    output.init(rng);
  }

  int head_dim() const { return query.out_dim() / heads; }

  Matrix forward(const Matrix& x, const std::vector<char>& key_valid, Cache& cache) const {
    const Eigen::Index t = x.rows();
    const int dk = head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    cache.q = query.forward(x);
    cache.k = key.forward(x);
    cache.v = value.forward(x);
    cache.probs.assign(heads, Matrix());
    cache.context.resize(t, heads * dk);
    for (int h = 0; h < heads; ++h) {
      const auto qh = cache.q.middleCols(h * dk, dk);
      const auto kh = cache.k.middleCols(h * dk, dk);
      Matrix scores = (qh * kh.transpose()) * scale;
      Matrix& a = cache.probs[h];
      a.resize(t, t);
      for (Eigen::Index i = 0; i < t; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < t; ++j) {
          if (key_valid[j]) mx = std::max(mx, scores(i, j));
        }
        double z = 0.0;
        for (Eigen::Index j = 0; j < t; ++j) {
          const double e = key_valid[j] ? std::exp(scores(i, j) - mx) : 0.0;
          a(i, j) = e;
          z += e;
        }
        a.row(i) /= z;
      }
      cache.context.middleCols(h * dk, dk).noalias() = a * cache.v.middleCols(h * dk, dk);
    }
    return output.forward(cache.context);
  }

  Matrix backward(const Matrix& x, const Cache& cache, const Matrix& dy) {
    const int dk = head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const Matrix dcontext = output.backward(cache.context, dy);
    Matrix dq(cache.q.rows(), cache.q.cols());
    Matrix dk_all(cache.k.rows(), cache.k.cols());
    Matrix dv(cache.v.rows(), cache.v.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix& a = cache.probs[h];
      const auto d_out = dcontext.middleCols(h * dk, dk);
      const auto vh = cache.v.middleCols(h * dk, dk);
      dv.middleCols(h * dk, dk).noalias() = a.transpose() * d_out;
      const Matrix da = d_out * vh.transpose();
      // softmax pullback: dS = A .* (dA - rowsum(dA .* A))
      const Eigen::VectorXd inner = da.cwiseProduct(a).rowwise().sum();
      Matrix ds = a.cwiseProduct(da.colwise() - inner) * scale;
      dq.middleCols(h * dk, dk).noalias() = ds * cache.k.middleCols(h * dk, dk);
      dk_all.middleCols(h * dk, dk).noalias() = ds.transpose() * cache.q.middleCols(h * dk, dk);
    }
    Matrix dx = query.backward(x, dq);
    dx += key.backward(x, dk_all);
    dx += value.backward(x, dv);
    return dx;
  }

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    query.for_each_param(prefix + ".query", f);
    key.for_each_param(prefix + ".key", f);
    value.for_each_param(prefix + ".value", f);
    output.for_each_param(prefix + ".output", f);
  }
  template <class F>
  void for_each_param(const std::string& prefix, F&& f) const {
    query.for_each_param(prefix + ".query", f);
    key.for_each_param(prefix + ".key", f);
    value.for_each_param(prefix + ".value", f);
    output.for_each_param(prefix + ".output", f);
  }
};

struct FeedForward {
  Linear up, down;

  struct Cache {
    Matrix pre;
    Matrix act;
  };

  FeedForward() = default;
  FeedForward(int dim, int hidden) : up(dim, hidden), down(hidden, dim) {}

  void init(Rng& rng) {
    up.init(rng);
    down.init(rng);
  }

  Matrix forward(const Matrix& x, Cache& cache) const {
    cache.pre = up.forward(x);
    cache.act = gelu(cache.pre);
    return down.forward(cache.act);
  }

  Matrix backward(const Matrix& x, const Cache& cache, const Matrix& dy) {
    const Matrix dact = down.backward(cache.act, dy);
    return up.backward(x, gelu_backward(cache.pre, dact));
  }

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    up.for_each_param(prefix + ".up", f);
    down.for_each_param(prefix + ".down", f);
  }
  template <class F>
  void for_each_param(const std::string& prefix, F&& f) const {
    up.for_each_param(prefix + ".up", f);
    down.for_each_param(prefix + ".down", f);
  }
};

/// Pre-norm residual block: h = x + Attn(LN(x)); y = h + FFN(LN(h)).
struct TransformerLayer {
  LayerNorm norm1;
  MultiHeadAttention attention;
  LayerNorm norm2;
  FeedForward ffn;

  struct Cache {
    Matrix x;
    LayerNorm::Cache n1;
    Matrix a_in;
    MultiHeadAttention::Cache attn;
    Matrix h;
    LayerNorm::Cache n2;
    Matrix f_in;
    FeedForward::Cache ff;
  };

  TransformerLayer() = default;
  TransformerLayer(int dim, int heads, int ffn_dim)
      : norm1(dim), attention(dim, heads), norm2(dim), ffn(dim, ffn_dim) {}

  void init(Rng& rng) {
    attention.init(rng);
    ffn.init(rng);
  }

  Matrix forward(const Matrix& x, const std::vector<char>& key_valid, Cache& c) const {
    c.x = x;
    c.a_in = norm1.forward(x, c.n1);
    c.h = x + attention.forward(c.a_in, key_valid, c.attn);
    c.f_in = norm2.forward(c.h, c.n2);
    return c.h + ffn.forward(c.f_in, c.ff);
  }

  Matrix backward(const Cache& c, const Matrix& dy) {
    Matrix dh = dy + norm2.backward(c.n2, ffn.backward(c.f_in, c.ff, dy));
    return dh + norm1.backward(c.n1, attention.backward(c.a_in, c.attn, dh));
  }

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    norm1.for_each_param(prefix + ".norm1", f);
    attention.for_each_param(prefix + ".attention", f);
    norm2.for_each_param(prefix + ".norm2", f);
    ffn.for_each_param(prefix + ".ffn", f);
  }
  template <class F>
  void for_each_param(const std::string& prefix, F&& f) const {
    norm1.for_each_param(prefix + ".norm1", f);
    attention.for_each_param(prefix + ".attention", f);
    norm2.for_each_param(prefix + ".norm2", f);
    ffn.for_each_param(prefix + ".ffn", f);
  }
};

/// Stack of pre-norm layers followed by a final LayerNorm.
struct TransformerStack {
  std::vector<TransformerLayer> layers;
  LayerNorm final_norm;

  struct Cache {
    std::vector<TransformerLayer::Cache> layers;
    LayerNorm::Cache final_norm;
  };

  TransformerStack() = default;
  TransformerStack(int depth, int dim, int heads, int ffn_dim) : final_norm(dim) {
    layers.reserve(depth);
    for (int i = 0; i < depth; ++i) layers.emplace_back(dim, heads, ffn_dim);
  }

  void init(Rng& rng) {
    for (auto& l : layers) l.init(rng);
  }

  Matrix forward(const Matrix& x, const std::vector<char>& key_valid, Cache& c) const {
    c.layers.resize(layers.size());
    Matrix h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) h = layers[i].forward(h, key_valid, c.layers[i]);
    return final_norm.forward(h, c.final_norm);
  }

  Matrix backward(const Cache& c, const Matrix& dy) {
    Matrix g = final_norm.backward(c.final_norm, dy);
    for (std::size_t i = layers.size(); i-- > 0;) g = layers[i].backward(c.layers[i], g);
    return g;
  }

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].for_each_param(prefix + ".layer" + std::to_string(i), f);
    }
    final_norm.for_each_param(prefix + ".final_norm", f);
  }
  template <class F>
  void for_each_param(const std::string& prefix, F&& f) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].for_each_param(prefix + ".layer" + std::to_string(i), f);
    }
    final_norm.for_each_param(prefix + ".final_norm", f);
  }
};

}  // namespace psrp::nn
