#include <catch_amalgamated.hpp>

#include <functional>

#include "psrp/nn.hpp"

using namespace psrp;
using namespace psrp::nn;
using Catch::Approx;

namespace {

template <class M>
struct Rooted {
  M& m;
  template <class F>
  void for_each_param(F&& f) { m.for_each_param("m", f); }
  template <class F>
  void for_each_param(F&& f) const { std::as_const(m).for_each_param("m", f); }
};

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix x(r, c);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  return x;
}

double rel(const Matrix& a, const Matrix& b) {
  const double s = std::max(a.norm(), b.norm());
  return s == 0 ? 0 : (a - b).norm() / s;
}

/// Checks dL/dx and every parameter gradient of L = <G, forward(x)> against
/// central differences.
template <class M>
void check_module(M& module, const Matrix& x0, const std::function<Matrix(const Matrix&)>& forward,
                  const std::function<Matrix(const Matrix&, const Matrix&)>& backward, Rng& rng) {
  Rooted<M> root{module};
  const Matrix y = forward(x0);
  const Matrix g = random_matrix(y.rows(), y.cols(), rng);
  const auto loss = [&](const Matrix& x) { return (g.array() * forward(x).array()).sum(); };
  const double h = 1e-6;

  zero_grad(root);
  const Matrix dx = backward(x0, g);
  Matrix dx_num(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Matrix up = x0, down = x0;
    up.data()[i] += h;
    down.data()[i] -= h;
    dx_num.data()[i] = (loss(up) - loss(down)) / (2 * h);
  }
  CHECK(rel(dx, dx_num) < 1e-6);

  const auto analytic = flatten_grads(root);
  std::vector<double> numeric;
  root.for_each_param([&](const std::string&, Param& p) {
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      double& v = p.value.data()[i];
      const double saved = v;
      v = saved + h;
      const double up = loss(x0);
      v = saved - h;
      const double down = loss(x0);
      v = saved;
      numeric.push_back((up - down) / (2 * h));
    }
  });
  const Eigen::Map<const Eigen::VectorXd> a(analytic.data(), static_cast<Eigen::Index>(analytic.size()));
  const Eigen::Map<const Eigen::VectorXd> n(numeric.data(), static_cast<Eigen::Index>(numeric.size()));
  CHECK(rel(a, n) < 1e-6);
}

}  // namespace

TEST_CASE("Linear forward and gradients") {
  Rng rng(1);
  Linear lin(3, 2);
  lin.init(rng);
  Matrix x(1, 3);
  x << 1, 2, 3;
  const Matrix y = lin.forward(x);
  CHECK(y(0, 0) == Approx(lin.weight.value.col(0).dot(x.row(0).transpose()) + lin.bias.value(0, 0)));
  CHECK(parameter_count(Rooted<Linear>{lin}) == 3 * 2 + 2);

  check_module(
      lin, random_matrix(4, 3, rng), [&](const Matrix& v) { return lin.forward(v); },
      [&](const Matrix& v, const Matrix& g) { return lin.backward(v, g); }, rng);
}

TEST_CASE("LayerNorm normalizes rows and has correct gradients") {
  Rng rng(2);
  LayerNorm ln(5);
  LayerNorm::Cache cache;
  const Matrix x = random_matrix(3, 5, rng) * 4.0;
  const Matrix y = ln.forward(x, cache);
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(y.row(i).mean() == Approx(0.0).margin(1e-12));
    CHECK(y.row(i).squaredNorm() / 5 == Approx(1.0).epsilon(1e-3));
  }
  ln.gamma.init_uniform(1.0, rng);
  ln.beta.init_uniform(1.0, rng);
  check_module(
      ln, x,
      [&](const Matrix& v) {
        LayerNorm::Cache c;
        return ln.forward(v, c);
      },
      [&](const Matrix& v, const Matrix& g) {
        LayerNorm::Cache c;
        ln.forward(v, c);
        return ln.backward(c, g);
      },
      rng);
}

TEST_CASE("gelu") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(10.0) == Approx(10.0));
  CHECK(gelu(-10.0) == Approx(0.0).margin(1e-12));
  for (double x : {-2.0, -0.5, 0.3, 1.7}) {
    CHECK(gelu_grad(x) == Approx((gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("FeedForward gradients") {
  Rng rng(3);
  FeedForward ff(4, 7);
  ff.init(rng);
  check_module(
      ff, random_matrix(3, 4, rng),
      [&](const Matrix& v) {
        FeedForward::Cache c;
        return ff.forward(v, c);
      },
      [&](const Matrix& v, const Matrix& g) {
        FeedForward::Cache c;
        ff.forward(v, c);
        return ff.backward(v, c, g);
      },
      rng);
}

TEST_CASE("MultiHeadAttention") {
  Rng rng(4);
  MultiHeadAttention mha(6, 3);
  mha.init(rng);
  const std::vector<char> valid{1, 1, 0, 1, 0};
  const Matrix x = random_matrix(5, 6, rng);

  SECTION("attention rows are distributions over valid keys") {
    MultiHeadAttention::Cache c;
    mha.forward(x, valid, c);
    for (const auto& a : c.probs) {
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        CHECK(a.row(i).sum() == Approx(1.0));
        CHECK(a(i, 2) == 0.0);
        CHECK(a(i, 4) == 0.0);
      }
    }
  }
  SECTION("masked keys do not influence any output") {
    MultiHeadAttention::Cache c1, c2;
    Matrix x2 = x;
    x2.row(2).setConstant(9.0);
    x2.row(4).setConstant(-3.0);
    const Matrix y1 = mha.forward(x, valid, c1);
    const Matrix y2 = mha.forward(x2, valid, c2);
    for (Eigen::Index i : {0, 1, 3}) CHECK(rel(y1.row(i), y2.row(i)) < 1e-14);
  }
  SECTION("gradients") {
    check_module(
        mha, x,
        [&](const Matrix& v) {
          MultiHeadAttention::Cache c;
          return mha.forward(v, valid, c);
        },
        [&](const Matrix& v, const Matrix& g) {
          MultiHeadAttention::Cache c;
          mha.forward(v, valid, c);
          return mha.backward(v, c, g);
        },
        rng);
  }
}

TEST_CASE("TransformerStack gradients and helpers") {
  Rng rng(5);
  TransformerStack stack(2, 4, 2, 8);
  stack.init(rng);
  const std::vector<char> valid{1, 1, 1, 0};
  check_module(
      stack, random_matrix(4, 4, rng),
      [&](const Matrix& v) {
        TransformerStack::Cache c;
        return stack.forward(v, valid, c);
      },
      [&](const Matrix& v, const Matrix& g) {
        TransformerStack::Cache c;
        stack.forward(v, valid, c);
        return stack.backward(c, g);
      },
      rng);

  Rooted<TransformerStack> root{stack};
  const auto values = flatten_values(root);
  CHECK(values.size() == parameter_count(root));
  std::vector<double> zeros(values.size(), 0.0);
  assign_values(root, zeros);
  CHECK(squared_norm(root) == 0.0);
  CHECK(all_finite(root));
  assign_values(root, values);
  CHECK(flatten_values(root) == values);
  CHECK_THROWS_AS(assign_values(root, std::vector<double>(3)), DimensionError);

  const auto shapes = parameter_shapes(root);
  CHECK(shapes.front().name == "m.layer0.norm1.gamma");
  CHECK(shapes.back().name == "m.final_norm.beta");
}
