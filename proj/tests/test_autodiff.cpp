#include "gradcheck.hpp"
#include "priorseg/autodiff.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace priorseg::ad;

namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(r, c);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = nd(rng);
  return m;
}

Var dense(Tape& t, ParameterSet& ps, int layer, Var x) {
  const std::string p = "layer" + std::to_string(layer);
  return matmul(x, t.param(ps.at(p + ".weight"))) + t.param(ps.at(p + ".bias"));
}

}  // namespace

TEST_CASE("forward values") {
  Tape t;
  CHECK(sigmoid(t.constant(Matrix::Zero(1, 1))).scalar() == doctest::Approx(0.5));
  Matrix v(1, 3);
  v << 1, 2, 3;
  CHECK(mean(t.constant(v)).scalar() == doctest::Approx(2.0));
  Matrix a(1, 2), b(2, 1);
  a << 1, 2;
  b << 3, 4;
  CHECK(matmul(t.constant(a), t.constant(b)).scalar() == doctest::Approx(11.0));
}

TEST_CASE("shape errors name the primitive") {
  Tape t;
  Var a = t.constant(Matrix::Zero(2, 3));
  Var b = t.constant(Matrix::Zero(2, 3));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_WITH(matmul(a, b), doctest::Contains("matmul"));
  CHECK_THROWS_AS(t.backward(a), ShapeError);
}

TEST_CASE("scalar gradients") {
  {
    Tape t;
    Var x = t.variable(Matrix::Constant(1, 1, 3.0));
    t.backward(square(x));
    CHECK(t.grad(x)(0, 0) == doctest::Approx(6.0));
  }
  {
    Tape t;
    Var x = t.variable(Matrix::Zero(1, 1));
    t.backward(sigmoid(x));
    CHECK(t.grad(x)(0, 0) == doctest::Approx(0.25));
  }
}

TEST_CASE("two-layer MLP matches finite differences") {
  std::mt19937_64 rng(11);
  const std::vector<int> sizes{5, 7, 3};
  ParameterSet ps = initialize_params(sizes, 3);
  const Matrix x = random_matrix(4, 5, rng);
  const Matrix target = random_matrix(4, 3, rng);
  auto loss = [&](Tape& t) {
    Var h = tanh(dense(t, ps, 0, t.constant(x)));
    Var y = dense(t, ps, 1, h);
    return mean(square(y - t.constant(target)));
  };
  CHECK(testing::gradient_error(ps, loss) < 1e-6);
}

TEST_CASE("every primitive passes a finite-difference check") {
  std::mt19937_64 rng(5);
  ParameterSet ps;
  ps.add("a", random_matrix(4, 3, rng));
  ps.add("b", random_matrix(1, 3, rng));
  ps.add("c", random_matrix(4, 1, rng));
  const std::vector<int> idx{3, 0, 0, 2, 1};
  const std::vector<int> seg{0, 2, 2, 1};
  const std::vector<std::vector<int>> stack{{1, 0, 3}, {2, 2, 0}};
  auto loss = [&](Tape& t) {
    Var a = t.param(ps.at("a"));
    Var b = t.param(ps.at("b"));
    Var c = t.param(ps.at("c"));
    std::vector<Var> parts;
    parts.push_back(sum(mul(a, b)));
    parts.push_back(sum(mul(a, c)));
    parts.push_back(mean(sigmoid(a) + tanh(a) - softplus(a)));
    parts.push_back(sum(exp(a * 0.3)));
    parts.push_back(sum(log(add_scalar(square(a), 1.0))));
    parts.push_back(sum(sqrt(add_scalar(square(a), 0.5))));
    parts.push_back(sum(relu(a + b)));
    parts.push_back(sum(clamp(a, -0.5, 0.5)));
    parts.push_back(sum(square(mean(a, 0))) + sum(square(sum(a, 1))));
    parts.push_back(sum(square(reshape(a, 3, 4))) * 0.1);
    parts.push_back(sum(square(gather_rows(a, idx))));
    parts.push_back(sum(square(gather_stack(a, stack))) * 0.2);
    parts.push_back(sum(square(segment_mean(a, seg, 3))));
    parts.push_back(sum(square(segment_sum(a, seg, 3))) * 0.1);
    std::vector<Var> cols{slice_cols(a, 1, 2), c};
    parts.push_back(sum(square(concat_cols(cols))));
    std::vector<Var> rows{a, b};
    parts.push_back(sum(square(matmul(concat_rows(rows), reshape(b, 3, 1)))));
    Var total = parts[0];
    for (std::size_t k = 1; k < parts.size(); ++k) total = total + parts[k];
    return total;
  };
  CHECK(testing::gradient_error(ps, loss) < 1e-6);
}

TEST_CASE("parameters that are not trainable receive no gradient") {
  ParameterSet ps;
  ps.add("w", Matrix::Constant(2, 2, 1.0));
  Tape t;
  Var x = t.variable(Matrix::Ones(1, 2));
  t.backward(sum(matmul(x, t.param(ps.at("w"), false))));
  CHECK(ps.at("w").grad.isZero());
  CHECK(t.grad(x).isApprox(Matrix::Constant(1, 2, 2.0)));
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterSet ps;
    ps.add("w", Matrix::Constant(2, 2, 0.7));
    adam_step(ps, 1e-3, 0.9, 0.999, 1e-8);
    CHECK(ps.at("w").value.isApprox(Matrix::Constant(2, 2, 0.7)));
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    ParameterSet ps;
    ps.add("w", Matrix::Zero(1, 2));
    ps.at("w").grad << 1.0, -4.0;
    adam_step(ps, 1e-3, 0.9, 0.999, 1e-8);
    CHECK(ps.at("w").value(0, 0) == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(ps.at("w").value(0, 1) == doctest::Approx(1e-3).epsilon(1e-6));
  }
  SUBCASE("constant gradient keeps descending") {
    ParameterSet ps;
    ps.add("w", Matrix::Zero(1, 1));
    double prev = 0.0;
    for (int i = 0; i < 50; ++i) {
      ps.at("w").grad.setConstant(0.3);
      adam_step(ps, 1e-2, 0.9, 0.999, 1e-8);
      CHECK(ps.at("w").value(0, 0) < prev);
      prev = ps.at("w").value(0, 0);
    }
  }
  SUBCASE("non-finite gradients are rejected") {
    ParameterSet ps;
    ps.add("bad", Matrix::Zero(1, 1));
    ps.at("bad").grad(0, 0) = std::nan("");
    CHECK_THROWS_WITH(adam_step(ps, 1e-3, 0.9, 0.999, 1e-8), doctest::Contains("bad"));
  }
}

TEST_CASE("initialisation") {
  const std::vector<int> sizes{100, 200};
  ParameterSet a = initialize_params(sizes, 42);
  ParameterSet b = initialize_params(sizes, 42);
  ParameterSet c = initialize_params(sizes, 43);
  CHECK(a.at("layer0.weight").value == b.at("layer0.weight").value);
  CHECK(a.at("layer0.weight").value != c.at("layer0.weight").value);
  CHECK(a.at("layer0.bias").value.isZero());
  // He-uniform: variance of U(-s, s) is s^2 / 3 = 2 / fan_in.
  const Matrix& w = a.at("layer0.weight").value;
  const double m = w.mean();
  const double var = (w.array() - m).square().sum() / static_cast<double>(w.size() - 1);
  CHECK(w.size() >= 10000);
  CHECK(std::abs(var / (2.0 / 100.0) - 1.0) < 0.2);
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(9);
  ParameterSet ps;
  ps.add("x", random_matrix(3, 5, rng));
  ps.add("y", random_matrix(1, 4, rng));
  ps.at("x").grad.setConstant(0.1);
  adam_step(ps, 1e-2, 0.9, 0.999, 1e-8);
  Checkpoint ck;
  export_params(ps, "net/", ck, true);
  const auto dir = std::filesystem::temp_directory_path() / "priorseg_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string stem = (dir / "c").string();
  write_checkpoint(stem, ck);
  const Checkpoint back = read_checkpoint(stem);

  ParameterSet other;
  other.add("x", Matrix::Zero(3, 5));
  other.add("y", Matrix::Zero(1, 4));
  import_params(other, "net/", back);
  CHECK(other.at("x").value == ps.at("x").value);
  CHECK(other.at("x").adam_v == ps.at("x").adam_v);
  CHECK(other.step_count() == 1);

  ParameterSet wrong;
  wrong.add("x", Matrix::Zero(5, 3));
  wrong.add("y", Matrix::Zero(1, 4));
  CHECK_THROWS_AS(import_params(wrong, "net/", back), ShapeError);
  std::filesystem::remove_all(dir);
}
