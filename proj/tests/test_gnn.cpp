#include "gradcheck.hpp"
#include "priorseg/gnn.hpp"

#include <doctest.h>

#include <random>

using namespace priorseg;
using ad::Matrix;

namespace {

Matrix random_matrix(ad::Index r, ad::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(r, c);
  for (ad::Index k = 0; k < m.size(); ++k) m.data()[k] = nd(rng);
  return m;
}

// Plain Eigen evaluation of a dense stack stored under prefix.
Eigen::RowVectorXd dense_eval(const ad::ParameterSet& ps, const std::string& prefix, int layers,
                              Eigen::RowVectorXd x) {
  for (int k = 0; k < layers; ++k) {
    const std::string s = prefix + "layer" + std::to_string(k);
    x = x * ps.at(s + ".weight").value + ps.at(s + ".bias").value;
    if (k + 1 < layers) x = x.cwiseMax(0.0);
  }
  return x;
}

Eigen::RowVectorXd cat(std::initializer_list<Eigen::RowVectorXd> parts) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.size();
  Eigen::RowVectorXd out(n);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

// Dense per-node oracle for both convolutions.
Matrix conv_oracle(const gnn::GraphTopology& g, const Matrix& f, const Matrix* actions, const ad::ParameterSet& ps) {
  Matrix out(g.num_nodes, ps.at("gamma.layer1.bias").value.cols());
  const Eigen::Index msg_dim = ps.at("phi.layer1.bias").value.cols();
  for (int i = 0; i < g.num_nodes; ++i) {
    Eigen::RowVectorXd agg = Eigen::RowVectorXd::Zero(msg_dim);
    int count = 0;
    for (int e = 0; e < g.num_edges(); ++e) {
      auto [a, b] = g.edges[static_cast<std::size_t>(e)];
      if (a != i && b != i) continue;
      const int j = a == i ? b : a;
      Eigen::RowVectorXd in = cat({f.row(i), f.row(j)});
      if (actions) in = cat({in, Eigen::RowVectorXd::Constant(1, (*actions)(e, 0))});
      agg += dense_eval(ps, "phi.", 2, in);
      ++count;
    }
    if (count) agg /= count;
    out.row(i) = dense_eval(ps, "gamma.", 2, cat({f.row(i), agg}));
  }
  return out;
}

struct Nets {
  ad::ParameterSet ps;
  gnn::Mlp gamma, phi, head;
  Nets(int fdim, int msg, int out, bool with_action) {
    phi = gnn::Mlp::create(ps, "phi.", {2 * fdim + (with_action ? 1 : 0), 6, msg}, 1);
    gamma = gnn::Mlp::create(ps, "gamma.", {fdim + msg, 6, out}, 2);
    head = gnn::Mlp::create(ps, "head.", {2 * out, 5, 2}, 3);
  }
};

}  // namespace

TEST_CASE("topology validation") {
  CHECK_THROWS(gnn::GraphTopology::from_edges(3, {{0, 0}}));
  CHECK_THROWS(gnn::GraphTopology::from_edges(3, {{0, 1}, {1, 0}}));
  CHECK_THROWS(gnn::GraphTopology::from_edges(3, {{0, 3}}));
  auto g = gnn::GraphTopology::from_edges(3, {{2, 1}});
  CHECK(g.edges.front() == std::pair{1, 2});
}

TEST_CASE("actor convolution") {
  Nets n(3, 4, 5, false);
  SUBCASE("isolated node aggregates a zero message") {
    const auto g = gnn::GraphTopology::from_edges(1, {});
    const Matrix f = random_matrix(1, 3, 4);
    ad::Tape t;
    const Matrix out = gnn::actor_conv(g, t.constant(f), n.gamma, n.phi).value();
    const Eigen::RowVectorXd expect = dense_eval(n.ps, "gamma.", 2, cat({f.row(0), Eigen::RowVectorXd::Zero(4)}));
    CHECK(out.row(0).isApprox(expect, 1e-12));
  }
  SUBCASE("identical nodes give identical outputs") {
    const auto g = gnn::GraphTopology::from_edges(2, {{0, 1}});
    Matrix f(2, 3);
    f.row(0) << 0.3, -1.0, 2.0;
    f.row(1) = f.row(0);
    ad::Tape t;
    const Matrix out = gnn::actor_conv(g, t.constant(f), n.gamma, n.phi).value();
    CHECK(out.row(0) == out.row(1));
  }
  SUBCASE("path graph matches the dense oracle") {
    const auto g = gnn::GraphTopology::from_edges(3, {{0, 1}, {1, 2}});
    const Matrix f = random_matrix(3, 3, 5);
    ad::Tape t;
    CHECK(gnn::actor_conv(g, t.constant(f), n.gamma, n.phi).value().isApprox(conv_oracle(g, f, nullptr, n.ps), 1e-12));
  }
  SUBCASE("gradients match finite differences") {
    const auto g = gnn::GraphTopology::from_edges(4, {{0, 1}, {1, 2}, {0, 2}, {2, 3}});
    const Matrix f = random_matrix(4, 3, 6);
    auto loss = [&](ad::Tape& t) {
      return ad::sum(ad::square(gnn::edge_readout(gnn::actor_conv(g, t.constant(f), n.gamma, n.phi), g, n.head)));
    };
    CHECK(testing::gradient_error(n.ps, loss) < 1e-5);
  }
}

TEST_CASE("critic convolution") {
  Nets n(3, 4, 5, true);
  SUBCASE("isolated node") {
    const auto g = gnn::GraphTopology::from_edges(1, {});
    const Matrix f = random_matrix(1, 3, 7);
    ad::Tape t;
    const Matrix out = gnn::critic_conv(g, t.constant(f), t.constant(Matrix(0, 1)), n.gamma, n.phi).value();
    const Eigen::RowVectorXd expect = dense_eval(n.ps, "gamma.", 2, cat({f.row(0), Eigen::RowVectorXd::Zero(4)}));
    CHECK(out.row(0).isApprox(expect, 1e-12));
  }
  SUBCASE("triangle matches the dense oracle") {
    const auto g = gnn::GraphTopology::from_edges(3, {{0, 1}, {1, 2}, {0, 2}});
    const Matrix f = random_matrix(3, 3, 8);
    const Matrix a = random_matrix(3, 1, 9);
    ad::Tape t;
    CHECK(gnn::critic_conv(g, t.constant(f), t.constant(a), n.gamma, n.phi)
              .value()
              .isApprox(conv_oracle(g, f, &a, n.ps), 1e-12));
  }
  SUBCASE("zero actions equal the constant-channel reduction") {
    // phi sees a trailing 0 input, so dropping the last weight row gives an
    // actor-style phi with the same output.
    const auto g = gnn::GraphTopology::from_edges(3, {{0, 1}, {1, 2}});
    const Matrix f = random_matrix(3, 3, 10);
    ad::ParameterSet reduced;
    auto phi2 = gnn::Mlp::create(reduced, "phi.", {6, 6, 4}, 99);
    reduced.at("phi.layer0.weight").value = n.ps.at("phi.layer0.weight").value.topRows(6);
    reduced.at("phi.layer0.bias").value = n.ps.at("phi.layer0.bias").value;
    reduced.at("phi.layer1.weight").value = n.ps.at("phi.layer1.weight").value;
    reduced.at("phi.layer1.bias").value = n.ps.at("phi.layer1.bias").value;
    ad::Tape t;
    const Matrix c = gnn::critic_conv(g, t.constant(f), t.constant(Matrix::Zero(2, 1)), n.gamma, n.phi).value();
    const Matrix a = gnn::actor_conv(g, t.constant(f), n.gamma, phi2).value();
    CHECK(c.isApprox(a, 1e-12));
  }
  SUBCASE("action sensitivities match finite differences") {
    const auto g = gnn::GraphTopology::from_edges(3, {{0, 1}, {1, 2}, {0, 2}});
    const Matrix f = random_matrix(3, 3, 11);
    ad::ParameterSet acts;
    acts.add("a", random_matrix(3, 1, 12));
    auto loss = [&](ad::Tape& t) {
      return ad::sum(ad::square(gnn::critic_conv(g, t.constant(f), t.param(acts.at("a")), n.gamma, n.phi, false)));
    };
    CHECK(testing::gradient_error(acts, loss) < 1e-5);
  }
}

TEST_CASE("edge readout") {
  ad::ParameterSet ps;
  auto head = gnn::Mlp::create(ps, "head.", {4, 3, 2}, 4);
  SUBCASE("identical node features give identical rows") {
    const auto g = gnn::GraphTopology::from_edges(3, {{0, 1}, {1, 2}, {0, 2}});
    ad::Tape t;
    const Matrix out = gnn::edge_readout(t.constant(Matrix::Constant(3, 2, 0.4)), g, head).value();
    CHECK(out.row(0) == out.row(1));
    CHECK(out.row(1) == out.row(2));
  }
  SUBCASE("relabelling nodes and remapping edges keeps every edge row") {
    const Matrix f = random_matrix(4, 2, 13);
    const auto g = gnn::GraphTopology::from_edges(4, {{0, 1}, {2, 3}});
    // perm keeps the endpoint order of every edge.
    const int perm[4] = {2, 3, 0, 1};
    Matrix fp(4, 2);
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < 4; ++i) fp.row(perm[i]) = f.row(i);
    for (auto [a, b] : g.edges) edges.emplace_back(perm[a], perm[b]);
    const auto gp = gnn::GraphTopology::from_edges(4, edges);
    ad::Tape t;
    CHECK(gnn::edge_readout(t.constant(f), g, head).value() == gnn::edge_readout(t.constant(fp), gp, head).value());
  }
  SUBCASE("two-edge path matches direct evaluation") {
    const Matrix f = random_matrix(3, 2, 14);
    const auto g = gnn::GraphTopology::from_edges(3, {{0, 1}, {1, 2}});
    ad::Tape t;
    const Matrix out = gnn::edge_readout(t.constant(f), g, head).value();
    CHECK(out.row(0).isApprox(dense_eval(ps, "head.", 2, cat({f.row(0), f.row(1)})), 1e-12));
    CHECK(out.row(1).isApprox(dense_eval(ps, "head.", 2, cat({f.row(1), f.row(2)})), 1e-12));
  }
  SUBCASE("wrong head width is a shape error") {
    const auto g = gnn::GraphTopology::from_edges(2, {{0, 1}});
    ad::Tape t;
    CHECK_THROWS_AS(gnn::edge_readout(t.constant(Matrix::Zero(2, 3)), g, head), ad::ShapeError);
  }
}
