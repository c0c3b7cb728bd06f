#include <doctest.h>

#include <cmath>

#include "metaco/errors.hpp"
#include "metaco/net.hpp"
#include "metaco/reinforce.hpp"
#include "checks.hpp"

using namespace metaco;

namespace {

Theta random_theta(const TspInstance& t, Rng& rng, double scale = 1.0) { return testing::random_theta(t, rng, scale); }
Theta random_theta(const MisInstance& g, Rng& rng, double scale = 1.0) { return testing::random_theta(g, rng, scale); }

}  // namespace

TEST_CASE("rollout degenerate instances") {
  Rng rng(1);
  auto tri = sparsify_knn({{0.1, 0.1}, {0.9, 0.2}, {0.5, 0.8}}, 2, "tri");
  const auto theta = random_theta(tri, rng);
  const auto b = rollout(theta, tri, 32, 1.0, rng);
  CHECK(b.size() == 32);
  for (double c : b.costs) CHECK(c == doctest::Approx(b.costs[0]).epsilon(1e-12));
  const auto g = reinforce_grad_theta(b, theta, tri);
  for (double x : g) CHECK(x == 0.0);

  MisInstance empty("e", 10, {});
  const auto mb = rollout(random_theta(empty, rng), empty, 16, 1.0, rng);
  for (double c : mb.costs) CHECK(c == -10.0);
  CHECK(mb.instance_id == "e");
  CHECK_THROWS_AS(rollout(theta, tri, 0, 1.0, rng), ParameterError);
}

TEST_CASE("rollout mean cost is unbiased") {
  Rng rng(2);
  auto t = testing::random_tsp(6, rng);
  const auto theta = zero_theta(t);
  const double expected = exact_expected_cost(theta, t);
  const auto b = rollout(theta, t, 100000, 1.0, rng);
  const double mean = b.mean_cost();
  double var = 0.0;
  for (double c : b.costs) var += (c - mean) * (c - mean);
  var /= static_cast<double>(b.size() - 1);
  CHECK(std::abs(mean - expected) <= 3.0 * std::sqrt(var / static_cast<double>(b.size())));
}

TEST_CASE("rollout is reproducible") {
  Rng a(3), b(3);
  auto t = testing::random_tsp(12, a, 5);
  (void)testing::random_tsp(12, b, 5);
  const auto theta = zero_theta(t);
  const auto x = rollout(theta, t, 20, 1.0, a);
  const auto y = rollout(theta, t, 20, 1.0, b);
  CHECK(x.solutions == y.solutions);
  CHECK(x.logprobs == y.logprobs);
}

TEST_CASE("estimator edge cases") {
  Rng rng(4);
  auto t = testing::random_tsp(5, rng);
  const auto theta = random_theta(t, rng);
  const auto one = rollout(theta, t, 1, 1.0, rng);
  CHECK_THROWS_AS(reinforce_grad_theta(one, theta, t), EstimatorError);
  auto b = rollout(theta, t, 8, 1.0, rng);
  for (auto& c : b.costs) c = 2.5;
  for (double x : reinforce_grad_theta(b, theta, t)) CHECK(x == 0.0);
  b.costs[0] = NAN;
  CHECK_THROWS_AS(reinforce_grad_theta(b, theta, t), EstimatorError);
  auto g = testing::random_graph(6, 0.4, rng);
  const auto mb = rollout(random_theta(g, rng), g, 4, 1.0, rng);
  CHECK_THROWS_AS(reinforce_grad_theta(mb, theta, t), ShapeError);
}

TEST_CASE("baseline invariance") {
  Rng rng(5);
  auto t = testing::random_tsp(6, rng);
  const auto theta = random_theta(t, rng);
  auto b = rollout(theta, t, 16, 1.0, rng);
  // dyadic costs: every operation is exact
  for (std::size_t k = 0; k < b.size(); ++k) b.costs[k] = static_cast<double>(k % 5) * 0.125;
  for (bool standardize : {false, true}) {
    const auto g0 = reinforce_grad_theta(b, theta, t, EstimatorOptions{standardize});
    auto shifted = b;
    for (auto& c : shifted.costs) c += 1024.0;
    CHECK(reinforce_grad_theta(shifted, theta, t, EstimatorOptions{standardize}) == g0);
  }
  // general costs: equal up to rounding of the mean
  auto raw = rollout(theta, t, 16, 1.0, rng);
  const auto g0 = reinforce_grad_theta(raw, theta, t, EstimatorOptions{false});
  for (auto& c : raw.costs) c += 3.7;
  const auto g1 = reinforce_grad_theta(raw, theta, t, EstimatorOptions{false});
  for (std::size_t j = 0; j < g0.size(); ++j) CHECK(std::abs(g0[j] - g1[j]) <= 1e-12);
}

TEST_CASE("exact gradient matches finite differences of the exact expected cost") {
  Rng rng(6);
  for (int k : {4, 2}) {
    auto t = testing::random_tsp(5, rng, k);
    const auto theta = random_theta(t, rng);
    const auto g = exact_grad_theta(theta, t);
    auto f = [&](const std::vector<double>& x) { return exact_expected_cost(Theta{Problem::Tsp, x}, t); };
    for (std::size_t j = 0; j < theta.size(); ++j)
      CHECK(std::abs(g[j] - testing::central_diff(f, theta.values, j, 1e-5)) <= 1e-8);
  }
  auto gr = testing::random_graph(9, 0.3, rng);
  const auto tm = random_theta(gr, rng);
  const auto gm = exact_grad_theta(tm, gr);
  auto fm = [&](const std::vector<double>& x) { return exact_expected_cost(Theta{Problem::Mis, x}, gr); };
  for (std::size_t j = 0; j < tm.size(); ++j)
    CHECK(std::abs(gm[j] - testing::central_diff(fm, tm.values, j, 1e-5)) <= 1e-8);
}

TEST_CASE("estimator is unbiased") {
  Rng rng(7);
  auto t = testing::random_tsp(5, rng);
  CHECK(testing::unbiasedness(random_theta(t, rng), t, 20000, 8, rng) <= 1.0);
  auto g = testing::random_graph(8, 0.3, rng);
  CHECK(testing::unbiasedness(random_theta(g, rng), g, 20000, 8, rng) <= 1.0);
}

TEST_CASE("mean baseline reduces variance") {
  Rng rng(8);
  auto t = testing::random_tsp(6, rng);
  const auto theta = random_theta(t, rng);
  const int trials = 100, k = 8;
  std::vector<std::vector<double>> with, without;
  for (int i = 0; i < trials; ++i) {
    const auto b = rollout(theta, t, k, 1.0, rng);
    with.push_back(reinforce_grad_theta(b, theta, t, EstimatorOptions{false}));
    std::vector<double> g(theta.size(), 0.0);
    for (std::size_t s = 0; s < b.size(); ++s)
      tour_logprob(theta, t, b.solutions[s], 1.0, g, b.costs[s] / static_cast<double>(k));
    without.push_back(std::move(g));
  }
  auto spread = [&](const std::vector<std::vector<double>>& gs) {
    std::vector<double> mean(theta.size(), 0.0);
    for (const auto& g : gs)
      for (std::size_t j = 0; j < g.size(); ++j) mean[j] += g[j] / trials;
    double v = 0.0;
    for (const auto& g : gs)
      for (std::size_t j = 0; j < g.size(); ++j) v += (g[j] - mean[j]) * (g[j] - mean[j]);
    return v / trials;
  };
  CHECK(spread(with) <= spread(without));
}

TEST_CASE("grad_params composes with the network") {
  Rng rng(9);
  auto t = testing::random_tsp(5, rng);
  const ArchConfig tiny{Problem::Tsp, 4, 1, 3, 1e-5};
  const auto p = init_params(tiny, 9);

  auto r = tsp_forward(p, t);
  auto b = rollout(r.theta, t, 8, 1.0, rng);
  for (auto& c : b.costs) c = 1.0;
  CHECK(grad_params(b, r.theta, t, r.trace, ScopeSet::all()).squared_norm() == 0.0);

  auto r2 = tsp_forward(p, t);
  const auto b2 = rollout(r2.theta, t, 8, 1.0, rng);
  const auto scoped = grad_params(b2, r2.theta, t, r2.trace, Scope::GnnOut | Scope::Mlp);
  for (const auto& tn : scoped.tensors) CHECK(tn.scope != Scope::Gnn);
  auto r3 = tsp_forward(p, t);
  const auto direct = backward(r3.trace, reinforce_grad_theta(b2, r2.theta, t), Scope::GnnOut | Scope::Mlp);
  REQUIRE(direct.tensors.size() == scoped.tensors.size());
  for (std::size_t i = 0; i < direct.tensors.size(); ++i) CHECK(direct.tensors[i].value == scoped.tensors[i].value);

  // exact chain: d/dPhi of the enumerated expected cost
  auto r4 = tsp_forward(p, t);
  const auto grads = backward(r4.trace, exact_grad_theta(r4.theta, t), Scope::Gnn | Scope::Mlp);
  auto loss = [&](const NetParams& q) { return exact_expected_cost(tsp_forward(q, t).theta, t); };
  double worst = 0.0;
  for (int probe = 0; probe < 40; ++probe) {
    const auto& tn = p.tensors[rng.below(p.tensors.size())];
    const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(tn.value.size())));
    NetParams up = p, down = p;
    const double h = 1e-5;
    up.at(tn.name).data()[i] += h;
    down.at(tn.name).data()[i] -= h;
    const double numeric = (loss(up) - loss(down)) / (2.0 * h);
    worst = std::max(worst, testing::rel_error(grads.find(tn.name)->value.data()[i], numeric, 1e-6));
  }
  CHECK(worst <= 2e-3);
}
