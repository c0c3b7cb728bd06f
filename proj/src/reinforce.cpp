#include "metaco/reinforce.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "metaco/errors.hpp"

namespace metaco {

double RolloutBatch::mean_cost() const noexcept {
  if (costs.empty()) return 0.0;
  return std::accumulate(costs.begin(), costs.end(), 0.0) / static_cast<double>(costs.size());
}

std::size_t RolloutBatch::best() const noexcept {
  std::size_t b = 0;
  for (std::size_t k = 1; k < costs.size(); ++k)
    if (costs[k] < costs[b]) b = k;
  return b;
}

namespace {

void require_samples(int samples) {
  if (samples < 1) throw ParameterError("need at least one sample");
}

/// Advantages scaled by 1/(K-1); standardized when requested.
std::vector<double> advantage_weights(const RolloutBatch& batch, const EstimatorOptions& opts) {
  const std::size_t k = batch.size();
  if (k < 2) throw EstimatorError("REINFORCE with a sample baseline needs K >= 2");
  for (double c : batch.costs)
    if (!std::isfinite(c)) throw EstimatorError("non-finite cost in rollout batch");
  const double mean = batch.mean_cost();
  std::vector<double> w(k, 0.0);
  // Costs equal up to summation order carry no signal.
  const auto [lo, hi] = std::minmax_element(batch.costs.begin(), batch.costs.end());
  if (*hi - *lo <= 1e-12 * std::max(1.0, std::abs(mean))) return w;
  for (std::size_t i = 0; i < k; ++i) w[i] = batch.costs[i] - mean;
  double scale = 1.0 / static_cast<double>(k - 1);
  if (opts.standardize) {
    double var = 0.0;
    for (double a : w) var += a * a;
    var /= static_cast<double>(k);
    scale /= std::sqrt(var) + 1e-8;
  }
  for (double& a : w) a *= scale;
  return w;
}

}  // namespace

RolloutBatch rollout(const Theta& theta, const TspInstance& inst, int samples, double tau, Rng& rng) {
  require_samples(samples);
  RolloutBatch b;
  b.problem = Problem::Tsp;
  b.instance_id = inst.id;
  b.tau = tau;
  const auto base = rng();
  for (int k = 0; k < samples; ++k) {
    Rng r(derive_seed(base, static_cast<std::uint64_t>(k)));
    auto s = sample_tour(theta, inst, r, tau);
    b.costs.push_back(s.tour.cost);
    b.logprobs.push_back(s.logprob);
    b.solutions.push_back(std::move(s.tour.perm));
  }
  return b;
}

RolloutBatch rollout(const Theta& theta, const MisInstance& inst, int samples, double tau, Rng& rng) {
  require_samples(samples);
  RolloutBatch b;
  b.problem = Problem::Mis;
  b.instance_id = inst.id;
  b.tau = tau;
  const auto base = rng();
  for (int k = 0; k < samples; ++k) {
    Rng r(derive_seed(base, static_cast<std::uint64_t>(k)));
    auto s = sample_mis(theta, inst, r, tau);
    b.costs.push_back(s.set.cost());
    b.logprobs.push_back(s.logprob);
    b.solutions.push_back(std::move(s.set.order));
  }
  return b;
}

std::vector<double> reinforce_grad_theta(const RolloutBatch& batch, const Theta& theta, const TspInstance& inst,
                                         EstimatorOptions opts) {
  if (batch.problem != Problem::Tsp) throw ShapeError("rollout batch is not a TSP batch");
  const auto w = advantage_weights(batch, opts);
  std::vector<double> grad(theta.size(), 0.0);
  for (std::size_t k = 0; k < batch.size(); ++k)
    if (w[k] != 0.0) tour_logprob(theta, inst, batch.solutions[k], batch.tau, grad, w[k]);
  return grad;
}

std::vector<double> reinforce_grad_theta(const RolloutBatch& batch, const Theta& theta, const MisInstance& inst,
                                         EstimatorOptions opts) {
  if (batch.problem != Problem::Mis) throw ShapeError("rollout batch is not a MIS batch");
  const auto w = advantage_weights(batch, opts);
  std::vector<double> grad(theta.size(), 0.0);
  for (std::size_t k = 0; k < batch.size(); ++k)
    if (w[k] != 0.0) mis_logprob(theta, inst, batch.solutions[k], batch.tau, grad, w[k]);
  return grad;
}

Gradients grad_params(const RolloutBatch& batch, const Theta& theta, const TspInstance& inst, ForwardTrace& trace,
                      ScopeSet scope, EstimatorOptions opts) {
  const auto g = reinforce_grad_theta(batch, theta, inst, opts);
  return backward(trace, g, scope);
}

Gradients grad_params(const RolloutBatch& batch, const Theta& theta, const MisInstance& inst, ForwardTrace& trace,
                      ScopeSet scope, EstimatorOptions opts) {
  const auto g = reinforce_grad_theta(batch, theta, inst, opts);
  return backward(trace, g, scope);
}

double exact_expected_cost(const Theta& theta, const TspInstance& inst) {
  double total = 0.0;
  for (const auto& [tour, prob] : enumerate_q(theta, inst)) total += prob * tour_cost(inst, tour);
  return total;
}

double exact_expected_cost(const Theta& theta, const MisInstance& inst) {
  double total = 0.0;
  for (const auto& [set, prob] : enumerate_q(theta, inst)) total -= prob * static_cast<double>(set.size());
  return total;
}

namespace {

/// Walks every (start, permutation) path carrying its probability and the
/// gradient of its log-probability.
struct TourGradWalker {
  const Theta& theta;
  const TspInstance& inst;
  int n;
  std::vector<double>& grad;
  std::vector<int> perm;
  std::vector<char> visited;

  void run(double prob, std::vector<double>& dlog) {
    if (static_cast<int>(perm.size()) == n) {
      double cost = 0.0;
      for (int i = 0; i < n; ++i) cost += inst.dist(perm[i], perm[(i + 1) % n]);
      const double w = prob * cost / n;
      for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += w * dlog[j];
      return;
    }
    const int cur = perm.back();
    std::vector<std::size_t> cand_edge;
    std::vector<int> cand;
    std::vector<double> probs;
    const std::size_t base = inst.first_edge(cur);
    const auto out = inst.out_edges(cur);
    for (std::size_t e = 0; e < out.size(); ++e) {
      if (visited[out[e].dst]) continue;
      cand_edge.push_back(base + e);
      cand.push_back(out[e].dst);
      probs.push_back(theta.values[base + e]);
    }
    const bool fallback = cand.empty();
    if (fallback) {
      for (int v = 0; v < n; ++v)
        if (!visited[v]) cand.push_back(v);
      probs.assign(cand.size(), 1.0 / static_cast<double>(cand.size()));
    } else {
      const double mx = *std::max_element(probs.begin(), probs.end());
      double s = 0.0;
      for (double& p : probs) s += (p = std::exp(p - mx));
      for (double& p : probs) p /= s;
    }
    for (std::size_t c = 0; c < cand.size(); ++c) {
      if (!fallback) {
        for (std::size_t o = 0; o < cand.size(); ++o) dlog[cand_edge[o]] -= probs[o];
        dlog[cand_edge[c]] += 1.0;
      }
      perm.push_back(cand[c]);
      visited[cand[c]] = 1;
      run(prob * probs[c], dlog);
      visited[cand[c]] = 0;
      perm.pop_back();
      if (!fallback) {
        for (std::size_t o = 0; o < cand.size(); ++o) dlog[cand_edge[o]] += probs[o];
        dlog[cand_edge[c]] -= 1.0;
      }
    }
  }
};

}  // namespace

std::vector<double> exact_grad_theta(const Theta& theta, const TspInstance& inst) {
  if (inst.n() > kMaxEnumTsp) throw SizeError("exact gradient supports TSP n <= " + std::to_string(kMaxEnumTsp));
  check_theta(theta, inst);
  std::vector<double> grad(theta.size(), 0.0);
  std::vector<double> dlog(theta.size(), 0.0);
  TourGradWalker w{theta, inst, inst.n(), grad, {}, std::vector<char>(static_cast<std::size_t>(inst.n()), 0)};
  for (int s = 0; s < inst.n(); ++s) {
    w.perm = {s};
    w.visited[s] = 1;
    w.run(1.0, dlog);
    w.visited[s] = 0;
  }
  return grad;
}

std::vector<double> exact_grad_theta(const Theta& theta, const MisInstance& inst) {
  const int n = inst.n;
  if (n > kMaxEnumMis) throw SizeError("exact gradient supports MIS n <= " + std::to_string(kMaxEnumMis));
  check_theta(theta, inst);
  const std::uint32_t full = (1u << n) - 1u;
  std::vector<std::uint32_t> nbr(static_cast<std::size_t>(n), 0);
  for (auto [u, v] : inst.edges) {
    nbr[u] |= 1u << v;
    nbr[v] |= 1u << u;
  }
  const std::size_t states = static_cast<std::size_t>(full) + 1;
  std::vector<double> reach(states, 0.0);
  std::vector<double> dreach(states * static_cast<std::size_t>(n), 0.0);  // d reach[S] / d theta
  reach[0] = 1.0;
  std::vector<double> grad(static_cast<std::size_t>(n), 0.0);
  std::vector<int> cand;
  std::vector<double> probs;
  for (std::uint32_t s = 0; s <= full; ++s) {
    if (reach[s] == 0.0) continue;
    const double* ds = &dreach[static_cast<std::size_t>(s) * n];
    std::uint32_t blocked = s;
    for (int v = 0; v < n; ++v)
      if (s >> v & 1u) blocked |= nbr[v];
    const std::uint32_t avail = full & ~blocked;
    if (avail == 0) {
      const double cost = -static_cast<double>(std::popcount(s));
      for (int j = 0; j < n; ++j) grad[j] += cost * ds[j];
      continue;
    }
    cand.clear();
    probs.clear();
    for (int v = 0; v < n; ++v)
      if (avail >> v & 1u) {
        cand.push_back(v);
        probs.push_back(theta.values[v]);
      }
    const double mx = *std::max_element(probs.begin(), probs.end());
    double sum = 0.0;
    for (double& p : probs) sum += (p = std::exp(p - mx));
    for (double& p : probs) p /= sum;
    for (std::size_t c = 0; c < cand.size(); ++c) {
      const std::uint32_t t = s | (1u << cand[c]);
      reach[t] += reach[s] * probs[c];
      double* dt = &dreach[static_cast<std::size_t>(t) * n];
      for (int j = 0; j < n; ++j) dt[j] += ds[j] * probs[c];
      // d p_c / d theta_j = p_c (delta_cj - p_j) over the available nodes
      for (std::size_t o = 0; o < cand.size(); ++o) dt[cand[o]] -= reach[s] * probs[c] * probs[o];
      dt[cand[c]] += reach[s] * probs[c];
    }
  }
  return grad;
}

}  // namespace metaco
