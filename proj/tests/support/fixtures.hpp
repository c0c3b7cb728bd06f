#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "metaco/solution_space.hpp"

namespace metaco::testing {

/// log q(target) summed over start nodes, with its gradient.
inline double tour_marginal_logq(const Theta& theta, const TspInstance& inst, const std::vector<int>& target,
                                 std::vector<double>* grad) {
  const int n = inst.n();
  std::vector<double> lps(static_cast<std::size_t>(n));
  std::vector<std::vector<double>> grads;
  for (int s = 0; s < n; ++s) {
    std::vector<int> rot(target.begin() + s, target.end());
    rot.insert(rot.end(), target.begin(), target.begin() + s);
    std::vector<double> g(theta.size(), 0.0);
    lps[s] = tour_logprob(theta, inst, rot, 1.0, g, 1.0) - std::log(static_cast<double>(n));
    grads.push_back(std::move(g));
  }
  const double mx = *std::max_element(lps.begin(), lps.end());
  double z = 0.0;
  for (double lp : lps) z += std::exp(lp - mx);
  if (grad) {
    grad->assign(theta.size(), 0.0);
    for (int s = 0; s < n; ++s) {
      const double w = std::exp(lps[s] - mx) / z;
      for (std::size_t j = 0; j < theta.size(); ++j) (*grad)[j] += w * grads[s][j];
    }
  }
  return mx + std::log(z);
}

/// log q(target set) summed over insertion orders, with its gradient.
inline double set_marginal_logq(const Theta& theta, const MisInstance& inst, std::vector<int> target,
                                std::vector<double>* grad) {
  std::sort(target.begin(), target.end());
  std::vector<double> lps;
  std::vector<std::vector<double>> grads;
  do {
    std::vector<double> g(theta.size(), 0.0);
    lps.push_back(mis_logprob(theta, inst, target, 1.0, g, 1.0));
    grads.push_back(std::move(g));
  } while (std::next_permutation(target.begin(), target.end()));
  const double mx = *std::max_element(lps.begin(), lps.end());
  double z = 0.0;
  for (double lp : lps) z += std::exp(lp - mx);
  if (grad) {
    grad->assign(theta.size(), 0.0);
    for (std::size_t o = 0; o < lps.size(); ++o) {
      const double w = std::exp(lps[o] - mx) / z;
      for (std::size_t j = 0; j < theta.size(); ++j) (*grad)[j] += w * grads[o][j];
    }
  }
  return mx + std::log(z);
}

/// Gradient ascent on log q(target) until q(target) >= level. Returns the
/// number of steps, or -1 if `max_steps` was not enough.
template <class Inst, class LogQ>
int concentrate(Theta& theta, const Inst& inst, const std::vector<int>& target, LogQ logq, double level = 0.99,
                double lr = 1.0, int max_steps = 20000) {
  std::vector<double> g;
  for (int step = 0; step < max_steps; ++step) {
    const double lq = logq(theta, inst, target, &g);
    if (std::exp(lq) >= level) return step;
    for (std::size_t j = 0; j < theta.size(); ++j) theta.values[j] += lr * g[j];
  }
  return -1;
}

/// Key of the most probable solution; lowest key on ties.
inline std::vector<int> argmax(const Distribution& d) {
  const std::vector<int>* best = nullptr;
  double bp = -1.0;
  for (const auto& [k, p] : d)
    if (p > bp) {
      bp = p;
      best = &k;
    }
  return best ? *best : std::vector<int>{};
}

}  // namespace metaco::testing
