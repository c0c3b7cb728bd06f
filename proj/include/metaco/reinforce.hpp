#pragma once

#include <span>
#include <string>
#include <vector>

#include "metaco/instances.hpp"
#include "metaco/net.hpp"
#include "metaco/rng.hpp"
#include "metaco/solution_space.hpp"

namespace metaco {

/// K sampled solutions of one instance. `solutions` holds tour permutations
/// (TSP) or insertion orders (MIS).
struct RolloutBatch {
  Problem problem = Problem::Tsp;
  std::string instance_id;
  double tau = 1.0;
  std::vector<std::vector<int>> solutions;
  std::vector<double> costs;
  std::vector<double> logprobs;

  std::size_t size() const noexcept { return costs.size(); }
  double mean_cost() const noexcept;
  /// Index of the lowest-cost sample, lowest index on ties.
  std::size_t best() const noexcept;
};

/// Sample k uses the stream derive_seed(rng(), k), so results do not depend
/// on how samples are scheduled.
RolloutBatch rollout(const Theta& theta, const TspInstance& inst, int samples, double tau, Rng& rng);
RolloutBatch rollout(const Theta& theta, const MisInstance& inst, int samples, double tau, Rng& rng);

struct EstimatorOptions {
  /// Divide advantages by (std + 1e-8). Turn off to get an unbiased estimator.
  bool standardize = true;
};

/// Score-function gradient of the expected cost with the leave-one-out
/// baseline: 1/(K-1) * sum_k (c_k - mean(c)) * grad log q(f_k).
/// Throws EstimatorError for K < 2.
std::vector<double> reinforce_grad_theta(const RolloutBatch& batch, const Theta& theta, const TspInstance& inst,
                                         EstimatorOptions opts = {});
std::vector<double> reinforce_grad_theta(const RolloutBatch& batch, const Theta& theta, const MisInstance& inst,
                                         EstimatorOptions opts = {});

/// Chains the theta-gradient through the network that produced theta.
Gradients grad_params(const RolloutBatch& batch, const Theta& theta, const TspInstance& inst, ForwardTrace& trace,
                      ScopeSet scope, EstimatorOptions opts = {});
Gradients grad_params(const RolloutBatch& batch, const Theta& theta, const MisInstance& inst, ForwardTrace& trace,
                      ScopeSet scope, EstimatorOptions opts = {});

/// Expected cost under q at tau = 1, by enumeration (small instances only).
double exact_expected_cost(const Theta& theta, const TspInstance& inst);
double exact_expected_cost(const Theta& theta, const MisInstance& inst);

/// Exact gradient of the expected cost under q, by enumeration with
/// forward-mode accumulation. Same size limits as enumerate_q.
std::vector<double> exact_grad_theta(const Theta& theta, const TspInstance& inst);
std::vector<double> exact_grad_theta(const Theta& theta, const MisInstance& inst);

}  // namespace metaco
