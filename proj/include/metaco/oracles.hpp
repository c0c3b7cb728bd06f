#pragma once

#include <string>
#include <vector>

#include "metaco/instances.hpp"
#include "metaco/rng.hpp"
#include "metaco/solution_space.hpp"

namespace metaco {

struct OracleResult {
  std::vector<int> solution;  // tour permutation or sorted set members
  double objective = 0.0;     // tour length or set size
  bool proven_optimal = false;
  long expansions = 0;
  double wall_ms = 0.0;
};

inline constexpr int kMaxHeldKarp = 20;
inline constexpr long kExactMisBudget = 10'000'000;

/// Subset dynamic program over dense Euclidean distances. Throws SizeError
/// for n > kMaxHeldKarp.
OracleResult held_karp(const TspInstance& inst);

/// Branch and bound on the max-degree vertex with a greedy clique-cover
/// bound. When the node budget runs out the best set found is returned with
/// proven_optimal = false. Graphs over 64 nodes get the greedy set, unproven.
OracleResult exact_mis(const MisInstance& inst, long node_budget = kExactMisBudget);

enum class InsertionRule { Nearest, Random, Farthest };

const char* to_string(InsertionRule r) noexcept;
InsertionRule parse_insertion_rule(const std::string& text);

/// Grows a cycle, inserting the next city where it lengthens the tour least.
/// Throws InvalidInstanceError for n < 3.
Tour insertion(const TspInstance& inst, InsertionRule rule, Rng& rng);

/// Repeatedly adds an available node of minimum residual degree (lowest
/// index on ties).
NodeSet greedy_degree_mis(const MisInstance& inst);

}  // namespace metaco
