#pragma once

#include <optional>
#include <vector>

#include "metaco/instances.hpp"
#include "metaco/rng.hpp"
#include "metaco/solution_space.hpp"

namespace metaco {

/// Random start (or `start`), then always the unvisited sparse neighbour with
/// the highest score; the lowest unvisited index when none is left.
Tour greedy_decode(const Theta& theta, const TspInstance& inst, Rng& rng, std::optional<int> start = std::nullopt);
/// Adds the available node with the highest score until none is left.
NodeSet greedy_decode(const Theta& theta, const MisInstance& inst);

/// Best of K samples at theta / tau; lowest sample index on ties.
Tour sample_decode(const Theta& theta, const TspInstance& inst, int samples, double tau, Rng& rng,
                   unsigned workers = 1);
NodeSet sample_decode(const Theta& theta, const MisInstance& inst, int samples, double tau, Rng& rng,
                      unsigned workers = 1);

/// Best-improvement 2-opt until no improving exchange or `max_passes`.
Tour two_opt(const TspInstance& inst, const Tour& tour, int max_passes = 1000);

struct MctsOptions {
  long budget = 20000;  // move evaluations
  int candidates = 5;   // top scores kept per node
  double exploration = 1.0;
  std::optional<int> start;  // greedy start node
};

/// Search state; `visits`/`gain` are indexed like `cand_edges`.
struct MctsState {
  Tour initial, current, best;
  std::vector<std::pair<int, int>> cand_edges;
  std::vector<double> cand_scores;
  std::vector<long> visits;
  std::vector<double> gain;
  long total_visits = 0;
  long evaluations = 0;
  long committed = 0;
  bool converged = false;  // stopped because a full sweep found nothing
};

/// Starts from the greedy tour and repeatedly inserts a heatmap-proposed
/// candidate edge through a 2-opt or segment-move (3-opt) reconnection,
/// committing only improving moves. Stops when the budget is spent or a
/// sweep over every candidate edge finds no improving move.
Tour mcts_decode(const Theta& theta, const TspInstance& inst, const MctsOptions& opts, Rng& rng,
                 MctsState* state_out = nullptr);

struct LocalSearchOptions {
  int neighbors = 10;  // candidate edges per node, by distance
  long kicks = 0;      // double-bridge perturbations after the first descent
};

/// 2-opt and segment moves restricted to nearest-neighbour edges, repeated
/// until no improving move is left; with kicks, an iterated local search
/// that keeps the best tour. Never returns a worse tour than `start`.
Tour local_search(const TspInstance& inst, const Tour& start, const LocalSearchOptions& opts, Rng& rng);

}  // namespace metaco
