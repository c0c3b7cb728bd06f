#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metaco/bitset.hpp"
#include "metaco/instances.hpp"
#include "metaco/rng.hpp"

namespace metaco {

enum class Problem { Tsp, Mis };

const char* to_string(Problem p) noexcept;

/// Continuous scores over the decision variables of an instance: one entry
/// per sparsified directed edge (TSP, edge order of the instance) or per node
/// (MIS). Higher scores make the variable more likely to be selected.
struct Theta {
  Problem problem = Problem::Tsp;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
};

Theta zero_theta(const TspInstance& inst);
Theta zero_theta(const MisInstance& inst);

/// Throws ShapeError on a size/problem mismatch, ParameterError on non-finite entries.
void check_theta(const Theta& theta, const TspInstance& inst);
void check_theta(const Theta& theta, const MisInstance& inst);

/// Score used for tour steps that leave the sparse graph: min(theta) - 10.
double fallback_score(const Theta& theta) noexcept;

struct Tour {
  std::vector<int> perm;
  double cost = 0.0;
};

/// Independent set with its sampled insertion order.
struct NodeSet {
  std::vector<int> order;
  Bitset members;

  int size() const noexcept { return static_cast<int>(order.size()); }
  double cost() const noexcept { return -static_cast<double>(order.size()); }
  /// Members in increasing node order.
  std::vector<int> sorted() const;
};

/// Closed-tour length under true Euclidean distances.
/// Throws FeasibilityError if `perm` is not a permutation of 0..n-1.
double tour_cost(const TspInstance& inst, std::span<const int> perm);

struct TourSample {
  Tour tour;
  double logprob = 0.0;  // log q(perm | perm[0]) at theta / tau
};

struct SetSample {
  NodeSet set;
  double logprob = 0.0;  // log q(order) at theta / tau
};

/// Draws a tour from the autoregressive distribution: uniform start, then
/// softmax(theta / tau) over the unvisited sparse out-neighbours; when none is
/// left the step is uniform over all unvisited nodes.
TourSample sample_tour(const Theta& theta, const TspInstance& inst, Rng& rng, double tau = 1.0,
                       std::optional<int> start = std::nullopt);

/// Grows a maximal independent set by softmax(theta / tau) over the nodes
/// still available (not chosen, not adjacent to a chosen node).
SetSample sample_mis(const Theta& theta, const MisInstance& inst, Rng& rng, double tau = 1.0);

/// log q(perm | perm[0]) at theta / tau. When `grad` is non-empty, adds
/// weight * d/dtheta of that log-probability into it. Returns -inf when the
/// tour has zero probability under the sampler.
double tour_logprob(const Theta& theta, const TspInstance& inst, std::span<const int> perm, double tau = 1.0,
                    std::span<double> grad = {}, double weight = 1.0);

/// log q(order) for an insertion order of a maximal independent set.
double mis_logprob(const Theta& theta, const MisInstance& inst, std::span<const int> order, double tau = 1.0,
                   std::span<double> grad = {}, double weight = 1.0);

/// Solution key -> probability. TSP keys are directed cycles rotated to start
/// at node 0; MIS keys are sorted member lists.
using Distribution = std::map<std::vector<int>, double>;

inline constexpr int kMaxEnumTsp = 8;
inline constexpr int kMaxEnumMis = 14;

std::vector<int> canonical_tour(std::span<const int> perm);

/// Exact auxiliary distribution by summing the chain-rule product over all
/// start nodes (TSP) or insertion orders (MIS). Throws SizeError when too large.
Distribution enumerate_q(const Theta& theta, const TspInstance& inst);
Distribution enumerate_q(const Theta& theta, const MisInstance& inst);

/// Exact energy distribution p(f) proportional to exp(sum of theta over the
/// variables selected by f), normalized over the enumerated feasible set.
Distribution enumerate_p(const Theta& theta, const TspInstance& inst);
Distribution enumerate_p(const Theta& theta, const MisInstance& inst);

struct FeasibilityReport {
  std::vector<std::string> violations;

  bool feasible() const noexcept { return violations.empty(); }
  explicit operator bool() const noexcept { return feasible(); }
};

FeasibilityReport check_feasible(const TspInstance& inst, std::span<const int> perm);
/// Requires independence and maximality.
FeasibilityReport check_feasible(const MisInstance& inst, std::span<const int> members);

/// Tour file: one line of node ids in visiting order (0-based, coordinate
/// line order). Node-set file: one line of member ids, 1-based like the
/// DIMACS graph they index.
void write_tour(std::span<const int> perm, std::ostream& out);
std::vector<int> read_tour(std::istream& in);
void write_node_set(std::span<const int> members, std::ostream& out);
std::vector<int> read_node_set(std::istream& in);

}  // namespace metaco
