#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "metaco/bitset.hpp"

namespace metaco {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// Directed candidate edge of a sparsified TSP graph.
struct Edge {
  int src = 0;
  int dst = 0;
  double length = 0.0;
};

/// Euclidean TSP instance on the unit square.
///
/// The dense form (as produced by the generator) has `k == 0` and no edges;
/// distances are always available through `dist`. After k-NN sparsification
/// `edges` holds exactly min(k, n-1) out-edges per node, grouped by source in
/// CSR layout and ordered by (length, dst) within a group.
struct TspInstance {
  std::string id;
  std::vector<Point> coords;
  int k = 0;
  std::vector<Edge> edges;
  std::vector<std::size_t> offsets;

  int n() const noexcept { return static_cast<int>(coords.size()); }
  bool sparsified() const noexcept { return !offsets.empty(); }
  double dist(int i, int j) const noexcept;

  std::span<const Edge> out_edges(int u) const noexcept {
    return {edges.data() + offsets[u], edges.data() + offsets[u + 1]};
  }
  std::size_t first_edge(int u) const noexcept { return offsets[u]; }
  /// Index of directed edge u->v in `edges`, or -1 when it was pruned.
  std::ptrdiff_t find_edge(int u, int v) const noexcept;
};

/// Undirected simple graph for maximum independent set.
struct MisInstance {
  std::string id;
  int n = 0;
  std::vector<Bitset> adjacency;
  std::vector<std::vector<int>> neighbors;
  std::vector<std::pair<int, int>> edges;  // u < v

  MisInstance() = default;
  MisInstance(std::string id, int n, const std::vector<std::pair<int, int>>& edge_list);

  bool adjacent(int u, int v) const noexcept { return adjacency[u].test(static_cast<std::size_t>(v)); }
  int degree(int u) const noexcept { return static_cast<int>(neighbors[u].size()); }
  std::size_t edge_count() const noexcept { return edges.size(); }
};

/// CNF formula with DIMACS literal convention (+v / -v, v is 1-based).
struct Cnf {
  int num_vars = 0;
  std::vector<std::vector<int>> clauses;
};

using Instance = std::variant<TspInstance, MisInstance>;

/// k used when none is given: 50 from n >= 500, otherwise the complete graph.
int default_knn(int n) noexcept;

std::vector<TspInstance> gen_tsp_uniform(int n, int count, std::uint64_t seed);
TspInstance sparsify_knn(const std::vector<Point>& coords, int k, std::string id = {});
TspInstance sparsify_knn(const TspInstance& dense, int k);

std::vector<MisInstance> gen_er(int n_lo, int n_hi, double p, int count, std::uint64_t seed);

/// One node per literal occurrence, cliques inside clauses, edges between
/// complementary literals. The MIS size equals the clause count iff satisfiable.
MisInstance reduce_cnf_to_mis(const Cnf& cnf, std::string id = "cnf");

// Text formats. Readers throw ParseError carrying the offending line number.
void write_tsp(const TspInstance& inst, std::ostream& out);
TspInstance read_tsp(std::istream& in, std::string id = "tsp");
void write_dimacs_graph(const MisInstance& inst, std::ostream& out);
MisInstance read_dimacs_graph(std::istream& in, std::string id = "mis");
Cnf read_cnf(std::istream& in);
void write_cnf(const Cnf& cnf, std::ostream& out);

void write_instance(const Instance& inst, const std::filesystem::path& path);
/// Sniffs the format from the first non-comment line (`tsp` or `p edge`).
Instance read_instance(const std::filesystem::path& path);
Cnf read_cnf_file(const std::filesystem::path& path);

}  // namespace metaco
