#include "metaco/oracles.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdint>
#include <limits>

#include "metaco/errors.hpp"

namespace metaco {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

OracleResult held_karp(const TspInstance& inst) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = inst.n();
  if (n > kMaxHeldKarp) throw SizeError("held_karp supports n <= " + std::to_string(kMaxHeldKarp));
  if (n < 1) throw InvalidInstanceError("empty instance");
  OracleResult r;
  r.proven_optimal = true;
  if (n <= 3) {
    for (int i = 0; i < n; ++i) r.solution.push_back(i);
    r.objective = tour_cost(inst, r.solution);
    r.wall_ms = elapsed_ms(t0);
    return r;
  }
  // node 0 is fixed as the start; subsets range over nodes 1..n-1 (bit i-1)
  const int m = n - 1;
  std::vector<double> d(static_cast<std::size_t>(n * n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) d[static_cast<std::size_t>(i * n + j)] = inst.dist(i, j);
  const std::size_t states = std::size_t{1} << m;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dp(states * static_cast<std::size_t>(m), inf);
  auto at = [&](std::size_t mask, int j) -> double& { return dp[mask * m + static_cast<std::size_t>(j)]; };
  for (int j = 0; j < m; ++j) at(std::size_t{1} << j, j) = d[static_cast<std::size_t>(j + 1)];
  for (std::size_t mask = 1; mask < states; ++mask) {
    if (std::popcount(mask) < 2) continue;
    for (int j = 0; j < m; ++j) {
      if (!(mask >> j & 1u)) continue;
      const std::size_t prev = mask & ~(std::size_t{1} << j);
      const double* dj = &d[static_cast<std::size_t>(j + 1)];
      double best = inf;
      for (std::size_t rest = prev; rest; rest &= rest - 1) {
        const int k = std::countr_zero(rest);
        const double c = at(prev, k) + dj[static_cast<std::size_t>((k + 1) * n)];
        if (c < best) best = c;
      }
      at(mask, j) = best;
      ++r.expansions;
    }
  }
  const std::size_t full = states - 1;
  double best = inf;
  int last = -1;
  for (int j = 0; j < m; ++j) {
    const double c = at(full, j) + d[static_cast<std::size_t>((j + 1) * n)];
    if (c < best) {
      best = c;
      last = j;
    }
  }
  // walk back by matching the stored values
  std::vector<int> rev;
  std::size_t mask = full;
  int j = last;
  while (true) {
    rev.push_back(j + 1);
    const std::size_t prev = mask & ~(std::size_t{1} << j);
    if (!prev) break;
    int from = -1;
    for (std::size_t rest = prev; rest; rest &= rest - 1) {
      const int k = std::countr_zero(rest);
      if (at(prev, k) + d[static_cast<std::size_t>((k + 1) * n + j + 1)] == at(mask, j)) {
        from = k;
        break;
      }
    }
    mask = prev;
    j = from;
  }
  r.solution.push_back(0);
  r.solution.insert(r.solution.end(), rev.rbegin(), rev.rend());
  r.objective = tour_cost(inst, r.solution);
  r.wall_ms = elapsed_ms(t0);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

using Mask = std::uint64_t;

struct MisSearch {
  std::vector<Mask> nbr;
  long budget;
  long nodes = 0;
  bool exhausted = false;
  int best_size = 0;
  Mask best_set = 0;

  /// Number of cliques in a greedy cover of `p`; bounds any independent set in p.
  int clique_cover(Mask p) const {
    int count = 0;
    while (p) {
      const int v = std::countr_zero(p);
      Mask clique_cand = p & nbr[v];
      p &= p - 1;
      while (clique_cand) {
        const int w = std::countr_zero(clique_cand);
        p &= ~(Mask{1} << w);
        clique_cand &= nbr[w];
      }
      ++count;
    }
    return count;
  }

  void search(Mask p, Mask chosen, int size) {
    if (exhausted) return;
    if (++nodes > budget) {
      exhausted = true;
      return;
    }
    // forced picks: vertices with at most one neighbour left in p
    bool changed = true;
    while (changed && p) {
      changed = false;
      for (Mask rest = p; rest; rest &= rest - 1) {
        const int v = std::countr_zero(rest);
        if (!(p >> v & 1u)) continue;
        if (std::popcount(p & nbr[v]) <= 1) {
          chosen |= Mask{1} << v;
          ++size;
          p &= ~(nbr[v] | (Mask{1} << v));
          changed = true;
        }
      }
    }
    if (!p) {
      if (size > best_size) {
        best_size = size;
        best_set = chosen;
      }
      return;
    }
    if (size + clique_cover(p) <= best_size) return;
    int v = -1, deg = -1;
    for (Mask rest = p; rest; rest &= rest - 1) {
      const int u = std::countr_zero(rest);
      const int du = std::popcount(p & nbr[u]);
      if (du > deg) {
        deg = du;
        v = u;
      }
    }
    const Mask bit = Mask{1} << v;
    search(p & ~(nbr[v] | bit), chosen | bit, size + 1);
    search(p & ~bit, chosen, size);
  }
};

}  // namespace

OracleResult exact_mis(const MisInstance& inst, long node_budget) {
  const auto t0 = std::chrono::steady_clock::now();
  OracleResult r;
  const int n = inst.n;
  if (n > 64) {
    r.solution = greedy_degree_mis(inst).sorted();
    r.objective = static_cast<double>(r.solution.size());
    r.wall_ms = elapsed_ms(t0);
    return r;
  }
  MisSearch s;
  s.nbr.assign(static_cast<std::size_t>(n), 0);
  for (auto [u, v] : inst.edges) {
    s.nbr[u] |= Mask{1} << v;
    s.nbr[v] |= Mask{1} << u;
  }
  s.budget = node_budget;
  // start from the greedy set so the bound prunes from the first node
  for (int v : greedy_degree_mis(inst).sorted()) s.best_set |= Mask{1} << v;
  s.best_size = std::popcount(s.best_set);
  const Mask all = n == 64 ? ~Mask{0} : (Mask{1} << n) - 1;
  s.search(all, 0, 0);
  for (int v = 0; v < n; ++v)
    if (s.best_set >> v & 1u) r.solution.push_back(v);
  r.objective = static_cast<double>(r.solution.size());
  r.proven_optimal = !s.exhausted;
  r.expansions = s.nodes;
  r.wall_ms = elapsed_ms(t0);
  return r;
}

// ---------------------------------------------------------------------------

const char* to_string(InsertionRule r) noexcept {
  switch (r) {
    case InsertionRule::Nearest:
      return "nearest";
    case InsertionRule::Random:
      return "random";
    case InsertionRule::Farthest:
      return "farthest";
  }
  return "?";
}

InsertionRule parse_insertion_rule(const std::string& text) {
  if (text == "nearest") return InsertionRule::Nearest;
  if (text == "random") return InsertionRule::Random;
  if (text == "farthest") return InsertionRule::Farthest;
  throw ParameterError("unknown insertion rule '" + text + "'");
}

Tour insertion(const TspInstance& inst, InsertionRule rule, Rng& rng) {
  const int n = inst.n();
  if (n < 3) throw InvalidInstanceError("insertion needs n >= 3");
  std::vector<int> order;  // random rule: visiting order
  std::vector<char> in(static_cast<std::size_t>(n), 0);
  std::vector<int> cycle;
  cycle.reserve(static_cast<std::size_t>(n));
  if (rule == InsertionRule::Random) {
    order.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    cycle.push_back(order[0]);
  } else if (rule == InsertionRule::Farthest) {
    int a = 0, b = 1;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (inst.dist(i, j) > inst.dist(a, b)) {
          a = i;
          b = j;
        }
    cycle = {a, b};
  } else {
    cycle.push_back(0);
  }
  for (int v : cycle) in[v] = 1;
  // distance from every outside city to the current cycle
  std::vector<double> to_cycle(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (int v = 0; v < n; ++v)
    for (int c : cycle) to_cycle[v] = std::min(to_cycle[v], inst.dist(v, c));
  std::size_t next_random = cycle.size();
  while (static_cast<int>(cycle.size()) < n) {
    int pick = -1;
    if (rule == InsertionRule::Random) {
      pick = order[next_random++];
    } else {
      for (int v = 0; v < n; ++v) {
        if (in[v]) continue;
        if (pick < 0 || (rule == InsertionRule::Nearest ? to_cycle[v] < to_cycle[pick] : to_cycle[v] > to_cycle[pick]))
          pick = v;
      }
    }
    std::size_t pos = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cycle.size(); ++i) {
      const int a = cycle[i], b = cycle[(i + 1) % cycle.size()];
      const double inc = inst.dist(a, pick) + inst.dist(pick, b) - (cycle.size() > 1 ? inst.dist(a, b) : 0.0);
      if (inc < best) {
        best = inc;
        pos = i + 1;
      }
    }
    cycle.insert(cycle.begin() + static_cast<long>(pos), pick);
    in[pick] = 1;
    for (int v = 0; v < n; ++v)
      if (!in[v]) to_cycle[v] = std::min(to_cycle[v], inst.dist(v, pick));
  }
  Tour t{std::move(cycle), 0.0};
  t.cost = tour_cost(inst, t.perm);
  return t;
}

NodeSet greedy_degree_mis(const MisInstance& inst) {
  const int n = inst.n;
  Bitset avail(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) avail.set(v);
  NodeSet s;
  s.members = Bitset(static_cast<std::size_t>(n));
  std::vector<int> deg(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) deg[v] = inst.degree(v);
  while (avail.any()) {
    int best = -1;
    avail.for_each([&](std::size_t v) {
      if (best < 0 || deg[v] < deg[best]) best = static_cast<int>(v);
    });
    s.order.push_back(best);
    s.members.set(best);
    // remove best and its neighbours, updating residual degrees
    Bitset removed = inst.adjacency[best];
    removed.set(best);
    Bitset gone = avail;
    gone.subtract(removed);  // survivors
    removed.for_each([&](std::size_t r) {
      if (!avail.test(r)) return;
      for (int w : inst.neighbors[r])
        if (gone.test(w)) --deg[w];
    });
    avail = gone;
  }
  return s;
}

}  // namespace metaco
