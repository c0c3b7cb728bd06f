#include "metaco/solution_space.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <limits>
#include <numeric>

#include "metaco/errors.hpp"

namespace metaco {

namespace {

constexpr double kProbFloor = 1e-300;

void require_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("temperature must be positive and finite");
}

/// Softmax of `logits` in place; returns log of the normalizer relative to
/// the max logit, so that log p_i = logits_i - max - log_norm.
struct Softmax {
  double max = 0.0;
  double log_norm = 0.0;
};

Softmax softmax_inplace(std::vector<double>& logits) {
  Softmax s;
  s.max = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& l : logits) {
    l = std::exp(l - s.max);
    sum += l;
  }
  for (double& l : logits) l /= sum;
  s.log_norm = std::log(sum);
  return s;
}

std::size_t draw_index(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // rounding left u above the accumulated mass; take the last positive entry
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return i;
  return probs.size() - 1;
}

}  // namespace

const char* to_string(Problem p) noexcept { return p == Problem::Tsp ? "tsp" : "mis"; }

Theta zero_theta(const TspInstance& inst) {
  if (!inst.sparsified()) throw ShapeError("TSP instance must be sparsified before building theta");
  return {Problem::Tsp, std::vector<double>(inst.edges.size(), 0.0)};
}

Theta zero_theta(const MisInstance& inst) { return {Problem::Mis, std::vector<double>(inst.n, 0.0)}; }

namespace {
void check_finite(const Theta& theta) {
  for (double v : theta.values)
    if (!std::isfinite(v)) throw ParameterError("theta contains non-finite values");
}
}  // namespace

void check_theta(const Theta& theta, const TspInstance& inst) {
  if (theta.problem != Problem::Tsp || !inst.sparsified() || theta.size() != inst.edges.size())
    throw ShapeError("theta does not match the TSP instance edge list");
  check_finite(theta);
}

void check_theta(const Theta& theta, const MisInstance& inst) {
  if (theta.problem != Problem::Mis || theta.size() != static_cast<std::size_t>(inst.n))
    throw ShapeError("theta does not match the MIS instance node count");
  check_finite(theta);
}

double fallback_score(const Theta& theta) noexcept {
  if (theta.values.empty()) return -10.0;
  return *std::min_element(theta.values.begin(), theta.values.end()) - 10.0;
}

std::vector<int> NodeSet::sorted() const {
  std::vector<int> s(order);
  std::sort(s.begin(), s.end());
  return s;
}

double tour_cost(const TspInstance& inst, std::span<const int> perm) {
  if (auto report = check_feasible(inst, perm); !report) throw FeasibilityError(report.violations.front());
  double cost = 0.0;
  const std::size_t n = perm.size();
  for (std::size_t i = 0; i < n; ++i) cost += inst.dist(perm[i], perm[(i + 1) % n]);
  return cost;
}

TourSample sample_tour(const Theta& theta, const TspInstance& inst, Rng& rng, double tau, std::optional<int> start) {
  require_tau(tau);
  check_theta(theta, inst);
  const int n = inst.n();
  TourSample out;
  auto& perm = out.tour.perm;
  perm.reserve(static_cast<std::size_t>(n));
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  std::vector<int> unvisited(static_cast<std::size_t>(n));
  std::iota(unvisited.begin(), unvisited.end(), 0);
  std::vector<std::size_t> where(static_cast<std::size_t>(n));
  std::iota(where.begin(), where.end(), std::size_t{0});

  auto visit = [&](int v) {
    visited[v] = 1;
    perm.push_back(v);
    // swap-remove from the unvisited pool
    const std::size_t pos = where[v];
    const int last = unvisited.back();
    unvisited[pos] = last;
    where[last] = pos;
    unvisited.pop_back();
  };

  int cur = start ? *start : static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
  if (cur < 0 || cur >= n) throw ParameterError("start node out of range");
  visit(cur);

  std::vector<double> probs;
  std::vector<int> cand;
  double logprob = 0.0;
  while (static_cast<int>(perm.size()) < n) {
    probs.clear();
    cand.clear();
    const std::size_t base = inst.first_edge(cur);
    const auto out_edges = inst.out_edges(cur);
    for (std::size_t i = 0; i < out_edges.size(); ++i) {
      if (visited[out_edges[i].dst]) continue;
      cand.push_back(out_edges[i].dst);
      probs.push_back(theta.values[base + i] / tau);
    }
    int next;
    if (cand.empty()) {
      // every remaining node carries the same fallback score
      const auto m = unvisited.size();
      next = unvisited[rng.below(m)];
      logprob -= std::log(static_cast<double>(m));
    } else {
      const auto sm = softmax_inplace(probs);
      const std::size_t pick = draw_index(probs, rng);
      next = cand[pick];
      logprob += std::log(std::max(probs[pick], kProbFloor));
      (void)sm;
    }
    visit(next);
    cur = next;
  }
  out.logprob = logprob;
  out.tour.cost = 0.0;
  for (int i = 0; i < n; ++i) out.tour.cost += inst.dist(perm[i], perm[(i + 1) % n]);
  return out;
}

SetSample sample_mis(const Theta& theta, const MisInstance& inst, Rng& rng, double tau) {
  require_tau(tau);
  check_theta(theta, inst);
  SetSample out;
  out.set.members = Bitset(static_cast<std::size_t>(inst.n));
  Bitset available(static_cast<std::size_t>(inst.n), true);
  std::vector<double> probs;
  std::vector<int> cand;
  double logprob = 0.0;
  while (available.any()) {
    probs.clear();
    cand.clear();
    available.for_each([&](std::size_t v) {
      cand.push_back(static_cast<int>(v));
      probs.push_back(theta.values[v] / tau);
    });
    softmax_inplace(probs);
    const std::size_t pick = draw_index(probs, rng);
    const int a = cand[pick];
    logprob += std::log(std::max(probs[pick], kProbFloor));
    out.set.order.push_back(a);
    out.set.members.set(static_cast<std::size_t>(a));
    available.reset(static_cast<std::size_t>(a));
    available.subtract(inst.adjacency[a]);
  }
  out.logprob = logprob;
  return out;
}

double tour_logprob(const Theta& theta, const TspInstance& inst, std::span<const int> perm, double tau,
                    std::span<double> grad, double weight) {
  require_tau(tau);
  check_theta(theta, inst);
  if (auto report = check_feasible(inst, perm); !report) throw FeasibilityError(report.violations.front());
  if (!grad.empty() && grad.size() != theta.size()) throw ShapeError("gradient buffer does not match theta");
  const int n = inst.n();
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  visited[perm[0]] = 1;
  std::vector<double> probs;
  std::vector<std::size_t> cand_edge;
  double logprob = 0.0;
  for (int i = 1; i < n; ++i) {
    const int cur = perm[i - 1];
    const int next = perm[i];
    probs.clear();
    cand_edge.clear();
    std::ptrdiff_t chosen = -1;
    const std::size_t base = inst.first_edge(cur);
    const auto out_edges = inst.out_edges(cur);
    for (std::size_t e = 0; e < out_edges.size(); ++e) {
      if (visited[out_edges[e].dst]) continue;
      if (out_edges[e].dst == next) chosen = static_cast<std::ptrdiff_t>(cand_edge.size());
      cand_edge.push_back(base + e);
      probs.push_back(theta.values[base + e] / tau);
    }
    if (cand_edge.empty()) {
      logprob -= std::log(static_cast<double>(n - i));
    } else if (chosen < 0) {
      return -std::numeric_limits<double>::infinity();
    } else {
      softmax_inplace(probs);
      logprob += std::log(std::max(probs[chosen], kProbFloor));
      if (!grad.empty()) {
        const double scale = weight / tau;
        for (std::size_t c = 0; c < cand_edge.size(); ++c) grad[cand_edge[c]] -= scale * probs[c];
        grad[cand_edge[chosen]] += scale;
      }
    }
    visited[next] = 1;
  }
  return logprob;
}

double mis_logprob(const Theta& theta, const MisInstance& inst, std::span<const int> order, double tau,
                   std::span<double> grad, double weight) {
  require_tau(tau);
  check_theta(theta, inst);
  if (!grad.empty() && grad.size() != theta.size()) throw ShapeError("gradient buffer does not match theta");
  Bitset available(static_cast<std::size_t>(inst.n), true);
  std::vector<double> probs;
  std::vector<int> cand;
  double logprob = 0.0;
  for (int a : order) {
    if (a < 0 || a >= inst.n || !available.test(static_cast<std::size_t>(a)))
      return -std::numeric_limits<double>::infinity();
    probs.clear();
    cand.clear();
    std::size_t chosen = 0;
    available.for_each([&](std::size_t v) {
      if (static_cast<int>(v) == a) chosen = cand.size();
      cand.push_back(static_cast<int>(v));
      probs.push_back(theta.values[v] / tau);
    });
    softmax_inplace(probs);
    logprob += std::log(std::max(probs[chosen], kProbFloor));
    if (!grad.empty()) {
      const double scale = weight / tau;
      for (std::size_t c = 0; c < cand.size(); ++c) grad[cand[c]] -= scale * probs[c];
      grad[a] += scale;
    }
    available.reset(static_cast<std::size_t>(a));
    available.subtract(inst.adjacency[a]);
  }
  // a non-maximal order never terminates the sampler
  if (available.any()) return -std::numeric_limits<double>::infinity();
  return logprob;
}

std::vector<int> canonical_tour(std::span<const int> perm) {
  std::vector<int> out(perm.begin(), perm.end());
  const auto zero = std::find(out.begin(), out.end(), 0);
  std::rotate(out.begin(), zero, out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Enumeration

namespace {

void require_enum_size(int n, int limit, const char* what) {
  if (n > limit)
    throw SizeError(std::string(what) + " enumeration supports n <= " + std::to_string(limit) + ", got " +
                    std::to_string(n));
}

struct TourEnumerator {
  const Theta& theta;
  const TspInstance& inst;
  Distribution& dist;
  int n;
  std::vector<int> perm;
  std::vector<char> visited;

  void run(double prob) {
    if (static_cast<int>(perm.size()) == n) {
      dist[canonical_tour(perm)] += prob / n;
      return;
    }
    const int cur = perm.back();
    std::vector<double> probs;
    std::vector<int> cand;
    const std::size_t base = inst.first_edge(cur);
    const auto out_edges = inst.out_edges(cur);
    for (std::size_t e = 0; e < out_edges.size(); ++e) {
      if (visited[out_edges[e].dst]) continue;
      cand.push_back(out_edges[e].dst);
      probs.push_back(theta.values[base + e]);
    }
    if (cand.empty()) {
      for (int v = 0; v < n; ++v)
        if (!visited[v]) cand.push_back(v);
      probs.assign(cand.size(), 1.0 / static_cast<double>(cand.size()));
    } else {
      softmax_inplace(probs);
    }
    for (std::size_t c = 0; c < cand.size(); ++c) {
      perm.push_back(cand[c]);
      visited[cand[c]] = 1;
      run(prob * probs[c]);
      visited[cand[c]] = 0;
      perm.pop_back();
    }
  }
};

double log_sum_exp(const std::vector<double>& xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

Distribution normalize_energies(std::vector<std::vector<int>>& keys, std::vector<double>& energies) {
  Distribution dist;
  const double lz = log_sum_exp(energies);
  for (std::size_t i = 0; i < keys.size(); ++i) dist[std::move(keys[i])] = std::exp(energies[i] - lz);
  return dist;
}

}  // namespace

Distribution enumerate_q(const Theta& theta, const TspInstance& inst) {
  require_enum_size(inst.n(), kMaxEnumTsp, "TSP");
  check_theta(theta, inst);
  Distribution dist;
  TourEnumerator e{theta, inst, dist, inst.n(), {}, std::vector<char>(static_cast<std::size_t>(inst.n()), 0)};
  for (int s = 0; s < inst.n(); ++s) {
    e.perm = {s};
    e.visited[s] = 1;
    e.run(1.0);
    e.visited[s] = 0;
  }
  return dist;
}

Distribution enumerate_q(const Theta& theta, const MisInstance& inst) {
  require_enum_size(inst.n, kMaxEnumMis, "MIS");
  check_theta(theta, inst);
  const int n = inst.n;
  const std::uint32_t full = (1u << n) - 1u;
  std::vector<std::uint32_t> nbr(static_cast<std::size_t>(n), 0);
  for (auto [u, v] : inst.edges) {
    nbr[u] |= 1u << v;
    nbr[v] |= 1u << u;
  }
  // reach[S]: probability that the sampled prefix set equals S at some step.
  // Predecessors S \ {a} are numerically smaller, so one increasing sweep suffices.
  std::vector<double> reach(static_cast<std::size_t>(full) + 1, 0.0);
  reach[0] = 1.0;
  Distribution dist;
  std::vector<double> probs;
  std::vector<int> cand;
  for (std::uint32_t s = 0; s <= full; ++s) {
    if (reach[s] == 0.0) continue;
    std::uint32_t blocked = s;
    for (int v = 0; v < n; ++v)
      if (s >> v & 1u) blocked |= nbr[v];
    const std::uint32_t avail = full & ~blocked;
    if (avail == 0) {
      std::vector<int> key;
      for (int v = 0; v < n; ++v)
        if (s >> v & 1u) key.push_back(v);
      dist[std::move(key)] += reach[s];
      continue;
    }
    probs.clear();
    cand.clear();
    for (int v = 0; v < n; ++v)
      if (avail >> v & 1u) {
        cand.push_back(v);
        probs.push_back(theta.values[v]);
      }
    softmax_inplace(probs);
    for (std::size_t c = 0; c < cand.size(); ++c) reach[s | (1u << cand[c])] += reach[s] * probs[c];
  }
  return dist;
}

Distribution enumerate_p(const Theta& theta, const TspInstance& inst) {
  require_enum_size(inst.n(), kMaxEnumTsp, "TSP");
  check_theta(theta, inst);
  const int n = inst.n();
  const double fb = fallback_score(theta);
  auto score = [&](int u, int v) {
    const auto e = inst.find_edge(u, v);
    return e < 0 ? fb : theta.values[static_cast<std::size_t>(e)];
  };
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::vector<int>> keys;
  std::vector<double> energies;
  do {
    double energy = 0.0;
    for (int i = 0; i < n; ++i) energy += score(perm[i], perm[(i + 1) % n]);
    keys.push_back(perm);
    energies.push_back(energy);
  } while (std::next_permutation(perm.begin() + 1, perm.end()));
  return normalize_energies(keys, energies);
}

Distribution enumerate_p(const Theta& theta, const MisInstance& inst) {
  require_enum_size(inst.n, kMaxEnumMis, "MIS");
  check_theta(theta, inst);
  const int n = inst.n;
  std::vector<std::vector<int>> keys;
  std::vector<double> energies;
  for (std::uint32_t s = 0; s < (1u << n); ++s) {
    std::vector<int> members;
    for (int v = 0; v < n; ++v)
      if (s >> v & 1u) members.push_back(v);
    if (!check_feasible(inst, members)) continue;
    double energy = 0.0;
    for (int v : members) energy += theta.values[v];
    keys.push_back(std::move(members));
    energies.push_back(energy);
  }
  return normalize_energies(keys, energies);
}

FeasibilityReport check_feasible(const TspInstance& inst, std::span<const int> perm) {
  FeasibilityReport r;
  const int n = inst.n();
  if (static_cast<int>(perm.size()) != n) {
    r.violations.push_back("tour has " + std::to_string(perm.size()) + " nodes, instance has " + std::to_string(n));
    return r;
  }
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (int v : perm) {
    if (v < 0 || v >= n) {
      r.violations.push_back("node " + std::to_string(v) + " out of range");
    } else if (seen[v]++) {
      r.violations.push_back("node " + std::to_string(v) + " visited twice");
    }
  }
  return r;
}

FeasibilityReport check_feasible(const MisInstance& inst, std::span<const int> members) {
  FeasibilityReport r;
  Bitset in(static_cast<std::size_t>(inst.n));
  for (int v : members) {
    if (v < 0 || v >= inst.n) {
      r.violations.push_back("node " + std::to_string(v) + " out of range");
      continue;
    }
    if (in.test(static_cast<std::size_t>(v))) r.violations.push_back("node " + std::to_string(v) + " listed twice");
    in.set(static_cast<std::size_t>(v));
  }
  for (auto [u, v] : inst.edges)
    if (in.test(static_cast<std::size_t>(u)) && in.test(static_cast<std::size_t>(v)))
      r.violations.push_back("edge " + std::to_string(u) + "-" + std::to_string(v) + " inside the set");
  for (int v = 0; v < inst.n; ++v)
    if (!in.test(static_cast<std::size_t>(v)) && !inst.adjacency[v].intersects(in))
      r.violations.push_back("not maximal: node " + std::to_string(v) + " can be added");
  return r;
}

namespace {

void write_ids(std::span<const int> ids, int offset, std::ostream& out) {
  for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? " " : "") << ids[i] + offset;
  out << '\n';
}

std::vector<int> read_ids(std::istream& in, int offset) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") != std::string::npos) break;
    line.clear();
  }
  std::vector<int> ids;
  std::istringstream ls(line);
  std::string tok;
  while (ls >> tok) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || v - offset < 0) throw ParseError("bad node id '" + tok + "'", lineno);
    ids.push_back(v - offset);
  }
  for (std::string rest; std::getline(in, rest);)
    if (rest.find_first_not_of(" \t\r") != std::string::npos) throw ParseError("expected a single line", lineno + 1);
  return ids;
}

}  // namespace

void write_tour(std::span<const int> perm, std::ostream& out) { write_ids(perm, 0, out); }
std::vector<int> read_tour(std::istream& in) { return read_ids(in, 0); }
void write_node_set(std::span<const int> members, std::ostream& out) { write_ids(members, 1, out); }
std::vector<int> read_node_set(std::istream& in) { return read_ids(in, 1); }

}  // namespace metaco
