#include "metaco/decoders.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "metaco/errors.hpp"
#include "metaco/parallel.hpp"

namespace metaco {

Tour greedy_decode(const Theta& theta, const TspInstance& inst, Rng& rng, std::optional<int> start) {
  check_theta(theta, inst);
  const int n = inst.n();
  const int s = start ? *start : static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
  if (s < 0 || s >= n) throw ParameterError("start node out of range");
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  Tour t;
  t.perm.reserve(static_cast<std::size_t>(n));
  t.perm.push_back(s);
  visited[s] = 1;
  int next_free = 0;
  while (static_cast<int>(t.perm.size()) < n) {
    const int cur = t.perm.back();
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    const std::size_t base = inst.first_edge(cur);
    const auto out = inst.out_edges(cur);
    for (std::size_t e = 0; e < out.size(); ++e) {
      const int v = out[e].dst;
      if (visited[v]) continue;
      const double sc = theta.values[base + e];
      if (sc > best_score || (sc == best_score && v < best)) {
        best_score = sc;
        best = v;
      }
    }
    if (best < 0) {
      while (visited[next_free]) ++next_free;
      best = next_free;
    }
    visited[best] = 1;
    t.perm.push_back(best);
  }
  t.cost = tour_cost(inst, t.perm);
  return t;
}

NodeSet greedy_decode(const Theta& theta, const MisInstance& inst) {
  check_theta(theta, inst);
  const int n = inst.n;
  Bitset avail(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) avail.set(v);
  NodeSet s;
  s.members = Bitset(static_cast<std::size_t>(n));
  while (avail.any()) {
    int best = -1;
    avail.for_each([&](std::size_t v) {
      if (best < 0 || theta.values[v] > theta.values[best]) best = static_cast<int>(v);
    });
    s.order.push_back(best);
    s.members.set(best);
    avail.reset(best);
    avail.subtract(inst.adjacency[best]);
  }
  return s;
}

Tour sample_decode(const Theta& theta, const TspInstance& inst, int samples, double tau, Rng& rng,
                   unsigned workers) {
  if (samples < 1) throw ParameterError("need at least one sample");
  if (!(tau > 0.0)) throw ParameterError("temperature must be > 0");
  const auto base = rng();
  std::vector<Tour> tours(static_cast<std::size_t>(samples));
  parallel_for(tours.size(), workers, [&](std::size_t k) {
    Rng r(derive_seed(base, k));
    tours[k] = sample_tour(theta, inst, r, tau).tour;
  });
  std::size_t best = 0;
  for (std::size_t k = 1; k < tours.size(); ++k)
    if (tours[k].cost < tours[best].cost) best = k;
  return std::move(tours[best]);
}

NodeSet sample_decode(const Theta& theta, const MisInstance& inst, int samples, double tau, Rng& rng,
                      unsigned workers) {
  if (samples < 1) throw ParameterError("need at least one sample");
  if (!(tau > 0.0)) throw ParameterError("temperature must be > 0");
  const auto base = rng();
  std::vector<NodeSet> sets(static_cast<std::size_t>(samples));
  parallel_for(sets.size(), workers, [&](std::size_t k) {
    Rng r(derive_seed(base, k));
    sets[k] = sample_mis(theta, inst, r, tau).set;
  });
  std::size_t best = 0;
  for (std::size_t k = 1; k < sets.size(); ++k)
    if (sets[k].size() > sets[best].size()) best = k;
  return std::move(sets[best]);
}

namespace {

constexpr double kMinGain = 1e-10;

}  // namespace

Tour two_opt(const TspInstance& inst, const Tour& tour, int max_passes) {
  const int n = inst.n();
  Tour t = tour;
  t.cost = tour_cost(inst, t.perm);
  if (n < 4) return t;
  auto& p = t.perm;
  for (int pass = 0; pass < max_passes; ++pass) {
    double best_delta = -kMinGain;
    int bi = -1, bj = -1;
    for (int i = 0; i < n - 1; ++i) {
      const int a = p[i], b = p[i + 1];
      const double dab = inst.dist(a, b);
      for (int j = i + 2; j < n; ++j) {
        const int c = p[j], d = p[(j + 1) % n];
        if (d == a) continue;
        const double delta = inst.dist(a, c) + inst.dist(b, d) - dab - inst.dist(c, d);
        if (delta < best_delta) {
          best_delta = delta;
          bi = i;
          bj = j;
        }
      }
    }
    if (bi < 0) break;
    std::reverse(p.begin() + bi + 1, p.begin() + bj + 1);
  }
  t.cost = tour_cost(inst, t.perm);
  return t;
}

// ---------------------------------------------------------------------------

namespace {

/// Array tour with O(1) position lookup.
class WorkTour {
 public:
  WorkTour(const TspInstance& inst, std::vector<int> perm) : inst_(&inst), perm_(std::move(perm)) {
    pos_.assign(perm_.size(), 0);
    reindex();
  }

  int n() const { return static_cast<int>(perm_.size()); }
  int succ(int v) const { return perm_[(pos_[v] + 1) % n()]; }
  int pred(int v) const { return perm_[(pos_[v] + n() - 1) % n()]; }
  double d(int a, int b) const { return inst_->dist(a, b); }
  const std::vector<int>& perm() const { return perm_; }

  /// Reverses the cyclic path from x forward to y.
  void reverse_path(int x, int y) {
    const int i = pos_[x], j = pos_[y];
    if (i <= j) {
      std::reverse(perm_.begin() + i, perm_.begin() + j + 1);
    } else {
      // complement y+1 .. x-1 is contiguous; reversing it gives the same cycle
      std::reverse(perm_.begin() + j + 1, perm_.begin() + i);
    }
    reindex();
  }

  /// Cuts the path first..last (forward) and reinserts it after u, reversed
  /// when `flip` is set.
  void move_segment(int first, int last, int u, bool flip) {
    std::vector<int> seg;
    for (int v = first;; v = succ(v)) {
      seg.push_back(v);
      if (v == last) break;
    }
    if (flip) std::reverse(seg.begin(), seg.end());
    std::vector<int> out;
    out.reserve(perm_.size());
    for (int v = succ(last); v != first; v = succ(v)) {
      out.push_back(v);
      if (v == u) out.insert(out.end(), seg.begin(), seg.end());
    }
    perm_ = std::move(out);
    reindex();
  }

 private:
  void reindex() {
    for (int i = 0; i < n(); ++i) pos_[perm_[i]] = i;
  }

  const TspInstance* inst_;
  std::vector<int> perm_;
  std::vector<int> pos_;
};

enum class MoveKind { None, TwoOptSucc, TwoOptPred, SegmentForward, SegmentBackward };

struct Move {
  MoveKind kind = MoveKind::None;
  double delta = 0.0;
  int len = 0;
};

/// Best move that makes u and v adjacent. Every evaluated variant costs one
/// unit of `evals`.
Move best_insertion(const WorkTour& t, int u, int v, long& evals, long budget) {
  Move best;
  const int n = t.n();
  if (t.succ(u) == v || t.pred(u) == v) return best;
  auto consider = [&](MoveKind k, double delta, int len) {
    ++evals;
    if (delta < best.delta - kMinGain) best = {k, delta, len};
  };
  const int a = t.succ(u), pu = t.pred(u);
  const double duv = t.d(u, v);
  if (evals >= budget) return best;
  consider(MoveKind::TwoOptSucc, duv + t.d(a, t.succ(v)) - t.d(u, a) - t.d(v, t.succ(v)), 0);
  if (evals >= budget) return best;
  consider(MoveKind::TwoOptPred, duv + t.d(pu, t.pred(v)) - t.d(pu, u) - t.d(t.pred(v), v), 0);
  for (int len = 1; len <= 3 && len + 3 <= n; ++len) {
    // forward segment v .. e, placed as u -> v .. e -> a
    {
      const int p = t.pred(v);
      int e = v;
      bool contains_u = e == u;
      for (int i = 1; i < len; ++i) {
        e = t.succ(e);
        contains_u |= e == u;
      }
      const int q = t.succ(e);
      if (!contains_u && p != u) {
        if (evals >= budget) return best;
        consider(MoveKind::SegmentForward,
                 t.d(p, q) + duv + t.d(e, a) - t.d(p, v) - t.d(e, q) - t.d(u, a), len);
      }
    }
    // backward segment s0 .. v, placed as u -> v .. s0 -> a
    {
      const int q = t.succ(v);
      int s0 = v;
      bool contains_u = s0 == u;
      for (int i = 1; i < len; ++i) {
        s0 = t.pred(s0);
        contains_u |= s0 == u;
      }
      const int p = t.pred(s0);
      if (!contains_u && p != u && q != u) {
        if (evals >= budget) return best;
        consider(MoveKind::SegmentBackward,
                 t.d(p, q) + duv + t.d(s0, a) - t.d(p, s0) - t.d(v, q) - t.d(u, a), len);
      }
    }
  }
  return best;
}

void apply_move(WorkTour& t, int u, int v, const Move& m) {
  switch (m.kind) {
    case MoveKind::TwoOptSucc:
      t.reverse_path(t.succ(u), v);
      break;
    case MoveKind::TwoOptPred:
      t.reverse_path(u, t.pred(v));
      break;
    case MoveKind::SegmentForward: {
      int e = v;
      for (int i = 1; i < m.len; ++i) e = t.succ(e);
      t.move_segment(v, e, u, false);
      break;
    }
    case MoveKind::SegmentBackward: {
      int s0 = v;
      for (int i = 1; i < m.len; ++i) s0 = t.pred(s0);
      t.move_segment(s0, v, u, true);
      break;
    }
    case MoveKind::None:
      break;
  }
}

}  // namespace

Tour mcts_decode(const Theta& theta, const TspInstance& inst, const MctsOptions& opts, Rng& rng,
                 MctsState* state_out) {
  if (opts.budget < 0) throw ParameterError("budget must be >= 0");
  if (opts.candidates < 1) throw ParameterError("candidate count must be >= 1");
  MctsState st;
  st.initial = greedy_decode(theta, inst, rng, opts.start);
  st.current = st.best = st.initial;
  const int n = inst.n();

  for (int u = 0; u < n; ++u) {
    const std::size_t base = inst.first_edge(u);
    const auto out = inst.out_edges(u);
    std::vector<std::size_t> idx(out.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t keep = std::min<std::size_t>(idx.size(), static_cast<std::size_t>(opts.candidates));
    std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(keep), idx.end(), [&](std::size_t x, std::size_t y) {
      const double tx = theta.values[base + x], ty = theta.values[base + y];
      return tx != ty ? tx > ty : x < y;
    });
    for (std::size_t i = 0; i < keep; ++i) {
      st.cand_edges.emplace_back(u, out[idx[i]].dst);
      st.cand_scores.push_back(theta.values[base + idx[i]]);
    }
  }
  const std::size_t m = st.cand_edges.size();
  st.visits.assign(m, 0);
  st.gain.assign(m, 0.0);

  if (opts.budget == 0 || n < 4 || m == 0) {
    if (state_out) *state_out = st;
    return st.best;
  }

  WorkTour t(inst, st.current.perm);
  const double scale = st.initial.cost > 0 ? st.initial.cost : 1.0;
  const double mx = *std::max_element(st.cand_scores.begin(), st.cand_scores.end());
  std::vector<double> weight(m);
  for (std::size_t i = 0; i < m; ++i) weight[i] = std::exp(st.cand_scores[i] - mx);
  const int pool = static_cast<int>(std::clamp<long>(opts.budget / 2000, 4, 16));
  const long patience = static_cast<long>(m) / pool + 1;
  long idle = 0;

  auto in_tour = [&](std::size_t i) {
    const auto [u, v] = st.cand_edges[i];
    return t.succ(u) == v || t.pred(u) == v;
  };
  auto commit = [&](std::size_t i, const Move& mv) {
    apply_move(t, st.cand_edges[i].first, st.cand_edges[i].second, mv);
    st.current.cost += mv.delta;
    ++st.committed;
  };

  while (st.evaluations < opts.budget) {
    // simulation: draw a pool of candidate edges from the heatmap
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      if (!in_tour(i)) total += weight[i];
    if (total <= 0.0) {
      st.converged = true;
      break;
    }
    std::size_t chosen = m;
    double chosen_score = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < pool; ++k) {
      double r = rng.uniform() * total;
      std::size_t pick = m;
      for (std::size_t i = 0; i < m; ++i) {
        if (in_tour(i)) continue;
        pick = i;
        r -= weight[i];
        if (r < 0.0) break;
      }
      // selection: UCB over mean observed gain
      const double score =
          st.visits[pick] == 0
              ? std::numeric_limits<double>::infinity()
              : st.gain[pick] / static_cast<double>(st.visits[pick]) +
                    opts.exploration * std::sqrt(std::log(static_cast<double>(st.total_visits + 1)) /
                                                 static_cast<double>(st.visits[pick]));
      if (score > chosen_score) {
        chosen_score = score;
        chosen = pick;
      }
    }
    const auto [u, v] = st.cand_edges[chosen];
    const Move mv = best_insertion(t, u, v, st.evaluations, opts.budget);
    // back-propagation
    ++st.visits[chosen];
    ++st.total_visits;
    if (mv.kind != MoveKind::None) {
      st.gain[chosen] += -mv.delta / scale;
      commit(chosen, mv);
      idle = 0;
      continue;
    }
    if (++idle < patience) continue;
    // nothing found for a while: sweep every candidate edge
    std::size_t best_i = m;
    Move best_mv;
    for (std::size_t i = 0; i < m && st.evaluations < opts.budget; ++i) {
      const Move cand = best_insertion(t, st.cand_edges[i].first, st.cand_edges[i].second, st.evaluations, opts.budget);
      if (cand.kind != MoveKind::None && cand.delta < best_mv.delta) {
        best_mv = cand;
        best_i = i;
      }
    }
    if (best_i == m) {
      st.converged = st.evaluations < opts.budget;
      break;
    }
    st.gain[best_i] += -best_mv.delta / scale;
    ++st.visits[best_i];
    ++st.total_visits;
    commit(best_i, best_mv);
    idle = 0;
  }

  st.current.perm = t.perm();
  st.current.cost = tour_cost(inst, st.current.perm);
  st.best = st.current.cost < st.initial.cost ? st.current : st.initial;
  if (state_out) *state_out = st;
  return st.best;
}

namespace {

std::vector<std::vector<int>> nearest_neighbors(const TspInstance& inst, int k) {
  const int n = inst.n();
  k = std::min(k, n - 1);
  std::vector<std::vector<int>> nb(static_cast<std::size_t>(n));
  std::vector<std::pair<double, int>> row;
  for (int u = 0; u < n; ++u) {
    row.clear();
    for (int v = 0; v < n; ++v)
      if (v != u) row.emplace_back(inst.dist(u, v), v);
    std::partial_sort(row.begin(), row.begin() + k, row.end());
    for (int i = 0; i < k; ++i) nb[u].push_back(row[i].second);
  }
  return nb;
}

/// Descends until no candidate move improves. `active` marks nodes to scan.
void descend(WorkTour& t, const std::vector<std::vector<int>>& nb, std::vector<char>& active,
             std::vector<int>& queue) {
  long evals = 0;
  const long unlimited = std::numeric_limits<long>::max();
  auto wake = [&](int v) {
    if (!active[v]) {
      active[v] = 1;
      queue.push_back(v);
    }
  };
  while (!queue.empty()) {
    const int u = queue.back();
    queue.pop_back();
    active[u] = 0;
    for (int v : nb[u]) {
      const Move mv = best_insertion(t, u, v, evals, unlimited);
      if (mv.kind == MoveKind::None) continue;
      const int touched[] = {u, v, t.succ(u), t.pred(u), t.succ(v), t.pred(v)};
      apply_move(t, u, v, mv);
      for (int x : touched) wake(x);
      wake(t.succ(u));
      wake(t.pred(u));
      wake(t.succ(v));
      wake(t.pred(v));
      break;
    }
  }
}

double cycle_cost(const TspInstance& inst, const std::vector<int>& perm) {
  double c = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) c += inst.dist(perm[i], perm[(i + 1) % perm.size()]);
  return c;
}

}  // namespace

Tour local_search(const TspInstance& inst, const Tour& start, const LocalSearchOptions& opts, Rng& rng) {
  const int n = inst.n();
  Tour best{start.perm, tour_cost(inst, start.perm)};
  if (n < 5 || opts.neighbors < 1) return best;
  const auto nb = nearest_neighbors(inst, opts.neighbors);
  WorkTour t(inst, best.perm);
  std::vector<char> active(static_cast<std::size_t>(n), 1);
  std::vector<int> queue(static_cast<std::size_t>(n));
  std::iota(queue.begin(), queue.end(), 0);
  descend(t, nb, active, queue);
  double cur = cycle_cost(inst, t.perm());
  std::vector<int> kept = t.perm();
  if (cur < best.cost) best = {kept, cur};
  const int max_seg = std::max(1, std::min(50, n / 4));
  for (long k = 0; k < opts.kicks; ++k) {
    // local double bridge: A B C D -> A C B D with short B and C
    const int lb = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_seg)));
    const int lc = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_seg)));
    const int p0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    std::vector<int> perm = t.perm();
    std::rotate(perm.begin(), perm.begin() + p0, perm.end());
    std::rotate(perm.begin() + 1, perm.begin() + 1 + lb, perm.begin() + 1 + lb + lc);
    t = WorkTour(inst, std::move(perm));
    const auto& q = t.perm();
    for (int idx : {0, 1, lc, lc + 1, lb + lc, (lb + lc + 1) % n}) {
      const int v = q[idx];
      if (!active[v]) {
        active[v] = 1;
        queue.push_back(v);
      }
    }
    descend(t, nb, active, queue);
    const double c = cycle_cost(inst, t.perm());
    if (c < cur - kMinGain) {
      cur = c;
      kept = t.perm();
      if (c < best.cost) best = {kept, c};
    } else {
      t = WorkTour(inst, kept);
    }
  }
  best.cost = tour_cost(inst, best.perm);
  return best;
}

}  // namespace metaco
