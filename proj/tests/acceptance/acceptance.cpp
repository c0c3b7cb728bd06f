// Acceptance checks. Each criterion prints one PASS/FAIL line; the exit code
// is nonzero when any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "checks.hpp"
#include "fixtures.hpp"
#include "metaco/bench.hpp"
#include "metaco/decoders.hpp"
#include "metaco/meta.hpp"
#include "metaco/oracles.hpp"

using namespace metaco;
namespace mt = metaco::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1: enumerate_q normalizes and matches sampler frequencies.
Outcome distribution_exactness() {
  Rng rng(101);
  struct Case {
    std::optional<TspInstance> tsp;
    std::optional<MisInstance> mis;
    Theta theta;
    Distribution q;
  };
  std::vector<Case> cases;
  for (int i = 0; i < 20; ++i) {
    const int n = 4 + i % 3;
    auto t = mt::random_tsp(n, rng, i % 2 ? 2 : n - 1);
    auto th = mt::random_theta(t, rng);
    cases.push_back({t, std::nullopt, th, enumerate_q(th, t)});
  }
  for (int i = 0; i < 20; ++i) {
    auto g = mt::random_graph(3 + static_cast<int>(rng.below(10)), 0.3, rng);
    auto th = mt::random_theta(g, rng);
    cases.push_back({std::nullopt, g, th, enumerate_q(th, g)});
  }
  std::size_t cells = 0;
  double worst_norm = 0.0;
  for (const auto& c : cases) {
    cells += c.q.size();
    double s = 0.0;
    for (const auto& [k, p] : c.q) s += p;
    worst_norm = std::max(worst_norm, std::abs(s - 1.0));
  }
  const long samples = 1'000'000;
  double worst = 0.0;
  for (const auto& c : cases) {
    if (c.tsp)
      worst = std::max(worst, mt::agreement(c.q, samples, [&] {
        return canonical_tour(sample_tour(c.theta, *c.tsp, rng).tour.perm);
      }, cells));
    else
      worst = std::max(worst, mt::agreement(c.q, samples, [&] { return sample_mis(c.theta, *c.mis, rng).set.sorted(); },
                                            cells));
  }
  return {worst_norm <= 1e-9 && worst <= 1.0,
          "max |sum-1| " + fmt("%.2e", worst_norm) + ", worst z/threshold " + fmt("%.3f", worst) + " over " +
              std::to_string(cells) + " cells (threshold " + fmt("%.2f", mt::familywise_sigma(cells)) + " sigma)"};
}

// 2: REINFORCE estimator mean matches the exact gradient.
Outcome reinforce_unbiasedness() {
  Rng rng(202);
  auto t = mt::random_tsp(5, rng);
  auto g = mt::random_graph(8, 0.3, rng);
  const auto tt = mt::random_theta(t, rng, 1.0);
  const auto gt = mt::random_theta(g, rng, 1.0);
  const std::size_t family = tt.size() + gt.size();
  const double a = mt::unbiasedness(tt, t, 100'000, 8, rng, family);
  const double b = mt::unbiasedness(gt, g, 100'000, 8, rng, family);
  return {a <= 1.0 && b <= 1.0, "worst z/threshold TSP " + fmt("%.3f", a) + ", MIS " + fmt("%.3f", b) + " over " +
                                    std::to_string(family) + " components"};
}

// 3: network gradients vs finite differences.
Outcome network_gradients() {
  Rng rng(303);
  auto t = mt::random_tsp(8, rng, 5);
  auto g = mt::random_graph(12, 0.3, rng);
  const auto pt = init_params(ArchConfig::tsp_default(), 3);
  const auto pm = init_params(ArchConfig::mis_default(), 3);
  const double a = mt::probe_gradients(pt, t, 50, rng);
  const double b = mt::probe_gradients(pm, g, 50, rng);
  const double c = std::max(mt::directional_check(pt, t, rng), mt::directional_check(pm, g, rng));
  const double worst = std::max({a, b, c});
  return {worst <= 1e-3, "max rel. error TSP " + fmt("%.2e", a) + ", MIS " + fmt("%.2e", b) + ", directional " +
                             fmt("%.2e", c)};
}

// 4: concentrating q on a target concentrates p on it.
Outcome concentration() {
  Rng rng(404);
  int tsp_ok = 0, mis_ok = 0;
  double min_p = 1.0;
  for (int trial = 0; trial < 10; ++trial) {
    auto t = mt::random_tsp(5 + trial % 2, rng);
    Theta theta = mt::random_theta(t, rng, 0.5);
    std::vector<int> target(static_cast<std::size_t>(t.n()));
    std::iota(target.begin(), target.end(), 0);
    std::shuffle(target.begin() + 1, target.end(), rng);
    if (mt::concentrate(theta, t, target, mt::tour_marginal_logq) < 0) continue;
    const auto key = canonical_tour(target);
    const auto p = enumerate_p(theta, t);
    min_p = std::min(min_p, p.at(key));
    tsp_ok += mt::argmax(enumerate_q(theta, t)) == key && mt::argmax(p) == key && p.at(key) >= 0.9;
  }
  for (int trial = 0; trial < 10; ++trial) {
    auto g = mt::random_graph(8 + trial % 5, 0.3, rng);
    Theta theta = mt::random_theta(g, rng, 0.5);
    const auto target = sample_mis(mt::random_theta(g, rng, 3.0), g, rng).set.sorted();
    if (mt::concentrate(theta, g, target, mt::set_marginal_logq) < 0) continue;
    const auto p = enumerate_p(theta, g);
    min_p = std::min(min_p, p.at(target));
    mis_ok += mt::argmax(enumerate_q(theta, g)) == target && mt::argmax(p) == target && p.at(target) >= 0.9;
  }
  return {tsp_ok == 10 && mis_ok == 10, "TSP " + std::to_string(tsp_ok) + "/10, MIS " + std::to_string(mis_ok) +
                                            "/10, min p(target) " + fmt("%.4f", min_p)};
}

// 5: first-order meta-gradient error decreases with alpha.
Outcome first_order_meta() {
  Rng rng(505);
  auto t = mt::random_tsp(5, rng);
  const auto p = init_params({Problem::Tsp, 4, 1, 3, 1e-5}, 5);
  AdaptOptions o;
  o.steps = 1;
  o.optimizer = InnerOptimizer::Sgd;
  o.exact_gradient = true;
  std::vector<double> d;
  for (double alpha : {1e-1, 1e-2, 1e-3}) {
    o.lr = alpha;
    d.push_back(mt::meta_discrepancy(p, t, o));
  }
  return {d[0] > d[1] && d[1] > d[2],
          "discrepancy " + fmt("%.3e", d[0]) + " > " + fmt("%.3e", d[1]) + " > " + fmt("%.3e", d[2])};
}

TrainConfig tsp_train_config(int inner_steps) {
  auto c = TrainConfig::defaults(Problem::Tsp);
  c.tsp_n = 20;
  c.inner_steps = inner_steps;
  c.total_steps = 100;
  c.seed = 1;
  c.workers = 0;
  return c;
}

const NetParams& trained_tsp(int inner_steps) {
  static std::map<int, NetParams> cache;
  auto it = cache.find(inner_steps);
  if (it == cache.end()) it = cache.emplace(inner_steps, train(tsp_train_config(inner_steps)).params).first;
  return it->second;
}

std::vector<Instance> heldout_tsp() {
  std::vector<Instance> out;
  for (auto& t : gen_tsp_uniform(20, 32, 20'240'601)) out.emplace_back(sparsify_knn(t, default_knn(20)));
  return out;
}

// 6: trained TSP model with active search and sampling, plus the ablation.
Outcome tsp_benchmark() {
  const auto set = heldout_tsp();
  const auto& meta = trained_tsp(5);
  const auto& plain = trained_tsp(0);

  EvalConfig full;
  full.decoder = "sample";
  full.as_steps = 100;
  full.samples = 1024;
  full.tau = 1.0;
  const auto rep = evaluate(meta, set, full);

  const std::vector<Instance> pairs(set.begin(), set.begin() + 10);
  EvalConfig tuned;
  tuned.decoder = "greedy";
  tuned.as_steps = 100;
  EvalConfig raw = tuned;
  raw.as_steps = 0;
  const auto both = evaluate(meta, pairs, tuned);
  const auto tune_only = evaluate(plain, pairs, tuned);
  const auto neither = evaluate(plain, pairs, raw);
  int ab = 0, bc = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ab += both.rows[i].objective <= tune_only.rows[i].objective;
    bc += tune_only.rows[i].objective <= neither.rows[i].objective;
  }
  const bool ordered = both.mean_drop() < tune_only.mean_drop() && tune_only.mean_drop() < neither.mean_drop();
  const bool pass = rep.all_feasible() && rep.mean_drop() <= 8.0 && ordered && ab >= 7 && bc >= 7;
  return {pass, "AS+S mean drop " + fmt("%.3f", rep.mean_drop()) + "% (<= 8); greedy drops inner+tune " +
                    fmt("%.3f", both.mean_drop()) + "%, tune only " + fmt("%.3f", tune_only.mean_drop()) +
                    "%, neither " + fmt("%.3f", neither.mean_drop()) + "%; pairwise " + std::to_string(ab) + "/10, " +
                    std::to_string(bc) + "/10"};
}

// 7: trained MIS model with sampling.
Outcome mis_benchmark() {
  auto cfg = TrainConfig::defaults(Problem::Mis);
  cfg.total_steps = 100;
  cfg.seed = 2;
  cfg.workers = 0;
  const auto params = train(cfg).params;
  std::vector<Instance> set;
  for (auto& g : gen_er(25, 35, 0.15, 32, 20'240'602)) set.emplace_back(g);
  EvalConfig ec;
  ec.decoder = "sample";
  ec.samples = 1024;
  const auto rep = evaluate(params, set, ec);
  double greedy = 0.0;
  int exact = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    greedy += greedy_degree_mis(std::get<MisInstance>(set[i])).size();
    exact += rep.rows[i].exact_reference;
  }
  greedy /= static_cast<double>(set.size());
  const bool pass = rep.all_feasible() && exact == 32 && rep.mean_drop() <= 10.0 && rep.mean_objective() >= greedy;
  return {pass, "mean drop " + fmt("%.3f", rep.mean_drop()) + "% (<= 10), mean size " +
                    fmt("%.3f", rep.mean_objective()) + " vs greedy " + fmt("%.3f", greedy) + ", exact references " +
                    std::to_string(exact) + "/32"};
}

// 8: MCTS <= low-temperature sampling <= greedy.
Outcome decoder_ordering() {
  const auto set = heldout_tsp();
  const auto& params = trained_tsp(5);
  double mcts = 0.0, sample = 0.0, greedy = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& t = std::get<TspInstance>(set[i]);
    const auto theta = tsp_forward(params, t).theta;
    Rng a(derive_seed(8, i)), b(derive_seed(8, i)), c(derive_seed(8, i));
    MctsOptions o;
    o.budget = 20000;
    mcts += mcts_decode(theta, t, o, a).cost;
    sample += sample_decode(theta, t, 1024, 0.01, b).cost;
    greedy += greedy_decode(theta, t, c).cost;
  }
  const double n = static_cast<double>(set.size());
  mcts /= n, sample /= n, greedy /= n;
  return {mcts <= sample && sample <= greedy,
          "mean length MCTS " + fmt("%.4f", mcts) + " <= S " + fmt("%.4f", sample) + " <= G " + fmt("%.4f", greedy)};
}

// 9: drop arithmetic on published cells.
Outcome drop_arithmetic() {
  const double a = compute_drop(18.93, 16.55, Sense::Minimize);
  const double b = compute_drop(423.28, 425.96, Sense::Maximize);
  return {std::abs(a - 14.38) <= 0.005 && std::abs(b - 0.63) <= 0.005,
          "(18.93, 16.55) -> " + fmt("%.4f", a) + "%, (423.28, 425.96) -> " + fmt("%.4f", b) + "%"};
}

// 10: feasibility, monotone improvement and oracle bounds over a decoder sweep.
Outcome safety() {
  Rng rng(1010);
  long checks = 0, violations = 0;
  auto expect = [&](bool ok) {
    ++checks;
    violations += !ok;
  };
  const auto pt = init_params(ArchConfig::tsp_default(), 10);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 5 + trial % 8;
    const auto t = mt::random_tsp(n, rng, trial % 3 ? std::min(4, n - 1) : n - 1);
    const double opt = held_karp(t).objective;
    for (const Theta& th : {mt::random_theta(t, rng), tsp_forward(pt, t).theta}) {
      std::vector<Tour> tours{greedy_decode(th, t, rng), sample_decode(th, t, 64, 1.0, rng),
                              sample_decode(th, t, 64, 0.01, rng)};
      MctsOptions o;
      o.budget = 2000;
      MctsState st;
      tours.push_back(mcts_decode(th, t, o, rng, &st));
      expect(st.best.cost <= st.current.cost && st.current.cost <= st.initial.cost);
      for (auto rule : {InsertionRule::Nearest, InsertionRule::Random, InsertionRule::Farthest})
        tours.push_back(insertion(t, rule, rng));
      const std::size_t made = tours.size();
      for (std::size_t i = 0; i < made; ++i) {
        const auto polished = two_opt(t, tours[i]);
        expect(polished.cost <= tours[i].cost);
        tours.push_back(polished);
        const auto ls = local_search(t, tours[i], {5, 20}, rng);
        expect(ls.cost <= tours[i].cost);
        tours.push_back(ls);
      }
      for (const auto& tour : tours) {
        expect(check_feasible(t, tour.perm).feasible());
        expect(tour.cost >= opt - 1e-9);
      }
    }
  }
  const auto pm = init_params(ArchConfig::mis_default(), 10);
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = mt::random_graph(6 + trial % 15, 0.1 + 0.05 * (trial % 4), rng);
    const auto best = exact_mis(g);
    expect(best.proven_optimal && best.objective == mt::brute_force_mis(g));
    for (const Theta& th : {mt::random_theta(g, rng), mis_forward(pm, g).theta}) {
      for (const auto& s : {greedy_decode(th, g), sample_decode(th, g, 64, 1.0, rng), greedy_degree_mis(g)}) {
        expect(check_feasible(g, s.sorted()).feasible());
        expect(s.size() <= best.objective);
      }
    }
  }
  std::vector<Instance> tsp_set;
  for (auto& t : gen_tsp_uniform(12, 8, 77)) tsp_set.emplace_back(sparsify_knn(t, 6));
  for (const char* dec : {"greedy", "sample", "mcts"}) {
    EvalConfig ec;
    ec.decoder = dec;
    ec.samples = 64;
    ec.budget = 2000;
    ec.as_steps = 5;
    ec.two_opt = std::string(dec) == "greedy";
    for (const auto& r : evaluate(pt, tsp_set, ec).rows) {
      expect(r.feasible);
      expect(r.drop_pct >= -1e-9);
    }
  }
  return {violations == 0, std::to_string(violations) + " violations in " + std::to_string(checks) + " checks"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "distribution exactness", distribution_exactness},
      {2, "REINFORCE unbiasedness", reinforce_unbiasedness},
      {3, "network gradient correctness", network_gradients},
      {4, "energy concentration", concentration},
      {5, "first-order meta-gradient", first_order_meta},
      {6, "TSP desk benchmark", tsp_benchmark},
      {7, "MIS desk benchmark", mis_benchmark},
      {8, "decoder ordering", decoder_ordering},
      {9, "drop arithmetic", drop_arithmetic},
      {10, "safety invariants", safety},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      selected.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--criterion N]...\n";
      return 2;
    }
  }
  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << c.id << " (" << c.name << "): " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail
              << " [" << fmt("%.1f", secs) << " s]" << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
