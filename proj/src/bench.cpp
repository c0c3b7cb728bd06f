#include "metaco/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "metaco/checkpoint.hpp"
#include "metaco/decoders.hpp"
#include "metaco/errors.hpp"
#include "metaco/meta.hpp"
#include "metaco/oracles.hpp"
#include "metaco/parallel.hpp"

#ifndef METACO_VERSION
#define METACO_VERSION "0.1.0"
#endif

namespace metaco {

const char* version() noexcept { return METACO_VERSION; }

double compute_drop(double objective, double reference, Sense sense) {
  if (!(reference > 0.0)) throw MetricError("reference objective must be > 0");
  const double gap = sense == Sense::Minimize ? objective - reference : reference - objective;
  return gap / reference * 100.0;
}

EvalConfig EvalConfig::from_kv(const KeyValues& all) {
  const auto kv = section(all, "eval");
  EvalConfig c;
  c.checkpoint = get_string(kv, "ckpt", c.checkpoint);
  c.instance_dir = get_string(kv, "instances", c.instance_dir);
  c.decoder = get_string(kv, "decoder", c.decoder);
  c.as_steps = static_cast<int>(get_long(kv, "as-steps", c.as_steps));
  c.as_lr = get_double(kv, "as-lr", c.as_lr);
  c.as_samples = static_cast<int>(get_long(kv, "as-samples", c.as_samples));
  c.scope = parse_scope(get_string(kv, "scope", to_string(c.scope)));
  c.samples = static_cast<int>(get_long(kv, "K", c.samples));
  c.tau = get_double(kv, "tau", c.tau);
  c.budget = get_long(kv, "budget", c.budget);
  c.two_opt = get_bool(kv, "two-opt", c.two_opt);
  c.reference = get_string(kv, "reference", c.reference);
  c.seed = static_cast<std::uint64_t>(get_long(kv, "seed", static_cast<long>(c.seed)));
  c.workers = static_cast<unsigned>(get_long(kv, "workers", c.workers));
  c.validate();
  return c;
}

KeyValues EvalConfig::to_kv() const {
  auto num = [](double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  };
  return {{"ckpt", checkpoint},
          {"instances", instance_dir},
          {"decoder", decoder},
          {"as-steps", std::to_string(as_steps)},
          {"as-lr", num(as_lr)},
          {"as-samples", std::to_string(as_samples)},
          {"scope", to_string(scope)},
          {"K", std::to_string(samples)},
          {"tau", num(tau)},
          {"budget", std::to_string(budget)},
          {"two-opt", two_opt ? "true" : "false"},
          {"reference", reference},
          {"seed", std::to_string(seed)},
          {"workers", std::to_string(workers)}};
}

void EvalConfig::validate() const {
  if (decoder != "greedy" && decoder != "sample" && decoder != "mcts")
    throw ParameterError("decoder must be greedy, sample or mcts");
  if (as_steps < 0) throw ParameterError("as-steps must be >= 0");
  if (as_steps > 0 && !(as_lr > 0.0)) throw ParameterError("as-lr must be > 0");
  if (as_steps > 0 && as_samples < 2) throw ParameterError("as-samples must be >= 2");
  if (samples < 1) throw ParameterError("K must be >= 1");
  if (!(tau > 0.0)) throw ParameterError("tau must be > 0");
  if (budget < 0) throw ParameterError("budget must be >= 0");
  if (reference != "auto" && reference != "best" && reference != "none")
    throw ParameterError("reference must be auto, best or none");
}

double EvalReport::mean_objective() const noexcept {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.objective;
  return s / static_cast<double>(rows.size());
}

double EvalReport::mean_drop() const noexcept {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.drop_pct;
  return s / static_cast<double>(rows.size());
}

double EvalReport::total_ms() const noexcept {
  double s = 0.0;
  for (const auto& r : rows) s += r.as_ms + r.decode_ms;
  return s;
}

bool EvalReport::all_feasible() const noexcept {
  return std::all_of(rows.begin(), rows.end(), [](const EvalRow& r) { return r.feasible; });
}

const std::string& instance_id(const Instance& inst) {
  return std::visit([](const auto& i) -> const std::string& { return i.id; }, inst);
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); }

AdaptOptions search_options(const EvalConfig& cfg) {
  AdaptOptions o;
  o.steps = cfg.as_steps;
  o.lr = cfg.as_lr;
  o.samples = cfg.as_samples;
  o.scope = cfg.scope;
  return o;
}

void score_tsp(const NetParams& params, const TspInstance& inst, const EvalConfig& cfg, EvalRow& row) {
  Rng rng(row.seed);
  auto t0 = Clock::now();
  const Theta theta = active_search(params, inst, search_options(cfg), rng);
  row.as_ms = ms_since(t0);
  t0 = Clock::now();
  Tour tour;
  if (cfg.decoder == "greedy") {
    tour = greedy_decode(theta, inst, rng);
  } else if (cfg.decoder == "sample") {
    tour = sample_decode(theta, inst, cfg.samples, cfg.tau, rng);
  } else {
    MctsOptions mo;
    mo.budget = cfg.budget;
    tour = mcts_decode(theta, inst, mo, rng);
  }
  if (cfg.two_opt) tour = two_opt(inst, tour);
  row.decode_ms = ms_since(t0);
  row.solution = tour.perm;
  const auto report = check_feasible(inst, tour.perm);
  row.feasible = report.feasible();
  if (!row.feasible) {
    row.error = report.violations.front();
    return;
  }
  row.objective = tour.cost;
  if (cfg.reference == "none") {
    row.reference = row.objective;
  } else if (cfg.reference == "auto" && inst.n() <= kMaxHeldKarp) {
    row.reference = held_karp(inst).objective;
    row.exact_reference = true;
  } else {
    Rng ref_rng(derive_seed(row.seed, 1));
    double best = row.objective;
    for (auto rule : {InsertionRule::Nearest, InsertionRule::Random, InsertionRule::Farthest}) {
      const Tour t = insertion(inst, rule, ref_rng);
      best = std::min(best, t.cost);
      if (rule == InsertionRule::Farthest) best = std::min(best, local_search(inst, t, {10, 10L * inst.n()}, ref_rng).cost);
    }
    row.reference = best;
  }
  row.drop_pct = compute_drop(row.objective, row.reference, Sense::Minimize);
}

void score_mis(const NetParams& params, const MisInstance& inst, const EvalConfig& cfg, EvalRow& row) {
  if (cfg.decoder == "mcts") throw ParameterError("mcts decoding is TSP only");
  Rng rng(row.seed);
  auto t0 = Clock::now();
  const Theta theta = active_search(params, inst, search_options(cfg), rng);
  row.as_ms = ms_since(t0);
  t0 = Clock::now();
  const NodeSet set = cfg.decoder == "greedy" ? greedy_decode(theta, inst)
                                              : sample_decode(theta, inst, cfg.samples, cfg.tau, rng);
  row.decode_ms = ms_since(t0);
  row.solution = set.sorted();
  const auto report = check_feasible(inst, row.solution);
  row.feasible = report.feasible();
  if (!row.feasible) {
    row.error = report.violations.front();
    return;
  }
  row.objective = static_cast<double>(set.size());
  if (cfg.reference == "none") {
    row.reference = row.objective;
  } else {
    double best = std::max(row.objective, static_cast<double>(greedy_degree_mis(inst).size()));
    if (cfg.reference == "auto") {
      const auto ex = exact_mis(inst);
      best = std::max(best, ex.objective);
      row.exact_reference = ex.proven_optimal;
    }
    row.reference = best;
  }
  if (row.reference > 0.0) row.drop_pct = compute_drop(row.objective, row.reference, Sense::Maximize);
}

}  // namespace

EvalReport evaluate(const NetParams& params, const std::vector<Instance>& instances, const EvalConfig& cfg) {
  cfg.validate();
  EvalReport rep;
  rep.rows.resize(instances.size());
  parallel_for(instances.size(), cfg.workers, [&](std::size_t i) {
    EvalRow& row = rep.rows[i];
    row.instance = instance_id(instances[i]);
    row.decoder = cfg.decoder;
    row.seed = derive_seed(cfg.seed, i);
    try {
      std::visit(
          [&](const auto& inst) {
            using T = std::decay_t<decltype(inst)>;
            if constexpr (std::is_same_v<T, TspInstance>) {
              if (params.arch.problem != Problem::Tsp) throw ParameterError("checkpoint is not a TSP model");
              score_tsp(params, inst, cfg, row);
            } else {
              if (params.arch.problem != Problem::Mis) throw ParameterError("checkpoint is not a MIS model");
              score_mis(params, inst, cfg, row);
            }
          },
          instances[i]);
    } catch (const Error& e) {
      row.feasible = false;
      row.error = e.what();
    }
  });
  rep.metadata["version"] = version();
  rep.metadata["seed"] = std::to_string(cfg.seed);
  for (const auto& [k, v] : cfg.to_kv()) rep.metadata["config." + k] = v;
  return rep;
}

std::vector<Instance> load_instances(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("instance directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Instance> out;
  for (const auto& f : files) out.push_back(read_instance(f));
  return out;
}

EvalReport eval_run(const EvalConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ParameterError("eval needs a checkpoint");
  const auto params = params_from_checkpoint(load_checkpoint(std::filesystem::path(cfg.checkpoint)));
  auto rep = evaluate(params, load_instances(cfg.instance_dir), cfg);
  rep.metadata["ckpt_digest"] = file_digest(cfg.checkpoint);
  return rep;
}

void write_report_csv(const EvalReport& report, std::ostream& out) {
  out << "instance,objective,reference,drop_pct,as_ms,decode_ms,decoder,seed\n";
  out << std::setprecision(12);
  for (const auto& r : report.rows)
    out << r.instance << ',' << r.objective << ',' << r.reference << ',' << r.drop_pct << ',' << r.as_ms << ','
        << r.decode_ms << ',' << r.decoder << ',' << r.seed << '\n';
}

void write_report(const EvalReport& report, const std::filesystem::path& csv_path) {
  {
    std::ofstream out(csv_path);
    if (!out) throw Error("cannot write " + csv_path.string());
    write_report_csv(report, out);
  }
  std::ofstream meta(csv_path.string() + ".meta");
  if (!meta) throw Error("cannot write " + csv_path.string() + ".meta");
  meta << std::setprecision(12);
  for (const auto& [k, v] : report.metadata) meta << k << '=' << v << '\n';
  meta << "mean_objective=" << report.mean_objective() << '\n';
  meta << "mean_drop_pct=" << report.mean_drop() << '\n';
  meta << "total_ms=" << report.total_ms() << '\n';
  meta << "instances=" << report.rows.size() << '\n';
  int failed = 0;
  for (const auto& r : report.rows) {
    if (r.feasible) continue;
    ++failed;
    meta << "failed." << r.instance << '=' << r.error << '\n';
  }
  meta << "failed=" << failed << '\n';
}

}  // namespace metaco
