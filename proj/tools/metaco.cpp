#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "metaco/bench.hpp"
#include "metaco/checkpoint.hpp"
#include "metaco/config.hpp"
#include "metaco/decoders.hpp"
#include "metaco/errors.hpp"
#include "metaco/instances.hpp"
#include "metaco/meta.hpp"
#include "metaco/oracles.hpp"
#include "metaco/solution_space.hpp"

namespace fs = std::filesystem;
using namespace metaco;

namespace {

/// Flags that mirror config keys. Set values land in `kv` under `prefix`.
struct Mirror {
  std::vector<std::pair<std::string, std::optional<std::string>>> slots;

  void add(CLI::App* app, const std::vector<std::pair<std::string, std::string>>& keys) {
    slots.reserve(keys.size());
    for (const auto& [key, help] : keys) {
      slots.emplace_back(key, std::nullopt);
      app->add_option("--" + key, slots.back().second, help);
    }
  }

  void apply(KeyValues& kv, const std::string& prefix) const {
    for (const auto& [key, value] : slots)
      if (value) kv[prefix + key] = *value;
  }
};

/// Loads the config file, then overrides, then explicit flags. Undotted
/// override keys go under `prefix` so they beat the file's section.
KeyValues gather(const std::string& config, const std::vector<std::string>& overrides, const Mirror& flags,
                 const std::string& prefix) {
  KeyValues kv;
  if (!config.empty()) kv = read_config(config);
  KeyValues ov;
  apply_overrides(ov, overrides);
  for (const auto& [k, v] : ov) kv[k.find('.') == std::string::npos ? prefix + k : k] = v;
  flags.apply(kv, prefix);
  return kv;
}

void write_solution(const std::vector<int>& sol, bool tour, const std::string& path) {
  if (path.empty()) return;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  if (tour)
    write_tour(sol, out);
  else
    write_node_set(sol, out);
}

void write_all(const std::vector<Instance>& insts, const fs::path& dir, const char* ext) {
  fs::create_directories(dir);
  for (const auto& inst : insts) write_instance(inst, dir / (instance_id(inst) + ext));
  std::cout << "wrote " << insts.size() << " instances to " << dir.string() << '\n';
}

Problem problem_of(const Instance& inst) { return std::holds_alternative<TspInstance>(inst) ? Problem::Tsp : Problem::Mis; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meta-learned heatmaps for TSP and MIS"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version()));

  // gen-tsp
  auto* gen_tsp = app.add_subcommand("gen-tsp", "uniform random Euclidean TSP instances");
  int tsp_n = 20, count = 1, knn = 0;
  std::uint64_t seed = 0;
  std::string out;
  gen_tsp->add_option("--n", tsp_n, "nodes")->required();
  gen_tsp->add_option("--count", count, "instances")->required();
  gen_tsp->add_option("--seed", seed, "generator seed");
  gen_tsp->add_option("--k", knn, "neighbors kept per node (default scales with n)");
  gen_tsp->add_option("--out", out, "output directory")->required();

  // gen-er
  auto* gen_er_cmd = app.add_subcommand("gen-er", "Erdos-Renyi MIS graphs");
  int n_lo = 25, n_hi = 35;
  double p = 0.15;
  gen_er_cmd->add_option("--n-lo", n_lo, "smallest node count")->required();
  gen_er_cmd->add_option("--n-hi", n_hi, "largest node count")->required();
  gen_er_cmd->add_option("--p", p, "edge probability");
  gen_er_cmd->add_option("--count", count, "instances")->required();
  gen_er_cmd->add_option("--seed", seed, "generator seed");
  gen_er_cmd->add_option("--out", out, "output directory")->required();

  // reduce-cnf
  auto* reduce = app.add_subcommand("reduce-cnf", "CNF formula to MIS graph");
  std::string in;
  reduce->add_option("--in", in, "DIMACS CNF file")->required()->check(CLI::ExistingFile);
  reduce->add_option("--out", out, "DIMACS graph file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "meta-train a network");
  std::string problem = "tsp", config, log_path, resume;
  std::vector<std::string> overrides;
  Mirror train_flags;
  train_cmd->add_option("--problem", problem, "tsp or mis")->check(CLI::IsMember({"tsp", "mis"}));
  train_cmd->add_option("--config", config, "key=value settings file")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out, "checkpoint path")->required();
  train_cmd->add_option("--override", overrides, "key=value, beats the config file");
  train_cmd->add_option("--log", log_path, "training log CSV (default <out>.log.csv)");
  train_cmd->add_option("--resume", resume, "training checkpoint to continue from")->check(CLI::ExistingFile);
  train_flags.add(train_cmd, {{"n", "TSP nodes"},
                              {"k", "TSP neighbors"},
                              {"n-lo", "MIS smallest graph"},
                              {"n-hi", "MIS largest graph"},
                              {"p", "MIS edge probability"},
                              {"instance-dir", "MIS training graphs"},
                              {"inner-steps", "adaptation steps"},
                              {"inner-lr", "adaptation learning rate"},
                              {"inner-optimizer", "adamw or sgd"},
                              {"scope", "tuned parameter groups"},
                              {"samples", "rollouts per step"},
                              {"meta-lr", "meta learning rate"},
                              {"meta-weight-decay", "meta weight decay"},
                              {"batch", "instances per meta step"},
                              {"steps", "meta steps"},
                              {"seed", "training seed"},
                              {"checkpoint-every", "save every N steps"},
                              {"workers", "threads (0 = all)"}});

  // tune
  auto* tune = app.add_subcommand("tune", "fine-tune a heatmap on one instance");
  std::string ckpt, instance, theta_path, scope = "gnnout+mlp";
  int steps = 100, samples = 64;
  double lr = 0.05;
  tune->add_option("--ckpt", ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  tune->add_option("--instance", instance, "instance file")->required()->check(CLI::ExistingFile);
  tune->add_option("--steps", steps, "search steps");
  tune->add_option("--lr", lr, "search learning rate");
  tune->add_option("--samples", samples, "rollouts per step");
  tune->add_option("--scope", scope, "tuned parameter groups");
  tune->add_option("--seed", seed, "search seed");
  tune->add_option("--out", theta_path, "heatmap checkpoint")->required();

  // solve
  auto* solve = app.add_subcommand("solve", "decode one instance");
  std::string decoder = "greedy";
  int as_steps = 0, as_samples = 64, K = 1024;
  double as_lr = 0.05, tau = 1.0;
  long budget = 20000;
  std::optional<int> start;
  bool use_two_opt = false;
  auto* src = solve->add_option_group("source");
  src->add_option("--ckpt", ckpt, "model checkpoint")->check(CLI::ExistingFile);
  src->add_option("--theta", theta_path, "heatmap checkpoint from tune")->check(CLI::ExistingFile);
  src->require_option(1);
  solve->add_option("--instance", instance, "instance file")->required()->check(CLI::ExistingFile);
  solve->add_option("--decoder", decoder, "greedy, sample or mcts")->check(CLI::IsMember({"greedy", "sample", "mcts"}));
  solve->add_option("--as-steps", as_steps, "active search steps before decoding");
  solve->add_option("--as-lr", as_lr, "active search learning rate");
  solve->add_option("--as-samples", as_samples, "active search rollouts per step");
  solve->add_option("--scope", scope, "tuned parameter groups");
  solve->add_option("--K", K, "sampled solutions");
  solve->add_option("--tau", tau, "sampling temperature");
  solve->add_option("--budget", budget, "tree search move evaluations");
  solve->add_option("--seed", seed, "decoder seed");
  solve->add_option("--start", start, "TSP greedy start node");
  solve->add_flag("--two-opt", use_two_opt, "polish TSP tours with 2-opt");
  solve->add_option("--out", out, "solution file");

  // oracle
  auto* oracle = app.add_subcommand("oracle", "exact solvers and classical heuristics");
  std::string method;
  oracle->add_option("--instance", instance, "instance file")->required()->check(CLI::ExistingFile);
  oracle->add_option("--method", method, "solver")
      ->required()
      ->check(CLI::IsMember({"held-karp", "exact-mis", "nearest", "random", "farthest", "greedy-mis"}));
  oracle->add_option("--seed", seed, "seed for random insertion");
  oracle->add_option("--out", out, "solution file");

  // eval
  auto* eval = app.add_subcommand("eval", "score a checkpoint over an instance directory");
  Mirror eval_flags;
  eval->add_option("--config", config, "key=value settings file")->check(CLI::ExistingFile);
  eval->add_option("--override", overrides, "key=value, beats the config file");
  eval->add_option("--out", out, "report CSV")->required();
  eval_flags.add(eval, {{"ckpt", "model checkpoint"},
                        {"instances", "instance directory"},
                        {"decoder", "greedy, sample or mcts"},
                        {"as-steps", "active search steps"},
                        {"as-lr", "active search learning rate"},
                        {"as-samples", "active search rollouts per step"},
                        {"scope", "tuned parameter groups"},
                        {"K", "sampled solutions"},
                        {"tau", "sampling temperature"},
                        {"budget", "tree search move evaluations"},
                        {"two-opt", "polish TSP tours"},
                        {"reference", "auto, best or none"},
                        {"seed", "evaluation seed"},
                        {"workers", "threads (0 = all)"}});

  CLI11_PARSE(app, argc, argv);

  try {
    std::cout << std::setprecision(10);
    if (*gen_tsp) {
      auto insts = gen_tsp_uniform(tsp_n, count, seed);
      std::vector<Instance> all;
      for (auto& t : insts) all.emplace_back(sparsify_knn(t, knn > 0 ? knn : default_knn(tsp_n)));
      write_all(all, out, ".tsp");
    } else if (*gen_er_cmd) {
      auto graphs = gen_er(n_lo, n_hi, p, count, seed);
      write_all(std::vector<Instance>(graphs.begin(), graphs.end()), out, ".graph");
    } else if (*reduce) {
      const auto g = reduce_cnf_to_mis(read_cnf_file(in), fs::path(in).stem().string());
      write_instance(g, out);
      std::cout << "nodes " << g.n << " edges " << g.edges.size() << '\n';
    } else if (*train_cmd) {
      KeyValues kv = gather(config, overrides, train_flags, "train.");
      if (train_cmd->count("--problem")) kv["train.problem"] = problem;
      const auto cfg = TrainConfig::from_kv(section(kv, "train"));
      TrainOptions opts;
      opts.resume = resume;
      opts.on_step = [&](const TrainLogRow& r) {
        if (r.step % 10 == 0 || r.step + 1 == cfg.total_steps)
          std::cerr << "step " << r.step << " mean_cost " << r.mean_cost << '\n';
      };
      const auto res = train(cfg, opts);
      save_checkpoint(training_checkpoint(res.params, res.state, cfg.total_steps, cfg), fs::path(out));
      write_train_log(res.log, log_path.empty() ? out + ".log.csv" : log_path);
      std::cout << "saved " << out << '\n';
    } else if (*tune) {
      const auto params = params_from_checkpoint(load_checkpoint(fs::path(ckpt)));
      const auto inst = read_instance(instance);
      if (params.arch.problem != problem_of(inst)) throw ParameterError("checkpoint and instance problems differ");
      AdaptOptions ao;
      ao.steps = steps;
      ao.lr = lr;
      ao.samples = samples;
      ao.scope = parse_scope(scope);
      Rng rng(seed);
      const Theta theta = std::visit([&](const auto& i) { return active_search(params, i, ao, rng); }, inst);
      save_checkpoint(theta_checkpoint(theta, instance_id(inst)), fs::path(theta_path));
      std::cout << "saved " << theta_path << '\n';
    } else if (*solve) {
      const auto inst = read_instance(instance);
      Rng rng(seed);
      Theta theta;
      if (!ckpt.empty()) {
        const auto params = params_from_checkpoint(load_checkpoint(fs::path(ckpt)));
        if (params.arch.problem != problem_of(inst)) throw ParameterError("checkpoint and instance problems differ");
        AdaptOptions ao;
        ao.steps = as_steps;
        ao.lr = as_lr;
        ao.samples = as_samples;
        ao.scope = parse_scope(scope);
        theta = std::visit([&](const auto& i) { return active_search(params, i, ao, rng); }, inst);
      } else {
        theta = theta_from_checkpoint(load_checkpoint(fs::path(theta_path)));
      }
      if (const auto* t = std::get_if<TspInstance>(&inst)) {
        Tour tour;
        if (decoder == "greedy") {
          tour = greedy_decode(theta, *t, rng, start);
        } else if (decoder == "sample") {
          tour = sample_decode(theta, *t, K, tau, rng);
        } else {
          MctsOptions mo;
          mo.budget = budget;
          mo.start = start;
          tour = mcts_decode(theta, *t, mo, rng);
        }
        if (use_two_opt) tour = two_opt(*t, tour);
        if (!check_feasible(*t, tour.perm).feasible()) throw Error("decoder produced an infeasible tour");
        std::cout << "length " << tour.cost << '\n';
        write_solution(tour.perm, true, out);
      } else {
        const auto& g = std::get<MisInstance>(inst);
        if (decoder == "mcts") throw ParameterError("mcts decoding is TSP only");
        const NodeSet set = decoder == "greedy" ? greedy_decode(theta, g) : sample_decode(theta, g, K, tau, rng);
        const auto members = set.sorted();
        if (!check_feasible(g, members).feasible()) throw Error("decoder produced an infeasible set");
        std::cout << "size " << set.size() << '\n';
        write_solution(members, false, out);
      }
    } else if (*oracle) {
      const auto inst = read_instance(instance);
      Rng rng(seed);
      const auto* t = std::get_if<TspInstance>(&inst);
      const auto* g = std::get_if<MisInstance>(&inst);
      const bool tsp_method = method != "exact-mis" && method != "greedy-mis";
      if (tsp_method != (t != nullptr)) throw ParameterError("method '" + method + "' does not fit this instance");
      OracleResult r;
      if (method == "held-karp") {
        r = held_karp(*t);
      } else if (method == "exact-mis") {
        r = exact_mis(*g);
      } else if (method == "greedy-mis") {
        r.solution = greedy_degree_mis(*g).sorted();
        r.objective = static_cast<double>(r.solution.size());
      } else {
        const Tour tour = insertion(*t, parse_insertion_rule(method), rng);
        r.solution = tour.perm;
        r.objective = tour.cost;
      }
      std::cout << (t ? "length " : "size ") << r.objective << (r.proven_optimal ? " optimal" : "") << '\n';
      write_solution(r.solution, t != nullptr, out);
    } else if (*eval) {
      const auto cfg = EvalConfig::from_kv(gather(config, overrides, eval_flags, "eval."));
      const auto rep = eval_run(cfg);
      write_report(rep, out);
      std::cout << "instances " << rep.rows.size() << " mean_objective " << rep.mean_objective() << " mean_drop_pct "
                << rep.mean_drop() << '\n';
      if (!rep.all_feasible()) {
        for (const auto& r : rep.rows)
          if (!r.feasible) std::cerr << "failed " << r.instance << ": " << r.error << '\n';
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
