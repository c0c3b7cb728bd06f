#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "metaco/config.hpp"
#include "metaco/instances.hpp"
#include "metaco/net.hpp"

namespace metaco {

enum class Sense { Minimize, Maximize };

/// Signed percentage gap to `reference`: positive means worse than reference.
/// Throws MetricError when reference <= 0.
double compute_drop(double objective, double reference, Sense sense);

struct EvalConfig {
  std::string checkpoint;
  std::string instance_dir;
  std::string decoder = "greedy";  // greedy | sample | mcts
  int as_steps = 0;
  double as_lr = 0.05;
  int as_samples = 64;
  ScopeSet scope = Scope::GnnOut | Scope::Mlp;
  int samples = 1024;  // sample decoder K
  double tau = 1.0;
  long budget = 20000;  // mcts move evaluations
  bool two_opt = false;  // polish TSP tours
  std::string reference = "auto";  // auto | best | none
  std::uint64_t seed = 0;
  unsigned workers = 1;

  /// Keys mirror the CLI flags; sectioned keys under [eval] are accepted.
  static EvalConfig from_kv(const KeyValues& kv);
  KeyValues to_kv() const;
  void validate() const;
};

struct EvalRow {
  std::string instance;
  double objective = 0.0;
  double reference = 0.0;
  double drop_pct = 0.0;
  double as_ms = 0.0;      // network forward plus active search
  double decode_ms = 0.0;
  std::string decoder;
  std::uint64_t seed = 0;
  bool feasible = true;
  bool exact_reference = false;
  std::string error;
  std::vector<int> solution;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::map<std::string, std::string> metadata;

  double mean_objective() const noexcept;
  double mean_drop() const noexcept;
  double total_ms() const noexcept;
  bool all_feasible() const noexcept;
};

/// Runs (active search ->) decode -> feasibility check -> scoring for every
/// instance. Instance i uses the seed derive_seed(cfg.seed, i).
EvalReport evaluate(const NetParams& params, const std::vector<Instance>& instances, const EvalConfig& cfg);

/// Loads the checkpoint and every instance file (sorted by name) of
/// cfg.instance_dir, then evaluates.
EvalReport eval_run(const EvalConfig& cfg);

/// `instance,objective,reference,drop_pct,as_ms,decode_ms,decoder,seed`
void write_report_csv(const EvalReport& report, std::ostream& out);
void write_report(const EvalReport& report, const std::filesystem::path& csv_path);

std::vector<Instance> load_instances(const std::filesystem::path& dir);
const std::string& instance_id(const Instance& inst);

/// Version string embedded in reports and checkpoints.
const char* version() noexcept;

}  // namespace metaco
