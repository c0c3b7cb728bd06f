#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "metaco/checkpoint.hpp"
#include "metaco/config.hpp"
#include "metaco/instances.hpp"
#include "metaco/net.hpp"
#include "metaco/reinforce.hpp"
#include "metaco/rng.hpp"

namespace metaco {

enum class InnerOptimizer { AdamW, Sgd };

const char* to_string(InnerOptimizer o) noexcept;
InnerOptimizer parse_inner_optimizer(const std::string& text);

/// Per-instance fine-tuning settings shared by inner adaptation and active search.
struct AdaptOptions {
  int steps = 0;
  double lr = 0.05;
  double weight_decay = 0.0;
  ScopeSet scope = Scope::GnnOut | Scope::Mlp;
  InnerOptimizer optimizer = InnerOptimizer::AdamW;
  int samples = 64;
  double tau = 1.0;
  bool standardize = true;
  /// Replace REINFORCE by the enumerated gradient (tiny instances only).
  bool exact_gradient = false;
};

struct AdaptResult {
  NetParams params;
  Theta theta;
  /// Estimated expected cost before each update.
  std::vector<double> step_costs;
};

/// Runs `opts.steps` updates of the expected cost on a copy of `params`.
/// Unless the scope contains Scope::Gnn the backbone runs once and its output
/// is attached as the `gnn_out` tensor; it is updated only when
/// Scope::GnnOut is in scope. Throws TrainingError naming the failing step.
AdaptResult inner_adapt(const NetParams& params, const TspInstance& inst, const AdaptOptions& opts, Rng& rng);
AdaptResult inner_adapt(const NetParams& params, const MisInstance& inst, const AdaptOptions& opts, Rng& rng);

struct MetaGradient {
  Gradients grads;  // keyed by the tensors of the original params
  double cost = 0.0;  // expected cost estimate after adaptation
};

/// First-order meta-gradient for one instance: adapt, re-estimate at the
/// adapted parameters and take that gradient as the gradient for the
/// original ones. A `gnn_out` gradient is pulled back through the backbone
/// evaluated at the original parameters. With zero steps this is the plain
/// gradient of the expected cost.
MetaGradient first_order_meta_grad(const NetParams& params, const TspInstance& inst, const AdaptOptions& opts,
                                   Rng& rng);
MetaGradient first_order_meta_grad(const NetParams& params, const MisInstance& inst, const AdaptOptions& opts,
                                   Rng& rng);

struct TrainConfig {
  Problem problem = Problem::Tsp;
  ArchConfig arch = ArchConfig::tsp_default();
  // instance source
  int tsp_n = 20;
  int knn = 0;  // 0 picks default_knn(n)
  int er_n_lo = 25;
  int er_n_hi = 35;
  double er_p = 0.15;
  std::string instance_dir;  // MIS: sample training graphs from here when set
  // inner loop
  int inner_steps = 5;
  double inner_lr = 0.05;
  double inner_weight_decay = 0.0;
  InnerOptimizer inner_optimizer = InnerOptimizer::AdamW;
  ScopeSet scope = Scope::GnnOut | Scope::Mlp;
  int samples = 64;
  double tau = 1.0;
  bool standardize = true;
  // outer loop
  double meta_lr = 0.005;
  double meta_weight_decay = 0.0005;
  int batch = 3;
  long total_steps = 100;
  std::uint64_t seed = 0;
  long checkpoint_every = 0;
  std::string checkpoint_path;
  unsigned workers = 0;

  static TrainConfig defaults(Problem p);
  /// Keys mirror the CLI flags (problem, n, k, n-lo, n-hi, p, inner-steps,
  /// inner-lr, meta-lr, batch, samples, steps, scope, seed, ...).
  static TrainConfig from_kv(const KeyValues& kv);
  KeyValues to_kv() const;
  AdaptOptions adapt_options() const;
  /// Throws ParameterError on out-of-range settings.
  void validate() const;
};

struct MetaStepResult {
  double mean_cost = 0.0;
  int used = 0;
  int failed = 0;
};

/// One first-order meta update over `batch`. Instance i draws from the stream
/// derive_seed(s, i) where s = rng(); gradients are summed in batch order.
/// Failing instances are skipped; throws TrainingError if all fail.
MetaStepResult meta_step(NetParams& params, const std::vector<Instance>& batch, const TrainConfig& cfg,
                         AdamWState& state, Rng& rng);

struct TrainLogRow {
  long step = 0;
  double mean_cost = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  NetParams params;
  AdamWState state;
  std::vector<TrainLogRow> log;
};

struct TrainOptions {
  std::filesystem::path resume;  // training checkpoint to continue from
  std::function<void(const TrainLogRow&)> on_step;
};

/// Training instances of meta-step `step`, a pure function of (cfg, step).
std::vector<Instance> training_batch(const TrainConfig& cfg, long step);

TrainResult train(const TrainConfig& cfg, const TrainOptions& opts = {});

/// Parameters plus optimizer state and step counter.
Checkpoint training_checkpoint(const NetParams& params, const AdamWState& state, long step, const TrainConfig& cfg);
void restore_training_state(const Checkpoint& ckpt, NetParams& params, AdamWState& state, long& step);

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path);

/// Test-time fine-tuning; returns the adapted theta.
Theta active_search(const NetParams& params, const TspInstance& inst, const AdaptOptions& opts, Rng& rng);
Theta active_search(const NetParams& params, const MisInstance& inst, const AdaptOptions& opts, Rng& rng);

}  // namespace metaco
