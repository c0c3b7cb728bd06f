#include "metaco/meta.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <utility>

#include "metaco/errors.hpp"
#include "metaco/parallel.hpp"

namespace metaco {

const char* to_string(InnerOptimizer o) noexcept { return o == InnerOptimizer::Sgd ? "sgd" : "adamw"; }

InnerOptimizer parse_inner_optimizer(const std::string& text) {
  if (text == "adamw" || text == "adam") return InnerOptimizer::AdamW;
  if (text == "sgd") return InnerOptimizer::Sgd;
  throw ParameterError("unknown inner optimizer '" + text + "'");
}

namespace {

ForwardResult net_forward(const NetParams& p, const TspInstance& inst) { return tsp_forward(p, inst); }
ForwardResult net_forward(const NetParams& p, const MisInstance& inst) { return mis_forward(p, inst); }

template <class Inst>
double estimate(const Theta& theta, const Inst& inst, const AdaptOptions& opts, Rng& rng, std::vector<double>& grad) {
  if (opts.exact_gradient) {
    grad = exact_grad_theta(theta, inst);
    return exact_expected_cost(theta, inst);
  }
  const auto batch = rollout(theta, inst, opts.samples, opts.tau, rng);
  grad = reinforce_grad_theta(batch, theta, inst, EstimatorOptions{opts.standardize});
  return batch.mean_cost();
}

void sgd_step(NetParams& params, const Gradients& grads, double lr, double weight_decay) {
  for (const auto& g : grads.tensors)
    if (!g.value.allFinite()) throw TrainingError("non-finite gradient for '" + g.name + "'");
  for (const auto& g : grads.tensors) {
    auto& w = params.at(g.name);
    const auto* t = params.find(g.name);
    if (weight_decay != 0.0 && t->scope != Scope::GnnOut) w *= 1.0 - lr * weight_decay;
    w -= lr * g.value;
  }
}

void check_adapt_options(const AdaptOptions& o) {
  if (o.steps < 0) throw ParameterError("adaptation steps must be >= 0");
  if (o.steps > 0 && !(o.lr > 0.0)) throw ParameterError("adaptation learning rate must be > 0");
  if (!(o.tau > 0.0)) throw ParameterError("temperature must be > 0");
  if (!o.exact_gradient && o.samples < 2) throw ParameterError("adaptation needs at least 2 samples");
}

bool adapts_backbone(const AdaptOptions& o) { return o.scope.contains(Scope::Gnn); }

/// Adaptation starting from an existing forward pass of `params`.
template <class Inst>
AdaptResult adapt_from(const NetParams& params, const ForwardResult& initial, const Inst& inst,
                       const AdaptOptions& opts, Rng& rng) {
  AdaptResult r;
  if (opts.steps == 0) {
    r.params = params;
    r.theta = initial.theta;
    return r;
  }
  ScopeSet scope = opts.scope;
  if (adapts_backbone(opts)) {
    r.params = params;
    scope = ScopeSet::from_bits(scope.bits() & ~static_cast<unsigned>(Scope::GnnOut));
  } else {
    r.params = attach_gnn_out(params, initial.trace);
  }
  AdamWState state;
  const AdamWConfig acfg{opts.lr, opts.weight_decay};
  std::vector<double> g;
  for (int t = 0; t < opts.steps; ++t) {
    try {
      auto fwd = net_forward(r.params, inst);
      const double cost = estimate(fwd.theta, inst, opts, rng, g);
      if (!std::isfinite(cost)) throw TrainingError("non-finite loss");
      r.step_costs.push_back(cost);
      const auto grads = backward(fwd.trace, g, scope);
      if (opts.optimizer == InnerOptimizer::AdamW)
        adamw_step(r.params, grads, state, acfg);
      else
        sgd_step(r.params, grads, opts.lr, opts.weight_decay);
    } catch (const Error& e) {
      throw TrainingError("adaptation failed at step " + std::to_string(t) + " on '" + inst.id + "': " + e.what());
    }
  }
  r.theta = net_forward(r.params, inst).theta;
  return r;
}

template <class Inst>
AdaptResult adapt_impl(const NetParams& params, const Inst& inst, const AdaptOptions& opts, Rng& rng) {
  check_adapt_options(opts);
  return adapt_from(params, net_forward(params, inst), inst, opts, rng);
}

template <class Inst>
MetaGradient meta_grad_impl(const NetParams& params, const Inst& inst, const AdaptOptions& opts, Rng& rng) {
  check_adapt_options(opts);
  if (params.has_gnn_out()) throw StateError("meta-gradient needs parameters without a gnn_out tensor");
  auto fwd0 = net_forward(params, inst);
  MetaGradient out;
  std::vector<double> g;
  const ScopeSet trainable = Scope::Gnn | Scope::Mlp;
  if (opts.steps == 0) {
    out.cost = estimate(fwd0.theta, inst, opts, rng, g);
    out.grads = backward(fwd0.trace, g, trainable);
    return out;
  }
  const auto adapted = adapt_from(params, fwd0, inst, opts, rng);
  auto fwd_t = net_forward(adapted.params, inst);
  out.cost = estimate(fwd_t.theta, inst, opts, rng, g);
  if (!std::isfinite(out.cost)) throw TrainingError("non-finite loss after adaptation on '" + inst.id + "'");
  if (!adapted.params.has_gnn_out()) {
    out.grads = backward(fwd_t.trace, g, trainable);
    return out;
  }
  auto head = backward(fwd_t.trace, g, Scope::GnnOut | Scope::Mlp);
  Gradients result;
  const NamedTensor* g_out = std::as_const(head).find(kGnnOutName);
  result = backward_backbone(fwd0.trace, g_out->value);
  for (auto& t : head.tensors)
    if (t.name != kGnnOutName) result.tensors.push_back(std::move(t));
  // keep the parameter order of `params`
  Gradients ordered;
  for (const auto& p : params.tensors)
    if (const NamedTensor* t = std::as_const(result).find(p.name)) ordered.tensors.push_back(*t);
  out.grads = std::move(ordered);
  return out;
}

}  // namespace

AdaptResult inner_adapt(const NetParams& params, const TspInstance& inst, const AdaptOptions& opts, Rng& rng) {
  return adapt_impl(params, inst, opts, rng);
}
AdaptResult inner_adapt(const NetParams& params, const MisInstance& inst, const AdaptOptions& opts, Rng& rng) {
  return adapt_impl(params, inst, opts, rng);
}

MetaGradient first_order_meta_grad(const NetParams& params, const TspInstance& inst, const AdaptOptions& opts,
                                   Rng& rng) {
  return meta_grad_impl(params, inst, opts, rng);
}
MetaGradient first_order_meta_grad(const NetParams& params, const MisInstance& inst, const AdaptOptions& opts,
                                   Rng& rng) {
  return meta_grad_impl(params, inst, opts, rng);
}

Theta active_search(const NetParams& params, const TspInstance& inst, const AdaptOptions& opts, Rng& rng) {
  return inner_adapt(params, inst, opts, rng).theta;
}
Theta active_search(const NetParams& params, const MisInstance& inst, const AdaptOptions& opts, Rng& rng) {
  return inner_adapt(params, inst, opts, rng).theta;
}

// ---------------------------------------------------------------------------

TrainConfig TrainConfig::defaults(Problem p) {
  TrainConfig c;
  c.problem = p;
  if (p == Problem::Mis) {
    c.arch = ArchConfig::mis_default();
    c.samples = 32;
    c.inner_steps = 1;
    c.inner_lr = 0.0002;
    c.meta_lr = 0.001;
    c.meta_weight_decay = 0.0;
    c.batch = 8;
  }
  return c;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  const auto prob = get_string(kv, "problem", "tsp");
  if (prob != "tsp" && prob != "mis") throw ParameterError("unknown problem '" + prob + "'");
  TrainConfig c = defaults(prob == "mis" ? Problem::Mis : Problem::Tsp);
  c.arch.width = static_cast<int>(get_long(kv, "width", c.arch.width));
  c.arch.gnn_layers = static_cast<int>(get_long(kv, "gnn-layers", c.arch.gnn_layers));
  c.arch.mlp_layers = static_cast<int>(get_long(kv, "mlp-layers", c.arch.mlp_layers));
  c.tsp_n = static_cast<int>(get_long(kv, "n", c.tsp_n));
  c.knn = static_cast<int>(get_long(kv, "k", c.knn));
  c.er_n_lo = static_cast<int>(get_long(kv, "n-lo", c.er_n_lo));
  c.er_n_hi = static_cast<int>(get_long(kv, "n-hi", c.er_n_hi));
  c.er_p = get_double(kv, "p", c.er_p);
  c.instance_dir = get_string(kv, "instance-dir", c.instance_dir);
  c.inner_steps = static_cast<int>(get_long(kv, "inner-steps", c.inner_steps));
  c.inner_lr = get_double(kv, "inner-lr", c.inner_lr);
  c.inner_weight_decay = get_double(kv, "inner-weight-decay", c.inner_weight_decay);
  c.inner_optimizer = parse_inner_optimizer(get_string(kv, "inner-optimizer", to_string(c.inner_optimizer)));
  c.scope = parse_scope(get_string(kv, "scope", to_string(c.scope)));
  c.samples = static_cast<int>(get_long(kv, "samples", c.samples));
  c.tau = get_double(kv, "tau", c.tau);
  c.standardize = get_bool(kv, "standardize", c.standardize);
  c.meta_lr = get_double(kv, "meta-lr", c.meta_lr);
  c.meta_weight_decay = get_double(kv, "meta-weight-decay", c.meta_weight_decay);
  c.batch = static_cast<int>(get_long(kv, "batch", c.batch));
  c.total_steps = get_long(kv, "steps", c.total_steps);
  c.seed = static_cast<std::uint64_t>(get_long(kv, "seed", static_cast<long>(c.seed)));
  c.checkpoint_every = get_long(kv, "checkpoint-every", c.checkpoint_every);
  c.checkpoint_path = get_string(kv, "checkpoint", c.checkpoint_path);
  c.workers = static_cast<unsigned>(get_long(kv, "workers", c.workers));
  c.validate();
  return c;
}

KeyValues TrainConfig::to_kv() const {
  auto num = [](double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
  };
  return {{"problem", metaco::to_string(problem)},
          {"width", std::to_string(arch.width)},
          {"gnn-layers", std::to_string(arch.gnn_layers)},
          {"mlp-layers", std::to_string(arch.mlp_layers)},
          {"n", std::to_string(tsp_n)},
          {"k", std::to_string(knn)},
          {"n-lo", std::to_string(er_n_lo)},
          {"n-hi", std::to_string(er_n_hi)},
          {"p", num(er_p)},
          {"instance-dir", instance_dir},
          {"inner-steps", std::to_string(inner_steps)},
          {"inner-lr", num(inner_lr)},
          {"inner-weight-decay", num(inner_weight_decay)},
          {"inner-optimizer", metaco::to_string(inner_optimizer)},
          {"scope", metaco::to_string(scope)},
          {"samples", std::to_string(samples)},
          {"tau", num(tau)},
          {"standardize", standardize ? "true" : "false"},
          {"meta-lr", num(meta_lr)},
          {"meta-weight-decay", num(meta_weight_decay)},
          {"batch", std::to_string(batch)},
          {"steps", std::to_string(total_steps)},
          {"seed", std::to_string(seed)},
          {"checkpoint-every", std::to_string(checkpoint_every)},
          {"checkpoint", checkpoint_path},
          {"workers", std::to_string(workers)}};
}

AdaptOptions TrainConfig::adapt_options() const {
  AdaptOptions o;
  o.steps = inner_steps;
  o.lr = inner_lr;
  o.weight_decay = inner_weight_decay;
  o.scope = scope;
  o.optimizer = inner_optimizer;
  o.samples = samples;
  o.tau = tau;
  o.standardize = standardize;
  return o;
}

void TrainConfig::validate() const {
  if (arch.problem != problem) throw ParameterError("architecture problem does not match training problem");
  if (inner_steps < 0) throw ParameterError("inner-steps must be >= 0");
  if (inner_steps > 0 && !(inner_lr > 0.0)) throw ParameterError("inner-lr must be > 0");
  if (!(meta_lr > 0.0)) throw ParameterError("meta-lr must be > 0");
  if (batch < 1) throw ParameterError("batch must be >= 1");
  if (samples < 2) throw ParameterError("samples must be >= 2");
  if (total_steps < 0) throw ParameterError("steps must be >= 0");
  if (!(tau > 0.0)) throw ParameterError("tau must be > 0");
  if (scope.empty()) throw ParameterError("scope must not be empty");
  if (problem == Problem::Tsp && tsp_n < 3) throw ParameterError("n must be >= 3");
  if (problem == Problem::Mis && instance_dir.empty() &&
      (er_n_lo < 1 || er_n_hi < er_n_lo || er_p < 0.0 || er_p > 1.0))
    throw ParameterError("invalid ER generator settings");
}

// ---------------------------------------------------------------------------

MetaStepResult meta_step(NetParams& params, const std::vector<Instance>& batch, const TrainConfig& cfg,
                         AdamWState& state, Rng& rng) {
  if (batch.empty()) throw ParameterError("meta step needs at least one instance");
  const auto opts = cfg.adapt_options();
  const auto step_seed = rng();
  std::vector<std::optional<MetaGradient>> results(batch.size());
  std::vector<std::string> errors(batch.size());
  parallel_for(batch.size(), cfg.workers, [&](std::size_t i) {
    Rng r(derive_seed(step_seed, i));
    try {
      results[i] = std::visit([&](const auto& inst) { return first_order_meta_grad(params, inst, opts, r); },
                              batch[i]);
    } catch (const TrainingError& e) {
      errors[i] = e.what();
    } catch (const EstimatorError& e) {
      errors[i] = e.what();
    }
  });
  MetaStepResult out;
  Gradients total;
  double cost = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!results[i]) {
      ++out.failed;
      std::cerr << "warning: skipping instance " << i << " in meta step: " << errors[i] << '\n';
      continue;
    }
    ++out.used;
    cost += results[i]->cost;
    total.accumulate(results[i]->grads);
  }
  if (out.used == 0) throw TrainingError("meta step failed for every instance");
  out.mean_cost = cost / out.used;
  adamw_step(params, total, state, AdamWConfig{cfg.meta_lr, cfg.meta_weight_decay});
  return out;
}

namespace {

constexpr std::uint64_t kInstanceStream = 0x1d5a7e11ULL;
constexpr std::uint64_t kStepStream = 0x5eed57e9ULL;

std::vector<MisInstance> load_instance_dir(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<MisInstance> out;
  for (const auto& f : files) {
    auto inst = read_instance(f);
    if (auto* m = std::get_if<MisInstance>(&inst)) out.push_back(std::move(*m));
  }
  if (out.empty()) throw Error("no MIS instances found in " + dir);
  return out;
}

std::vector<Instance> make_batch(const TrainConfig& cfg, long step, const std::vector<MisInstance>* pool) {
  const auto seed = derive_seed(cfg.seed ^ kInstanceStream, static_cast<std::uint64_t>(step));
  std::vector<Instance> out;
  if (cfg.problem == Problem::Tsp) {
    const int k = cfg.knn > 0 ? cfg.knn : default_knn(cfg.tsp_n);
    for (auto& dense : gen_tsp_uniform(cfg.tsp_n, cfg.batch, seed)) out.emplace_back(sparsify_knn(dense, k));
  } else if (pool) {
    Rng r(seed);
    for (int i = 0; i < cfg.batch; ++i) out.emplace_back((*pool)[r.below(pool->size())]);
  } else {
    for (auto& g : gen_er(cfg.er_n_lo, cfg.er_n_hi, cfg.er_p, cfg.batch, seed)) out.emplace_back(std::move(g));
  }
  return out;
}

Matrix matrix_from(const NamedArray& a) {
  if (a.shape.size() != 2) throw ShapeError("array '" + a.name + "' is not rank 2");
  Matrix m(static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1]));
  if (a.data.size() != static_cast<std::size_t>(m.size())) throw ShapeError("array '" + a.name + "' size mismatch");
  std::copy(a.data.begin(), a.data.end(), m.data());
  return m;
}

NamedArray array_from(const std::string& name, const Matrix& m) {
  return {name,
          {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
          std::vector<double>(m.data(), m.data() + m.size())};
}

}  // namespace

std::vector<Instance> training_batch(const TrainConfig& cfg, long step) {
  if (cfg.problem == Problem::Mis && !cfg.instance_dir.empty()) {
    const auto pool = load_instance_dir(cfg.instance_dir);
    return make_batch(cfg, step, &pool);
  }
  return make_batch(cfg, step, nullptr);
}

Checkpoint training_checkpoint(const NetParams& params, const AdamWState& state, long step, const TrainConfig& cfg) {
  auto c = to_checkpoint(params);
  c.header["kind"] = "model";
  c.header["train.step"] = std::to_string(step);
  c.header["adam.step"] = std::to_string(state.step);
  for (const auto& [k, v] : cfg.to_kv()) c.header["train." + k] = v;
  for (const auto& [name, m] : state.m) c.arrays.push_back(array_from("adam.m." + name, m));
  for (const auto& [name, v] : state.v) c.arrays.push_back(array_from("adam.v." + name, v));
  return c;
}

void restore_training_state(const Checkpoint& ckpt, NetParams& params, AdamWState& state, long& step) {
  params = params_from_checkpoint(ckpt);
  state = AdamWState{};
  auto it = ckpt.header.find("train.step");
  step = it == ckpt.header.end() ? 0 : std::stol(it->second);
  it = ckpt.header.find("adam.step");
  state.step = it == ckpt.header.end() ? 0 : std::stol(it->second);
  for (const auto& a : ckpt.arrays) {
    if (a.name.starts_with("adam.m."))
      state.m[a.name.substr(7)] = matrix_from(a);
    else if (a.name.starts_with("adam.v."))
      state.v[a.name.substr(7)] = matrix_from(a);
  }
}

TrainResult train(const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  TrainResult r;
  long start = 0;
  if (!opts.resume.empty()) {
    restore_training_state(load_checkpoint(opts.resume), r.params, r.state, start);
    if (!(r.params.arch == cfg.arch)) throw ParameterError("checkpoint architecture does not match the config");
  } else {
    r.params = init_params(cfg.arch, cfg.seed);
  }
  std::optional<std::vector<MisInstance>> pool;
  if (cfg.problem == Problem::Mis && !cfg.instance_dir.empty()) pool = load_instance_dir(cfg.instance_dir);
  for (long s = start; s < cfg.total_steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batch = make_batch(cfg, s, pool ? &*pool : nullptr);
    Rng rng(derive_seed(cfg.seed ^ kStepStream, static_cast<std::uint64_t>(s)));
    const auto res = meta_step(r.params, batch, cfg, r.state, rng);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    r.log.push_back({s, res.mean_cost, ms});
    if (opts.on_step) opts.on_step(r.log.back());
    const bool last = s + 1 == cfg.total_steps;
    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 && ((s + 1) % cfg.checkpoint_every == 0 || last))
      save_checkpoint(training_checkpoint(r.params, r.state, s + 1, cfg), cfg.checkpoint_path);
  }
  return r;
}

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "step,mean_cost,wall_ms\n";
  for (const auto& row : log) out << row.step << ',' << row.mean_cost << ',' << row.wall_ms << '\n';
}

}  // namespace metaco
