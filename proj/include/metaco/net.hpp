#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "metaco/instances.hpp"
#include "metaco/solution_space.hpp"

namespace metaco {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Fine-tuning scope labels. Every parameter tensor carries exactly one.
enum class Scope : unsigned { Gnn = 1u, GnnOut = 2u, Mlp = 4u };

class ScopeSet {
 public:
  constexpr ScopeSet() = default;
  constexpr ScopeSet(Scope s) : bits_(static_cast<unsigned>(s)) {}  // NOLINT(google-explicit-constructor)
  constexpr bool contains(Scope s) const noexcept { return bits_ & static_cast<unsigned>(s); }
  constexpr bool empty() const noexcept { return bits_ == 0; }
  constexpr ScopeSet operator|(ScopeSet o) const noexcept { return from_bits(bits_ | o.bits_); }
  constexpr bool operator==(const ScopeSet&) const = default;
  constexpr unsigned bits() const noexcept { return bits_; }
  static constexpr ScopeSet from_bits(unsigned b) noexcept {
    ScopeSet s;
    s.bits_ = b & 7u;
    return s;
  }
  static constexpr ScopeSet all() noexcept { return from_bits(7u); }

 private:
  unsigned bits_ = 0;
};

constexpr ScopeSet operator|(Scope a, Scope b) noexcept { return ScopeSet(a) | ScopeSet(b); }

/// Parses "gnnout+mlp", "gnn,mlp", "mlp", ... (case-insensitive).
ScopeSet parse_scope(const std::string& text);
std::string to_string(ScopeSet s);

struct ArchConfig {
  Problem problem = Problem::Tsp;
  int width = 32;
  int gnn_layers = 12;
  int mlp_layers = 3;
  double bn_eps = 1e-5;

  /// 12-layer edge-gated GNN of width 32 followed by a 3-layer MLP.
  static ArchConfig tsp_default();
  /// 3-layer GCN of width 32 followed by a 10-layer residual MLP.
  static ArchConfig mis_default();

  std::map<std::string, std::string> to_kv() const;
  static ArchConfig from_kv(const std::map<std::string, std::string>& kv);
  bool operator==(const ArchConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Scope scope = Scope::Gnn;
  Matrix value;
};

/// Name of the free tensor standing in for the backbone output during fine-tuning.
inline constexpr const char* kGnnOutName = "gnn_out";

/// Named, shaped parameter tensors. When a `gnn_out` tensor is present the
/// forward pass skips the backbone and reads it instead.
class NetParams {
 public:
  ArchConfig arch;
  std::vector<NamedTensor> tensors;

  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  const NamedTensor* find(const std::string& name) const noexcept;
  bool has_gnn_out() const noexcept { return find(kGnnOutName) != nullptr; }
  std::size_t value_count() const noexcept;
  /// Throws ShapeError when tensors are missing, misshaped or non-finite.
  void validate() const;
  void add(std::string name, Scope scope, Matrix value);
};

NetParams init_params(const ArchConfig& arch, std::uint64_t seed);

/// Gradients for a subset of tensors, keyed like NetParams.
struct Gradients {
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const noexcept;
  Matrix* find(const std::string& name) noexcept;
  /// this += other, matching by name; tensors missing here are copied.
  void accumulate(const Gradients& other);
  void scale(double s);
  double squared_norm() const noexcept;
};

/// Activations cached by a forward pass. `backward` consumes it once.
struct ForwardTrace {
  Problem problem = Problem::Tsp;
  std::shared_ptr<const NetParams> params;
  bool backbone_ran = false;
  bool consumed = false;

  // graph structure
  int n = 0;
  std::vector<int> src, dst;               // TSP directed edges
  std::vector<double> inv_out_degree;      // TSP mean aggregation
  std::vector<std::vector<std::pair<int, double>>> norm_adj;  // MIS D^-1/2 A D^-1/2
  Matrix node_input, edge_input;

  struct BatchNormCache {
    Matrix xhat;
    Eigen::RowVectorXd inv_std;
    Matrix out;  // gamma * xhat + beta
  };
  struct GnnLayerCache {
    Matrix h, e;        // layer inputs
    Matrix gate, hv;    // sigmoid(e), h V
    BatchNormCache bn_h, bn_e;
    Matrix pre, prop;   // MIS: pre-activation, normalized propagation A_hat h
  };
  std::vector<GnnLayerCache> layers;

  Matrix gnn_out;                 // backbone output (edges x d for TSP, nodes x d for MIS)
  std::vector<Matrix> mlp_inputs;  // input of every head layer
  std::vector<Matrix> mlp_pre;     // pre-activation of every hidden head layer
};

struct ForwardResult {
  Theta theta;
  ForwardTrace trace;
};

ForwardResult tsp_forward(const NetParams& params, const TspInstance& inst);
ForwardResult mis_forward(const NetParams& params, const MisInstance& inst);

/// Reverse-mode gradients of a scalar loss with upstream dL/dtheta, restricted
/// to `scope`. Scope::GnnOut yields the gradient w.r.t. the backbone output
/// (named `gnn_out`). Throws StateError when the trace was already consumed.
Gradients backward(ForwardTrace& trace, std::span<const double> upstream, ScopeSet scope);

/// Continues a backbone-only backward from an externally supplied gradient at
/// the backbone output; returns gradients for the Scope::Gnn tensors.
Gradients backward_backbone(ForwardTrace& trace, const Matrix& grad_gnn_out);

/// Copy of `params` with the traced backbone output attached as `gnn_out`.
NetParams attach_gnn_out(const NetParams& params, const ForwardTrace& trace);
/// Copy of `params` without the free `gnn_out` tensor.
NetParams detach_gnn_out(const NetParams& params);

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  long step = 0;
  std::map<std::string, Matrix> m, v;
};

/// Decoupled-weight-decay Adam on the tensors present in `grads`. Decay is
/// not applied to Scope::GnnOut tensors. Throws TrainingError on non-finite
/// gradients without touching `params` or `state`.
void adamw_step(NetParams& params, const Gradients& grads, AdamWState& state, const AdamWConfig& cfg);

}  // namespace metaco
