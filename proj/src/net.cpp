#include "metaco/net.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "metaco/errors.hpp"
#include "metaco/rng.hpp"

namespace metaco {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu(double x) { return x * sigmoid(x); }
double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

struct Layout {
  std::string name;
  Scope scope;
  Eigen::Index rows, cols;
};

std::string layer_name(const char* prefix, int l, const char* leaf) {
  return std::string(prefix) + ".l" + std::to_string(l) + "." + leaf;
}

std::vector<Layout> expected_layout(const ArchConfig& a) {
  std::vector<Layout> out;
  const Eigen::Index d = a.width;
  if (a.problem == Problem::Tsp) {
    out.push_back({"gnn.node_embed.W", Scope::Gnn, 2, d});
    out.push_back({"gnn.node_embed.b", Scope::Gnn, 1, d});
    out.push_back({"gnn.edge_embed.W", Scope::Gnn, 1, d});
    out.push_back({"gnn.edge_embed.b", Scope::Gnn, 1, d});
    for (int l = 0; l < a.gnn_layers; ++l) {
      for (const char* w : {"U", "V", "P", "Q", "R"}) out.push_back({layer_name("gnn", l, w), Scope::Gnn, d, d});
      for (const char* w : {"bn_h.gamma", "bn_h.beta", "bn_e.gamma", "bn_e.beta"})
        out.push_back({layer_name("gnn", l, w), Scope::Gnn, 1, d});
    }
  } else {
    for (int l = 0; l < a.gnn_layers; ++l) {
      const Eigen::Index in = l == 0 ? 1 : d;
      out.push_back({layer_name("gnn", l, "U0"), Scope::Gnn, in, d});
      out.push_back({layer_name("gnn", l, "U1"), Scope::Gnn, in, d});
    }
  }
  for (int i = 0; i < a.mlp_layers; ++i) {
    const Eigen::Index cols = i + 1 == a.mlp_layers ? 1 : d;
    out.push_back({layer_name("mlp", i, "W"), Scope::Mlp, d, cols});
    out.push_back({layer_name("mlp", i, "b"), Scope::Mlp, 1, cols});
  }
  return out;
}

/// Collects gradients by name, then orders them like the parameter list.
class GradSink {
 public:
  explicit GradSink(const NetParams& p) : params_(p) {}
  void put(const std::string& name, Scope scope, Matrix g) { out_.tensors.push_back({name, scope, std::move(g)}); }
  Gradients finish() {
    auto rank = [&](const std::string& name) {
      for (std::size_t i = 0; i < params_.tensors.size(); ++i)
        if (params_.tensors[i].name == name) return i;
      return params_.tensors.size();
    };
    std::stable_sort(out_.tensors.begin(), out_.tensors.end(),
                     [&](const NamedTensor& a, const NamedTensor& b) { return rank(a.name) < rank(b.name); });
    return std::move(out_);
  }

 private:
  const NetParams& params_;
  Gradients out_;
};

void batchnorm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps,
                       ForwardTrace::BatchNormCache& c) {
  const auto rows = static_cast<double>(x.rows());
  const Eigen::RowVectorXd mean = x.colwise().sum() / rows;
  Matrix centered = x.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().sum() / rows;
  c.inv_std = (var.array() + eps).rsqrt().matrix();
  c.xhat = centered.array().rowwise() * c.inv_std.array();
  c.out = (c.xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
}

Matrix batchnorm_backward(const Matrix& dy, const ForwardTrace::BatchNormCache& c, const Matrix& gamma,
                          Matrix& dgamma, Matrix& dbeta) {
  const auto rows = static_cast<double>(dy.rows());
  dgamma = (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbeta = dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
  const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
  const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).colwise().sum();
  Matrix dx = (dxhat * rows).rowwise() - sum_dxhat;
  dx -= Matrix(c.xhat.array().rowwise() * sum_dxhat_xhat.array());
  dx = dx.array().rowwise() * (c.inv_std.array() / rows);
  return dx;
}

Matrix add_bias(Matrix x, const Matrix& b) {
  x.rowwise() += b.row(0);
  return x;
}

Matrix apply(const Matrix& x, double (*f)(double)) { return x.unaryExpr(f); }

void check_trace(ForwardTrace& t) {
  if (t.consumed) throw StateError("forward trace already consumed by a backward pass");
  if (!t.params) throw StateError("empty forward trace");
  t.consumed = true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scope / config

ScopeSet parse_scope(const std::string& text) {
  ScopeSet s;
  std::string tok;
  auto flush = [&] {
    if (tok.empty()) return;
    if (tok == "gnn")
      s = s | Scope::Gnn;
    else if (tok == "gnnout" || tok == "gnn_out")
      s = s | Scope::GnnOut;
    else if (tok == "mlp")
      s = s | Scope::Mlp;
    else if (tok == "all")
      s = ScopeSet::all();
    else
      throw ParameterError("unknown scope '" + tok + "'");
    tok.clear();
  };
  for (char ch : text) {
    if (ch == '+' || ch == ',' || ch == '|' || std::isspace(static_cast<unsigned char>(ch)))
      flush();
    else
      tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  flush();
  return s;
}

std::string to_string(ScopeSet s) {
  std::string out;
  auto add = [&](const char* t) {
    if (!out.empty()) out += '+';
    out += t;
  };
  if (s.contains(Scope::Gnn)) add("gnn");
  if (s.contains(Scope::GnnOut)) add("gnnout");
  if (s.contains(Scope::Mlp)) add("mlp");
  return out.empty() ? "none" : out;
}

ArchConfig ArchConfig::tsp_default() { return {Problem::Tsp, 32, 12, 3, 1e-5}; }
ArchConfig ArchConfig::mis_default() { return {Problem::Mis, 32, 3, 10, 1e-5}; }

std::map<std::string, std::string> ArchConfig::to_kv() const {
  std::ostringstream eps;
  eps.precision(17);
  eps << bn_eps;
  return {{"problem", to_string(problem)},
          {"width", std::to_string(width)},
          {"gnn_layers", std::to_string(gnn_layers)},
          {"mlp_layers", std::to_string(mlp_layers)},
          {"bn_eps", eps.str()}};
}

ArchConfig ArchConfig::from_kv(const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(std::string("missing architecture key '") + key + "'", 0);
    return it->second;
  };
  ArchConfig a;
  const auto& prob = get("problem");
  if (prob == "tsp")
    a.problem = Problem::Tsp;
  else if (prob == "mis")
    a.problem = Problem::Mis;
  else
    throw ParseError("unknown problem '" + prob + "'", 0);
  try {
    a.width = std::stoi(get("width"));
    a.gnn_layers = std::stoi(get("gnn_layers"));
    a.mlp_layers = std::stoi(get("mlp_layers"));
    if (auto it = kv.find("bn_eps"); it != kv.end()) a.bn_eps = std::stod(it->second);
  } catch (const std::logic_error&) {
    throw ParseError("malformed architecture value", 0);
  }
  if (a.width < 1 || a.gnn_layers < 0 || a.mlp_layers < 1) throw ParseError("invalid architecture sizes", 0);
  return a;
}

// ---------------------------------------------------------------------------
// NetParams / Gradients

const NamedTensor* NetParams::find(const std::string& name) const noexcept {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const Matrix& NetParams::at(const std::string& name) const {
  if (auto* t = find(name)) return t->value;
  throw ShapeError("missing parameter tensor '" + name + "'");
}

Matrix& NetParams::at(const std::string& name) { return const_cast<Matrix&>(std::as_const(*this).at(name)); }

std::size_t NetParams::value_count() const noexcept {
  std::size_t c = 0;
  for (const auto& t : tensors) c += static_cast<std::size_t>(t.value.size());
  return c;
}

void NetParams::add(std::string name, Scope scope, Matrix value) {
  if (find(name)) throw ShapeError("duplicate parameter tensor '" + name + "'");
  tensors.push_back({std::move(name), scope, std::move(value)});
}

void NetParams::validate() const {
  const auto layout = expected_layout(arch);
  for (const auto& l : layout) {
    const auto* t = find(l.name);
    if (!t) throw ShapeError("missing parameter tensor '" + l.name + "'");
    if (t->value.rows() != l.rows || t->value.cols() != l.cols)
      throw ShapeError("tensor '" + l.name + "' has shape " + std::to_string(t->value.rows()) + "x" +
                       std::to_string(t->value.cols()) + ", expected " + std::to_string(l.rows) + "x" +
                       std::to_string(l.cols));
    if (t->scope != l.scope) throw ShapeError("tensor '" + l.name + "' carries the wrong scope label");
  }
  const std::size_t extra = has_gnn_out() ? 1 : 0;
  if (tensors.size() != layout.size() + extra) throw ShapeError("unexpected parameter tensors present");
  if (const auto* g = find(kGnnOutName); g && (g->value.cols() != arch.width || g->scope != Scope::GnnOut))
    throw ShapeError("gnn_out tensor has the wrong width or scope");
  for (const auto& t : tensors)
    if (!t.value.allFinite()) throw ShapeError("tensor '" + t.name + "' contains non-finite values");
}

NetParams init_params(const ArchConfig& arch, std::uint64_t seed) {
  NetParams p;
  p.arch = arch;
  Rng rng(seed);
  Eigen::Index fan_in = 1;
  for (const auto& l : expected_layout(arch)) {
    Matrix m(l.rows, l.cols);
    const bool is_gamma = l.name.ends_with(".gamma");
    const bool is_beta = l.name.ends_with(".beta");
    if (is_gamma) {
      m.setOnes();
    } else if (is_beta) {
      m.setZero();
    } else {
      // biases follow their weight matrix and reuse its fan-in
      if (!l.name.ends_with(".b")) fan_in = l.rows;
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
    }
    p.add(l.name, l.scope, std::move(m));
  }
  return p;
}

const NamedTensor* Gradients::find(const std::string& name) const noexcept {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

Matrix* Gradients::find(const std::string& name) noexcept {
  for (auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

void Gradients::accumulate(const Gradients& other) {
  for (const auto& t : other.tensors) {
    if (Matrix* mine = find(t.name)) {
      if (mine->rows() != t.value.rows() || mine->cols() != t.value.cols())
        throw ShapeError("gradient shape mismatch for '" + t.name + "'");
      *mine += t.value;
    } else {
      tensors.push_back(t);
    }
  }
}

void Gradients::scale(double s) {
  for (auto& t : tensors) t.value *= s;
}

double Gradients::squared_norm() const noexcept {
  double s = 0.0;
  for (const auto& t : tensors) s += t.value.squaredNorm();
  return s;
}

// ---------------------------------------------------------------------------
// Forward

ForwardResult tsp_forward(const NetParams& params, const TspInstance& inst) {
  if (params.arch.problem != Problem::Tsp) throw ShapeError("parameters are not a TSP network");
  if (!inst.sparsified()) throw ShapeError("TSP instance must be sparsified");
  params.validate();

  ForwardResult r;
  ForwardTrace& t = r.trace;
  t.problem = Problem::Tsp;
  t.params = std::make_shared<const NetParams>(params);
  const NetParams& P = *t.params;
  const int n = inst.n();
  const auto m = static_cast<Eigen::Index>(inst.edges.size());
  t.n = n;
  t.src.resize(inst.edges.size());
  t.dst.resize(inst.edges.size());
  for (std::size_t e = 0; e < inst.edges.size(); ++e) {
    t.src[e] = inst.edges[e].src;
    t.dst[e] = inst.edges[e].dst;
  }
  t.inv_out_degree.resize(static_cast<std::size_t>(n));
  for (int u = 0; u < n; ++u) {
    const auto deg = inst.offsets[u + 1] - inst.offsets[u];
    t.inv_out_degree[u] = deg ? 1.0 / static_cast<double>(deg) : 0.0;
  }

  if (const auto* free_out = P.find(kGnnOutName)) {
    if (free_out->value.rows() != m) throw ShapeError("gnn_out rows do not match the instance edge count");
    t.gnn_out = free_out->value;
  } else {
    t.node_input.resize(n, 2);
    for (int i = 0; i < n; ++i) t.node_input.row(i) << inst.coords[i].x, inst.coords[i].y;
    t.edge_input.resize(m, 1);
    for (Eigen::Index e = 0; e < m; ++e) t.edge_input(e, 0) = inst.edges[e].length;

    Matrix h = add_bias(t.node_input * P.at("gnn.node_embed.W"), P.at("gnn.node_embed.b"));
    Matrix e_feat = add_bias(t.edge_input * P.at("gnn.edge_embed.W"), P.at("gnn.edge_embed.b"));
    t.layers.resize(static_cast<std::size_t>(P.arch.gnn_layers));
    for (int l = 0; l < P.arch.gnn_layers; ++l) {
      auto& c = t.layers[l];
      c.h = h;
      c.e = e_feat;
      c.hv = h * P.at(layer_name("gnn", l, "V"));
      c.gate = apply(e_feat, sigmoid);
      Matrix agg = h * P.at(layer_name("gnn", l, "U"));
      for (Eigen::Index k = 0; k < m; ++k)
        agg.row(t.src[k]) += t.inv_out_degree[t.src[k]] * c.gate.row(k).cwiseProduct(c.hv.row(t.dst[k]));
      batchnorm_forward(agg, P.at(layer_name("gnn", l, "bn_h.gamma")), P.at(layer_name("gnn", l, "bn_h.beta")),
                        P.arch.bn_eps, c.bn_h);

      Matrix b = e_feat * P.at(layer_name("gnn", l, "P"));
      const Matrix hq = h * P.at(layer_name("gnn", l, "Q"));
      const Matrix hr = h * P.at(layer_name("gnn", l, "R"));
      for (Eigen::Index k = 0; k < m; ++k) b.row(k) += hq.row(t.src[k]) + hr.row(t.dst[k]);
      batchnorm_forward(b, P.at(layer_name("gnn", l, "bn_e.gamma")), P.at(layer_name("gnn", l, "bn_e.beta")),
                        P.arch.bn_eps, c.bn_e);

      h += apply(c.bn_h.out, silu);
      e_feat += apply(c.bn_e.out, silu);
    }
    t.gnn_out = std::move(e_feat);
    t.backbone_ran = true;
  }

  Matrix z = t.gnn_out;
  for (int i = 0; i < P.arch.mlp_layers; ++i) {
    t.mlp_inputs.push_back(z);
    Matrix s = add_bias(z * P.at(layer_name("mlp", i, "W")), P.at(layer_name("mlp", i, "b")));
    if (i + 1 < P.arch.mlp_layers) {
      z = apply(s, silu);
      t.mlp_pre.push_back(std::move(s));
    } else {
      z = std::move(s);
    }
  }
  r.theta.problem = Problem::Tsp;
  r.theta.values.assign(z.data(), z.data() + z.size());
  return r;
}

ForwardResult mis_forward(const NetParams& params, const MisInstance& inst) {
  if (params.arch.problem != Problem::Mis) throw ShapeError("parameters are not a MIS network");
  if (params.arch.gnn_layers < 1) throw ShapeError("MIS network needs at least one GCN layer");
  params.validate();

  ForwardResult r;
  ForwardTrace& t = r.trace;
  t.problem = Problem::Mis;
  t.params = std::make_shared<const NetParams>(params);
  const NetParams& P = *t.params;
  const int n = inst.n;
  t.n = n;
  t.norm_adj.resize(static_cast<std::size_t>(n));
  for (int u = 0; u < n; ++u)
    for (int v : inst.neighbors[u])
      t.norm_adj[u].emplace_back(v, 1.0 / std::sqrt(static_cast<double>(inst.degree(u)) * inst.degree(v)));

  auto propagate = [&](const Matrix& h) {
    Matrix out = Matrix::Zero(h.rows(), h.cols());
    for (int u = 0; u < n; ++u)
      for (auto [v, w] : t.norm_adj[u]) out.row(u) += w * h.row(v);
    return out;
  };

  if (const auto* free_out = P.find(kGnnOutName)) {
    if (free_out->value.rows() != n) throw ShapeError("gnn_out rows do not match the instance node count");
    t.gnn_out = free_out->value;
  } else {
    Matrix h = Matrix::Ones(n, 1);
    t.layers.resize(static_cast<std::size_t>(P.arch.gnn_layers));
    for (int l = 0; l < P.arch.gnn_layers; ++l) {
      auto& c = t.layers[l];
      c.h = h;
      c.prop = propagate(h);
      c.pre = h * P.at(layer_name("gnn", l, "U0")) + c.prop * P.at(layer_name("gnn", l, "U1"));
      h = c.pre.cwiseMax(0.0);
    }
    t.gnn_out = std::move(h);
    t.backbone_ran = true;
  }

  Matrix z = t.gnn_out;
  for (int i = 0; i < P.arch.mlp_layers; ++i) {
    t.mlp_inputs.push_back(z);
    Matrix s = add_bias(z * P.at(layer_name("mlp", i, "W")), P.at(layer_name("mlp", i, "b")));
    if (i + 1 < P.arch.mlp_layers) {
      z += s.cwiseMax(0.0);
      t.mlp_pre.push_back(std::move(s));
    } else {
      z = std::move(s);
    }
  }
  r.theta.problem = Problem::Mis;
  r.theta.values.assign(z.data(), z.data() + z.size());
  return r;
}

// ---------------------------------------------------------------------------
// Backward

namespace {

Matrix head_backward(const ForwardTrace& t, std::span<const double> upstream, GradSink* sink) {
  const NetParams& P = *t.params;
  const int layers = P.arch.mlp_layers;
  Matrix dz = Eigen::Map<const Matrix>(upstream.data(), static_cast<Eigen::Index>(upstream.size()), 1);
  for (int i = layers - 1; i >= 0; --i) {
    Matrix ds;
    if (i + 1 == layers) {
      ds = std::move(dz);
    } else if (t.problem == Problem::Tsp) {
      ds = dz.cwiseProduct(apply(t.mlp_pre[i], silu_grad));
    } else {
      ds = dz.cwiseProduct((t.mlp_pre[i].array() > 0.0).cast<double>().matrix());
    }
    const Matrix& w = P.at(layer_name("mlp", i, "W"));
    if (sink) {
      sink->put(layer_name("mlp", i, "W"), Scope::Mlp, t.mlp_inputs[i].transpose() * ds);
      sink->put(layer_name("mlp", i, "b"), Scope::Mlp, ds.colwise().sum());
    }
    Matrix dprev = ds * w.transpose();
    // MIS hidden layers are residual: z_{i+1} = z_i + relu(s_i)
    if (t.problem == Problem::Mis && i + 1 < layers) dprev += dz;
    dz = std::move(dprev);
  }
  return dz;
}

void tsp_backbone_backward(const ForwardTrace& t, Matrix de, GradSink& sink) {
  const NetParams& P = *t.params;
  const Eigen::Index d = P.arch.width;
  const auto m = static_cast<Eigen::Index>(t.src.size());
  Matrix dh = Matrix::Zero(t.n, d);
  for (int l = P.arch.gnn_layers - 1; l >= 0; --l) {
    const auto& c = t.layers[l];
    Matrix dgamma, dbeta;
    const Matrix db = batchnorm_backward(de.cwiseProduct(apply(c.bn_e.out, silu_grad)), c.bn_e,
                                         P.at(layer_name("gnn", l, "bn_e.gamma")), dgamma, dbeta);
    sink.put(layer_name("gnn", l, "bn_e.gamma"), Scope::Gnn, dgamma);
    sink.put(layer_name("gnn", l, "bn_e.beta"), Scope::Gnn, dbeta);
    const Matrix da = batchnorm_backward(dh.cwiseProduct(apply(c.bn_h.out, silu_grad)), c.bn_h,
                                         P.at(layer_name("gnn", l, "bn_h.gamma")), dgamma, dbeta);
    sink.put(layer_name("gnn", l, "bn_h.gamma"), Scope::Gnn, dgamma);
    sink.put(layer_name("gnn", l, "bn_h.beta"), Scope::Gnn, dbeta);

    Matrix dh_next = dh;  // residual paths
    Matrix de_next = de;

    // edge update: b = e P + (h Q)[src] + (h R)[dst]
    const Matrix& Pw = P.at(layer_name("gnn", l, "P"));
    const Matrix& Q = P.at(layer_name("gnn", l, "Q"));
    const Matrix& R = P.at(layer_name("gnn", l, "R"));
    sink.put(layer_name("gnn", l, "P"), Scope::Gnn, c.e.transpose() * db);
    de_next += db * Pw.transpose();
    Matrix dhq = Matrix::Zero(t.n, d), dhr = Matrix::Zero(t.n, d);
    for (Eigen::Index k = 0; k < m; ++k) {
      dhq.row(t.src[k]) += db.row(k);
      dhr.row(t.dst[k]) += db.row(k);
    }
    sink.put(layer_name("gnn", l, "Q"), Scope::Gnn, c.h.transpose() * dhq);
    sink.put(layer_name("gnn", l, "R"), Scope::Gnn, c.h.transpose() * dhr);
    dh_next += dhq * Q.transpose() + dhr * R.transpose();

    // node update: a = h U + mean_j sigmoid(e_ij) * (h V)_j
    const Matrix& U = P.at(layer_name("gnn", l, "U"));
    const Matrix& V = P.at(layer_name("gnn", l, "V"));
    sink.put(layer_name("gnn", l, "U"), Scope::Gnn, c.h.transpose() * da);
    dh_next += da * U.transpose();
    Matrix dhv = Matrix::Zero(t.n, d);
    for (Eigen::Index k = 0; k < m; ++k) {
      const Eigen::RowVectorXd dmsg = da.row(t.src[k]) * t.inv_out_degree[t.src[k]];
      dhv.row(t.dst[k]) += dmsg.cwiseProduct(c.gate.row(k));
      const Eigen::RowVectorXd dgate = dmsg.cwiseProduct(c.hv.row(t.dst[k]));
      de_next.row(k) += dgate.cwiseProduct(c.gate.row(k).cwiseProduct((1.0 - c.gate.row(k).array()).matrix()));
    }
    sink.put(layer_name("gnn", l, "V"), Scope::Gnn, c.h.transpose() * dhv);
    dh_next += dhv * V.transpose();

    dh = std::move(dh_next);
    de = std::move(de_next);
  }
  sink.put("gnn.node_embed.W", Scope::Gnn, t.node_input.transpose() * dh);
  sink.put("gnn.node_embed.b", Scope::Gnn, dh.colwise().sum());
  sink.put("gnn.edge_embed.W", Scope::Gnn, t.edge_input.transpose() * de);
  sink.put("gnn.edge_embed.b", Scope::Gnn, de.colwise().sum());
}

void mis_backbone_backward(const ForwardTrace& t, Matrix dh, GradSink& sink) {
  const NetParams& P = *t.params;
  for (int l = P.arch.gnn_layers - 1; l >= 0; --l) {
    const auto& c = t.layers[l];
    const Matrix ds = dh.cwiseProduct((c.pre.array() > 0.0).cast<double>().matrix());
    const Matrix& U0 = P.at(layer_name("gnn", l, "U0"));
    const Matrix& U1 = P.at(layer_name("gnn", l, "U1"));
    sink.put(layer_name("gnn", l, "U0"), Scope::Gnn, c.h.transpose() * ds);
    sink.put(layer_name("gnn", l, "U1"), Scope::Gnn, c.prop.transpose() * ds);
    const Matrix dprop = ds * U1.transpose();
    Matrix dprev = ds * U0.transpose();
    // the normalized adjacency is symmetric
    for (int u = 0; u < t.n; ++u)
      for (auto [v, w] : t.norm_adj[u]) dprev.row(u) += w * dprop.row(v);
    dh = std::move(dprev);
  }
}

}  // namespace

Gradients backward(ForwardTrace& trace, std::span<const double> upstream, ScopeSet scope) {
  check_trace(trace);
  const auto rows = static_cast<std::size_t>(trace.gnn_out.rows());
  if (upstream.size() != rows) throw ShapeError("upstream gradient does not match theta");
  GradSink sink(*trace.params);
  Matrix dout = head_backward(trace, upstream, scope.contains(Scope::Mlp) ? &sink : nullptr);
  if (scope.contains(Scope::GnnOut)) sink.put(kGnnOutName, Scope::GnnOut, dout);
  if (scope.contains(Scope::Gnn) && trace.backbone_ran) {
    if (trace.problem == Problem::Tsp)
      tsp_backbone_backward(trace, std::move(dout), sink);
    else
      mis_backbone_backward(trace, std::move(dout), sink);
  }
  return sink.finish();
}

Gradients backward_backbone(ForwardTrace& trace, const Matrix& grad_gnn_out) {
  check_trace(trace);
  if (!trace.backbone_ran) throw StateError("trace did not run the backbone");
  if (grad_gnn_out.rows() != trace.gnn_out.rows() || grad_gnn_out.cols() != trace.gnn_out.cols())
    throw ShapeError("gradient does not match the backbone output");
  GradSink sink(*trace.params);
  if (trace.problem == Problem::Tsp)
    tsp_backbone_backward(trace, grad_gnn_out, sink);
  else
    mis_backbone_backward(trace, grad_gnn_out, sink);
  return sink.finish();
}

NetParams attach_gnn_out(const NetParams& params, const ForwardTrace& trace) {
  NetParams out = detach_gnn_out(params);
  out.add(kGnnOutName, Scope::GnnOut, trace.gnn_out);
  return out;
}

NetParams detach_gnn_out(const NetParams& params) {
  NetParams out;
  out.arch = params.arch;
  for (const auto& t : params.tensors)
    if (t.name != kGnnOutName) out.tensors.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// AdamW

void adamw_step(NetParams& params, const Gradients& grads, AdamWState& state, const AdamWConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ParameterError("learning rate must be positive");
  for (const auto& g : grads.tensors) {
    if (!g.value.allFinite()) throw TrainingError("non-finite gradient for '" + g.name + "'");
    const Matrix& p = params.at(g.name);
    if (p.rows() != g.value.rows() || p.cols() != g.value.cols())
      throw ShapeError("gradient shape mismatch for '" + g.name + "'");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& g : grads.tensors) {
    Matrix& p = params.at(g.name);
    auto& m = state.m[g.name];
    auto& v = state.v[g.name];
    if (m.rows() != p.rows() || m.cols() != p.cols()) {
      m = Matrix::Zero(p.rows(), p.cols());
      v = Matrix::Zero(p.rows(), p.cols());
    }
    const Scope scope = params.find(g.name)->scope;
    if (scope != Scope::GnnOut && cfg.weight_decay != 0.0) p *= 1.0 - cfg.lr * cfg.weight_decay;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g.value;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.value.cwiseProduct(g.value);
    p.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  }
}

}  // namespace metaco
