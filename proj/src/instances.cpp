#include "metaco/instances.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "metaco/errors.hpp"
#include "metaco/rng.hpp"

namespace metaco {

double TspInstance::dist(int i, int j) const noexcept {
  const double dx = coords[i].x - coords[j].x;
  const double dy = coords[i].y - coords[j].y;
  return std::sqrt(dx * dx + dy * dy);
}

std::ptrdiff_t TspInstance::find_edge(int u, int v) const noexcept {
  for (std::size_t e = offsets[u]; e < offsets[u + 1]; ++e)
    if (edges[e].dst == v) return static_cast<std::ptrdiff_t>(e);
  return -1;
}

MisInstance::MisInstance(std::string id_, int n_, const std::vector<std::pair<int, int>>& edge_list)
    : id(std::move(id_)), n(n_), adjacency(n_, Bitset(n_)), neighbors(n_) {
  for (auto [u, v] : edge_list) {
    if (u < 0 || v < 0 || u >= n || v >= n) throw InvalidInstanceError("edge endpoint out of range");
    if (u == v) throw InvalidInstanceError("self-loop on node " + std::to_string(u));
    if (adjacency[u].test(v)) continue;
    adjacency[u].set(v);
    adjacency[v].set(u);
    edges.emplace_back(std::min(u, v), std::max(u, v));
  }
  std::sort(edges.begin(), edges.end());
  for (auto [u, v] : edges) {
    neighbors[u].push_back(v);
    neighbors[v].push_back(u);
  }
  for (auto& nb : neighbors) std::sort(nb.begin(), nb.end());
}

int default_knn(int n) noexcept { return n >= 500 ? 50 : std::max(1, n - 1); }

std::vector<TspInstance> gen_tsp_uniform(int n, int count, std::uint64_t seed) {
  if (n < 3) throw InvalidInstanceError("TSP needs at least 3 nodes, got " + std::to_string(n));
  if (count < 1) throw ParameterError("instance count must be positive");
  std::vector<TspInstance> out(static_cast<std::size_t>(count));
  for (int c = 0; c < count; ++c) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    auto& inst = out[c];
    inst.id = "tsp" + std::to_string(n) + "_s" + std::to_string(seed) + "_" + std::to_string(c);
    inst.coords.resize(static_cast<std::size_t>(n));
    for (auto& p : inst.coords) {
      p.x = rng.uniform();
      p.y = rng.uniform();
    }
  }
  return out;
}

TspInstance sparsify_knn(const std::vector<Point>& coords, int k, std::string id) {
  if (k < 1) throw ParameterError("k must be >= 1");
  TspInstance inst;
  inst.id = std::move(id);
  inst.coords = coords;
  const int n = inst.n();
  const int deg = std::min(k, n - 1);
  inst.k = k;
  inst.edges.reserve(static_cast<std::size_t>(n) * deg);
  inst.offsets.assign(static_cast<std::size_t>(n) + 1, 0);

  std::vector<std::pair<double, int>> cand;
  cand.reserve(static_cast<std::size_t>(n));
  for (int u = 0; u < n; ++u) {
    cand.clear();
    for (int v = 0; v < n; ++v)
      if (v != u) cand.emplace_back(inst.dist(u, v), v);
    // pair ordering breaks distance ties by the lower node index
    std::partial_sort(cand.begin(), cand.begin() + deg, cand.end());
    for (int i = 0; i < deg; ++i) inst.edges.push_back({u, cand[i].second, cand[i].first});
    inst.offsets[u + 1] = inst.edges.size();
  }
  return inst;
}

TspInstance sparsify_knn(const TspInstance& dense, int k) { return sparsify_knn(dense.coords, k, dense.id); }

std::vector<MisInstance> gen_er(int n_lo, int n_hi, double p, int count, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("edge probability must lie in [0, 1]");
  if (n_lo > n_hi || n_lo < 1) throw ParameterError("need 1 <= n_lo <= n_hi");
  if (count < 1) throw ParameterError("instance count must be positive");
  std::vector<MisInstance> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int c = 0; c < count; ++c) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    const int n = n_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_hi - n_lo + 1)));
    std::vector<std::pair<int, int>> edges;
    for (int u = 0; u < n; ++u)
      for (int v = u + 1; v < n; ++v)
        if (rng.uniform() < p) edges.emplace_back(u, v);
    out.emplace_back("er" + std::to_string(n) + "_s" + std::to_string(seed) + "_" + std::to_string(c), n, edges);
  }
  return out;
}

MisInstance reduce_cnf_to_mis(const Cnf& cnf, std::string id) {
  std::vector<int> literal_of;
  std::vector<std::pair<int, int>> edges;
  for (std::size_t c = 0; c < cnf.clauses.size(); ++c) {
    const auto& clause = cnf.clauses[c];
    if (clause.empty()) throw InvalidInstanceError("clause " + std::to_string(c + 1) + " is empty");
    const int base = static_cast<int>(literal_of.size());
    for (std::size_t i = 0; i < clause.size(); ++i) {
      if (clause[i] == 0) throw InvalidInstanceError("literal 0 in clause " + std::to_string(c + 1));
      for (std::size_t j = 0; j < i; ++j) edges.emplace_back(base + static_cast<int>(j), base + static_cast<int>(i));
      literal_of.push_back(clause[i]);
    }
  }
  const int n = static_cast<int>(literal_of.size());
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v)
      if (literal_of[u] == -literal_of[v]) edges.emplace_back(u, v);
  return MisInstance(std::move(id), n, edges);
}

// ---------------------------------------------------------------------------
// Text formats

namespace {

bool next_content_line(std::istream& in, std::string& line, std::size_t& lineno) {
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == 'c' && (first + 1 == line.size() || std::isspace(static_cast<unsigned char>(line[first + 1]))))
      continue;
    if (line[first] == '#' || line[first] == '%') continue;
    return true;
  }
  return false;
}

}  // namespace

void write_tsp(const TspInstance& inst, std::ostream& out) {
  const int k = inst.k > 0 ? inst.k : default_knn(inst.n());
  out << "tsp " << inst.n() << ' ' << k << '\n';
  out << std::setprecision(17);
  for (const auto& p : inst.coords) out << p.x << ' ' << p.y << '\n';
}

TspInstance read_tsp(std::istream& in, std::string id) {
  std::string line;
  std::size_t lineno = 0;
  if (!next_content_line(in, line, lineno)) throw ParseError("empty TSP file", 0);
  std::istringstream hs(line);
  std::string tag;
  long long n = 0, k = 0;
  if (!(hs >> tag >> n >> k) || tag != "tsp" || n < 3 || k < 1)
    throw ParseError("expected header 'tsp <n> <k>' with n >= 3, k >= 1", lineno);
  std::vector<Point> coords;
  coords.reserve(static_cast<std::size_t>(n));
  while (static_cast<long long>(coords.size()) < n) {
    if (!next_content_line(in, line, lineno))
      throw ParseError("expected " + std::to_string(n) + " coordinate lines, got " + std::to_string(coords.size()), lineno);
    std::istringstream ls(line);
    Point p;
    std::string extra;
    if (!(ls >> p.x >> p.y) || (ls >> extra)) throw ParseError("expected '<x> <y>'", lineno);
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
      throw ParseError("coordinate outside the unit square", lineno);
    coords.push_back(p);
  }
  if (next_content_line(in, line, lineno)) throw ParseError("trailing content after coordinates", lineno);
  return sparsify_knn(coords, static_cast<int>(k), std::move(id));
}

void write_dimacs_graph(const MisInstance& inst, std::ostream& out) {
  out << "p edge " << inst.n << ' ' << inst.edge_count() << '\n';
  for (auto [u, v] : inst.edges) out << "e " << u + 1 << ' ' << v + 1 << '\n';
}

MisInstance read_dimacs_graph(std::istream& in, std::string id) {
  std::string line;
  std::size_t lineno = 0;
  if (!next_content_line(in, line, lineno)) throw ParseError("empty DIMACS file", 0);
  std::istringstream hs(line);
  std::string p, fmt;
  long long n = -1, m = -1;
  if (!(hs >> p >> fmt >> n >> m) || p != "p" || (fmt != "edge" && fmt != "col") || n < 0 || m < 0)
    throw ParseError("expected header 'p edge <n> <m>'", lineno);
  std::vector<std::pair<int, int>> edges;
  edges.reserve(static_cast<std::size_t>(m));
  while (next_content_line(in, line, lineno)) {
    std::istringstream ls(line);
    std::string e, extra;
    long long u = 0, v = 0;
    if (!(ls >> e >> u >> v) || e != "e" || (ls >> extra)) throw ParseError("expected 'e <u> <v>'", lineno);
    if (u < 1 || v < 1 || u > n || v > n)
      throw ParseError("edge endpoint out of range 1.." + std::to_string(n), lineno);
    if (u == v) throw ParseError("self-loop", lineno);
    edges.emplace_back(static_cast<int>(u - 1), static_cast<int>(v - 1));
  }
  return MisInstance(std::move(id), static_cast<int>(n), edges);
}

Cnf read_cnf(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!next_content_line(in, line, lineno)) throw ParseError("empty CNF file", 0);
  std::istringstream hs(line);
  std::string p, fmt;
  long long vars = -1, clauses = -1;
  if (!(hs >> p >> fmt >> vars >> clauses) || p != "p" || fmt != "cnf" || vars < 0 || clauses < 0)
    throw ParseError("expected header 'p cnf <vars> <clauses>'", lineno);
  Cnf cnf;
  cnf.num_vars = static_cast<int>(vars);
  std::vector<int> current;
  const auto declared = static_cast<std::size_t>(clauses);
  // SATLIB files carry a '%' / '0' trailer after the last clause; '%' lines
  // are skipped as comments and anything past the declared count is ignored.
  while (cnf.clauses.size() < declared && next_content_line(in, line, lineno)) {
    std::istringstream ls(line);
    std::string token;
    while (cnf.clauses.size() < declared && ls >> token) {
      long long lit = 0;
      try {
        std::size_t used = 0;
        lit = std::stoll(token, &used);
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw ParseError("non-integer token '" + token + "'", lineno);
      }
      if (lit == 0) {
        if (current.empty()) throw ParseError("empty clause", lineno);
        cnf.clauses.push_back(std::move(current));
        current.clear();
      } else {
        if (std::llabs(lit) > vars) throw ParseError("literal exceeds declared variable count", lineno);
        current.push_back(static_cast<int>(lit));
      }
    }
  }
  if (!current.empty() && cnf.clauses.size() < declared) cnf.clauses.push_back(std::move(current));
  if (cnf.clauses.size() != declared)
    throw ParseError("header declares " + std::to_string(clauses) + " clauses, found " +
                         std::to_string(cnf.clauses.size()),
                     lineno);
  return cnf;
}

void write_cnf(const Cnf& cnf, std::ostream& out) {
  out << "p cnf " << cnf.num_vars << ' ' << cnf.clauses.size() << '\n';
  for (const auto& c : cnf.clauses) {
    for (int lit : c) out << lit << ' ';
    out << "0\n";
  }
}

void write_instance(const Instance& inst, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  std::visit(
      [&](const auto& i) {
        if constexpr (std::is_same_v<std::decay_t<decltype(i)>, TspInstance>)
          write_tsp(i, out);
        else
          write_dimacs_graph(i, out);
      },
      inst);
  if (!out) throw Error("write failed: " + path.string());
}

Instance read_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::streampos start = in.tellg();
  if (!next_content_line(in, line, lineno)) throw ParseError(path.string() + ": empty file", 0);
  in.clear();
  in.seekg(start);
  std::istringstream hs(line);
  std::string tag;
  hs >> tag;
  const std::string id = path.stem().string();
  if (tag == "tsp") return read_tsp(in, id);
  if (tag == "p") return read_dimacs_graph(in, id);
  throw ParseError(path.string() + ": unknown instance format", lineno);
}

Cnf read_cnf_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_cnf(in);
}

}  // namespace metaco
