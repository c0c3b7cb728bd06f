#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "metaco/errors.hpp"
#include "metaco/instances.hpp"
#include "metaco/oracles.hpp"
#include "test_oracles.hpp"

using namespace metaco;
namespace fs = std::filesystem;

namespace {

std::vector<Point> square() { return {{0, 0}, {0, 1}, {1, 1}, {1, 0}}; }

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "metaco_unit";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("gen_tsp_uniform ranges and determinism") {
  const auto a = gen_tsp_uniform(3, 2, 0);
  REQUIRE(a.size() == 2);
  for (const auto& inst : a) {
    CHECK(inst.n() == 3);
    for (auto p : inst.coords) {
      CHECK(p.x >= 0.0);
      CHECK(p.x <= 1.0);
      CHECK(p.y >= 0.0);
      CHECK(p.y <= 1.0);
    }
  }
  const auto b = gen_tsp_uniform(3, 2, 0);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].coords == b[i].coords);
  CHECK(gen_tsp_uniform(3, 1, 1)[0].coords != a[0].coords);
  CHECK_THROWS_AS(gen_tsp_uniform(2, 1, 0), InvalidInstanceError);
}

TEST_CASE("gen_tsp_uniform axis means") {
  const auto insts = gen_tsp_uniform(1000, 128, 42);
  double sx = 0.0, sy = 0.0;
  for (const auto& inst : insts)
    for (auto p : inst.coords) {
      sx += p.x;
      sy += p.y;
    }
  const double m = 128000.0;
  CHECK(sx / m >= 0.47);
  CHECK(sx / m <= 0.53);
  CHECK(sy / m >= 0.47);
  CHECK(sy / m <= 0.53);
}

TEST_CASE("sparsify_knn square corners") {
  const auto inst = sparsify_knn(square(), 2, "sq");
  CHECK(inst.edges.size() == 8);
  for (int u = 0; u < 4; ++u) {
    for (const auto& e : inst.out_edges(u)) {
      CHECK(e.src == u);
      CHECK(e.length == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(e.dst != (u + 2) % 4);  // diagonal partner
    }
  }
}

TEST_CASE("sparsify_knn complete graph and degree counts") {
  Rng rng(5);
  auto t = testing::random_tsp(9, rng);
  CHECK(t.edges.size() == 9u * 8u);
  for (int u = 0; u < 9; ++u) CHECK(t.out_edges(u).size() == 8);
  const auto big = gen_tsp_uniform(1000, 1, 3)[0];
  const auto s = sparsify_knn(big, 50);
  CHECK(s.edges.size() == 50000);
  CHECK(sparsify_knn(big, 5000).edges.size() == 1000u * 999u);
}

TEST_CASE("sparsification soundness and edge lengths") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(40));
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    auto t = testing::random_tsp(n, rng, k);
    for (int u = 0; u < n; ++u) {
      const auto out = t.out_edges(u);
      REQUIRE(static_cast<int>(out.size()) == std::min(k, n - 1));
      double kept_max = 0.0;
      std::vector<char> kept(static_cast<std::size_t>(n), 0);
      for (const auto& e : out) {
        CHECK(std::abs(e.length - std::hypot(t.coords[u].x - t.coords[e.dst].x, t.coords[u].y - t.coords[e.dst].y)) <=
              1e-12);
        kept_max = std::max(kept_max, e.length);
        kept[e.dst] = 1;
      }
      for (int v = 0; v < n; ++v)
        if (v != u && !kept[v]) CHECK(t.dist(u, v) >= kept_max);
    }
  }
}

TEST_CASE("sparsify_knn breaks distance ties by lower index") {
  // node 0 at the centre, four equidistant neighbours
  std::vector<Point> pts{{0.5, 0.5}, {0.5, 0.9}, {0.9, 0.5}, {0.5, 0.1}, {0.1, 0.5}};
  auto t = sparsify_knn(pts, 2, "tie");
  const auto out = t.out_edges(0);
  CHECK(out[0].dst == 1);
  CHECK(out[1].dst == 2);
}

TEST_CASE("gen_er edge counts") {
  CHECK(gen_er(20, 20, 0.0, 1, 0)[0].edge_count() == 0);
  CHECK(gen_er(20, 20, 1.0, 1, 0)[0].edge_count() == 190);
  const auto gs = gen_er(700, 700, 0.15, 16, 9);
  double total = 0.0;
  for (const auto& g : gs) total += static_cast<double>(g.edge_count());
  const double pairs = 700.0 * 699.0 / 2.0;
  const double mean = 0.15 * pairs;
  const double sd_of_mean = std::sqrt(pairs * 0.15 * 0.85 / 16.0);
  CHECK(std::abs(total / 16.0 - mean) <= 3.0 * sd_of_mean);
  const auto again = gen_er(700, 700, 0.15, 16, 9);
  CHECK(again[3].edges == gs[3].edges);
}

TEST_CASE("gen_er node count range and symmetry") {
  for (const auto& g : gen_er(5, 9, 0.4, 50, 1)) {
    CHECK(g.n >= 5);
    CHECK(g.n <= 9);
    std::size_t ones = 0;
    for (int u = 0; u < g.n; ++u) {
      CHECK_FALSE(g.adjacent(u, u));
      for (int v = 0; v < g.n; ++v) {
        CHECK(g.adjacent(u, v) == g.adjacent(v, u));
        ones += g.adjacent(u, v);
      }
    }
    CHECK(ones == 2 * g.edge_count());
  }
}

TEST_CASE("MisInstance rejects bad edges") {
  CHECK_THROWS_AS(MisInstance("x", 3, {{1, 1}}), InvalidInstanceError);
  CHECK_THROWS_AS(MisInstance("x", 3, {{0, 3}}), InvalidInstanceError);
  MisInstance dup("d", 3, {{0, 1}, {1, 0}, {0, 1}});
  CHECK(dup.edge_count() == 1);
}

TEST_CASE("reduce_cnf_to_mis small formulas") {
  Cnf unsat{1, {{1}, {-1}}};
  auto g = reduce_cnf_to_mis(unsat);
  CHECK(g.n == 2);
  CHECK(g.edge_count() == 1);
  CHECK(exact_mis(g).objective == 1.0);

  Cnf sat{2, {{1, 2}}};
  g = reduce_cnf_to_mis(sat);
  CHECK(g.n == 2);
  CHECK(g.edge_count() == 1);
  CHECK(exact_mis(g).objective == 1.0);

  CHECK_THROWS_AS(reduce_cnf_to_mis(Cnf{1, {{1}, {}}}), InvalidInstanceError);
}

TEST_CASE("reduce_cnf_to_mis matches brute-force SAT") {
  Rng rng(2024);
  int sat_count = 0;
  for (int trial = 0; trial < 60; ++trial) {
    // dense formulas over few variables are mostly unsatisfiable; 21 clauses
    // keep the graph within 64 nodes
    const int vars = trial < 30 ? 10 : 3 + static_cast<int>(rng.below(3));
    const int clauses = trial < 30 ? 20 : 21;
    const auto f = testing::random_3cnf(vars, clauses, rng);
    const auto g = reduce_cnf_to_mis(f);
    const auto r = exact_mis(g);
    REQUIRE(r.proven_optimal);
    const bool sat = testing::brute_force_sat(f);
    sat_count += sat;
    CHECK((r.objective == static_cast<double>(f.clauses.size())) == sat);
  }
  CHECK(sat_count > 0);
  CHECK(sat_count < 60);
}

TEST_CASE("TSP file round trip") {
  auto inst = sparsify_knn({{0.1, 0.2}, {1.0 / 3.0, 0.7}, {0.9, 0.05}, {0.123456789012345678, 1.0}}, 3, "rt");
  const auto path = temp_file("rt.tsp");
  write_instance(inst, path);
  auto back = std::get<TspInstance>(read_instance(path));
  CHECK(back.coords == inst.coords);
  CHECK(back.k == 3);
  CHECK(back.edges.size() == inst.edges.size());
}

TEST_CASE("DIMACS graph parsing") {
  std::istringstream ok("c comment\np edge 3 2\ne 1 2\ne 2 3\n");
  auto g = read_dimacs_graph(ok);
  CHECK(g.n == 3);
  CHECK(g.edge_count() == 2);
  CHECK(g.adjacent(0, 1));
  CHECK(g.adjacent(1, 2));
  CHECK_FALSE(g.adjacent(0, 2));

  std::istringstream bad("p edge 3 1\ne 1 5\n");
  try {
    read_dimacs_graph(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::istringstream header("q edge 3 1\n");
  CHECK_THROWS_AS(read_dimacs_graph(header), ParseError);
}

TEST_CASE("MIS and CNF file round trips") {
  Rng rng(3);
  auto g = testing::random_graph(12, 0.3, rng, "g12");
  const auto path = temp_file("g.dimacs");
  write_instance(g, path);
  auto back = std::get<MisInstance>(read_instance(path));
  CHECK(back.n == g.n);
  CHECK(back.edges == g.edges);

  Cnf f{3, {{1, -2}, {2, 3, -1}, {-3}}};
  std::stringstream s;
  write_cnf(f, s);
  auto f2 = read_cnf(s);
  CHECK(f2.num_vars == 3);
  CHECK(f2.clauses == f.clauses);
}

TEST_CASE("TSP reader rejects malformed files") {
  std::istringstream bad_header("tsp x 3\n");
  CHECK_THROWS_AS(read_tsp(bad_header), ParseError);
  std::istringstream out_of_range("tsp 3 2\n0 0\n0.5 2\n1 1\n");
  try {
    read_tsp(out_of_range);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  std::istringstream short_file("tsp 3 2\n0 0\n");
  CHECK_THROWS_AS(read_tsp(short_file), ParseError);
}
