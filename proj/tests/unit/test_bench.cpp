#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "metaco/bench.hpp"
#include "metaco/checkpoint.hpp"
#include "metaco/errors.hpp"
#include "test_oracles.hpp"

using namespace metaco;
namespace fs = std::filesystem;

namespace {

std::vector<Instance> tsp_set(int n, int count, std::uint64_t seed) {
  std::vector<Instance> out;
  for (auto& t : gen_tsp_uniform(n, count, seed)) out.emplace_back(sparsify_knn(t, default_knn(n)));
  return out;
}

/// CSV lines with the two timing columns blanked.
std::vector<std::string> untimed_csv(const EvalReport& r) {
  std::ostringstream os;
  write_report_csv(r, os);
  std::istringstream is(os.str());
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    REQUIRE(cells.size() == 8);
    cells[4] = cells[5] = "";
    std::string joined;
    for (const auto& c : cells) joined += c + ",";
    lines.push_back(joined);
  }
  return lines;
}

}  // namespace

TEST_CASE("drop arithmetic") {
  CHECK(std::abs(compute_drop(18.93, 16.55, Sense::Minimize) - 14.38) <= 0.005);
  CHECK(std::abs(compute_drop(423.28, 425.96, Sense::Maximize) - 0.63) <= 0.005);
  CHECK(compute_drop(7.5, 7.5, Sense::Minimize) == 0.0);
  CHECK(compute_drop(7.5, 7.5, Sense::Maximize) == 0.0);
  CHECK(compute_drop(9.0, 10.0, Sense::Minimize) < 0.0);
  CHECK_THROWS_AS(compute_drop(1.0, 0.0, Sense::Minimize), MetricError);
  CHECK_THROWS_AS(compute_drop(1.0, -2.0, Sense::Maximize), MetricError);
}

TEST_CASE("eval config keys and overrides") {
  KeyValues kv = parse_config("[eval]\ndecoder = sample\nK = 16\ntau = 0.5\nas-steps = 3\nscope = mlp\n");
  apply_overrides(kv, {"seed=9", "eval.K=32"});
  const auto c = EvalConfig::from_kv(kv);
  CHECK(c.decoder == "sample");
  CHECK(c.samples == 32);
  CHECK(c.tau == 0.5);
  CHECK(c.as_steps == 3);
  CHECK(c.seed == 9);
  CHECK(c.scope == ScopeSet(Scope::Mlp));
  CHECK(EvalConfig::from_kv(c.to_kv()).to_kv() == c.to_kv());
  CHECK_THROWS_AS(EvalConfig::from_kv({{"decoder", "beam"}}), ParameterError);
  CHECK_THROWS_AS(EvalConfig::from_kv({{"tau", "0"}}), ParameterError);
  CHECK_THROWS_AS(EvalConfig::from_kv({{"reference", "oracle"}}), ParameterError);
}

TEST_CASE("exact references give non-negative drops") {
  const auto params = init_params(ArchConfig::tsp_default(), 1);
  EvalConfig cfg;
  cfg.decoder = "greedy";
  const auto rep = evaluate(params, tsp_set(10, 10, 3), cfg);
  REQUIRE(rep.rows.size() == 10);
  CHECK(rep.all_feasible());
  double obj = 0.0, drop = 0.0;
  for (const auto& r : rep.rows) {
    CHECK(r.exact_reference);
    CHECK(r.drop_pct >= -1e-9);
    CHECK(r.drop_pct == compute_drop(r.objective, r.reference, Sense::Minimize));
    obj += r.objective;
    drop += r.drop_pct;
  }
  CHECK(rep.mean_objective() == obj / 10.0);
  CHECK(rep.mean_drop() == drop / 10.0);
}

TEST_CASE("evaluation is deterministic") {
  const auto params = init_params(ArchConfig::tsp_default(), 2);
  const auto set = tsp_set(12, 4, 5);
  EvalConfig cfg;
  cfg.decoder = "sample";
  cfg.samples = 64;
  cfg.as_steps = 2;
  cfg.seed = 17;
  const auto a = evaluate(params, set, cfg);
  cfg.workers = 2;
  const auto b = evaluate(params, set, cfg);
  CHECK(untimed_csv(a) == untimed_csv(b));
  CHECK(untimed_csv(a).front() == "instance,objective,reference,drop_pct,,,decoder,seed,");
}

TEST_CASE("sampling beats greedy decoding") {
  const auto params = init_params(ArchConfig::tsp_default(), 3);
  const auto set = tsp_set(20, 10, 7);
  EvalConfig g;
  g.decoder = "greedy";
  EvalConfig s = g;
  s.decoder = "sample";
  s.samples = 1024;
  CHECK(evaluate(params, set, s).mean_drop() <= evaluate(params, set, g).mean_drop());
}

TEST_CASE("MIS evaluation scores against the exact oracle") {
  const auto params = init_params(ArchConfig::mis_default(), 4);
  std::vector<Instance> set;
  for (auto& g : gen_er(25, 35, 0.15, 5, 11)) set.emplace_back(g);
  EvalConfig cfg;
  cfg.decoder = "sample";
  cfg.samples = 64;
  const auto rep = evaluate(params, set, cfg);
  CHECK(rep.all_feasible());
  for (const auto& r : rep.rows) {
    CHECK(r.exact_reference);
    CHECK(r.drop_pct >= -1e-9);
    CHECK(r.drop_pct == compute_drop(r.objective, r.reference, Sense::Maximize));
  }
  cfg.decoder = "mcts";
  const auto bad = evaluate(params, set, cfg);
  CHECK_FALSE(bad.all_feasible());
  CHECK(bad.rows[0].error.find("TSP only") != std::string::npos);
}

TEST_CASE("eval_run reads files and writes the report") {
  const auto dir = fs::temp_directory_path() / "metaco_bench_unit";
  fs::remove_all(dir);
  fs::create_directories(dir / "inst");
  const auto set = tsp_set(8, 3, 21);
  for (std::size_t i = 0; i < set.size(); ++i)
    write_instance(set[i], dir / "inst" / ("t" + std::to_string(i) + ".tsp"));
  save_checkpoint(to_checkpoint(init_params(ArchConfig::tsp_default(), 5)), dir / "model.ckpt");
  EvalConfig cfg;
  cfg.checkpoint = (dir / "model.ckpt").string();
  cfg.instance_dir = (dir / "inst").string();
  const auto rep = eval_run(cfg);
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.metadata.at("version") == version());
  CHECK(rep.metadata.count("ckpt_digest") == 1);
  write_report(rep, dir / "report.csv");
  std::ifstream in(dir / "report.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "instance,objective,reference,drop_pct,as_ms,decode_ms,decoder,seed");
  CHECK(fs::exists(dir / "report.csv.meta"));
  cfg.checkpoint = (dir / "missing.ckpt").string();
  CHECK_THROWS_AS(eval_run(cfg), Error);
}
