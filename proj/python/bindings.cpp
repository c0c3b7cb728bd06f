#include <pybind11/functional.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "metaco/bench.hpp"
#include "metaco/checkpoint.hpp"
#include "metaco/decoders.hpp"
#include "metaco/errors.hpp"
#include "metaco/meta.hpp"
#include "metaco/oracles.hpp"

namespace py = pybind11;
using namespace metaco;

namespace {

Problem problem_of(const Instance& inst) { return std::holds_alternative<TspInstance>(inst) ? Problem::Tsp : Problem::Mis; }

KeyValues to_kv(const py::dict& d) {
  KeyValues kv;
  for (auto [k, v] : d) {
    std::string val = py::isinstance<py::bool_>(v) ? (v.cast<bool>() ? "true" : "false") : py::str(v).cast<std::string>();
    kv[py::str(k).cast<std::string>()] = val;
  }
  return kv;
}

py::dict row_dict(const EvalRow& r) {
  py::dict d;
  d["instance"] = r.instance;
  d["objective"] = r.objective;
  d["reference"] = r.reference;
  d["drop_pct"] = r.drop_pct;
  d["as_ms"] = r.as_ms;
  d["decode_ms"] = r.decode_ms;
  d["decoder"] = r.decoder;
  d["seed"] = r.seed;
  d["feasible"] = r.feasible;
  d["error"] = r.error;
  d["solution"] = r.solution;
  return d;
}

// Decoded solution plus its objective (tour length or set size).
std::pair<std::vector<int>, double> decode(const std::vector<double>& values, const Instance& inst,
                                           const std::string& decoder, int samples, double tau, long budget,
                                           std::uint64_t seed) {
  Rng rng(seed);
  const Theta theta{problem_of(inst), values};
  if (const auto* t = std::get_if<TspInstance>(&inst)) {
    Tour tour;
    if (decoder == "greedy")
      tour = greedy_decode(theta, *t, rng);
    else if (decoder == "sample")
      tour = sample_decode(theta, *t, samples, tau, rng);
    else if (decoder == "mcts")
      tour = mcts_decode(theta, *t, MctsOptions{budget}, rng);
    else
      throw ParameterError("unknown decoder '" + decoder + "'");
    return {tour.perm, tour.cost};
  }
  const auto& g = std::get<MisInstance>(inst);
  NodeSet set;
  if (decoder == "greedy")
    set = greedy_decode(theta, g);
  else if (decoder == "sample")
    set = sample_decode(theta, g, samples, tau, rng);
  else
    throw ParameterError("decoder '" + decoder + "' is not available for MIS");
  return {set.sorted(), static_cast<double>(set.size())};
}

}  // namespace

PYBIND11_MODULE(_metaco, m) {
  m.doc() = "Meta-learned heatmaps for TSP and MIS";
  m.attr("__version__") = version();

  auto& error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParameterError>(m, "ParameterError", error.ptr());
  py::register_exception<ParseError>(m, "ParseError", error.ptr());
  py::register_exception<FeasibilityError>(m, "FeasibilityError", error.ptr());

  py::class_<TspInstance>(m, "TspInstance")
      .def_readonly("id", &TspInstance::id)
      .def_property_readonly("n", &TspInstance::n)
      .def_readonly("k", &TspInstance::k)
      .def_property_readonly("coords",
                             [](const TspInstance& t) {
                               std::vector<std::pair<double, double>> xy;
                               for (const auto& p : t.coords) xy.emplace_back(p.x, p.y);
                               return xy;
                             })
      .def_property_readonly("edges",
                             [](const TspInstance& t) {
                               std::vector<std::tuple<int, int, double>> e;
                               for (const auto& x : t.edges) e.emplace_back(x.src, x.dst, x.length);
                               return e;
                             })
      .def("__repr__", [](const TspInstance& t) {
        return "<TspInstance " + t.id + " n=" + std::to_string(t.n()) + " k=" + std::to_string(t.k) + ">";
      });

  py::class_<MisInstance>(m, "MisInstance")
      .def(py::init<std::string, int, const std::vector<std::pair<int, int>>&>(), py::arg("id"), py::arg("n"),
           py::arg("edges"))
      .def_readonly("id", &MisInstance::id)
      .def_readonly("n", &MisInstance::n)
      .def_readonly("edges", &MisInstance::edges)
      .def("__repr__", [](const MisInstance& g) {
        return "<MisInstance " + g.id + " n=" + std::to_string(g.n) + " m=" + std::to_string(g.edges.size()) + ">";
      });

  m.def(
      "tsp_from_coords",
      [](const std::vector<std::pair<double, double>>& xy, int k, std::string id) {
        std::vector<Point> pts;
        for (auto [x, y] : xy) pts.push_back({x, y});
        return sparsify_knn(pts, k > 0 ? k : default_knn(static_cast<int>(pts.size())), std::move(id));
      },
      py::arg("coords"), py::arg("k") = 0, py::arg("id") = "tsp");
  m.def(
      "gen_tsp",
      [](int n, int count, std::uint64_t seed, int k) {
        std::vector<TspInstance> out;
        for (const auto& t : gen_tsp_uniform(n, count, seed)) out.push_back(sparsify_knn(t, k > 0 ? k : default_knn(n)));
        return out;
      },
      py::arg("n"), py::arg("count"), py::arg("seed") = 0, py::arg("k") = 0);
  m.def("gen_er", &gen_er, py::arg("n_lo"), py::arg("n_hi"), py::arg("p") = 0.15, py::arg("count") = 1,
        py::arg("seed") = 0);
  m.def("read_instance", &read_instance, py::arg("path"));
  m.def("write_instance", &write_instance, py::arg("instance"), py::arg("path"));

  m.def(
      "tour_cost", [](const TspInstance& t, const std::vector<int>& perm) { return tour_cost(t, perm); },
      py::arg("instance"), py::arg("tour"));
  m.def(
      "violations",
      [](const Instance& inst, const std::vector<int>& sol) {
        return std::visit([&](const auto& i) { return check_feasible(i, sol).violations; }, inst);
      },
      py::arg("instance"), py::arg("solution"), "Empty when the solution is feasible.");

  py::class_<OracleResult>(m, "OracleResult")
      .def_readonly("solution", &OracleResult::solution)
      .def_readonly("objective", &OracleResult::objective)
      .def_readonly("proven_optimal", &OracleResult::proven_optimal)
      .def_readonly("expansions", &OracleResult::expansions);
  m.def("held_karp", &held_karp, py::arg("instance"));
  m.def("exact_mis", &exact_mis, py::arg("instance"), py::arg("node_budget") = kExactMisBudget);
  m.def(
      "insertion",
      [](const TspInstance& t, const std::string& rule, std::uint64_t seed) {
        Rng rng(seed);
        const Tour tour = insertion(t, parse_insertion_rule(rule), rng);
        return std::make_pair(tour.perm, tour.cost);
      },
      py::arg("instance"), py::arg("rule") = "farthest", py::arg("seed") = 0);

  py::class_<NetParams>(m, "Model")
      .def_static(
          "init",
          [](const std::string& problem, std::uint64_t seed) {
            if (problem != "tsp" && problem != "mis") throw ParameterError("problem must be tsp or mis");
            return init_params(problem == "tsp" ? ArchConfig::tsp_default() : ArchConfig::mis_default(), seed);
          },
          py::arg("problem"), py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& p) { return params_from_checkpoint(load_checkpoint(p)); },
          py::arg("path"))
      .def(
          "save", [](const NetParams& p, const std::filesystem::path& path) { save_checkpoint(to_checkpoint(p), path); },
          py::arg("path"))
      .def_property_readonly("problem",
                             [](const NetParams& p) { return p.arch.problem == Problem::Tsp ? "tsp" : "mis"; })
      .def_property_readonly("size", &NetParams::value_count)
      .def(
          "heatmap",
          [](const NetParams& p, const Instance& inst, int steps, double lr, int samples, const std::string& scope,
             std::uint64_t seed) {
            if (p.arch.problem != problem_of(inst)) throw ParameterError("model and instance problems differ");
            AdaptOptions ao;
            ao.steps = steps;
            ao.lr = lr;
            ao.samples = samples;
            ao.scope = parse_scope(scope);
            Rng rng(seed);
            py::gil_scoped_release nogil;
            return std::visit([&](const auto& i) { return active_search(p, i, ao, rng).values; }, inst);
          },
          py::arg("instance"), py::arg("steps") = 0, py::arg("lr") = 0.05, py::arg("samples") = 64,
          py::arg("scope") = "gnnout+mlp", py::arg("seed") = 0,
          "Edge scores (TSP, in sparse edge order) or node scores (MIS), after `steps` of active search.");

  m.def("decode", &decode, py::arg("theta"), py::arg("instance"), py::arg("decoder") = "greedy",
        py::arg("samples") = 1024, py::arg("tau") = 1.0, py::arg("budget") = 20000, py::arg("seed") = 0,
        py::call_guard<py::gil_scoped_release>());

  m.def(
      "compute_drop",
      [](double objective, double reference, const std::string& sense) {
        if (sense != "min" && sense != "max") throw ParameterError("sense must be min or max");
        return compute_drop(objective, reference, sense == "min" ? Sense::Minimize : Sense::Maximize);
      },
      py::arg("objective"), py::arg("reference"), py::arg("sense") = "min");

  m.def(
      "train",
      [](const py::dict& config, std::function<void(long, double)> on_step) {
        const auto cfg = TrainConfig::from_kv(to_kv(config));
        TrainOptions opts;
        if (on_step)
          opts.on_step = [&](const TrainLogRow& r) {
            py::gil_scoped_acquire gil;
            on_step(r.step, r.mean_cost);
          };
        TrainResult res;
        {
          py::gil_scoped_release nogil;
          res = train(cfg, opts);
        }
        std::vector<double> costs;
        for (const auto& r : res.log) costs.push_back(r.mean_cost);
        return std::make_pair(res.params, costs);
      },
      py::arg("config"), py::arg("on_step") = nullptr,
      "Meta-trains from config keys (problem, n, steps, seed, ...). Returns (model, mean cost per step).");

  m.def(
      "evaluate",
      [](const py::dict& config) {
        const auto cfg = EvalConfig::from_kv(to_kv(config));
        EvalReport rep;
        {
          py::gil_scoped_release nogil;
          rep = eval_run(cfg);
        }
        py::list rows;
        for (const auto& r : rep.rows) rows.append(row_dict(r));
        py::dict out;
        out["rows"] = rows;
        out["metadata"] = rep.metadata;
        out["mean_objective"] = rep.mean_objective();
        out["mean_drop_pct"] = rep.mean_drop();
        return out;
      },
      py::arg("config"), "Runs the eval pipeline from config keys (ckpt, instances, decoder, K, ...).");
}
