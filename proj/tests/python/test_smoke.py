import itertools
import math

import pytest

import metaco


def brute_tsp(t):
    xy = t.coords
    best = math.inf
    for rest in itertools.permutations(range(1, t.n)):
        p = (0,) + rest
        best = min(best, sum(math.dist(xy[p[i]], xy[p[(i + 1) % t.n]]) for i in range(t.n)))
    return best


def test_generators_are_seeded():
    a = metaco.gen_tsp(12, 2, seed=4)
    b = metaco.gen_tsp(12, 2, seed=4)
    assert [x.coords for x in a] == [x.coords for x in b]
    assert all(0.0 <= c <= 1.0 for x in a for pt in x.coords for c in pt)
    g = metaco.gen_er(10, 12, 0.2, count=3, seed=1)
    assert all(10 <= x.n <= 12 for x in g)


def test_held_karp_matches_enumeration():
    for t in metaco.gen_tsp(7, 3, seed=9):
        r = metaco.held_karp(t)
        assert r.proven_optimal
        assert r.objective == pytest.approx(brute_tsp(t), abs=1e-9)
        assert metaco.tour_cost(t, r.solution) == pytest.approx(r.objective, abs=1e-12)


def test_square_corners():
    t = metaco.tsp_from_coords([(0, 0), (1, 0), (1, 1), (0, 1)], k=3)
    assert metaco.held_karp(t).objective == pytest.approx(4.0)
    assert metaco.tour_cost(t, [0, 2, 1, 3]) == pytest.approx(2 + 2 * math.sqrt(2))


def test_mis_on_a_path():
    g = metaco.MisInstance("path", 5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    r = metaco.exact_mis(g)
    assert r.objective == 3 and r.solution == [0, 2, 4]
    assert metaco.violations(g, [0, 1]) != []
    assert metaco.violations(g, [0, 2, 4]) == []


@pytest.mark.parametrize("decoder", ["greedy", "sample", "mcts"])
def test_decoders_are_feasible_and_deterministic(decoder):
    t = metaco.gen_tsp(15, 1, seed=2)[0]
    theta = metaco.Model.init("tsp", seed=3).heatmap(t)
    sol, cost = metaco.decode(theta, t, decoder, samples=32, budget=500, seed=7)
    assert metaco.violations(t, sol) == []
    assert cost == pytest.approx(metaco.tour_cost(t, sol))
    assert metaco.decode(theta, t, decoder, samples=32, budget=500, seed=7) == (sol, cost)


def test_mis_decoding():
    g = metaco.gen_er(20, 20, 0.2, count=1, seed=5)[0]
    theta = metaco.Model.init("mis", seed=1).heatmap(g)
    assert len(theta) == g.n
    sol, size = metaco.decode(theta, g, "sample", samples=16)
    assert metaco.violations(g, sol) == [] and size == len(sol)
    assert size <= metaco.exact_mis(g).objective
    with pytest.raises(metaco.ParameterError):
        metaco.decode(theta, g, "mcts")


def test_drop():
    assert metaco.compute_drop(18.93, 16.55, "min") == pytest.approx(14.3807, abs=1e-4)
    assert metaco.compute_drop(423.28, 425.96, "max") == pytest.approx(0.6292, abs=1e-4)
    with pytest.raises(metaco.Error):
        metaco.compute_drop(1.0, 0.0)


def test_train_save_evaluate(tmp_path):
    seen = []
    model, costs = metaco.train(
        {"problem": "tsp", "n": 10, "steps": 3, "batch": 2, "samples": 16, "seed": 1, "workers": 1},
        on_step=lambda step, cost: seen.append(step),
    )
    assert seen == [0, 1, 2] and len(costs) == 3
    ckpt = tmp_path / "m.ckpt"
    model.save(ckpt)
    assert metaco.Model.load(ckpt).size == model.size
    inst_dir = tmp_path / "inst"
    inst_dir.mkdir()
    for t in metaco.gen_tsp(8, 3, seed=11):
        metaco.write_instance(t, inst_dir / f"{t.id}.tsp")
    rep = metaco.evaluate({"ckpt": ckpt, "instances": inst_dir, "decoder": "greedy", "workers": 1})
    assert len(rep["rows"]) == 3
    for row in rep["rows"]:
        assert row["feasible"] and row["drop_pct"] >= -1e-9
    mean = sum(r["objective"] for r in rep["rows"]) / 3
    assert rep["mean_objective"] == pytest.approx(mean, abs=1e-9)
