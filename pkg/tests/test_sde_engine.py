import numpy as np
import pytest

from csb.bridge_core import ConditionalGaussian, DiffusionSchedule, LocalBridge, TrainConfig
from csb.csf import CsbModel, fit
from csb.errors import NonFiniteState, UnfittedModel, UnknownNode
from csb.formats import read_csv
from csb.graph_scm import Dag, Mechanism, Scm, confounder_scm, descendants, sample
from csb.sde_engine import (
    TimeGrid,
    abduct,
    generate_node,
    hybrid_counterfactual,
    integrate_ode,
    integrate_sde,
    predict,
    structural_abduction,
)


def gaussian_root(m0, s0, m1, s1, sigma=0.0):
    sol = ConditionalGaussian(np.zeros(0), m0, s0, np.zeros(0), m1, s1, sigma)
    return LocalBridge(0, (), sol, DiffusionSchedule(sigma))


@pytest.fixture(scope="module")
def confounder_model():
    scm = confounder_scm()
    d1 = sample(scm, 20_000, 0).samples
    d0 = np.random.default_rng(1).standard_normal(d1.shape)
    return scm, fit(scm.dag, d0, d1, DiffusionSchedule(0.5), TrainConfig(sigma=0.5), seed=0), d1


@pytest.fixture(scope="module")
def mixed_model():
    """A -> B (sin/tanh, neural), A -> C (linear), (B, C) -> D (linear), E isolated root."""
    names = ["A", "B", "C", "D", "E"]
    dag = Dag.from_names(names, [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")])
    mechs = (Mechanism("linear", (0.0,), 1.0), Mechanism("sin_tanh_chain", (1.5, 0.0), 0.1),
             Mechanism("linear", (0.8, 0.5), 0.5), Mechanism("linear", (1.0, -0.5, 0.0), 0.3),
             Mechanism("linear", (2.0,), 0.5))
    scm = Scm(dag, mechs)
    d1 = sample(scm, 4000, 0).samples
    d0 = np.random.default_rng(1).standard_normal(d1.shape)
    model = fit(dag, d0, d1, DiffusionSchedule(0.3), TrainConfig(sigma=0.3, steps=300, lr=1e-3), seed=0)
    assert model.meta["solver"][1] == "neural"
    return scm, model, d1


def test_ode_zero_and_constant_drift():
    x0 = np.array([1.0, -2.0])
    tr = integrate_ode(lambda x, t: np.zeros_like(x), x0, TimeGrid(50))
    assert np.all(tr.states == x0)
    c = np.array([0.3, -1.7])
    tr = integrate_ode(lambda x, t: c, x0, TimeGrid(37))
    np.testing.assert_allclose(tr.endpoint, x0 + c, rtol=0, atol=1e-12)


def test_ode_exponential_decay_and_first_order_convergence():
    x0 = np.array([2.0, -0.5])
    errs = []
    for n in (250, 500, 1000):
        end = integrate_ode(lambda x, t: -x, x0, TimeGrid(n), keep_path=False).endpoint
        errs.append(np.max(np.abs(end - np.exp(-1) * x0)))
    assert np.all(np.abs(end - np.exp(-1) * x0) <= 1e-3 * np.abs(x0))
    assert errs[0] / errs[1] >= 1.8 and errs[1] / errs[2] >= 1.8


def test_sde_unit_noise_variance():
    tr = integrate_sde(lambda x, t: np.zeros_like(x), 1.0, np.zeros(10_000), TimeGrid(100), seed=0, keep_path=False)
    assert abs(tr.endpoint.var() - 1.0) <= 0.03


def test_sde_zero_noise_is_ode_bit_exact():
    f = lambda x, t: np.sin(3 * x) - t * x
    x0 = np.linspace(-2, 2, 101)
    a = integrate_sde(f, 0.0, x0, TimeGrid(200), seed=5)
    b = integrate_ode(f, x0, TimeGrid(200))
    assert np.array_equal(a.states, b.states)
    a = integrate_sde(f, lambda t: 0.0, x0, TimeGrid(200), seed=5)
    assert np.array_equal(a.states, b.states)


def test_sde_fixed_seed_reproducible():
    f = lambda x, t: np.zeros_like(x)
    a = integrate_sde(f, 1.0, np.zeros(5), TimeGrid(30), seed=9).states
    b = integrate_sde(f, 1.0, np.zeros(5), TimeGrid(30), seed=9).states
    assert np.array_equal(a, b)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reports_step():
    with pytest.raises(NonFiniteState) as info:
        integrate_ode(lambda x, t: x ** 2, np.array([1e200]), TimeGrid(10))
    assert info.value.step == 1


def test_trajectory_csv(tmp_path):
    tr = integrate_ode(lambda x, t: np.ones_like(x), np.zeros(3), TimeGrid(4))
    tr.to_csv(tmp_path / "tr.csv")
    data, names = read_csv(tmp_path / "tr.csv")
    assert names == ["t", "x_0", "x_1", "x_2"]
    np.testing.assert_allclose(data[:, 0], np.linspace(0, 1, 5))


def test_abduction_of_identity_bridge_is_identity():
    b = gaussian_root(0.0, 1.0, 0.0, 1.0)
    x = np.array([-1.5, 0.2, 3.0])
    assert np.array_equal(structural_abduction(b, x, None, TimeGrid(100)).endpoint, x)


def test_abduction_of_mean_shift():
    b = gaussian_root(0.0, 1.0, 3.0, 1.0)
    u = structural_abduction(b, np.array([3.0]), None, TimeGrid(1000)).endpoint
    assert abs(u[0]) <= 1e-3


def test_generate_abduct_round_trip():
    rng = np.random.default_rng(0)
    u = rng.standard_normal(1000)
    grid = TimeGrid(200)
    for b in (gaussian_root(0.5, 1.0, -1.0, 2.0), gaussian_root(0.0, 1.5, 2.0, 0.4)):
        x = generate_node(b, u, None, grid, sigma=0.0).endpoint
        back = structural_abduction(b, x, None, grid).endpoint
        assert np.mean(np.abs(back - u) <= 1e-2) >= 0.95


def test_neural_round_trip(mixed_model):
    _, model, d1 = mixed_model
    grid = TimeGrid(200)
    x = d1[:1000]
    u = abduct(model, x, grid).endpoint
    rec = predict(model, u, grid, sigma=0.0).endpoint
    assert np.mean(np.max(np.abs(rec - x), axis=1) <= 1e-2) >= 0.95


def test_confounder_counterfactual_example(confounder_model):
    _, model, _ = confounder_model
    x = np.array([-3.93, -8.22, -8.27])
    reps = np.tile(x, (400, 1))
    out = hybrid_counterfactual(model, reps, {"Y": 3.0}, TimeGrid(200), sigma_gen=0.1, seed=0).mean(axis=0)
    assert out[1] == 3.0
    assert abs(out[2] - x[2]) <= 0.1


def test_empty_intervention_round_trip(confounder_model):
    _, model, d1 = confounder_model
    x = d1[:200]
    out = hybrid_counterfactual(model, x, {}, TimeGrid(200), sigma_gen=0.0)
    assert np.max(np.abs(out - x)) <= 1e-2


def test_zero_sigma_counterfactual_matches_ode_composition(confounder_model):
    _, model, d1 = confounder_model
    grid = TimeGrid(100)
    x = d1[:50]
    got = hybrid_counterfactual(model, x, {"Y": 1.0}, grid, sigma_gen=0.0, seed=3)
    u = integrate_ode(lambda s, t: -model.drift(s, t, sigma=0.0), x, grid, direction="backward").endpoint
    u = u.copy()
    u[:, 1] = 1.0
    mask = np.array([1.0, 0.0, 1.0])
    want = integrate_ode(lambda s, t: model.drift(s, t, sigma=0.0) * mask, u, grid).endpoint
    assert np.array_equal(got, want)


def test_intervened_node_clamped_along_path(confounder_model):
    _, model, d1 = confounder_model
    u = abduct(model, d1[:5], TimeGrid(50)).endpoint
    tr = predict(model, u, TimeGrid(50), sigma=0.5, seed=1, assignments={1: 2.5}, keep_path=True)
    assert np.all(tr.states[:, :, 1] == 2.5)


def test_do_on_root_leaves_non_descendants(mixed_model):
    scm, model, d1 = mixed_model
    x = d1[:300]
    grid = TimeGrid(200)
    out = hybrid_counterfactual(model, x, {"A": 1.0}, grid, sigma_gen=0.0)
    rec = hybrid_counterfactual(model, x, {}, grid, sigma_gen=0.0)
    keep = sorted(set(range(5)) - {0} - descendants(scm.dag, 0))
    assert keep == [4]
    assert np.max(np.abs(out[:, keep] - x[:, keep])) <= 1e-2
    assert np.max(np.abs(out[:, keep] - rec[:, keep])) <= 1e-2


@pytest.mark.parametrize("target", ["B", "C", "D"])
def test_non_descendants_unmoved_under_stochastic_generation(mixed_model, target):
    scm, model, d1 = mixed_model
    x = d1[:200]
    grid = TimeGrid(100)
    k = scm.dag.index(target)
    out = hybrid_counterfactual(model, x, {target: 0.7}, grid, sigma_gen=0.3, seed=11)
    rec = hybrid_counterfactual(model, x, {}, grid, sigma_gen=0.3, seed=11)
    keep = sorted(set(range(5)) - {k} - descendants(scm.dag, k))
    # same noise stream: coordinates that cannot see the intervention are bit-identical
    assert np.array_equal(out[:, keep], rec[:, keep])


def test_child_poisoning_leaves_drift_unchanged(mixed_model):
    _, model, d1 = mixed_model
    dag = model.dag
    X = d1[:64].copy()
    for t in (0.0, 0.37, 0.9):
        base = model.drift(X, t)
        for i in range(dag.node_count):
            allowed = {i, *dag.parents(i)}
            P = X.copy()
            for j in range(dag.node_count):
                if j not in allowed:
                    P[:, j] = 1e9
            assert np.array_equal(model.drift(P, t)[:, i], base[:, i])


def test_unknown_target_and_unfitted_model(confounder_model):
    _, model, _ = confounder_model
    with pytest.raises(UnknownNode):
        hybrid_counterfactual(model, np.zeros(3), {"Q": 1.0})
    empty = CsbModel(model.dag, [None, None, None])
    with pytest.raises(UnfittedModel):
        hybrid_counterfactual(empty, np.zeros(3), {})
