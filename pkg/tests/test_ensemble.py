import numpy as np
import pytest

from napc.errors import DataError
from napc.ensemble import (EnsembleSpec, calibrate_tau, ensemble_predict, member_finals, population_from_finals,
                           quantile_combine, quantile_index, rank_members)
from napc.metrics import EquivalenceConfig, ErrorPopulation, SimulationConfig
from napc.model import FloatModel, ModelSpec, Weights
from napc.dataio import Sequence


@pytest.mark.parametrize("tau,n,k", [(0.5, 9, 5), (5 / 9, 9, 5), (0.6, 9, 6), (2 / 3, 9, 6), (2 / 3, 3, 2),
                                     (0.75, 4, 3), (0.0, 5, 1), (1.0, 5, 5), (0.01, 3, 1)])
def test_quantile_index(tau, n, k):
    assert quantile_index(tau, n) == k


def test_quantile_index_rejects_bad_input():
    with pytest.raises(ValueError):
        quantile_index(1.2, 3)
    with pytest.raises(ValueError):
        quantile_index(0.5, 0)


def test_combine_examples():
    assert quantile_combine([1.4, 2.6, 3.2], 0.5).tolist() == 3
    finals = np.array([[[1.4, 7.0]], [[2.6, 5.2]], [[3.2, 6.1]]])  # (N=3, S=1, C=2)
    assert quantile_combine(finals, 2 / 3).tolist() == [[3, 6]]
    assert quantile_combine(finals, 0).tolist() == [[1, 5]]


def test_combine_commutes_with_monotone_rounding():
    # rounding is monotone, so picking then rounding equals rounding then picking
    r = np.random.default_rng(3)
    finals = r.normal(3, 1, size=(9, 50, 2))
    for tau in (0.5, 5 / 9, 2 / 3):
        assert np.array_equal(quantile_combine(finals, tau), quantile_combine(np.round(finals), tau))
    assert quantile_combine([2.4, 2.51, 2.6, 2.45], 0.5) == 2


def test_combine_permutation_invariant():
    r = np.random.default_rng(0)
    finals = r.normal(5, 2, size=(7, 4, 2))
    for tau in (0.5, 0.6, 0.75):
        assert np.array_equal(quantile_combine(finals, tau), quantile_combine(finals[r.permutation(7)], tau))


def emitter(rate, spec=ModelSpec(2, 1, 2, 1)):
    w = Weights.zeros(spec)
    w.params["fc_out.B"][:] = [rate]
    return FloatModel(spec, w)


def test_member_finals_and_ensemble_predict():
    seqs = [Sequence("a", np.zeros((10, 2)), (1,)), Sequence("b", np.zeros((20, 2)), (2,))]
    members = [emitter(0.1), emitter(0.14), emitter(0.2)]
    finals = member_finals(members, seqs)
    assert finals.shape == (3, 2, 1)
    assert np.allclose(finals[:, 0, 0], [1.0, 1.4, 2.0], atol=1e-5)
    assert ensemble_predict(EnsembleSpec(members, tau=0.5), seqs).tolist() == [[1], [3]]
    with pytest.raises(ValueError):
        EnsembleSpec([])
    with pytest.raises(DataError):
        EnsembleSpec([emitter(0.1), emitter(0.1, ModelSpec(3, 1, 2, 1))])


def _pops():
    manual = np.array([[10], [12], [8], [11]] * 25)
    ids = [f"s{i}" for i in range(100)]
    mk = lambda auto: ErrorPopulation(ids, ["c"], manual, auto)  # noqa: E731
    return {"exact": mk(manual), "over": mk(manual + 2), "under": mk(manual - 2), "also_exact": mk(manual)}


def test_rank_members_orders_by_success_then_id():
    ranked = rank_members(_pops(), SimulationConfig(n=50, repetitions=200, seed=0), EquivalenceConfig(delta=0.05))
    assert ranked.ids[:2] == ["also_exact", "exact"]
    assert dict(ranked.entries)["exact"] == 1.0 and dict(ranked.entries)["over"] == 0.0
    assert ranked.top(1) == ["also_exact"]
    assert ranked.to_dict()["ranking"][0]["model"] == "also_exact"


def test_rank_members_rejects_different_validation_sets():
    pops = _pops()
    other = pops["over"]
    pops["shifted"] = ErrorPopulation(other.seq_ids, other.class_names, other.manual + 1, other.automatic)
    with pytest.raises(DataError):
        rank_members(pops, SimulationConfig(n=10, repetitions=10))


def test_calibrate_tau():
    pop = _pops()["exact"]
    sim, eq = SimulationConfig(n=50, repetitions=200, seed=0), EquivalenceConfig(delta=0.05)
    # three members: one undercounts by 2, two are exact
    finals = np.stack([pop.manual - 2.0, pop.manual + 0.1, pop.manual - 0.1])
    tau, scores = calibrate_tau(finals, pop, sim, eq, tau_grid=[0.2, 0.5])
    assert tau == 0.5 and [t for t, _ in scores] == [0.2, 0.5]
    assert calibrate_tau(finals, pop, sim, eq, tau_grid=[0.2])[0] == 0.2
    # a single member makes every tau equivalent; the smallest wins
    assert calibrate_tau(finals[1:2], pop, sim, eq)[0] == 0.5
    with pytest.raises(DataError):
        calibrate_tau(finals[:, :10], pop, sim, eq)


def test_population_from_finals_keeps_manual():
    pop = _pops()["exact"]
    p2 = population_from_finals(pop.manual + 1, pop)
    assert np.array_equal(p2.manual, pop.manual) and np.all(p2.differences == 1)
