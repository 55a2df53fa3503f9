import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_ens.blocks import ConfigurationError
from hybrid_ens.search import (EnsConfig, GPModel, KneeWarning, ParetoArchive, SearchError, decode, ehvi,
                               gp_fit, hypervolume, knee_select, penalty, read_history_csv, run_ens,
                               write_history_csv)
from hybrid_ens.search.ens import initial_design, reference_point, select_candidate
from hybrid_ens.search.gp import matern52
from hybrid_ens.tensor import ContractError
from hybrid_ens.unet import DEFAULT_STAGES, StageSpec, option_counts, smallest_code, teacher_code

from oracles import brute_force_front, gp_dense_predict, mc_ehvi, random_front

K = np.array(option_counts())


# -------------------------------------------------------------------- decode

def test_decode_extremes():
    assert decode(np.zeros(8)) == teacher_code()
    assert decode(np.full(8, 0.999999)) == smallest_code()
    assert decode(np.ones(8)) == smallest_code()


def test_decode_arithmetic():
    x = np.zeros(8)
    x[0] = 0.34
    assert decode(x)[0] == 1


def test_decode_outside_cube():
    with pytest.raises(ContractError):
        decode(np.full(8, 1.01))
    with pytest.raises(ContractError):
        decode(np.full(8, -0.1))


def test_decode_surjective():
    from hybrid_ens.search import bin_center, decode_many
    from hybrid_ens.unet import enumerate_search_space
    codes = np.array(list(enumerate_search_space()[1]))
    centers = np.array([bin_center(z) for z in codes])
    assert np.array_equal(decode_many(centers), codes)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=8, max_size=8), st.lists(st.floats(0.001, 0.999), min_size=8, max_size=8))
def test_decode_constant_within_bin(raw, frac):
    code = np.minimum(np.array(raw), K - 1)
    x = (code + np.array(frac)) / K
    assert decode(x) == tuple(code)


# ------------------------------------------------------------------- penalty

def test_penalty_extremes():
    assert penalty(teacher_code()) == 132
    assert penalty(smallest_code()) == 16


def test_penalty_weights_validated():
    with pytest.raises(ConfigurationError):
        penalty(teacher_code(), w_teacher=1, w_surrogate=1)
    with pytest.raises(ConfigurationError):
        penalty(teacher_code(), w_teacher=3, w_surrogate=0)


def test_penalty_strictly_monotone():
    rng = np.random.default_rng(1)
    for _ in range(300):
        z = [int(rng.integers(k)) for k in K]
        i = int(rng.integers(8))
        if z[i] == K[i] - 1:
            continue
        up = list(z)
        up[i] += 1
        assert penalty(up) < penalty(z)


def test_penalty_extremes_over_space():
    from hybrid_ens.unet import enumerate_search_space
    _, it = enumerate_search_space()
    vals = {z: penalty(z) for z in it}
    assert max(vals, key=vals.get) == teacher_code()
    assert min(vals, key=vals.get) == smallest_code()


# -------------------------------------------------------------------- pareto

def test_pareto_domination():
    a = ParetoArchive()
    a.update((1, 1))
    a.update((2, 2))
    assert a.members == [(1, 1)]


def test_pareto_incomparable():
    a = ParetoArchive()
    a.update((1, 2))
    a.update((2, 1))
    assert a.members == [(1, 2), (2, 1)]


def test_pareto_tie_keeps_earlier():
    a = ParetoArchive()
    first, second = [1.0, 1.0], [1.0, 1.0]
    a.update(first)
    assert not a.update(second)
    assert a.members[0] is first


@pytest.mark.parametrize("seed", range(5))
def test_pareto_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = np.round(rng.uniform(size=(500, 2)) * 20) / 20   # coarse grid forces ties
    a = ParetoArchive()
    for i, p in enumerate(pts):
        a.update((float(p[0]), float(p[1]), i))
        if i % 50 == 49:
            assert sorted(m[2] for m in a.members) == brute_force_front(pts[:i + 1])
    assert sorted(m[2] for m in a.members) == brute_force_front(pts)


def test_hypervolume_simple():
    assert hypervolume([(0, 0)], (1, 1)) == 1.0
    assert hypervolume([(0, 0.5), (0.5, 0)], (1, 1)) == 0.75
    assert hypervolume([], (1, 1)) == 0.0


# ---------------------------------------------------------------------- knee

def test_knee_single():
    assert knee_select([(3.0, 4.0)], 1) == [(3.0, 4.0)]


def test_knee_quarter_circle():
    angles = np.linspace(0, np.pi / 2, 9)
    front = [(1 - np.sin(a), 1 - np.cos(a)) for a in angles]
    knee = knee_select(front, 1)[0]
    assert knee == front[4]
    ranked = knee_select(front, 3)
    assert ranked[0] == front[4] and set(ranked[1:]) == {front[3], front[5]}


def test_knee_collinear_prefers_low_f1():
    front = [(0.5, 0.5), (0.0, 1.0), (1.0, 0.0), (0.25, 0.75)]
    assert knee_select(front, 1)[0] == (0.0, 1.0)


def test_knee_too_many_warns():
    front = [(0.0, 1.0), (1.0, 0.0)]
    with pytest.warns(KneeWarning):
        out = knee_select(front, 5)
    assert len(out) == 2


# ------------------------------------------------------------------------ GP

def test_gp_constant_targets():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(12, 3))
    m = gp_fit(X, np.full(12, 2.5), rng=rng)
    assert m.signal < 1e-3
    mean, _ = m.predict(rng.uniform(size=(50, 3)))
    np.testing.assert_allclose(mean, 2.5, atol=1e-6)


def test_gp_recovers_lengthscale():
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(150, 2))
    Kt = matern52(X, X, 1.0, np.array([0.3, 0.3])) + 1e-6 * np.eye(150)
    y = np.linalg.cholesky(Kt) @ rng.normal(size=150)
    m = gp_fit(X, y, restarts=4, rng=rng)
    assert np.all(m.lengthscales > 0.15) and np.all(m.lengthscales < 0.6), m.lengthscales


def test_gp_interpolates_training_targets():
    rng = np.random.default_rng(4)
    X = rng.uniform(size=(30, 8))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
    m = gp_fit(X, y, rng=rng)
    mean, _ = m.predict(X)
    assert np.max(np.abs(mean - y)) <= 3 * math.sqrt(m.noise) * m.y_std + 1e-9


def test_gp_noiseless_limit():
    rng = np.random.default_rng(5)
    X = rng.uniform(size=(10, 2))
    y = rng.normal(size=10)
    m = GPModel.from_hyperparameters(X, y, 1.0, [0.4, 0.4], 1e-12)
    mean, var = m.predict(X)
    np.testing.assert_allclose(mean, y, atol=1e-6)
    assert np.all(var < 1e-6)


def test_gp_far_field():
    rng = np.random.default_rng(6)
    X = rng.uniform(size=(10, 2))
    y = rng.normal(size=10)
    m = GPModel.from_hyperparameters(X, y, 0.7, [0.1, 0.1], 1e-4)
    mean, var = m.predict(np.array([[50.0, 50.0]]))
    assert mean[0] == pytest.approx(y.mean(), abs=1e-12)
    assert var[0] == pytest.approx(0.7 * y.std() ** 2, rel=1e-12)


def test_gp_variance_nonnegative():
    rng = np.random.default_rng(7)
    X = rng.uniform(size=(40, 8))
    m = gp_fit(X, rng.normal(size=40), rng=rng)
    _, var = m.predict(rng.uniform(size=(10_000, 8)))
    assert np.all(var >= 0)


@pytest.mark.parametrize("seed", range(3))
def test_gp_matches_dense_formula(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(25, 8))
    y = rng.normal(size=25)
    m = gp_fit(X, y, rng=rng)
    Xs = rng.uniform(size=(40, 8))
    mean, var = m.predict(Xs)
    dm, dv = gp_dense_predict(X, y, Xs, m.signal, m.lengthscales, m.noise)
    np.testing.assert_allclose(mean, dm, atol=1e-8)
    np.testing.assert_allclose(var, dv, atol=1e-8)


def test_gp_needs_two_points():
    with pytest.raises(ValueError):
        gp_fit(np.zeros((1, 2)), np.zeros(1))


# ---------------------------------------------------------------------- EHVI

def test_ehvi_empty_front_factorises():
    from hybrid_ens.search import psi
    val = ehvi(0.3, 0.04, 0.5, 0.09, np.zeros((0, 2)), (1.0, 1.2))
    assert val == pytest.approx(psi(1.0, 0.3, 0.2) * psi(1.2, 0.5, 0.3), rel=1e-14)
    assert ehvi(0.3, 0.0, 0.5, 0.0, np.zeros((0, 2)), (1.0, 1.2)) == pytest.approx(0.7 * 0.7, abs=1e-15)


def test_ehvi_dominated_mean_vanishes():
    front = np.array([[0.2, 0.2]])
    assert ehvi(0.5, 1e-14, 0.5, 1e-14, front, (1, 1)) < 1e-12


def test_ehvi_reference_check():
    with pytest.raises(ContractError):
        ehvi(0.1, 0.1, 0.1, 0.1, np.array([[0.5, 1.5]]), (1, 1))


@pytest.mark.parametrize("seed", range(20))
def test_ehvi_zero_variance_is_hvi(seed):
    rng = np.random.default_rng(seed)
    front = random_front(rng, int(rng.integers(1, 7)))
    ref = (1.0, 1.0)
    y = rng.uniform(0, 1, size=2)
    expected = hypervolume(np.vstack([front, y]), ref) - hypervolume(front, ref)
    assert abs(ehvi(y[0], 0.0, y[1], 0.0, front, ref) - expected) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 6), st.floats(-1, 2), st.floats(-1, 2), st.floats(0, 1), st.floats(0, 1),
       st.integers(0, 2**31))
def test_ehvi_nonnegative(m, mu1, mu2, v1, v2, seed):
    front = random_front(np.random.default_rng(seed), m) if m else np.zeros((0, 2))
    assert ehvi(mu1, v1, mu2, v2, front, (1.0, 1.0)) >= 0.0


@pytest.mark.parametrize("seed", range(5))
def test_ehvi_matches_monte_carlo(seed):
    rng = np.random.default_rng(100 + seed)
    front = random_front(rng, int(rng.integers(1, 7)))
    mean = rng.uniform(0.0, 0.9, size=2)
    std = rng.uniform(0.05, 0.4, size=2)
    ref = (1.0, 1.0)
    est, se = mc_ehvi(mean, std, front, ref, 200_000, rng)
    val = ehvi(mean[0], std[0] ** 2, mean[1], std[1] ** 2, front, ref)
    assert abs(val - est) <= 3 * se


# ------------------------------------------------------------------- loop

def toy_objective(z):
    z = np.asarray(z)
    frac = z / (K[:len(z)] - 1)
    return float(np.sum(frac ** 1.5 * np.arange(1, len(z) + 1) / 4)), penalty(tuple(z), DEFAULT_STAGES[:len(z)])


def test_initial_design_size_and_cube():
    assert EnsConfig().initial == 17 == EnsConfig.for_dimension(8).initial
    X = initial_design(17, 8, 0)
    assert X.shape == (17, 8) and np.all((X >= 0) & (X <= 1))


def test_select_candidate_argmax():
    pool = np.arange(12.0).reshape(6, 2) / 12
    scores = np.zeros(6)
    scores[3] = 1.0
    assert np.array_equal(select_candidate(pool, scores), pool[3])


def test_reference_point():
    F = np.array([[0.0, 10.0], [2.0, 4.0]])
    np.testing.assert_allclose(reference_point(F), [2.2, 10.6])


@pytest.fixture(scope="module")
def short_run():
    return run_ens(toy_objective, EnsConfig(budget=40, seed=3))


def test_run_budget_and_initial(short_run):
    assert len(short_run.history) == 40
    assert [o.iteration for o in short_run.history] == list(range(40))
    assert all(np.all((o.x >= 0) & (o.x <= 1)) for o in short_run.history)
    assert len(short_run.knee) == 5


def test_run_front_is_brute_force(short_run):
    F = short_run.objectives()
    keep = brute_force_front([tuple(f) for f in F])
    assert sorted(o.iteration for o in short_run.front) == keep


def test_run_no_repeats_when_suppressed(short_run):
    codes = [o.z for o in short_run.history]
    assert len(set(codes)) == len(codes)


def test_run_determinism(short_run):
    again = run_ens(toy_objective, EnsConfig(budget=40, seed=3))
    assert [(o.z, o.f1, o.f2) for o in again.history] == [(o.z, o.f1, o.f2) for o in short_run.history]
    assert all(np.array_equal(a.x, b.x) for a, b in zip(again.history, short_run.history))


def test_teacher_anchor_on_extreme():
    res = run_ens(toy_objective, EnsConfig(budget=20, seed=0))
    obs = [o for o in res.history if o.z == teacher_code()]
    # whether or not the teacher was sampled, a teacher observation is never dominated in f1
    for o in obs:
        assert o.f1 == 0.0 and o.f2 == 132.0


@pytest.mark.filterwarnings("ignore::hybrid_ens.search.KneeWarning")
def test_duplicates_consume_budget():
    specs = tuple(StageSpec(s, 2, (2,), 1, 1) for s in ("E1", "E2"))
    calls = []

    def obj(z):
        calls.append(z)
        return float(sum(z)), float(4 - sum(z))
    res = run_ens(obj, EnsConfig(initial=5, budget=12, candidates=64, seed=0), specs)
    assert len(res.history) == 12
    assert len(calls) == len(set(calls)) <= 4
    assert any(o.cached for o in res.history)


def test_history_csv_roundtrip(short_run, tmp_path):
    path = tmp_path / "h.csv"
    write_history_csv(path, short_run.history)
    back = read_history_csv(path)
    for a, b in zip(short_run.history, back):
        assert np.array_equal(a.x, b.x) and a.z == b.z and a.f1 == b.f1 and a.f2 == b.f2


def test_evaluation_error_persists_partial_history(tmp_path):
    def obj(z):
        if sum(z) > 12:
            raise RuntimeError("boom")
        return toy_objective(z)
    path = tmp_path / "h.csv"
    with pytest.raises(SearchError) as info:
        run_ens(obj, EnsConfig(budget=60, seed=1), history_path=path)
    assert "code" in str(info.value)
    assert len(read_history_csv(path)) == len(info.value.history)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        EnsConfig(initial=17, budget=10)
    with pytest.raises(ConfigurationError):
        EnsConfig(candidates=0)
