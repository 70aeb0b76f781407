import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapmark.errors import (
    CorruptModel,
    EmptyObservations,
    ImpossibleSequence,
    InstanceTooLarge,
    InvariantViolation,
    NullLabelPresent,
    VersionMismatch,
)
from gapmark.events import US_PER_DAY
from gapmark.hmm import (
    HmmModel,
    brute_force_decode,
    brute_force_log_likelihood,
    decode_labels,
    dumps_model,
    estimate,
    load_model,
    save_model,
    sequence_log_likelihood,
    viterbi_decode,
)
from gapmark.paradigms import LabelSpace, Paradigm, apply_paradigm

from _util import random_model_arrays, series_from


def model_from(pi, a, b, alphabet=None):
    m = b.shape[1] - 1
    if alphabet is None:
        alphabet = np.arange(m, dtype=np.uint64)
    return HmmModel(tuple(f"s{i}" for i in range(len(pi))), alphabet, a, b, pi, n_sensors=8).validate()


def p1_space(series):
    return apply_paradigm(series, Paradigm.P1)


def naive_estimate(states, labels, codes, days, alpha):
    """Nested-loop counter: the definition written out directly."""
    n = len(states)
    alphabet = sorted(set(codes))
    m = len(alphabet) + 1
    tc = [[0.0] * n for _ in range(n)]
    ec = [[0.0] * m for _ in range(n)]
    ic = [0.0] * n
    for t in range(len(labels)):
        i = states.index(labels[t])
        ec[i][alphabet.index(codes[t])] += 1
        if t + 1 < len(labels):
            tc[i][states.index(labels[t + 1])] += 1
        if t == 0 or days[t] != days[t - 1]:
            ic[i] += 1

    def norm(row):
        total = sum(row) + alpha * len(row)
        return [(x + alpha) / total for x in row]

    return np.array([norm(r) for r in tc]), np.array([norm(r) for r in ec]), np.array(norm(ic))


def oracle_decode(pi, a, b, obs):
    """Best path by enumeration; ties go to the path smallest when read from the end."""
    n = len(pi)
    with np.errstate(divide="ignore"):
        lp, la, lb = np.log(pi), np.log(a), np.log(b)
    best, best_key, best_path = -math.inf, None, None
    for path in itertools.product(range(n), repeat=len(obs)):
        score = lp[path[0]] + lb[path[0], obs[0]]
        for t in range(1, len(obs)):
            score = score + la[path[t - 1], path[t]]
            score = score + lb[path[t], obs[t]]
        key = tuple(reversed(path))
        if score > best or (score == best and best_key is not None and key < best_key):
            best, best_key, best_path = score, key, path
    return (list(best_path) if best_path is not None else None), best


def oracle_loglik(pi, a, b, obs):
    total = 0.0
    for path in itertools.product(range(len(pi)), repeat=len(obs)):
        p = pi[path[0]] * b[path[0], obs[0]]
        for t in range(1, len(obs)):
            p *= a[path[t - 1], path[t]] * b[path[t], obs[t]]
        total += p
    return math.log(total) if total > 0 else -math.inf


# --- estimation ---------------------------------------------------------------

def test_counting_two_labels():
    s = series_from(["A", "A", "B"], codes=[1, 1, 2])
    model = estimate(*p1_space(s), alpha=0.0)
    assert model.states == ("A", "B")
    assert model.transition[0].tolist() == [0.5, 0.5]
    # B never transitions anywhere: uniform fallback, and it is reported
    assert model.transition[1].tolist() == [0.5, 0.5]
    assert model.fallback_rows == ("B",)


def test_single_state_empirical_emissions():
    s = series_from(["A"] * 4, codes=[5, 5, 5, 9])
    model = estimate(*p1_space(s), alpha=0.0)
    assert model.transition.tolist() == [[1.0]]
    assert model.alphabet.tolist() == [5, 9]
    assert model.emission.tolist() == [[0.75, 0.25, 0.0]]
    assert model.initial.tolist() == [1.0]


def test_random_series_matches_naive_counter():
    rng = np.random.default_rng(11)
    states = ["A", "B", "C"]
    labels = [states[i] for i in rng.integers(0, 3, 500)]
    codes = rng.integers(0, 7, 500).tolist()
    # 0.5 day steps so the series spans several calendar days
    s = series_from(labels, codes=codes, delta_t=43_200 / 7)
    model = estimate(*p1_space(s), alpha=1.0)
    days = (s.timestamps // US_PER_DAY).tolist()
    a, b, pi = naive_estimate(states, labels, codes, days, 1.0)
    np.testing.assert_allclose(model.transition, a, rtol=0, atol=1e-15)
    np.testing.assert_allclose(model.emission, b, rtol=0, atol=1e-15)
    np.testing.assert_allclose(model.initial, pi, rtol=0, atol=1e-15)


def test_estimate_rejects_gaps():
    s = series_from(["A", None])
    with pytest.raises(NullLabelPresent):
        estimate(s, LabelSpace(("A",), (), Paradigm.P1))


def test_unused_base_state_gets_smoothed_row():
    s = series_from(["A", "A"], codes=[1, 2])
    model = estimate(*apply_paradigm(s, Paradigm.P1, base_activities=["A", "B"]), alpha=0.01)
    assert model.states == ("A", "B")
    np.testing.assert_allclose(model.transition[1], [0.5, 0.5])
    assert model.fallback_rows == ()


def test_drop_unused_extra():
    s = series_from(["A", "B"])
    out, space = apply_paradigm(s, Paradigm.P2)
    assert estimate(out, space).states == ("A", "B", "Unknown")
    assert estimate(out, space, drop_unused_extra=True).states == ("A", "B")


def test_unseen_code_decodes():
    s = series_from(["A", "A", "B", "B"], codes=[1, 1, 2, 2])
    model = estimate(*p1_space(s))
    assert model.symbols([1, 2, 99]).tolist() == [0, 1, 2]
    assert decode_labels(model, [99, 99]) in (["A", "A"], ["B", "B"], ["A", "B"], ["B", "A"])


# --- decoding -----------------------------------------------------------------

def test_single_observation_picks_emitting_state():
    b = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    model = model_from(np.array([0.5, 0.5]), np.full((2, 2), 0.5), b)
    path = viterbi_decode(model, [0])
    assert path.state_indices.tolist() == [1]
    assert path.log_probability == pytest.approx(math.log(0.5))


def test_sticky_two_state_example():
    a = np.array([[0.9, 0.1], [0.1, 0.9]])
    b = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    model = model_from(np.array([0.5, 0.5]), a, b)
    path = viterbi_decode(model, [0, 0, 1])
    assert path.state_indices.tolist() == [0, 0, 1]
    assert path.log_probability == pytest.approx(math.log(0.5 * 0.9 * 0.1))
    assert oracle_decode(model.initial, a, b, [0, 0, 1])[0] == [0, 0, 1]


def test_ties_go_to_lowest_index():
    model = model_from(np.full(3, 1 / 3), np.full((3, 3), 1 / 3), np.full((3, 2), 0.5))
    assert viterbi_decode(model, [0, 1, 0]).state_indices.tolist() == [0, 0, 0]
    assert brute_force_decode(model, [0, 1, 0]).state_indices.tolist() == [0, 0, 0]


def test_impossible_and_empty():
    b = np.array([[1.0, 0.0], [1.0, 0.0]])
    model = model_from(np.array([0.5, 0.5]), np.full((2, 2), 0.5), b)
    with pytest.raises(ImpossibleSequence):
        viterbi_decode(model, [5])
    with pytest.raises(EmptyObservations):
        viterbi_decode(model, [])
    assert sequence_log_likelihood(model, [5]) == -math.inf


def test_brute_force_guard():
    rng = np.random.default_rng(0)
    model = model_from(*random_model_arrays(rng, 10, 3))
    with pytest.raises(InstanceTooLarge):
        brute_force_decode(model, [0] * 10)


@pytest.mark.parametrize("seed", range(50))
def test_viterbi_matches_oracles(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 5))
    pi, a, b = random_model_arrays(rng, n, m + 1, sparsity=0.3 if seed % 2 else 0.0)
    model = model_from(pi, a, b)
    obs = rng.integers(0, m, int(rng.integers(1, 7))).tolist()
    try:
        got = viterbi_decode(model, obs)
    except ImpossibleSequence:
        assert oracle_decode(pi, a, b, obs)[1] == -math.inf
        return
    want_path, want_lp = oracle_decode(pi, a, b, obs)
    assert got.state_indices.tolist() == want_path
    assert abs(got.log_probability - want_lp) <= 1e-9
    bf = brute_force_decode(model, obs)
    assert bf.state_indices.tolist() == want_path and abs(bf.log_probability - want_lp) <= 1e-9
    ll = sequence_log_likelihood(model, obs)
    assert abs(ll - oracle_loglik(pi, a, b, obs)) <= 1e-9
    assert abs(brute_force_log_likelihood(model, obs) - ll) <= 1e-9
    assert ll >= got.log_probability - 1e-12


def test_one_hot_likelihood_is_path_probability():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    b = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    model = model_from(np.array([1.0, 0.0]), a, b)
    assert sequence_log_likelihood(model, [0, 1, 0]) == pytest.approx(0.0)
    assert viterbi_decode(model, [0, 1, 0]).log_probability == pytest.approx(0.0)


@pytest.mark.parametrize("seed", range(10))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(100 + seed)
    n, m = 4, 5
    pi, a, b = random_model_arrays(rng, n, m + 1)
    obs = rng.integers(0, m, 30)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    base = viterbi_decode(model_from(pi, a, b), obs)
    permuted = viterbi_decode(model_from(pi[perm], a[np.ix_(perm, perm)], b[perm]), obs)
    assert inv[base.state_indices].tolist() == permuted.state_indices.tolist()
    assert permuted.log_probability == pytest.approx(base.log_probability, abs=1e-9)


def test_long_sequence_does_not_underflow():
    rng = np.random.default_rng(5)
    n, m = 3, 10
    a = np.full((n, n), 1 / n)
    b = np.full((n, m + 1), 1 / (m + 1))
    model = model_from(np.full(n, 1 / n), a, b)
    obs = rng.integers(0, m, 1_000_000)
    path = viterbi_decode(model, obs)
    assert math.isfinite(path.log_probability) and path.log_probability < -1e6
    ll = sequence_log_likelihood(model, obs)
    assert math.isfinite(ll) and ll >= path.log_probability


def test_determinism():
    rng = np.random.default_rng(1)
    labels = [["A", "B", "C"][i] for i in rng.integers(0, 3, 300)]
    s = series_from(labels, codes=rng.integers(0, 9, 300).tolist())
    m1, m2 = estimate(*p1_space(s)), estimate(*p1_space(s))
    assert m1.structurally_equal(m2)
    assert dumps_model(m1) == dumps_model(m2)
    p1, p2 = viterbi_decode(m1, s.codes), viterbi_decode(m2, s.codes)
    assert np.array_equal(p1.state_indices, p2.state_indices) and p1.log_probability == p2.log_probability


# --- persistence --------------------------------------------------------------

def trained_model():
    s = series_from(["A", None, "B", "B", None, "A"], codes=[1, 0, 2, 3, 0, 1])
    return estimate(*apply_paradigm(s, Paradigm.P3))


def test_save_load_round_trip(tmp_path):
    model = trained_model()
    path = tmp_path / "m.hmm"
    save_model(model, path)
    back = load_model(path)
    assert back.structurally_equal(model)
    assert load_model(io.StringIO(dumps_model(model))).structurally_equal(model)


def test_tampered_row_rejected():
    text = dumps_model(trained_model()).splitlines()
    i = text.index("transition") + 1
    row = [float(x) for x in text[i].split()]
    row[0] += 1.5 - sum(row)
    text[i] = " ".join(repr(x) for x in row)
    with pytest.raises(CorruptModel):
        load_model(io.StringIO("\n".join(text)))


def test_future_version_rejected():
    text = dumps_model(trained_model()).replace("gapmark-hmm 1", "gapmark-hmm 2", 1)
    with pytest.raises(VersionMismatch):
        load_model(io.StringIO(text))


@pytest.mark.parametrize("cut", [1, 5, 12, -2])
def test_truncated_file_rejected(cut):
    lines = dumps_model(trained_model()).splitlines()
    with pytest.raises(CorruptModel):
        load_model(io.StringIO("\n".join(lines[:cut])))


def test_validate_catches_bad_rows():
    with pytest.raises(InvariantViolation):
        model_from(np.array([0.7, 0.7]), np.full((2, 2), 0.5), np.full((2, 2), 0.5))


# --- stochasticity on fuzzed inputs -----------------------------------------------

@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.one_of(st.none(), st.sampled_from(["A", "B", "C", "D"])), min_size=1, max_size=40),
    st.lists(st.integers(0, 15), min_size=40, max_size=40),
    st.sampled_from([0.0, 0.01, 1.0]),
    st.sampled_from(list(Paradigm)),
)
def test_estimated_rows_are_stochastic(labels, codes, alpha, paradigm):
    s = series_from(labels, codes=codes[: len(labels)], delta_t=3600 * 5)
    if paradigm is Paradigm.P1 and all(x is None for x in labels):
        return
    model = estimate(*apply_paradigm(s, paradigm), alpha=alpha)
    for mat in (model.transition, model.emission, model.initial[None, :]):
        assert np.all(mat >= 0)
        assert np.all(np.abs(mat.sum(axis=1) - 1.0) <= 1e-9)
