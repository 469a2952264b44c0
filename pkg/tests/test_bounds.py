import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepforget import bounds as B
from deepforget.linalg import softmax_entropy

# entropy of softmax(h*) and the closed-form bound, evaluated with mpmath at 40 digits
FROZEN = [
    (1.0, 10, 2.2191387182885347747, 1.4198685933274914954),
    (0.5, 3, 1.0528954567525761001, 0.73434990129629602641),
    (5.0, 2, 0.0068495084685507382024, 0.00084896523173436308103),
    (10.0, 100, 0.047034907697419449795, 0.004264666083753477827),
    (20.0, 10, 1.3885016371561862939e-7, 6.2879766603866550648e-9),
    (2.0, 10, 1.8396470876290731956, 0.73865759206356507912),
]


@pytest.mark.parametrize("r,C,hstar,bound", FROZEN)
def test_closed_forms_match_high_precision(r, C, hstar, bound):
    assert B.exact_min_entropy(r, C) == pytest.approx(hstar, rel=1e-14)
    assert B.lower_bound(r, C) == pytest.approx(bound, rel=1e-14)


@given(st.floats(0.0, 50.0), st.integers(2, 200))
def test_minimizer_on_sphere_and_zero_sum(r, C):
    h = B.minimizer(r, C)
    assert np.linalg.norm(h) == pytest.approx(r, abs=1e-9)
    assert abs(h.sum()) <= 1e-9 * max(1.0, r)
    assert softmax_entropy(h) == pytest.approx(B.exact_min_entropy(r, C), rel=1e-9, abs=1e-12)


@given(st.floats(1e-3, 30.0), st.integers(2, 50))
def test_exact_strictly_above_bound(r, C):
    assert B.exact_min_entropy(r, C) > B.lower_bound(r, C)


def test_zero_radius_is_uniform():
    for C in (2, 3, 10, 100):
        assert B.exact_min_entropy(0.0, C) == pytest.approx(np.log(C), abs=1e-12)
        assert B.oracle_min(0.0, C)[0] == np.log(C)


def test_vectorized_over_r():
    r = np.array([0.0, 1.0, 5.0])
    np.testing.assert_allclose(B.exact_min_entropy(r, 10), [B.exact_min_entropy(x, 10) for x in r])


@given(st.floats(0.01, 20.0), st.integers(2, 40), st.integers(0, 2**32 - 1))
def test_random_points_in_ball_never_beat_minimum(r, C, seed):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((200, C))
    H *= (r * rng.uniform(0, 1, (200, 1)) ** (1 / C)) / np.linalg.norm(H, axis=1, keepdims=True)
    assert softmax_entropy(H).min() >= B.exact_min_entropy(r, C) - 1e-9


@pytest.mark.parametrize("r,C", [(1.0, 10), (5.0, 3), (0.5, 100)])
def test_b_equals_one_candidate_is_best(r, C):
    cands = B.stationary_candidates(r, C)
    assert [c.b for c in cands] == list(range(1, C))
    best = min(cands, key=lambda c: c.entropy)
    assert best.b == 1
    for c in cands:
        assert np.linalg.norm(c.h) == pytest.approx(r) and abs(c.h.sum()) < 1e-9


def test_oracle_matches_exact_and_two_levels():
    val, h = B.oracle_min(2.0, 10, restarts=8, iters=500)
    assert val == pytest.approx(B.exact_min_entropy(2.0, 10), abs=1e-6)
    assert B.distinct_levels(h) <= 2


def test_bound_result_fields():
    res = B.bound_result(1.0, 10, oracle=False)
    assert res.kappa == pytest.approx(np.exp(np.sqrt(10 / 9)) / 9)
    assert res.oracle_min is None and len(res.h_star) == 10
    with pytest.raises(ValueError):
        B.bound_result(-1.0, 10)


def test_distinct_levels():
    assert B.distinct_levels([1.0, 1.0, 0.0]) == 2
    assert B.distinct_levels([1.0, 1.0005, 0.0, 3.0]) == 3
