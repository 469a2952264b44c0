import numpy as np
import pytest
from dataclasses import replace

from deepforget import attacks as A
from deepforget import data as D
from deepforget import evalsuite as E
from deepforget import model as M


def test_fm_on_identical_model_recovers_pretrained(small_bundle, small_pretrained):
    res = A.feature_map_attack(small_pretrained, small_pretrained, small_bundle)
    assert res.accuracies == E.split_accuracies(small_pretrained, small_bundle)
    assert res.W.shape == (small_pretrained.feature_dim + 1, small_pretrained.feature_dim)


def _poison(bundle):
    X = bundle.inputs.copy()
    rows = np.flatnonzero(bundle.tags != D.VAL)
    X[rows] = np.random.default_rng(0).standard_normal((rows.size, X.shape[1])) * 50
    return replace(bundle, inputs=X)


@pytest.mark.parametrize("kind", ["fm", "hr"])
def test_attacks_fit_on_val_only(kind, small_bundle, small_pretrained):
    un = M.init([6, 16, 8], 4, seed=9)
    run = (lambda b: A.feature_map_attack(small_pretrained, un, b)) if kind == "fm" else (lambda b: A.head_recovery_attack(un, b))
    np.testing.assert_array_equal(run(small_bundle).W, run(_poison(small_bundle)).W)


def test_head_recovery_on_pretrained_features_is_accurate(small_bundle, small_pretrained):
    res = A.head_recovery_attack(small_pretrained, small_bundle)
    assert res.accuracies["train_forget"] > 85
    assert res.ua == 100 - res.accuracies["train_forget"]


def test_normalize_rows_zero_safe():
    F = np.array([[3.0, 4.0], [0.0, 0.0], [1e-12, 0.0]])
    np.testing.assert_allclose(A.normalize_rows(F), [[0.6, 0.8], [0, 0], [0, 0]])


def test_recovery_result_serializes(small_bundle, small_pretrained):
    d = A.head_recovery_attack(small_pretrained, small_bundle, normalize=True).to_dict()
    assert d["kind"] == "HR" and isinstance(d["W"], list) and "deficient" in d["rank"]


def test_fm_rejects_mismatched_models(small_bundle, small_pretrained):
    with pytest.raises(ValueError):
        A.feature_map_attack(M.init([5, 8], 4), small_pretrained, small_bundle)


def test_reconstruct_stops_on_exact_start(small_bundle, small_pretrained):
    x = small_bundle.inputs[0]
    target = A.param_gradient(small_pretrained, x, int(small_bundle.labels[0]))
    rec, obj, iters = A.reconstruct(small_pretrained, int(small_bundle.labels[0]), target, x, A.InversionConfig())
    assert obj == 0.0 and iters == 0 and np.array_equal(rec, x)


def test_param_gradient_length(small_pretrained):
    g = A.param_gradient(small_pretrained, np.zeros(6), 1)
    assert g.size == M.param_vector(small_pretrained).size


def test_inversion_small_run(small_bundle, small_pretrained):
    cfg = A.InversionConfig(probes=3, iterations=40, seed=1)
    res = A.inversion_attack(small_pretrained, small_bundle, cfg)
    assert len(res.probes) == 3
    assert all(np.isfinite(p.mse) and np.isfinite(p.control_mse) for p in res.probes)
    assert all(small_bundle.tags[p.index] == D.FORGET for p in res.probes)
    again = A.inversion_attack(small_pretrained, small_bundle, cfg)
    assert res.to_dict() == again.to_dict()
