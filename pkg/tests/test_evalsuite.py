import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepforget import evalsuite as E
from deepforget import model as M
from deepforget.train import per_sample_ce


def test_linear_cka_hand_value():
    # 1-D case reduces to squared correlation: 27/28 for these columns
    assert E.linear_cka([[1.0], [2.0], [3.0]], [[1.0], [2.0], [4.0]]) == pytest.approx(27 / 28, abs=1e-15)


@given(arrays(np.float64, (12, 4), elements=st.floats(-10, 10)), st.floats(0.01, 100))
def test_cka_self_scale_and_rotation(X, c):
    X = X + np.arange(48).reshape(12, 4) * 1e-3  # avoid zero-variance draws
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))
    assert E.linear_cka(X, X) == pytest.approx(1.0, abs=1e-9)
    assert E.linear_cka(X, c * X) == pytest.approx(1.0, abs=1e-8)
    Y = np.sin(X) @ np.ones((4, 2))
    assert E.linear_cka(X @ Q, Y) == pytest.approx(E.linear_cka(X, Y), abs=1e-8)


def test_cka_errors():
    with pytest.raises(ValueError):
        E.linear_cka(np.ones((5, 2)), np.random.default_rng(0).standard_normal((5, 2)))
    with pytest.raises(ValueError):
        E.linear_cka(np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        E.linear_cka(np.ones((4, 2)), np.ones((5, 2)))


def test_fit_loss_threshold_hand_example():
    # balanced accuracy ties at 0.225 and 0.4 (both 5/6); the larger wins
    tau, deg = E.fit_loss_threshold([0.1, 0.2, 0.3], [0.25, 0.5, 0.6])
    assert tau == pytest.approx(0.4) and not deg


def test_fit_loss_threshold_degenerate():
    tau, deg = E.fit_loss_threshold([1.0, 1.0], [1.0])
    assert deg and np.isnan(tau)


def test_mia_invariants(small_bundle, small_pretrained):
    res = E.mia_scores(small_pretrained, small_bundle)
    assert 0 <= res.mia_e <= 1 and 0 <= res.mia_p <= 1
    X, y = small_bundle.split("forget")
    loss = np.maximum(per_sample_ce(M.logits(small_pretrained, X), y), E.MIA_LOSS_FLOOR)
    assert res.mia_e + np.mean(loss <= res.tau) == 1.0


def test_mia_degenerate_reports_half(small_bundle):
    ck = M.init([6, 16, 8], 4)
    zero = M.Checkpoint(tuple(M.Layer(np.zeros_like(l.weight), np.zeros_like(l.bias), l.activation) for l in ck.layers))
    res = E.mia_scores(zero, small_bundle)
    assert res.degenerate and res.mia_e == 0.5 and res.mia_p == 0.5


def test_member_rows_are_seeded_retain_sample(small_bundle):
    a, b = E.mia_member_rows(small_bundle), E.mia_member_rows(small_bundle)
    assert np.array_equal(a, b)
    assert np.isin(a, small_bundle.indices("retain")).all()
    assert a.size == round(0.2 * small_bundle.indices("retain").size)


def test_random_model_accuracy_near_chance(class_bundle):
    accs = [E.accuracy(M.init([16, 64, 64, 32], 10, seed=s), class_bundle, "train") for s in range(5)]
    assert abs(np.mean(accs) - 10.0) <= 3.0


def test_report_ua_and_ranges(small_bundle, small_pretrained):
    rep, hist = E.evaluate(small_pretrained, small_bundle)
    assert rep.ua == 100.0 - rep.accuracies["train_forget"]
    assert all(0 <= v <= 100 for v in rep.accuracies.values())
    assert set(rep.accuracies) == {"train_forget", "train_retain", "test_forget", "test_retain"}
    assert rep.mia_p is None
    assert len(hist) == 2 * 3 * E.HIST_BINS
    per = {}
    for r in hist:
        per[(r["split"], r["quantity"])] = per.get((r["split"], r["quantity"]), 0) + r["count"]
    assert per[("forget", "entropy")] == small_bundle.indices("forget").size


def test_histogram_csv_header(tmp_path, small_bundle, small_pretrained):
    _, hist = E.evaluate(small_pretrained, small_bundle)
    p = tmp_path / "h.csv"
    E.write_histogram_csv(hist, p)
    assert p.read_text().splitlines()[0] == "bin_lo,bin_hi,count,split,quantity"


def test_entropy_never_below_norm_bound(small_bundle, small_pretrained):
    X, _ = small_bundle.split("train")
    assert E.entropy_bound_slack(small_pretrained, X).min() >= -1e-12


def test_cka_report_identity(small_bundle, small_pretrained):
    for row in E.cka_report(small_pretrained, small_pretrained, small_bundle):
        assert row.cka_feature == pytest.approx(1.0) and row.cka_logit == pytest.approx(1.0)
