import numpy as np
import pytest

from cian import kernels
from cian.kernels import _fallback

from oracles import hardest_negative_oracle, threshold_oracle

BACKENDS = sorted(kernels.available_backends())


def test_backend_reported():
    assert kernels.BACKEND in BACKENDS
    with pytest.raises(ValueError):
        kernels.pair_scores(*[np.ones((1, 2))] * 6, 0, impl="fortran")


@pytest.mark.parametrize("kind", [0, 1, 2])
@pytest.mark.parametrize("cross", [(True, True), (True, False), (False, True), (False, False)])
def test_pair_scores_backends_agree(kind, cross, rng):
    mats = [rng.normal(size=(7, 5)) for _ in range(3)] + [rng.normal(size=(4, 5)) for _ in range(3)]
    mats[2], mats[5] = rng.normal(size=(4, 5)), rng.normal(size=(7, 5))  # Qt has n_d rows, Qd has n_t rows
    outs = [kernels.pair_scores(*mats, kind, *cross, impl=b) for b in BACKENDS]
    for o in outs[1:]:
        np.testing.assert_allclose(o, outs[0], rtol=1e-12, atol=1e-14)
    assert outs[0].shape == (7, 4)
    assert np.all(np.abs(outs[0]) <= 1 + 1e-12)


def test_pair_scores_reference_values(rng):
    Vt, Kt, Vd, Kd = (rng.normal(size=(3, 4)) for _ in range(4))
    Qt, Qd = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
    Vd, Kd = Vd[:2], Kd[:2]
    S = kernels.pair_scores(Vt, Kt, Qt, Vd, Kd, Qd, 0)
    for i in range(3):
        for j in range(2):
            at = np.exp(Kt[i] * Qt[j] / 2)
            et = at / at.sum() * Vt[i]
            ad = np.exp(Kd[j] * Qd[i] / 2)
            ed = ad / ad.sum() * Vd[j]
            assert S[i, j] == pytest.approx(et @ ed / np.linalg.norm(et) / np.linalg.norm(ed), rel=1e-12)


def test_hardest_negatives_backends_and_oracle(backend, rng):
    for _ in range(50):
        n = int(rng.integers(1, 12))
        cats = rng.integers(0, 3, size=n)
        scores = np.round(rng.normal(size=(n, n)), 1)  # rounding forces ties
        got = kernels.hardest_negatives(scores, cats, cats, impl=backend)
        assert list(got) == hardest_negative_oracle(cats, scores)


def test_best_threshold_backends_and_oracle(backend, rng):
    for _ in range(100):
        n = int(rng.integers(2, 30))
        scores = np.round(rng.uniform(-1, 1, size=n), 1)
        labels = rng.random(n) < 0.5
        thr, f1 = kernels.best_threshold(scores, labels, impl=backend)
        o_thr, o_f1 = threshold_oracle(list(scores), list(labels))
        assert f1 == pytest.approx(o_f1, abs=1e-15)
        assert thr == o_thr


def test_admm_backends_agree(rng):
    for lam in (0.0, 0.05, 0.5, 50.0):
        A, r = rng.normal(size=(8, 6)), rng.normal(size=8)
        M = np.linalg.inv(A.T @ A + 0.5 * np.eye(6))
        x0 = np.ones(6) / np.sqrt(6)
        outs = [kernels.admm_run(M, A.T @ r, A, r, x0, lam, 1.0, 1e-10, 300, impl=b) for b in BACKENDS]
        for o in outs[1:]:
            np.testing.assert_allclose(o[0], outs[0][0], rtol=1e-9, atol=1e-11)
            assert o[2] == outs[0][2] and o[3] == outs[0][3]
            assert o[1] == pytest.approx(outs[0][1], rel=1e-9)


def test_admm_sphere_point_limit():
    z = np.zeros(3)
    np.testing.assert_array_equal(_fallback._sphere_point(z, np.array([0.1, -0.5, 0.2])), [0, -1, 0])
    np.testing.assert_allclose(_fallback._sphere_point(np.array([3.0, 4.0, 0.0]), z), [0.6, 0.8, 0])


def test_admm_never_worse_than_start(backend, rng):
    for _ in range(20):
        A, r = rng.normal(size=(6, 6)), rng.normal(size=6)
        M = np.linalg.inv(A.T @ A + 0.5 * np.eye(6))
        x0 = rng.normal(size=6)
        x0 /= np.linalg.norm(x0)
        lam = float(rng.uniform(0, 2))
        best, obj, _, _ = kernels.admm_run(M, A.T @ r, A, r, x0, lam, 1.0, 1e-8, 200, impl=backend)
        start = np.sum((A @ x0 - r) ** 2) + lam * np.abs(x0).sum()
        assert obj <= start + 1e-12
        assert abs(np.linalg.norm(best) - 1) < 1e-12
