import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otjr import _kernels as K

needs_numba = pytest.mark.skipif(K.numba is None, reason="numba not importable")


def _ties(draw_shape):
    # small integer grid so ties are common and stable tie-breaking matters
    return arrays(np.float64, draw_shape, elements=st.integers(-3, 3).map(float))


@needs_numba
@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9).flatmap(lambda B: st.integers(1, 5).flatmap(
    lambda k: st.tuples(_ties((B, k)), _ties((B, k))))))
def test_sw_match_parity(pair):
    a, b = pair
    w_np, d_np, p_np = K._np_sw_match(a, b)
    w_nb, d_nb, p_nb = K._nb_sw_match(a, b)
    assert np.array_equal(p_np, p_nb)
    assert np.array_equal(d_np, d_nb)
    np.testing.assert_allclose(w_np, w_nb, rtol=1e-13, atol=1e-15)


@needs_numba
def test_sinkhorn_parity():
    rng = np.random.default_rng(0)
    for B in (2, 5, 8):
        cost = K._np_pairwise_l2(rng.normal(size=(B, 3)), rng.normal(size=(B, 3)))
        a = np.full(B, 1.0 / B)
        args = (cost, 0.05, a, a.copy(), np.zeros(B), np.zeros(B), 300, 1e-12)
        r_np, r_nb = K._np_sinkhorn_log(*args), K._nb_sinkhorn_log(*args)
        np.testing.assert_allclose(r_np[0], r_nb[0], rtol=1e-9, atol=1e-14)
        assert r_np[3] == r_nb[3]


@needs_numba
def test_assignment_and_pairwise_parity():
    rng = np.random.default_rng(1)
    for B in (1, 3, 6):
        x, y = rng.normal(size=(B, 4)), rng.normal(size=(B, 4))
        c_np, c_nb = K._np_pairwise_l2(x, y), K._nb_pairwise_l2(x, y)
        np.testing.assert_allclose(c_np, c_nb, rtol=1e-13)
        assert K._np_assignment_min(c_np) == pytest.approx(K._nb_assignment_min(c_np), rel=1e-13)


def _run_with(backend, code):
    env = dict(os.environ, OTJR_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    return out


def test_env_flag_selects_numpy():
    code = ("from otjr import _kernels as K; from otjr.transport import *; import numpy as np\n"
            "r = np.random.default_rng(0); a, b = r.normal(size=(6, 3)), r.normal(size=(6, 3))\n"
            "print(K.BACKEND, repr(sliced_w1(a, b, sample_projections(50, 3, seed=1))))")
    out = _run_with("numpy", code)
    assert out.returncode == 0, out.stderr
    backend, value = out.stdout.split()
    assert backend == "numpy"
    from otjr.transport import sample_projections, sliced_w1
    r = np.random.default_rng(0)
    a, b = r.normal(size=(6, 3)), r.normal(size=(6, 3))
    assert float(value) == pytest.approx(sliced_w1(a, b, sample_projections(50, 3, seed=1)), rel=1e-13)


def test_env_flag_rejects_unknown():
    out = _run_with("fortran", "import otjr._kernels")
    assert out.returncode != 0 and "OTJR_KERNELS" in out.stderr
