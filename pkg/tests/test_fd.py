import numpy as np
import pytest

from warpflow.fd import (
    Stencil,
    derivatives,
    fornberg_weights,
    geometric_grid,
    log_grid,
    parity_derivatives,
    parity_extend,
    robin_elimination,
)


def test_fornberg_central_weights():
    w = fornberg_weights(0.0, np.array([-1.0, 0.0, 1.0]), 2)
    assert np.allclose(w[1], [-0.5, 0.0, 0.5])
    assert np.allclose(w[2], [1.0, -2.0, 1.0])


def test_fornberg_needs_enough_nodes():
    with pytest.raises(ValueError):
        fornberg_weights(0.0, np.array([0.0, 1.0]), 2)


def test_stencil_exact_on_quartics_nonuniform_grid():
    x = geometric_grid(0.1, 3.0, 40, 1.07)
    st = Stencil(x)
    f = x**4 - 2 * x**3 + x
    assert np.allclose(st.d1(f), 4 * x**3 - 6 * x**2 + 1, rtol=1e-9, atol=1e-9)
    assert np.allclose(st.d2(f), 12 * x**2 - 12 * x, rtol=1e-8, atol=1e-8)


def test_fourth_order_convergence():
    errs = []
    for n in (41, 81):
        x = np.linspace(0, 1, n)
        d1, _ = derivatives(x, np.sin(3 * x))
        errs.append(np.max(np.abs(d1 - 3 * np.cos(3 * x))[2:-2]))
    assert errs[0] / errs[1] > 12.0


def test_stencil_rejects_bad_grids():
    with pytest.raises(ValueError):
        Stencil(np.array([0.0, 1.0, 2.0]))
    with pytest.raises(ValueError):
        Stencil(np.array([0.0, 2.0, 1.0, 3.0, 4.0]))


def test_parity_extend_even_and_odd():
    x = np.linspace(0, 1, 6)
    gx, gf = parity_extend(x, x**2, 1, "left")
    assert np.allclose(gx[:2], [-0.4, -0.2])
    assert np.allclose(gf[:2], [0.16, 0.04])
    gx, gf = parity_extend(x, x - 1, -1, "right")
    assert np.allclose(gx[-2:], [1.2, 1.4])
    assert np.allclose(gf[-2:], [0.2, 0.4])
    with pytest.raises(ValueError):
        parity_extend(x, x, 0)


def test_parity_derivatives_at_pole():
    x = np.linspace(0, 1, 51)
    d1, d2 = parity_derivatives(x, np.sin(x), parity_left=-1)
    assert abs(d1[0] - 1.0) < 1e-7
    assert abs(d2[0]) < 1e-12
    d1, d2 = parity_derivatives(x, np.cos(x), parity_left=1)
    assert abs(d1[0]) < 1e-12
    assert abs(d2[0] + 1.0) < 1e-6


def test_robin_elimination_reproduces_power_law():
    x = np.geomspace(0.01, 1.0, 400)
    f = x**-3
    c = robin_elimination(x, -3 / x[0], "left")
    assert c @ f[1:5] == pytest.approx(f[0], rel=1e-6)
    with pytest.raises(ValueError):
        robin_elimination(np.linspace(0, 1, 5), fornberg_weights(0.0, np.linspace(0, 1, 5), 1)[1][0], "left")


def test_grids():
    g = geometric_grid(0.0, 1.0, 5, 2.0)
    assert np.allclose(np.diff(g)[1:] / np.diff(g)[:-1], 2.0)
    assert np.allclose(geometric_grid(0, 1, 3, 1.0), [0, 0.5, 1])
    with pytest.raises(ValueError):
        geometric_grid(0, 1, 1, 2.0)
    with pytest.raises(ValueError):
        log_grid(0.0, 1.0, 5)
