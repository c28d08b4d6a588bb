import copy
import math

import numpy as np
import pytest

import safemargin as sm
from safemargin import gfun
from safemargin.errors import NotRecovered, StencilLeftRegion

P0 = np.array([1.9, 1.5])


def test_scalar_g_closed_form(scalar):
    ev = gfun.eval_G(scalar, [-1.0])
    assert ev.recovered
    assert ev.g == pytest.approx(math.e, rel=1e-6)
    assert ev.t_hat == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("p", [-0.5, -2.0, -3.0])
def test_scalar_g_family(scalar, p):
    ev = gfun.eval_G(scalar, [p])
    assert ev.g == pytest.approx(-p * math.e, rel=1e-6)
    assert ev.t_hat == pytest.approx(-1 / p, rel=1e-4)


def test_scalar_gradient(scalar):
    assert gfun.grad_G(scalar, [-1.0])[0] == pytest.approx(-math.e, abs=1e-4)


def test_classify_examples(smib):
    assert gfun.classify(smib, P0).recovered
    assert gfun.classify(smib, [1.9, 1.85]).kind in (gfun.DIVERGED, gfun.TIMEOUT)
    assert gfun.classify(smib, [1.0, 1.5]).kind == gfun.NOSEP


def test_status_strings(smib):
    assert str(gfun.classify(smib, P0)).startswith("Recovered t_conv=")
    assert str(gfun.classify(smib, [1.0, 1.5])).startswith("NoSep")


def test_recovered_status_fields(smib):
    st = gfun.classify(smib, P0)
    assert 0 < st.t <= smib.integrator.t_max


def test_eval_g_invariants(smib):
    ev = gfun.eval_G(smib, P0)
    assert ev.g > 0 and math.isfinite(ev.g)
    assert abs(ev.g * ev.sup_norm - 1.0) <= 2.3e-16
    prof = ev.profile
    assert prof[:, 1].max() == ev.sup_norm
    assert prof[np.argmax(prof[:, 1]), 0] == ev.t_hat
    assert np.all(np.diff(prof[:, 0]) > 0)


def test_g_nominal_value(smib):
    # regression value at default tolerances
    assert gfun.eval_G(smib, P0).g == pytest.approx(5.1300e-3, rel=1e-3)


def test_not_recovered_has_no_g(smib):
    ev = gfun.eval_G(smib, [1.9, 1.85])
    assert ev.g is None and not ev.recovered
    with pytest.raises(NotRecovered):
        gfun.require_recovered(ev)


def test_symmetry_gives_zero_gradient(smib_config):
    cfg = copy.deepcopy(smib_config)
    cfg["system"]["field"] = ["x2", "p1*sin(x1) - 0.5*x2 + 1.5 + 0*p2"]
    cfg["disturbance"]["fault_field"] = ["x2", "-0.5*x2 + 1.5"]
    m = sm.build_model(cfg)
    g = gfun.grad_G(m, P0)
    assert abs(g[1]) <= 1e-10
    assert abs(g[0]) > 1e-3


def test_forward_vs_central(smib):
    central = gfun.grad_G(smib, P0)
    g0 = gfun.eval_G(smib, P0).g
    h = gfun.fd_steps(smib, P0)
    fwd = np.array([(gfun.eval_G(smib, P0 + h[k] * e).g - g0) / h[k]
                    for k, e in enumerate(np.eye(2))])
    assert np.abs(fwd - central).max() <= 1e-2 * np.abs(central).max()


def test_one_sided_oracle_at_larger_step(smib):
    # independent one-sided difference with a step well above the noise floor
    p = np.array([1.9, 1.48])
    central = gfun.grad_G(smib, p)
    g0 = gfun.eval_G(smib, p).g
    h = 1e-4
    one = np.array([(gfun.eval_G(smib, p + h * e).g - g0) / h for e in np.eye(2)])
    assert np.abs(one - central).max() <= 1e-2 * np.abs(central).max()


def test_stencil_left_region(smib):
    with pytest.raises(StencilLeftRegion) as info:
        gfun.grad_G(smib, [1.9, 1.506], steps=0.05)
    assert len(info.value.points) >= 1


def test_batch_matches_single(smib):
    ps = [[1.9, 1.5], [1.85, 1.4], [2.0, 1.45]]
    many = gfun.eval_G_many(smib, ps)
    for p, ev in zip(ps, many):
        assert ev.g == gfun.eval_G(smib, p, keep_profile=False).g


def test_order_independent(smib):
    ps = np.array([[1.9, 1.5], [1.85, 1.4], [2.0, 1.45], [1.9, 1.85]])
    a = gfun.eval_G_many(smib, ps)
    b = gfun.eval_G_many(smib, ps[::-1])[::-1]
    assert [e.g for e in a] == [e.g for e in b]


def test_classify_many_jobs_identical(smib):
    ps = np.array([[a, b] for a in np.linspace(1.7, 2.1, 9) for b in np.linspace(1.3, 1.7, 9)])
    one = gfun.eval_G_many(smib, ps, jobs=1)
    two = gfun.eval_G_many(smib, ps, jobs=2)
    assert [e.g for e in one] == [e.g for e in two]
    assert [str(e.status) for e in one] == [str(e.status) for e in two]
