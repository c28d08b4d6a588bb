import math

import numpy as np
import pytest

from safemargin import ode
from safemargin.errors import StepSizeUnderflow
from safemargin.options import IntegratorOptions

OPTS = IntegratorOptions(rtol=1e-9, atol=1e-11, t_max=1.0)


def test_exponential_decay():
    tr = ode.integrate(lambda x: -x, [1.0], OPTS)
    assert tr.reason == "reached t_max"
    assert tr.t[-1] == 1.0
    assert abs(tr.final[0] - math.exp(-1)) <= 10 * OPTS.rtol


def test_samples_strictly_increasing():
    tr = ode.integrate(lambda x: -x, [1.0], OPTS)
    assert tr.t[0] == 0.0 and np.all(np.diff(tr.t) > 0)
    assert np.isfinite(tr.x).all()


def test_harmonic_oscillator_energy():
    opts = OPTS.replace(t_max=2 * math.pi)
    tr = ode.integrate(lambda x: np.array([x[1], -x[0]]), [1.0, 0.0], opts)
    energy = 0.5 * (tr.x ** 2).sum(axis=1)
    assert np.abs(energy - 0.5).max() <= 1e-7


def test_blow_up_diverges():
    opts = OPTS.replace(t_max=2.0, div_bound=1e3)
    tr = ode.integrate(lambda x: x ** 2, [1.0], opts)
    assert tr.reason == "diverged"
    assert tr.t[-1] < 1.0


def test_stop_predicate():
    tr = ode.integrate(lambda x: -x, [1.0], OPTS.replace(t_max=10.0),
                       stop=lambda t, x: x[0] < 0.5)
    assert tr.reason == "stopped"
    assert tr.final[0] < 0.5 < tr.x[-2][0]


def test_halving_tolerance_does_not_hurt():
    errs = []
    for rtol in (1e-6, 5e-7, 2.5e-7):
        opts = OPTS.replace(rtol=rtol, atol=rtol * 1e-2)
        errs.append(abs(ode.integrate(lambda x: -x, [1.0], opts).final[0] - math.exp(-1)))
    assert errs[1] <= errs[0] and errs[2] <= errs[1]


def test_step_size_underflow():
    # a field that gets stiffer without bound forces the step to shrink
    opts = OPTS.replace(t_max=1.0, div_bound=1e300)
    with pytest.raises(StepSizeUnderflow):
        ode.integrate(lambda x: np.array([1.0 / (1.0 - x[1]) ** 4, 1.0]), [0.0, 0.0],
                      opts.replace(t_max=2.0))


def test_dense_output_matches_endpoints():
    steps = []

    class Grab(ode.StepObserver):
        wants_dense = True

        def on_step(self, idx, t_old, h, z_old, z_new, K):
            steps.append((t_old[0], h[0], z_old[0].copy(), z_new[0].copy(), K[:, 0].copy()))
            return np.zeros(idx.size, dtype=bool)

    ode.run_batch(lambda Z, P: -Z, np.array([[1.0]]), np.zeros((1, 0)),
                  OPTS.replace(t_max=0.5), observer=Grab())
    t0, h, z0, z1, K = steps[3]
    out = ode.dense_eval(z0, h, K, [0.0, 0.5, 1.0])
    assert out[0] == pytest.approx(z0, abs=1e-15)
    assert out[2] == pytest.approx(z1, rel=1e-12)
    assert out[1][0] == pytest.approx(math.exp(-(t0 + 0.5 * h)), rel=1e-9)


def test_scalar_sensitivity_analytic(scalar):
    tr = ode.integrate_with_sensitivity(scalar, [-1.0], [1.0], [[0.0]], OPTS)
    assert tr.S.shape == (tr.t.size, 1, 1)
    assert tr.S[0, 0, 0] == 0.0
    assert abs(tr.S[-1, 0, 0] - math.exp(-1)) <= 10 * OPTS.rtol
    # S(t) = t e^{-t} at every sample
    assert np.abs(tr.S[:, 0, 0] - tr.t * np.exp(-tr.t)).max() <= 10 * OPTS.rtol


def test_zero_forcing_gives_zero_sensitivity(smib_config):
    import copy
    import safemargin as sm
    cfg = copy.deepcopy(smib_config)
    cfg["system"]["field"] = ["x2", "-sin(x1) - 0.5*x2"]
    m = sm.build_model(cfg)
    tr = ode.integrate_with_sensitivity(m, [1.9, 1.5], [0.3, 0.1], np.zeros((2, 2)),
                                        OPTS.replace(t_max=5.0))
    assert np.all(tr.S == 0.0)


def test_sensitivity_initial_value_kept(smib):
    S0 = np.array([[0.1, -0.2], [0.3, 0.4]])
    tr = ode.integrate_with_sensitivity(smib, [1.9, 1.5], [4.4, 0.9], S0, OPTS)
    assert np.array_equal(tr.S[0], S0)
    assert tr.S.shape[0] == tr.x.shape[0]
