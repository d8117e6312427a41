import math

import numpy as np
import pytest

from fedcada.errors import NonFiniteGradientError
from fedcada.nn import MlpSpec, ParamVector, Segment, init_params
from fedcada.optim import (
    AdamHyper,
    CorrectionMode,
    MomentState,
    adam_step,
    correction_denominators,
    denominator_curve,
    sgd_step,
)

ADD_MODES = [
    CorrectionMode.ADD_GEOMETRIC,
    CorrectionMode.ADD_SQUARE,
    CorrectionMode.ADD_SINE,
    CorrectionMode.ADD_SQRT,
]


def scalar_param(value):
    return ParamVector(np.array([value]), (Segment(0, "weight", 1, 1, 0),))


@pytest.mark.parametrize(
    "mode,beta,t,expected",
    [
        (CorrectionMode.ADD_GEOMETRIC, 0.9, 1, 1.9),
        (CorrectionMode.VANILLA_SUBTRACT, 0.9, 2, 0.19),
        (CorrectionMode.ADD_SQUARE, 0.9, 2, 1.6561),
        (CorrectionMode.ADD_SINE, 0.9, 1, 1.7833269),
        (CorrectionMode.ADD_SQRT, 0.9, 1, 1.9486833),
    ],
)
def test_denominator_examples(mode, beta, t, expected):
    d1, _ = correction_denominators(mode, beta, beta, t)
    assert d1 == pytest.approx(expected, abs=5e-8)


def test_denominators_use_both_betas():
    d1, d2 = correction_denominators(CorrectionMode.ADD_GEOMETRIC, 0.9, 0.99, 1)
    assert (d1, d2) == (1.9, 1.99)


def test_no_correction_is_unit():
    assert correction_denominators(CorrectionMode.NO_CORRECTION, 0.3, 0.7, 17) == (1.0, 1.0)


@pytest.mark.parametrize("beta", [0.5, 0.9, 0.99])
@pytest.mark.parametrize("mode", ADD_MODES)
def test_add_denominators_decrease_toward_one(mode, beta):
    # t capped where beta^(2t) still exceeds float64 resolution; past that
    # 1 + x saturates to exactly 1.0 and strictness is meaningless
    curve = denominator_curve(mode, beta, 20)
    assert np.all(curve > 1.0)
    assert np.all(curve <= 2.0)
    assert np.all(np.diff(curve) < 0.0)


@pytest.mark.parametrize("beta", [0.5, 0.9, 0.99])
def test_vanilla_denominator_increases_toward_one(beta):
    curve = denominator_curve(CorrectionMode.VANILLA_SUBTRACT, beta, 40)
    assert np.all(curve > 0.0)
    assert np.all(curve < 1.0)
    assert np.all(np.diff(curve) > 0.0)


def test_mode_ordering_from_second_round():
    # the square and sine curves cross between t=1 and t=2 at beta=0.9;
    # above t ~ 174 the squared term underflows below one ulp of 1.0
    for t in range(2, 170):
        square = correction_denominators(CorrectionMode.ADD_SQUARE, 0.9, 0.9, t)[0]
        sine = correction_denominators(CorrectionMode.ADD_SINE, 0.9, 0.9, t)[0]
        geometric = correction_denominators(CorrectionMode.ADD_GEOMETRIC, 0.9, 0.9, t)[0]
        sqrt = correction_denominators(CorrectionMode.ADD_SQRT, 0.9, 0.9, t)[0]
        vanilla = correction_denominators(CorrectionMode.VANILLA_SUBTRACT, 0.9, 0.9, t)[0]
        assert vanilla < 1.0 < square <= sine <= geometric <= sqrt


@pytest.mark.parametrize(
    "mode",
    [CorrectionMode.ADD_GEOMETRIC, CorrectionMode.ADD_SINE, CorrectionMode.ADD_SQRT],
)
def test_add_curves_approach_one_over_200_rounds(mode):
    # the square mode saturates to exactly 1.0 near t=175 at beta=0.9 and
    # is covered by the high-precision acceptance oracle instead
    curve = denominator_curve(mode, 0.9, 200)
    assert np.all(np.diff(curve) < 0.0)
    assert np.all(curve > 1.0)
    assert curve[-1] - 1.0 < 1e-4


def test_curve_examples():
    np.testing.assert_allclose(
        denominator_curve(CorrectionMode.ADD_GEOMETRIC, 0.9, 3),
        [1.9, 1.81, 1.729],
        atol=1e-12,
    )
    assert np.all(denominator_curve(CorrectionMode.NO_CORRECTION, 0.42, 7) == 1.0)


def test_adam_zero_grad_zero_state_is_fixed_point():
    params = scalar_param(1.5)
    grad = scalar_param(0.0)
    state = MomentState.zeros(1)
    hyper = AdamHyper(0.01)
    out, new_state = adam_step(params, grad, state, hyper, CorrectionMode.ADD_GEOMETRIC, 1)
    assert out.values[0] == 1.5
    assert new_state.m[0] == 0.0 and new_state.v[0] == 0.0


def test_adam_first_step_forced_algebra():
    # from zero state with vanilla correction, m_hat = g and v_hat = g^2,
    # so the first update is -eta * g / (|g| + eps)
    g = 0.37
    hyper = AdamHyper(0.01, 0.9, 0.99, 1e-8)
    out, _ = adam_step(
        scalar_param(2.0), scalar_param(g), MomentState.zeros(1), hyper,
        CorrectionMode.VANILLA_SUBTRACT, 1,
    )
    expected = 2.0 - 0.01 * g / (abs(g) + 1e-8)
    assert out.values[0] == pytest.approx(expected, rel=1e-14)


def test_adam_no_correction_ignores_clock():
    rng = np.random.default_rng(0)
    params = scalar_param(0.3)
    grad = scalar_param(float(rng.standard_normal()))
    state = MomentState(np.array([0.2]), np.array([0.5]))
    hyper = AdamHyper(0.05)
    a, _ = adam_step(params, grad, state, hyper, CorrectionMode.NO_CORRECTION, 1)
    b, _ = adam_step(params, grad, state, hyper, CorrectionMode.NO_CORRECTION, 9000)
    assert a.values[0] == b.values[0]


def test_adam_second_moment_stays_nonnegative():
    rng = np.random.default_rng(3)
    params = scalar_param(0.0)
    state = MomentState.zeros(1)
    hyper = AdamHyper(0.01)
    for t in range(1, 50):
        grad = scalar_param(float(rng.standard_normal() * 10))
        params, state = adam_step(params, grad, state, hyper, CorrectionMode.ADD_SQRT, t)
        assert state.v[0] >= 0.0


def test_adam_trace_matches_scalar_reference():
    # independent plain-float Adam with the classic correction
    hyper = AdamHyper(0.01, 0.9, 0.99, 1e-8)
    params = scalar_param(0.0)
    state = MomentState.zeros(1)

    x = 0.0
    m = v = 0.0
    for t in range(1, 101):
        g = math.sin(t)
        params, state = adam_step(
            params, scalar_param(g), state, hyper, CorrectionMode.VANILLA_SUBTRACT, t
        )
        m = 0.9 * m + 0.1 * g
        v = 0.99 * v + 0.01 * (g * g)
        m_hat = m / (1.0 - 0.9**t)
        v_hat = v / (1.0 - 0.99**t)
        x = x - 0.01 * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert abs(params.values[0] - x) < 1e-12


def test_adam_rejects_nonfinite_grad():
    grad = scalar_param(float("nan"))
    with pytest.raises(NonFiniteGradientError, match="coordinate 0"):
        adam_step(
            scalar_param(0.0), grad, MomentState.zeros(1), AdamHyper(0.1),
            CorrectionMode.ADD_GEOMETRIC, 1,
        )


def test_adam_rejects_length_mismatch():
    spec = MlpSpec((2, 3, 3, 2))
    params = init_params(spec, 0)
    with pytest.raises(ValueError, match="mismatch"):
        adam_step(
            params, scalar_param(1.0), MomentState.zeros(params.dim),
            AdamHyper(0.1), CorrectionMode.ADD_GEOMETRIC, 1,
        )


def test_sgd_examples():
    two = (Segment(0, "weight", 1, 2, 0),)
    params = ParamVector(np.array([1.0, 2.0]), two)
    grad = ParamVector(np.array([0.5, -1.0]), two)
    out = sgd_step(params, grad, 2.0)
    np.testing.assert_array_equal(out.values, [0.0, 4.0])

    zero = ParamVector(np.zeros(2), two)
    np.testing.assert_array_equal(sgd_step(params, zero, 2.0).values, params.values)


def test_sgd_two_steps_equal_summed_grad():
    two = (Segment(0, "weight", 1, 2, 0),)
    params = ParamVector(np.array([1.0, -3.0]), two)
    g1 = ParamVector(np.array([0.25, 0.5]), two)
    g2 = ParamVector(np.array([-0.75, 1.5]), two)
    stepped = sgd_step(sgd_step(params, g1, 0.1), g2, 0.1)
    combined = sgd_step(params, ParamVector(g1.values + g2.values, two), 0.1)
    np.testing.assert_allclose(stepped.values, combined.values, atol=1e-16)


def test_correction_shrinks_moment_magnitude():
    # add-form denominators exceed 1, so corrected moments are smaller
    for mode in ADD_MODES:
        for t in (1, 5, 50):
            d1, d2 = correction_denominators(mode, 0.9, 0.99, t)
            assert d1 > 1.0 and d2 > 1.0
