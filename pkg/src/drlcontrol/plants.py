"""Simulated processes that generate the training episodes.

All plants share a small protocol: ``input_dim``, ``output_dim``,
``output()`` (current measurement-free output), ``step(u) -> y_next``,
``reset()`` and ``copy()``. ``step`` consumes the input held over the next
sampling interval and returns the output at the end of it.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from drlcontrol.errors import InvalidParameterError, InvalidShapeError, NumericOverflowError


class DiscreteTransferFunction:
    """SISO difference equation from coefficients in powers of ``z^-1``.

    ``numerator[0]`` must be zero (no direct feedthrough), so that
    ``step(u_t)`` can return ``y_{t+1}``.
    """

    input_dim = 1
    output_dim = 1

    def __init__(self, numerator, denominator):
        num = [float(c) for c in numerator]
        den = [float(c) for c in denominator]
        if not den or den[0] != 1.0:
            raise InvalidParameterError("denominator must start with 1")
        if not num or num[0] != 0.0:
            raise InvalidParameterError("numerator[0] must be 0 (strictly proper)")
        self.numerator = np.array(num)
        self.denominator = np.array(den)
        self.reset()

    def reset(self, y0=0.0, u0=0.0):
        # _y[0] = y_t, _y[1] = y_{t-1}, ...; _u[0] = u_{t-1}, ...
        self._y = np.full(max(len(self.denominator) - 1, 1), float(y0))
        self._u = np.full(max(len(self.numerator) - 1, 1), float(u0))

    def output(self):
        return np.array([self._y[0]])

    def steady_state_gain(self):
        return float(self.numerator.sum() / self.denominator.sum())

    def step(self, u):
        u = float(np.asarray(u, dtype=np.float64).reshape(-1)[0])
        self._u = np.roll(self._u, 1)
        self._u[0] = u
        nb = len(self.numerator) - 1
        na = len(self.denominator) - 1
        y = float(np.dot(self.numerator[1:], self._u[:nb]))
        if na:
            y -= float(np.dot(self.denominator[1:], self._y[:na]))
        self._y = np.roll(self._y, 1)
        self._y[0] = y
        return np.array([y])

    def scale_gain(self, factor):
        self.numerator = self.numerator * factor

    def copy(self):
        return copy.deepcopy(self)


def paper_machine():
    """``G(z) = 0.05 z^-1 / (1 - 0.6 z^-1)``: steam flow to sheet moisture."""
    return DiscreteTransferFunction([0.0, 0.05], [1.0, -0.6])


class StateSpaceModel:
    """``x+ = A x + B u``; ``step`` returns ``C x+ + D u``."""

    def __init__(self, A, B, C, D=None, x0=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        self.C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.C.shape[1] != n:
            raise InvalidShapeError("A, B, C dimensions do not chain")
        self.D = np.zeros((self.C.shape[0], self.B.shape[1])) if D is None else np.atleast_2d(
            np.asarray(D, dtype=np.float64))
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise InvalidShapeError("D must be (outputs x inputs)")
        self.input_dim = self.B.shape[1]
        self.output_dim = self.C.shape[0]
        self.state = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
        self._last_u = np.zeros(self.input_dim)

    def reset(self, x0=None):
        self.state = np.zeros(self.A.shape[0]) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
        self._last_u = np.zeros(self.input_dim)

    def output(self):
        return self.C @ self.state + self.D @ self._last_u

    def step(self, u):
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        if u.size != self.input_dim:
            raise InvalidShapeError(f"expected {self.input_dim} inputs, got {u.size}")
        self.state = self.A @ self.state + self.B @ u
        self._last_u = u
        return self.output()

    def steady_state_gain(self):
        n = self.A.shape[0]
        return self.C @ np.linalg.solve(np.eye(n) - self.A, self.B) + self.D

    def scale_gain(self, factor):
        self.B = self.B * factor

    def copy(self):
        return copy.deepcopy(self)


def lti_step(plant, u):
    return plant.step(u)


def zoh_discretize(gain, time_constant, sample_time):
    """Exact sampling of ``gain / (tau s + 1)`` under a zero-order hold.

    Returns ``(pole, input_coefficient)`` of ``y+ = pole y + coef u``.
    """
    if time_constant <= 0 or sample_time <= 0:
        raise InvalidParameterError("time constant and sample time must be positive")
    pole = math.exp(-sample_time / time_constant)
    return pole, gain * (1.0 - pole)


DISTILLATION_GAINS = ((0.878, -0.864), (1.0819, -1.0958))


def distillation_column(time_constant=75.0, sample_time=1.0, gains=DISTILLATION_GAINS):
    """Linearized two-product column, one first-order state per channel.

    Inputs are (boilup, reflux); outputs (distillate, bottoms).
    """
    g = np.asarray(gains, dtype=np.float64)
    ny, nu = g.shape
    n = ny * nu
    A = np.zeros((n, n))
    B = np.zeros((n, nu))
    C = np.zeros((ny, n))
    for i in range(ny):
        for j in range(nu):
            k = i * nu + j
            pole, coef = zoh_discretize(g[i, j], time_constant, sample_time)
            A[k, k] = pole
            B[k, j] = coef
            C[i, k] = 1.0
    return StateSpaceModel(A, B, C)


# -- HVAC -------------------------------------------------------------------

# Identified coil/valve parameters are site specific; this set is a
# placeholder. Heat flows from water to air, so every coupling
# is positive. At mid-range disturbances the discharge air temperature runs
# from about 29 C (command 150) to 37 C (command 800).
HVAC_PLACEHOLDER_THETA = (
    1.0,      # 1: inlet water mixing per unit water flow
    0.002,    # 2: coil heat loss, constant part
    0.01,     # 3: coil heat loss per unit water flow
    0.005,    # 4: coil heat loss per unit air flow
    0.2,      # 5: inlet air mixing per unit air flow
    0.042,    # 6: air heat gain, constant part
    0.0231,   # 7: air heat gain per unit water flow
    0.02,     # 8: air heat gain per unit air flow
    0.3,      # 9: inlet-air feedforward
    0.01,     # 10: valve offset
    1e-7,     # 11: valve linear and quadratic coefficient
    5e-10,    # 12: valve cubic coefficient
)

HVAC_BOUNDS = {"f_a": (0.6, 0.9), "T_wi": (73.0, 81.0), "T_ai": (4.0, 10.0)}


def valve_flow(a, theta, quadratic=None):
    """Water mass flow (kg/s) from a 12-bit valve command.

    The quadratic coefficient defaults to theta_11 (shared with the linear
    term); pass ``quadratic`` to use a distinct value.
    """
    t10, t11, t12 = theta[9], theta[10], theta[11]
    q = t11 if quadratic is None else quadratic
    return t10 + t11 * a + q * a * a + t12 * a ** 3


@dataclass
class HvacPlant:
    """Heating coil: outlet water and discharge air temperatures.

    Disturbances (air flow, inlet water and inlet air temperatures) follow
    bounded Gaussian random walks. ``boundary`` is ``"clip"`` or
    ``"reflect"``.
    """

    theta: tuple = HVAC_PLACEHOLDER_THETA
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    T_wo: float = 50.0
    T_ao: float = 30.0
    T_wi: float = 77.0
    T_ai: float = 7.0
    f_a: float = 0.75
    step_sizes: dict | None = None
    boundary: str = "clip"
    valve_quadratic: float | None = None

    input_dim = 1
    output_dim = 1

    def __post_init__(self):
        if len(self.theta) != 12:
            raise InvalidParameterError("HVAC model needs 12 theta values")
        if self.boundary not in ("clip", "reflect"):
            raise InvalidParameterError("boundary must be 'clip' or 'reflect'")
        if self.step_sizes is None:
            # 1% of each interval width per step
            self.step_sizes = {k: 0.01 * (hi - lo) for k, (lo, hi) in HVAC_BOUNDS.items()}
        self._initial = (self.T_wo, self.T_ao, self.T_wi, self.T_ai, self.f_a)
        self.T_w_bar = 0.5 * (self.T_wi + self.T_wo)
        self._f_w = valve_flow(0.0, self.theta, self.valve_quadratic)

    def reset(self):
        self.T_wo, self.T_ao, self.T_wi, self.T_ai, self.f_a = self._initial
        self.T_w_bar = 0.5 * (self.T_wi + self.T_wo)

    def output(self):
        return np.array([self.T_ao])

    def disturbance_step(self):
        for key, (lo, hi) in HVAC_BOUNDS.items():
            sd = self.step_sizes.get(key, 0.0)
            value = getattr(self, key)
            if sd > 0:
                value = value + sd * self.rng.standard_normal()
            if self.boundary == "clip":
                value = min(max(value, lo), hi)
            else:
                while value < lo or value > hi:
                    value = 2 * lo - value if value < lo else 2 * hi - value
            setattr(self, key, value)

    def step(self, a):
        a = float(np.asarray(a, dtype=np.float64).reshape(-1)[0])
        th = self.theta
        f_w = valve_flow(a, th, self.valve_quadratic)
        self._f_w = f_w
        T_wo, T_ao, T_wi, T_ai, f_a, T_bar = self.T_wo, self.T_ao, self.T_wi, self.T_ai, self.f_a, self.T_w_bar
        # the inlet-air feedforward and the mean water temperature use the
        # freshly drawn disturbances, everything else the previous sample
        self.disturbance_step()
        new_wo = T_wo + th[0] * f_w * (T_wi - T_wo) + (th[1] + th[2] * f_w + th[3] * f_a) * (T_ai - T_bar)
        new_ao = (
            T_ao
            + th[4] * f_a * (T_ai - T_ao)
            + (th[5] + th[6] * f_w + th[7] * f_a) * (T_bar - T_ai)
            + th[8] * (self.T_ai - T_ai)
        )
        if not (math.isfinite(new_wo) and math.isfinite(new_ao)):
            raise NumericOverflowError("HVAC state became non-finite")
        self.T_wo = new_wo
        self.T_ao = new_ao
        self.T_w_bar = 0.5 * (self.T_wi + self.T_wo)
        return np.array([self.T_ao])

    def scale_gain(self, factor):
        raise InvalidParameterError("process gain changes are defined for linear plants only")

    def copy(self):
        twin = copy.deepcopy(self)
        return twin


def hvac_step(plant: HvacPlant, a):
    return float(plant.step(a)[0])


def disturbance_step(plant: HvacPlant):
    plant.disturbance_step()
    return plant


# -- measurement noise and process changes ----------------------------------

@dataclass
class MeasurementNoise:
    variance: float
    rng: np.random.Generator

    def __post_init__(self):
        if self.variance < 0:
            raise InvalidParameterError("noise variance must be nonnegative")

    def apply(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.variance == 0:
            return y.copy()
        return y + math.sqrt(self.variance) * self.rng.standard_normal(y.shape)


def add_measurement_noise(y, noise: MeasurementNoise):
    return noise.apply(y)


@dataclass
class ProcessChange:
    trigger_time: int
    gain_scale: float
    applied: bool = False

    def __post_init__(self):
        if self.gain_scale <= 0:
            raise InvalidParameterError("gain_scale must be positive")


def apply_process_change(plant, change: ProcessChange, t=None):
    """Scale the plant gain once ``t`` reaches the trigger time.

    With ``t=None`` the change is applied unconditionally. Returns the plant.
    """
    if change.applied:
        return plant
    if t is None or t >= change.trigger_time:
        plant.scale_gain(change.gain_scale)
        change.applied = True
    return plant
