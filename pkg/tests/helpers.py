"""Minimal stand-in models for exercising solvers and simulators.

Anything with accel_batch / input_grad_batch over (v, s, dv) rows works as a
car-following model throughout the package, so tests can feed hand-crafted
dynamics whose equilibria and stability are known in closed form.
"""
import numpy as np


class ConstantModel:
    """Same acceleration everywhere; zero input gradients."""

    def __init__(self, value: float):
        self.value = float(value)

    def accel_batch(self, states):
        return np.full(len(np.atleast_2d(np.asarray(states, dtype=float))), self.value)

    def input_grad_batch(self, states):
        return np.zeros((len(np.atleast_2d(np.asarray(states, dtype=float))), 3))


class LinearModel:
    """a = f_v (v - v_ref) + f_s (s - s_ref) + f_dv dv, constant gradients."""

    def __init__(self, f_v, f_s, f_dv, v_ref=5.0, s_ref=10.0):
        self.coeffs = (float(f_v), float(f_s), float(f_dv))
        self.v_ref = float(v_ref)
        self.s_ref = float(s_ref)

    def accel_batch(self, states):
        st = np.atleast_2d(np.asarray(states, dtype=float))
        f_v, f_s, f_dv = self.coeffs
        return f_v * (st[:, 0] - self.v_ref) + f_s * (st[:, 1] - self.s_ref) + f_dv * st[:, 2]

    def input_grad_batch(self, states):
        st = np.atleast_2d(np.asarray(states, dtype=float))
        return np.tile(self.coeffs, (len(st), 1))


class SpeedEchoModel:
    """a = v. Monotone violation in v everywhere, clean in s and dv."""

    def accel_batch(self, states):
        return np.atleast_2d(np.asarray(states, dtype=float))[:, 0].copy()

    def input_grad_batch(self, states):
        st = np.atleast_2d(np.asarray(states, dtype=float))
        g = np.zeros((len(st), 3))
        g[:, 0] = 1.0
        return g
