"""Offline stand-in for the remote teacher.

Wraps an IDM reference driver in the same reply format the endpoint teacher
uses, so the parse/vote/label path runs identically with no network. Optional
Gaussian response noise models answer variability; an optional hallucination
branch replaces the answer with an extreme value to exercise the vote filter.
"""
from __future__ import annotations

import numpy as np

from ..core import DEFAULT_IDM_PARAMS, A_MAX, A_MIN, IdmModel, IdmParams

HALLUCINATION_VALUES = (-5.0, -4.0, 4.0, 5.0)

_REPLY_TEMPLATE = (
    "I am travelling at {v:.2f} m/s with a gap of {s:.2f} m. "
    "The gap is {trend} at {rate:.2f} m/s, so I {action}.\n"
    "Final acceleration: {a:.2f} m/s^2"
)


class SyntheticOracle:
    """Deterministic when noise_std = 0 and hallucination_prob = 0.

    In that case no random numbers are drawn at all, so repeated labeling
    runs agree regardless of seed. Replies render the value at two decimals,
    matching the reply format the prompt mandates.
    """

    def __init__(
        self,
        params: IdmParams | None = None,
        noise_std: float = 0.0,
        hallucination_prob: float = 0.0,
        seed: int = 0,
    ):
        if noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0 <= hallucination_prob <= 1:
            raise ValueError("hallucination_prob must be in [0, 1]")
        self.params = params or DEFAULT_IDM_PARAMS
        self.noise_std = noise_std
        self.hallucination_prob = hallucination_prob
        self._model = IdmModel(self.params)
        self._rng = np.random.default_rng(seed)

    def accel(self, state) -> float:
        """One answer value: clamped IDM plus noise, or a hallucination."""
        if self.hallucination_prob > 0 and self._rng.random() < self.hallucination_prob:
            return float(self._rng.choice(HALLUCINATION_VALUES))
        a = self._model.accel(state)
        if self.noise_std > 0:
            a += self._rng.normal(0.0, self.noise_std)
        return float(np.clip(a, A_MIN, A_MAX))

    def _render(self, state, a: float) -> str:
        v, s, dv = (state.v, state.s, state.dv) if hasattr(state, "v") else state
        trend = "closing" if dv > 0 else "opening"
        action = "brake" if a < 0 else "accelerate gently" if a > 0 else "hold speed"
        return _REPLY_TEMPLATE.format(
            v=v, s=s, trend=trend, rate=abs(dv), action=action, a=a
        )

    def generate(self, state, k: int) -> list[str]:
        """k formatted replies for one state."""
        return [self._render(state, self.accel(state)) for _ in range(k)]
