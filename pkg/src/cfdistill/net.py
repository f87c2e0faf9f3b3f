"""Small fully connected network mapping (v, s, dv) to an acceleration.

The network operates on normalized inputs x = (state - shift) / scale and
emits a = out_scale * y where y is the raw linear output. Gradients returned
by the model are always in physical units, i.e. already divided by the input
scale, so callers can treat the model like any other car-following model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels

_ACT_CODES = {"tanh": kernels.ACT_TANH, "softplus": kernels.ACT_SOFTPLUS}

DEFAULT_INPUT_SHIFT = (15.0, 15.0, 0.0)
DEFAULT_INPUT_SCALE = (15.0, 15.0, 2.0)

CHECKPOINT_FORMAT = "cfdistill-mlp"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Architecture and input/output conditioning of the network."""

    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    input_shift: tuple[float, float, float] = DEFAULT_INPUT_SHIFT
    input_scale: tuple[float, float, float] = DEFAULT_INPUT_SCALE
    out_scale: float = 1.0

    def __post_init__(self):
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.activation not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        if any(sc <= 0 for sc in self.input_scale):
            raise ValueError("input scale entries must be positive")
        if not np.isfinite(self.out_scale) or self.out_scale <= 0:
            raise ValueError("out_scale must be positive and finite")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def act_code(self) -> int:
        return _ACT_CODES[self.activation]

    @property
    def widths(self) -> tuple[int, ...]:
        return (3, *self.hidden, 1)

    def to_dict(self) -> dict:
        return {
            "hidden": list(self.hidden),
            "activation": self.activation,
            "input_shift": list(self.input_shift),
            "input_scale": list(self.input_scale),
            "out_scale": self.out_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            hidden=tuple(d["hidden"]),
            activation=d["activation"],
            input_shift=tuple(d["input_shift"]),
            input_scale=tuple(d["input_scale"]),
            out_scale=float(d["out_scale"]),
        )


@dataclass
class MlpModel:
    """Parameter container plus forward/gradient evaluation."""

    spec: MlpSpec
    Ws: list = field(repr=False)
    bs: list = field(repr=False)

    def __post_init__(self):
        widths = self.spec.widths
        if len(self.Ws) != len(widths) - 1 or len(self.bs) != len(widths) - 1:
            raise ValueError("layer count does not match spec")
        for l, (W, b) in enumerate(zip(self.Ws, self.bs)):
            want = (widths[l + 1], widths[l])
            if W.shape != want or b.shape != (widths[l + 1],):
                raise ValueError(f"layer {l} shape mismatch: {W.shape} vs {want}")

    @classmethod
    def init_random(cls, spec: MlpSpec, seed: int) -> "MlpModel":
        """Symmetric uniform init, bound 1/sqrt(fan_in) per layer."""
        rng = np.random.default_rng(seed)
        widths = spec.widths
        Ws, bs = [], []
        for l in range(len(widths) - 1):
            bound = 1.0 / np.sqrt(widths[l])
            Ws.append(rng.uniform(-bound, bound, size=(widths[l + 1], widths[l])))
            bs.append(rng.uniform(-bound, bound, size=widths[l + 1]))
        return cls(spec=spec, Ws=Ws, bs=bs)

    # --- evaluation -------------------------------------------------------

    def _normalize(self, states: np.ndarray) -> np.ndarray:
        shift = np.asarray(self.spec.input_shift)
        scale = np.asarray(self.spec.input_scale)
        return (np.asarray(states, dtype=np.float64) - shift) / scale

    def forward_cached(self, states: np.ndarray):
        """Returns (accels, (Zs, Hs)) for a batch of physical states."""
        X = self._normalize(np.atleast_2d(states))
        Zs, Hs = kernels.forward(self.Ws, self.bs, X, self.spec.act_code)
        return self.spec.out_scale * Zs[-1][:, 0], (Zs, Hs)

    def accel_batch(self, states: np.ndarray) -> np.ndarray:
        """Acceleration for each row of an (N, 3) state array."""
        return self.forward_cached(states)[0]

    def accel(self, state) -> float:
        arr = state.as_array() if hasattr(state, "as_array") else np.asarray(state)
        return float(self.accel_batch(arr.reshape(1, 3))[0])

    def input_grad_batch(self, states: np.ndarray) -> np.ndarray:
        """(N, 3) array of (da/dv, da/ds, da/ddv) in physical units."""
        X = self._normalize(np.atleast_2d(states))
        _, Hs = kernels.forward(self.Ws, self.bs, X, self.spec.act_code)
        G = kernels.input_grad(self.Ws, Hs, self.spec.act_code)
        return G * (self.spec.out_scale / np.asarray(self.spec.input_scale))

    def input_grad(self, state) -> np.ndarray:
        arr = state.as_array() if hasattr(state, "as_array") else np.asarray(state)
        return self.input_grad_batch(arr.reshape(1, 3))[0]

    # --- parameter plumbing ----------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(W.size for W in self.Ws) + sum(b.size for b in self.bs)

    def copy(self) -> "MlpModel":
        return MlpModel(
            spec=self.spec,
            Ws=[W.copy() for W in self.Ws],
            bs=[b.copy() for b in self.bs],
        )

    def set_params_from(self, other: "MlpModel") -> None:
        for W, Wo in zip(self.Ws, other.Ws):
            W[...] = Wo
        for b, bo in zip(self.bs, other.bs):
            b[...] = bo

    def to_flat(self) -> np.ndarray:
        parts = [W.ravel() for W in self.Ws] + [b.ravel() for b in self.bs]
        return np.concatenate(parts)

    def from_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError("flat vector has wrong length")
        ofs = 0
        for W in self.Ws:
            W[...] = flat[ofs : ofs + W.size].reshape(W.shape)
            ofs += W.size
        for b in self.bs:
            b[...] = flat[ofs : ofs + b.size]
            ofs += b.size

    # --- persistence -------------------------------------------------------

    def save(self, path) -> None:
        """JSON checkpoint; round-trips float64 exactly via repr digits."""
        payload = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "spec": self.spec.to_dict(),
            "weights": [W.tolist() for W in self.Ws],
            "biases": [b.tolist() for b in self.bs],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MlpModel":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a model checkpoint: {path}")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
        spec = MlpSpec.from_dict(payload["spec"])
        Ws = [np.asarray(W, dtype=np.float64) for W in payload["weights"]]
        bs = [np.asarray(b, dtype=np.float64) for b in payload["biases"]]
        return cls(spec=spec, Ws=Ws, bs=bs)
