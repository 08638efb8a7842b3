"""Laplace noise on matching scores, importance-weighted noise, and budget accounting.

Two mechanisms perturb a matching score ``s`` in [0, 1]:

* uniform:   ``s + Lap(sensitivity / epsilon)``
* adaptive:  ``s + Lap(sensitivity / (epsilon * omega))``

where ``omega`` is the gradient magnitude of the score with respect to the
video vector, normalised by the largest such magnitude over the candidate
set, and floored at ``omega_floor`` so the noise scale stays bounded.

Noisy scores are never clamped here; clamping would change the output
distribution. Clamping for display happens in :class:`~privrec.scoring.RankedList`.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import BudgetExhaustedError, DataError
from .scoring import row_dots, sigmoid_prime


@dataclass(frozen=True)
class NoiseConfig:
    sensitivity: float = 1.0
    epsilon: float = 1.0
    omega_floor: float = 0.01

    def __post_init__(self):
        if not (self.sensitivity > 0 and math.isfinite(self.sensitivity)):
            raise ValueError(f"sensitivity must be positive and finite, got {self.sensitivity}")
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not (0 < self.omega_floor <= 1):
            raise ValueError(f"omega_floor must lie in (0, 1], got {self.omega_floor}")

    @property
    def scale(self) -> float:
        return self.sensitivity / self.epsilon

    def to_dict(self) -> dict:
        return {"sensitivity": self.sensitivity, "epsilon": self.epsilon, "omega_floor": self.omega_floor}

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseConfig":
        return cls(float(data.get("sensitivity", 1.0)), float(data["epsilon"]),
                   float(data.get("omega_floor", 0.01)))


# --------------------------------------------------------------------------
# sampling

def laplace_inverse_cdf(u, scale):
    """Map uniform draws ``u`` in (0, 1) to Laplace(0, scale) variates."""
    u = np.asarray(u, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    # Two branches so neither tail loses precision: 2u is exact below the
    # median, 1 - 2u is exact above it. u = 0.5 gives exactly 0.
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = scale * np.log(2.0 * u)
        upper = -scale * np.log1p(1.0 - 2.0 * u)
    return np.where(u < 0.5, lower, upper) + 0.0


_TINY = np.nextafter(0.0, 1.0)


def _uniform_open(rng: np.random.Generator, size=None):
    # random() is [0, 1); 0 would map to -inf, so nudge it onto the open interval
    u = rng.random(size)
    if size is None:
        return u if u > 0.0 else _TINY
    return np.where(u == 0.0, _TINY, u)


def laplace_sample(scale: float, rng: np.random.Generator) -> float:
    """One Laplace(0, scale) draw from exactly one uniform draw of ``rng``."""
    if not (scale >= 0) or math.isinf(scale):
        raise ValueError(f"scale must be finite and non-negative, got {scale}")
    u = _uniform_open(rng)
    if scale == 0:
        return 0.0
    return float(laplace_inverse_cdf(u, scale))


def laplace_samples(scale, rng: np.random.Generator, size) -> np.ndarray:
    """Vectorised :func:`laplace_sample`; ``scale`` may broadcast against ``size``."""
    scale = np.asarray(scale, dtype=np.float64)
    if np.any(~(scale >= 0)) or np.any(np.isinf(scale)):
        raise ValueError("scale must be finite and non-negative")
    u = _uniform_open(rng, size)
    return laplace_inverse_cdf(u, scale)


# --------------------------------------------------------------------------
# ledger

def exact_rational(x: float) -> Fraction:
    """The shortest decimal that round-trips ``x``, as an exact fraction."""
    return Fraction(repr(float(x)))


@dataclass
class PrivacyLedger:
    """Sequential-composition accountant.

    Charges accumulate as exact rationals so that ``n`` charges of ``eps``
    total exactly ``n * eps``; ``consumed`` is the correctly rounded float.
    A float is read as its shortest decimal form, so 0.3 + 0.7 is exactly 1.
    ``budget=None`` means unlimited.
    """

    budget: float | None = None
    _consumed: Fraction = field(default=Fraction(0), repr=False)
    _charges: int = field(default=0, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        if self.budget is not None and not (self.budget >= 0):
            raise ValueError("budget must be non-negative")

    @property
    def consumed(self) -> float:
        return float(self._consumed)

    @property
    def consumed_exact(self) -> Fraction:
        return self._consumed

    @property
    def remaining(self) -> float:
        if self.budget is None:
            return math.inf
        return float(exact_rational(self.budget) - self._consumed)

    @property
    def charges(self) -> int:
        return self._charges

    def charge(self, epsilon: float) -> "PrivacyLedger":
        """Atomically add ``epsilon``; on failure nothing changes."""
        if not (epsilon > 0) or math.isinf(epsilon):
            raise ValueError(f"epsilon must be positive and finite, got {epsilon}")
        with self._lock:
            new = self._consumed + exact_rational(epsilon)
            if self.budget is not None and new > exact_rational(self.budget):
                raise BudgetExhaustedError(
                    f"privacy ledger exhausted: consumed {float(self._consumed):g} + {epsilon:g} "
                    f"> budget {self.budget:g}"
                )
            self._consumed = new
            self._charges += 1
        return self

    def to_dict(self) -> dict:
        return {"budget": self.budget, "consumed": self.consumed, "charges": self._charges}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "PrivacyLedger":
        ledger = cls(budget=data.get("budget"))
        ledger._consumed = exact_rational(data.get("consumed", 0.0))
        ledger._charges = int(data.get("charges", 0))
        if ledger.budget is not None and ledger._consumed > exact_rational(ledger.budget):
            raise DataError("ledger consumed exceeds its budget")
        return ledger


def ledger_charge(ledger: PrivacyLedger, epsilon: float) -> PrivacyLedger:
    return ledger.charge(epsilon)


# --------------------------------------------------------------------------
# mechanisms

def privatize_score(s: float, config: NoiseConfig, rng: np.random.Generator,
                    ledger: PrivacyLedger | None = None) -> float:
    """``s`` plus Laplace(sensitivity / epsilon) noise. Charges ``ledger`` first if given."""
    if ledger is not None:
        ledger.charge(config.epsilon)
    return s + laplace_sample(config.scale, rng)


def privatize_score_adaptive(s: float, omega: float, config: NoiseConfig, rng: np.random.Generator,
                             ledger: PrivacyLedger | None = None) -> float:
    """``s`` plus Laplace(sensitivity / (epsilon * omega)) noise.

    With ``omega == 1`` this consumes the stream exactly like
    :func:`privatize_score` and returns the same value.
    """
    if not (config.omega_floor <= omega <= 1.0):
        raise ValueError(f"omega must lie in [{config.omega_floor}, 1], got {omega}")
    if ledger is not None:
        ledger.charge(config.epsilon)
    return s + laplace_sample(config.sensitivity / (config.epsilon * omega), rng)


def score_gradient_norms(u, V) -> np.ndarray:
    """Euclidean norm of d s(u, v) / d v for each row v of ``V``.

    The gradient is ``sigmoid'(u . v) * u``, so its norm is
    ``sigmoid'(u . v) * |u|``.
    """
    u = np.asarray(getattr(u, "values", u), dtype=np.float64)
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    return sigmoid_prime(row_dots(V, u)) * np.linalg.norm(u)


def importance_weights(u, V, omega_floor: float = 0.01) -> np.ndarray:
    """Per-candidate importance weights in [omega_floor, 1].

    All ones when every gradient vanishes (e.g. a zero user vector).
    """
    norms = score_gradient_norms(u, V)
    if len(norms) == 0:
        raise DataError("importance weights need a non-empty candidate set")
    top = norms.max()
    if not top > 0:
        return np.ones_like(norms)
    return np.maximum(norms / top, omega_floor)


def importance_weight(u, v_j, candidates, omega_floor: float = 0.01) -> float:
    """Importance weight of one video against a candidate set containing it."""
    vals = [np.asarray(getattr(c, "values", c), dtype=np.float64) for c in candidates]
    if not vals:
        raise DataError("importance weight needs a non-empty candidate set")
    vj = np.asarray(getattr(v_j, "values", v_j), dtype=np.float64)
    V = np.vstack(vals + [vj])
    w = importance_weights(u, V, omega_floor)
    return float(w[-1])


@dataclass
class UniformPrivatizer:
    """List-level privatizer for :func:`~privrec.scoring.rank_top_k`.

    Each call perturbs every candidate score with one uniform draw apiece
    and, if a ledger is attached, charges ``epsilon`` once for the list.
    """

    config: NoiseConfig
    rng: np.random.Generator
    ledger: PrivacyLedger | None = None

    def noise_scales(self, u, V) -> np.ndarray:
        return np.full(len(V), self.config.scale)

    def __call__(self, u, V, scores):
        if self.ledger is not None:
            self.ledger.charge(self.config.epsilon)
        u_draws = _uniform_open(self.rng, len(scores))
        return scores + laplace_inverse_cdf(u_draws, self.noise_scales(u, V))


@dataclass
class AdaptivePrivatizer(UniformPrivatizer):
    """Importance-weighted variant; the candidate set defines the normaliser."""

    def noise_scales(self, u, V) -> np.ndarray:
        omega = importance_weights(u, V, self.config.omega_floor)
        return self.config.sensitivity / (self.config.epsilon * omega)


MECHANISMS = {"uniform": UniformPrivatizer, "adaptive": AdaptivePrivatizer}


def make_privatizer(mechanism: str, config: NoiseConfig, rng: np.random.Generator,
                    ledger: PrivacyLedger | None = None):
    if mechanism == "none":
        return None
    try:
        cls = MECHANISMS[mechanism]
    except KeyError:
        raise ValueError(f"unknown mechanism {mechanism!r}; choose from none, {', '.join(MECHANISMS)}") from None
    return cls(config, rng, ledger)
