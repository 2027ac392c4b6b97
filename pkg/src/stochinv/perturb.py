"""Exponential utility sampling and the log-location parameterization.

Every key ``k`` carries a real parameter ``theta_k``; the corresponding
exponential rate is ``exp(-theta_k)``, so theta is unconstrained and plays
the role of a Gumbel location.  A key may instead be marked deterministic,
which stands for an infinite rate: its utility is the constant 0.  Infinite
rates are kept out of floating-point arithmetic everywhere; the mask is the
single source of truth.
"""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .errors import InvalidArgumentError, InvalidParameterError


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, a SeedSequence, or anything ``default_rng`` takes."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def unit_exponential(rng: np.random.Generator, size=None):
    """Unit-rate exponential noise as -log(u), u uniform on (0, 1].

    The open lower bound keeps utilities finite; an exact zero (u == 1)
    remains representable, matching the distribution's support.
    """
    return -np.log1p(-rng.random(size))


class KeyedVector:
    """An ordered tuple of opaque keys with one float64 per key."""

    __slots__ = ("keys", "values")

    def __init__(self, keys: Iterable, values):
        self.keys = tuple(keys)
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.shape != (len(self.keys),):
            raise InvalidArgumentError(
                f"expected {len(self.keys)} values, got shape {self.values.shape}"
            )

    def __len__(self) -> int:
        return len(self.keys)

    def __getitem__(self, key) -> float:
        return float(self.values[self.keys.index(key)])

    def as_dict(self) -> dict:
        return dict(zip(self.keys, self.values.tolist()))

    def __repr__(self) -> str:
        pairs = ", ".join(f"{k!r}: {v:.6g}" for k, v in zip(self.keys, self.values))
        return f"{type(self).__name__}({{{pairs}}})"


class Utilities(KeyedVector):
    """Nonnegative perturbation values, one exponential draw per key."""

    def __init__(self, keys, values):
        super().__init__(keys, values)
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise InvalidParameterError("utilities must be finite and nonnegative")


class GradientVector(KeyedVector):
    """A derivative with respect to each key's theta coordinate."""


class ThetaVector:
    """Log-location parameters with an explicit deterministic-winner mask.

    ``mask[k] = True`` means key ``k`` behaves as if its rate were infinite:
    its utility is exactly 0 and it wins every comparison it takes part in.
    """

    __slots__ = ("keys", "theta", "mask", "_index")

    def __init__(self, keys: Iterable, theta, mask=None):
        self.keys = tuple(keys)
        if len(set(self.keys)) != len(self.keys):
            raise InvalidParameterError("duplicate keys in theta vector")
        self.theta = np.asarray(theta, dtype=np.float64)
        if self.theta.shape != (len(self.keys),):
            raise InvalidParameterError(
                f"expected {len(self.keys)} theta values, got shape {self.theta.shape}"
            )
        if mask is None:
            mask = np.zeros(len(self.keys), dtype=bool)
        self.mask = np.asarray(mask, dtype=bool)
        if self.mask.shape != self.theta.shape:
            raise InvalidParameterError("mask shape does not match theta")
        if not np.all(np.isfinite(self.theta[~self.mask])):
            raise InvalidParameterError("theta must be finite on unmasked keys")
        self._index = {k: i for i, k in enumerate(self.keys)}

    @classmethod
    def constant(cls, keys, value: float = 0.0) -> "ThetaVector":
        keys = tuple(keys)
        return cls(keys, np.full(len(keys), float(value)))

    @classmethod
    def from_dict(cls, mapping: Mapping, masked: Iterable = ()) -> "ThetaVector":
        keys = tuple(mapping)
        masked = set(masked)
        theta = [0.0 if k in masked else float(mapping[k]) for k in keys]
        mask = [k in masked for k in keys]
        return cls(keys, theta, mask)

    def __len__(self) -> int:
        return len(self.keys)

    def index(self, key) -> int:
        return self._index[key]

    def replace(self, theta) -> "ThetaVector":
        """Same keys and mask, new theta values."""
        return ThetaVector(self.keys, theta, self.mask)

    def unmasked_rates(self) -> np.ndarray:
        """exp(-theta) with masked entries left at 0; never used as a rate."""
        out = np.zeros(len(self.keys))
        out[~self.mask] = np.exp(-self.theta[~self.mask])
        return out

    def __repr__(self) -> str:
        parts = []
        for k, t, m in zip(self.keys, self.theta, self.mask):
            parts.append(f"{k!r}: det" if m else f"{k!r}: {t:.6g}")
        return f"ThetaVector({{{', '.join(parts)}}})"


def rates_from_theta(theta: ThetaVector) -> KeyedVector:
    """Per-key exponential rates exp(-theta), +inf sentinel on masked keys.

    The sentinel is for inspection and display only; computational paths
    use the mask so that no +inf enters sums or logs.
    """
    rates = np.empty(len(theta.keys))
    rates[~theta.mask] = np.exp(-theta.theta[~theta.mask])
    rates[theta.mask] = np.inf
    return KeyedVector(theta.keys, rates)


def sample_utilities(theta: ThetaVector, rng) -> Utilities:
    """Draw one independent Exp(exp(-theta_k)) value per unmasked key.

    Masked keys get exactly 0.  E_k = eps_k * exp(theta_k) with eps_k unit
    exponential, so the same noise vector under a different theta is the
    reparameterized sample map.
    """
    rng = as_generator(rng)
    values = unit_exponential(rng, len(theta.keys))
    values *= np.exp(theta.theta)
    values[theta.mask] = 0.0
    return Utilities(theta.keys, values)


def sample_utilities_matrix(theta: ThetaVector, n_samples: int, rng) -> np.ndarray:
    """Vectorized form of ``sample_utilities``: an (n_samples, n_keys) array."""
    rng = as_generator(rng)
    values = unit_exponential(rng, (n_samples, len(theta.keys)))
    values *= np.exp(theta.theta)[None, :]
    values[:, theta.mask] = 0.0
    return values


def reparam_diag(utilities: Utilities) -> KeyedVector:
    """Pathwise derivative dE_k/dtheta_k of the sample map at fixed noise.

    E_k = eps_k * exp(theta_k) gives dE_k/dtheta_k = E_k; masked keys are
    constant 0 and so contribute 0, which is again their value.
    """
    return KeyedVector(utilities.keys, utilities.values.copy())
