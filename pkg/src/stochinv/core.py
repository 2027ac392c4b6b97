"""The generic subtract-the-minimum recursion and its probability companions.

A structure definition supplies four utility-blind subroutines (``stop``,
``split``, ``map``, ``combine``) plus an opaque auxiliary state.  Running the
recursion on exponential utilities produces a combinatorial value together
with its *trace*: the ordered record of every per-partition argmin.  Because
the subroutines never read utility values, the trace is a sufficient
statistic: the value is a function of the trace, the trace factorizes into
categorical events with probabilities proportional to the rates, and the
utilities conditioned on a trace are sums of independent exponentials.

This module implements, over any such definition:

* ``run_struct``:     the forward recursion, returning (value, trace);
* ``trace_log_prob``: the exact log-probability of a trace;
* ``trace_score``:    its analytic gradient in theta coordinates;
* ``cond_sample``:    a utility sample conditioned on a trace, plus a
  build record from which vector-Jacobian products and frozen-noise
  replays are cheap.

Winners are removed from play by marking their rate infinite (tracked as a
mask, never as a floating +inf): their residual utility is the constant 0,
so any later comparison they take part in is deterministic.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    InvalidArgumentError,
    InvalidTraceError,
    StructureDefinitionError,
)
from .perturb import (
    GradientVector,
    ThetaVector,
    Utilities,
    as_generator,
    unit_exponential,
)


class StructureDefinition(ABC):
    """Recipe for one structured distribution.

    Keys are dense integers ``0 .. n_keys-1`` internally; ``key_labels``
    maps them to caller-facing labels (item ids, edge tuples, matrix
    cells).  Subroutines receive only ``(K, R, winners)`` and must be pure:
    they may not read utility values, mutate their inputs, or hold state.

    ``split`` must return pairwise-disjoint nonempty tuples covering ``K``
    exactly, in an order that is deterministic given ``(K, R)``.  ``map``
    must return a strictly smaller key set.  ``stop`` must be true on the
    empty key set for every reachable auxiliary state.
    """

    key_labels: tuple

    @property
    def n_keys(self) -> int:
        return len(self.key_labels)

    @abstractmethod
    def initial_state(self):
        """The root call's (key set, auxiliary state)."""

    @abstractmethod
    def stop(self, K: frozenset, R) -> bool:
        """Whether the recursion bottoms out at (K, R)."""

    @abstractmethod
    def split(self, K: frozenset, R) -> Sequence[tuple]:
        """Ordered partition of K into the sets competing this level."""

    @abstractmethod
    def map(self, K: frozenset, R, winners: Sequence[int]):
        """The child call's (key set, auxiliary state) given this level's winners."""

    @abstractmethod
    def combine(self, child, K: frozenset, R, winners: Sequence[int]):
        """Assemble this level's value from the child value (None at the bottom)."""

    def finish(self, value):
        """Optional presentation hook applied to the outermost combine result."""
        return value

    def encode_value(self, value):
        """Canonical hashable encoding used for marginals and serialization."""
        return value


@dataclass(frozen=True)
class Trace:
    """Per-level (partition_index, winner_key) pairs, in recursion order."""

    levels: tuple

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def n_events(self) -> int:
        return sum(len(level) for level in self.levels)

    def winners(self) -> tuple:
        return tuple(w for level in self.levels for _, w in level)

    def to_labels(self, sdef: StructureDefinition) -> tuple:
        return tuple(
            tuple((pi, sdef.key_labels[w]) for pi, w in level)
            for level in self.levels
        )


def _check_partition(parts, K: frozenset) -> None:
    total = 0
    seen = set()
    for P in parts:
        if not P:
            raise StructureDefinitionError("split produced an empty partition")
        total += len(P)
        seen.update(P)
    if total != len(seen):
        raise StructureDefinitionError("split produced overlapping partitions")
    if seen != K:
        raise StructureDefinitionError("split does not cover the key set exactly")


def _check_shrink(K_next: frozenset, K: frozenset) -> None:
    if not (len(K_next) < len(K) and K_next <= K):
        raise StructureDefinitionError("map must return a strict subset of the keys")


def _utility_values(sdef: StructureDefinition, utilities) -> list:
    if isinstance(utilities, Utilities):
        if utilities.keys != sdef.key_labels:
            raise InvalidArgumentError("utility keys do not match the definition")
        return utilities.values.tolist()
    values = list(map(float, utilities))
    if len(values) != sdef.n_keys:
        raise InvalidArgumentError(
            f"expected {sdef.n_keys} utility values, got {len(values)}"
        )
    return values


def run_struct(sdef: StructureDefinition, utilities):
    """Run the recursion on the given utilities; return (value, trace).

    Each level takes the argmin of every partition (ties broken toward the
    lowest key, an event of probability zero under continuous noise),
    subtracts the minimum from the partition, and recurses on the key set
    chosen by ``map``.  The loop is iterative: the recursion is a chain, so
    frames are stacked and ``combine`` folds them back in reverse.
    """
    e = _utility_values(sdef, utilities)
    K, R = sdef.initial_state()
    frames = []
    levels = []
    while not sdef.stop(K, R):
        parts = sdef.split(K, R)
        _check_partition(parts, K)
        winners = []
        level = []
        for i, P in enumerate(parts):
            best = P[0]
            best_val = e[best]
            for k in P:
                v = e[k]
                if v < best_val or (v == best_val and k < best):
                    best = k
                    best_val = v
            for k in P:
                e[k] -= best_val
            winners.append(best)
            level.append((i, best))
        K_next, R_next = sdef.map(K, R, winners)
        _check_shrink(K_next, K)
        frames.append((K, R, winners))
        levels.append(tuple(level))
        K, R = K_next, R_next
    value = None
    for K, R, winners in reversed(frames):
        value = sdef.combine(value, K, R, winners)
    return sdef.finish(value), Trace(tuple(levels))


def value_from_trace(sdef: StructureDefinition, trace: Trace):
    """Rebuild the structure value a trace determines, without utilities."""
    frames, _K, _R = _replay(sdef, trace)
    value = None
    for K, R, _parts, winners in reversed(frames):
        value = sdef.combine(value, K, R, winners)
    return sdef.finish(value)


def _replay(sdef: StructureDefinition, trace: Trace):
    """Walk the recursion as dictated by a trace, validating feasibility.

    Returns (frames, K_final, R_final) with one (K, R, parts, winners)
    frame per level; raises InvalidTraceError when the trace disagrees with
    the control flow (wrong level count, wrong partition index, winner
    outside its partition).
    """
    K, R = sdef.initial_state()
    frames = []
    for level in trace.levels:
        if sdef.stop(K, R):
            raise InvalidTraceError("trace is longer than the recursion")
        parts = sdef.split(K, R)
        _check_partition(parts, K)
        if len(level) != len(parts):
            raise InvalidTraceError(
                f"level has {len(level)} events, split produced {len(parts)} partitions"
            )
        winners = []
        for i, (pi, w) in enumerate(level):
            if pi != i:
                raise InvalidTraceError(f"event {i} recorded partition index {pi}")
            if w not in parts[i]:
                raise InvalidTraceError(
                    f"winner {w} is not in its partition at level {len(frames)}"
                )
            winners.append(w)
        frames.append((K, R, parts, winners))
        K_next, R_next = sdef.map(K, R, winners)
        _check_shrink(K_next, K)
        K, R = K_next, R_next
    if not sdef.stop(K, R):
        raise InvalidTraceError("trace is shorter than the recursion")
    return frames, K, R


def _check_theta(sdef: StructureDefinition, theta: ThetaVector) -> None:
    if theta.keys != sdef.key_labels:
        raise InvalidArgumentError("theta keys do not match the definition")


def _masked_in(partition, mask) -> list:
    found = [k for k in partition if mask[k]]
    if len(found) > 1:
        raise StructureDefinitionError(
            "two deterministic keys share a partition"
        )
    return found


def _logsumexp_over(neg_theta, partition) -> float:
    m = neg_theta[partition[0]]
    for k in partition:
        if neg_theta[k] > m:
            m = neg_theta[k]
    acc = 0.0
    for k in partition:
        acc += math.exp(neg_theta[k] - m)
    return m + math.log(acc)


def trace_log_prob(sdef: StructureDefinition, trace: Trace, theta: ThetaVector) -> float:
    """Exact log p(trace; theta).

    Every stochastic event contributes ``-theta_w - logsumexp(-theta over
    its partition)``; after a key wins it is masked, so an event whose
    partition already contains a masked key is deterministic and
    contributes 0 when that key wins and -inf (an impossible trace)
    otherwise.  Partition sums are max-shifted, so thetas of magnitude
    ~50 stay well inside float64 range.
    """
    _check_theta(sdef, theta)
    mask = theta.mask.copy()
    neg_theta = (-theta.theta).tolist()
    lp = 0.0
    frames, _K, _R = _replay(sdef, trace)
    for _K_level, _R_level, parts, winners in frames:
        for P, w in zip(parts, winners):
            masked = _masked_in(P, mask)
            if masked:
                if masked[0] != w:
                    return -math.inf
            else:
                lp += neg_theta[w] - _logsumexp_over(neg_theta, P)
            mask[w] = True
    return lp


def trace_score(sdef: StructureDefinition, trace: Trace, theta: ThetaVector) -> GradientVector:
    """Gradient of ``trace_log_prob`` with respect to theta.

    Per stochastic event with partition P and winner w the contribution is
    -1 on w plus softmax(-theta | P) on every key of P; deterministic
    events contribute nothing, so masked coordinates stay exactly 0.
    """
    _check_theta(sdef, theta)
    mask = theta.mask.copy()
    neg_theta = (-theta.theta).tolist()
    grad = np.zeros(sdef.n_keys)
    frames, _K, _R = _replay(sdef, trace)
    for _K_level, _R_level, parts, winners in frames:
        for P, w in zip(parts, winners):
            masked = _masked_in(P, mask)
            if masked:
                if masked[0] != w:
                    raise InvalidTraceError(
                        "trace has probability zero under this theta"
                    )
            else:
                lse = _logsumexp_over(neg_theta, P)
                for k in P:
                    grad[k] += math.exp(neg_theta[k] - lse)
                grad[w] -= 1.0
            mask[w] = True
    return GradientVector(theta.keys, grad)


@dataclass(frozen=True)
class CondBuildRecord:
    """Everything needed to rebuild a conditional sample as a function of theta.

    ``events`` holds one (winner, noise, partition_keys) triple per
    stochastic argmin, in recursion order: the sampled minimum is
    noise / sum(rates over partition_keys) and is added to every key of the
    partition.  ``tail`` holds the per-key residual noises drawn when a key
    leaves the recursion unmasked (residual = noise / rate_key).
    Deterministic events sample an exact 0 and are omitted.
    """

    key_labels: tuple
    events: tuple  # of (winner: int, noise: float, keys: tuple[int, ...])
    tail: tuple    # of (key: int, noise: float)

    def utility_terms(self, key: int):
        """The (noise, keys) sums and residual noise composing one utility."""
        sums = [(eps, keys) for _, eps, keys in self.events if key in keys]
        resid = [eps for k, eps in self.tail if k == key]
        return sums, (resid[0] if resid else None)


def _accumulate(record: CondBuildRecord, rates: np.ndarray, n: int) -> np.ndarray:
    values = np.zeros(n)
    for k, eps in record.tail:
        values[k] = eps / rates[k]
    for w, eps, keys in reversed(record.events):
        s = 0.0
        for k in keys:
            s += rates[k]
        m = eps / s
        for k in keys:
            values[k] += m
    return values


def replay_conditional(record: CondBuildRecord, theta: ThetaVector) -> Utilities:
    """Recompute the conditional sample from its frozen noises under theta.

    With the theta used at build time this reproduces the sample bit for
    bit; with a perturbed theta it is the reparameterized sample map, the
    function whose Jacobian ``cond_jacobian_vjp`` contracts against.
    """
    if record.key_labels != theta.keys:
        raise InvalidArgumentError("record keys do not match theta")
    rates = np.exp(-theta.theta)
    return Utilities(theta.keys, _accumulate(record, rates, len(theta.keys)))


def cond_sample(sdef: StructureDefinition, trace: Trace, theta: ThetaVector, rng):
    """Sample utilities conditioned on the recursion producing ``trace``.

    Follows the trace's control flow: each stochastic event's minimum is
    drawn as Exp(sum of partition rates), each deterministic event's
    minimum is exactly 0, winners are masked going deeper, and keys leaving
    the recursion draw an Exp(rate) residual (exactly 0 if masked).
    Un-subtracting the minima bottom-up yields the sample; the returned
    record holds every noise with its partition key set, so each utility is
    a sum of terms noise/sum(rates) plus its residual.
    """
    _check_theta(sdef, theta)
    rng = as_generator(rng)
    mask = theta.mask.copy()
    events = []
    frames, K_final, _R_final = _replay(sdef, trace)
    for _K, _R, parts, winners in frames:
        for P, w in zip(parts, winners):
            masked = _masked_in(P, mask)
            if masked:
                if masked[0] != w:
                    raise InvalidTraceError(
                        "trace has probability zero under this theta"
                    )
            else:
                events.append((w, float(unit_exponential(rng)), tuple(P)))
            mask[w] = True
    # Residual draws, in the order the recursion would make them: keys that
    # survive to the stop first, then the keys dropped at each level,
    # deepest level first.  Keys masked by then get an exact 0 (no draw).
    drop_sets = [sorted(K_final)]
    key_sets = [K for K, _R, _parts, _winners in frames] + [K_final]
    for j in range(len(frames) - 1, -1, -1):
        drop_sets.append(sorted(key_sets[j] - key_sets[j + 1]))
    tail = []
    for keys in drop_sets:
        for k in keys:
            if not mask[k]:
                tail.append((k, float(unit_exponential(rng))))
    record = CondBuildRecord(theta.keys, tuple(events), tuple(tail))
    values = _accumulate(record, np.exp(-theta.theta), sdef.n_keys)
    return Utilities(theta.keys, values), record


def cond_jacobian_vjp(record: CondBuildRecord, theta: ThetaVector, v) -> GradientVector:
    """v^T (d sample / d theta) for a frozen-noise conditional build.

    A term eps/s with s = sum of exp(-theta) over its key set has
    d/dtheta_m = eps * rate_m / s^2 for every m in the set; a residual
    eps/rate_k equals its own theta_k derivative.  The Jacobian is sparse
    in exactly these terms, so the product is a single pass over the
    record.
    """
    if record.key_labels != theta.keys:
        raise InvalidArgumentError("record keys do not match theta")
    if hasattr(v, "keys") and hasattr(v, "values"):
        if tuple(v.keys) != theta.keys:
            raise InvalidArgumentError("v keys do not match theta")
        v = v.values
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (len(theta.keys),):
        raise InvalidArgumentError("v has the wrong length")
    rates = np.exp(-theta.theta)
    out = np.zeros(len(theta.keys))
    for _w, eps, keys in record.events:
        s = 0.0
        vsum = 0.0
        for k in keys:
            s += rates[k]
            vsum += v[k]
        coeff = vsum * eps / (s * s)
        for k in keys:
            out[k] += coeff * rates[k]
    for k, eps in record.tail:
        out[k] += v[k] * eps / rates[k]
    return GradientVector(theta.keys, out)
