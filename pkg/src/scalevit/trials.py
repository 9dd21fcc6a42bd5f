"""Core domain model: trials, labels, quadrant mapping, normalization, folds."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import BadKError, NonFiniteError, OutOfRangeError, TooFewItemsError

SAM_MIN = 1.0
SAM_MAX = 9.0
SAM_MIDPOINT = 5.0


class Quadrant(enum.IntEnum):
    """Valence/arousal quadrants; the integer codes are part of the file format."""

    Q1 = 0  # high arousal, high valence
    Q2 = 1  # high arousal, low valence
    Q3 = 2  # low arousal, low valence
    Q4 = 3  # low arousal, high valence

    @property
    def high_valence(self) -> bool:
        return self in (Quadrant.Q1, Quadrant.Q4)

    @property
    def high_arousal(self) -> bool:
        return self in (Quadrant.Q1, Quadrant.Q2)


class FoldMode(enum.Enum):
    RANDOM_TRIAL = "random-trial"
    CROSS_PERSON = "cross-person"


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Labels:
    """Per-trial emotion labels: quadrant plus continuous SAM ratings in [1, 9]."""

    vaq_quadrant: Quadrant
    sam_valence: float
    sam_arousal: float

    def __post_init__(self):
        for name, value in (("sam_valence", self.sam_valence), ("sam_arousal", self.sam_arousal)):
            if not np.isfinite(value) or not (SAM_MIN <= value <= SAM_MAX):
                raise OutOfRangeError(f"{name}={value!r} outside [{SAM_MIN}, {SAM_MAX}]")


@dataclass(frozen=True)
class Trial:
    """One participant x video recording: a channel-by-time sample matrix.

    `samples` is stored as a read-only float64 array of shape
    (n_channels, n_samples).
    """

    participant_id: int
    video_id: int
    samples: np.ndarray
    sample_rate_hz: float = 128.0
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-d, got shape {samples.shape}")
        n_channels, n_samples = samples.shape
        if n_channels < 1 or n_samples < 2:
            raise ValueError(f"need >=1 channel and >=2 samples, got {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise NonFiniteError("trial samples contain NaN/Inf")
        if not 1 <= self.participant_id <= 32:
            raise ValueError(f"participant_id {self.participant_id} outside 1..32")
        if not 1 <= self.video_id <= 40:
            raise ValueError(f"video_id {self.video_id} outside 1..40")
        names = tuple(self.channel_names)
        if len(names) != n_channels:
            raise ValueError(f"{len(names)} channel names for {n_channels} channels")
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


def zscore_normalize(signal) -> np.ndarray:
    """Z-score a 1-d signal using the population standard deviation.

    A constant signal maps to all zeros rather than erroring: preprocessed
    physiological data can flatline on peripheral channels.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"expected 1-d signal of length >= 2, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("signal contains NaN/Inf")
    d = x - x.mean()
    d -= d.mean()  # second pass kills the residual mean when |mean| >> spread
    sigma = np.sqrt((d * d).mean())
    if sigma == 0.0:
        return np.zeros_like(x)
    return d / sigma


def quadrant_from_ratings(valence: float, arousal: float, threshold: float = SAM_MIDPOINT) -> Quadrant:
    """Map (valence, arousal) ratings in [1, 9] to a quadrant.

    "High" means strictly greater than `threshold`; the boundary value maps
    to the low side.
    """
    for name, value in (("valence", valence), ("arousal", arousal)):
        if not np.isfinite(value) or not (SAM_MIN <= value <= SAM_MAX):
            raise OutOfRangeError(f"{name}={value!r} outside [{SAM_MIN}, {SAM_MAX}]")
    high_v = valence > threshold
    high_a = arousal > threshold
    if high_a:
        return Quadrant.Q1 if high_v else Quadrant.Q2
    return Quadrant.Q4 if high_v else Quadrant.Q3


@dataclass(frozen=True)
class FoldAssignment:
    """Assignment of trials (by position in the originating list) to folds."""

    k: int
    mode: FoldMode
    fold_of: tuple[int, ...]

    def __post_init__(self):
        if self.k < 2:
            raise BadKError(f"k={self.k} must be >= 2")
        if any(not 0 <= f < self.k for f in self.fold_of):
            raise ValueError("fold index outside [0, k)")

    @property
    def n_trials(self) -> int:
        return len(self.fold_of)

    def test_indices(self, fold: int) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.fold_of) if f == fold)

    def train_indices(self, fold: int) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.fold_of) if f != fold)

    def sizes(self) -> tuple[int, ...]:
        return tuple(self.fold_of.count(f) for f in range(self.k))


def make_folds(trials, k: int, seed: int, mode: FoldMode = FoldMode.RANDOM_TRIAL) -> FoldAssignment:
    """Deterministically partition trials into k cross-validation folds.

    RANDOM_TRIAL shuffles trials and deals them round-robin, so fold sizes
    differ by at most one. CROSS_PERSON deals shuffled participants
    round-robin instead, so no participant appears in two folds (32
    participants with k=5 gives person-group sizes {7, 7, 6, 6, 6}).

    The RNG is numpy's PCG64 seeded with `seed`; the assignment is a pure
    function of (trial order, k, seed, mode).
    """
    trials = list(trials)
    n = len(trials)
    if k < 2:
        raise BadKError(f"k={k} must be >= 2")
    if n < k:
        raise TooFewItemsError(f"{n} trials cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    fold_of = [0] * n
    if mode == FoldMode.RANDOM_TRIAL:
        order = rng.permutation(n)
        for rank, idx in enumerate(order):
            fold_of[idx] = rank % k
    elif mode == FoldMode.CROSS_PERSON:
        participants = list(dict.fromkeys(t.participant_id for t in trials))
        if len(participants) < k:
            raise TooFewItemsError(f"{len(participants)} participants cannot fill {k} folds")
        order = rng.permutation(len(participants))
        fold_of_participant = {participants[idx]: rank % k for rank, idx in enumerate(order)}
        for i, t in enumerate(trials):
            fold_of[i] = fold_of_participant[t.participant_id]
    else:
        raise ValueError(f"unknown fold mode {mode!r}")
    return FoldAssignment(k=k, mode=mode, fold_of=tuple(fold_of))
