"""Named channel subsets over the 40-channel DEAP layout, plus PCA ranking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadKError, DegenerateDataError, UnknownSubsetError

# Preprocessed-release channel order: 32 EEG electrodes (Geneva order),
# then the peripheral channels. hEOG is channel 33 (1-based).
DEAP_CHANNELS: tuple[str, ...] = (
    "Fp1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7",
    "CP5", "CP1", "P3", "P7", "PO3", "O1", "Oz", "Pz",
    "Fp2", "AF4", "Fz", "F4", "F8", "FC6", "FC2", "Cz",
    "C4", "T8", "CP6", "CP2", "P4", "P8", "PO4", "O2",
    "hEOG", "vEOG", "zEMG", "tEMG", "GSR", "RESP", "PLETH", "TEMP",
)
EEG_CHANNELS = DEAP_CHANNELS[:32]
REGION_GROUPS = ("t", "f", "c", "fp", "af", "po", "fc", "cp", "o", "p")

_INDEX_OF = {name.lower(): i + 1 for i, name in enumerate(DEAP_CHANNELS)}


@dataclass(frozen=True)
class ChannelSubset:
    """Named, ordered channel list with 1-based indices into the DEAP layout."""

    name: str
    channel_names: tuple[str, ...]
    indices: tuple[int, ...]

    def __post_init__(self):
        if not self.channel_names:
            raise ValueError("subset must be nonempty")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("subset indices must be unique")
        if any(not 1 <= i <= 40 for i in self.indices):
            raise ValueError("subset indices must lie within 1..40")
        if len(self.indices) != len(self.channel_names):
            raise ValueError("indices/names length mismatch")

    def __len__(self) -> int:
        return len(self.channel_names)


def electrode_region(name: str) -> str:
    """10-20 region key for an electrode: strip digits, fold the midline 'z'.

    Fz/Cz/Pz/Oz belong to the f/c/p/o rows; FC5 -> "fc", Fp1 -> "fp".
    """
    letters = "".join(ch for ch in name if not ch.isdigit()).lower()
    if len(letters) > 1 and letters.endswith("z"):
        letters = letters[:-1]
    return letters


def _from_names(name: str, channel_names) -> ChannelSubset:
    resolved = []
    for ch in channel_names:
        idx = _INDEX_OF.get(ch.lower())
        if idx is None:
            raise ValueError(f"{ch!r} is not a DEAP channel")
        resolved.append((DEAP_CHANNELS[idx - 1], idx))
    return ChannelSubset(name=name,
                         channel_names=tuple(n for n, _ in resolved),
                         indices=tuple(i for _, i in resolved))


def _from_indices(name: str, indices) -> ChannelSubset:
    return ChannelSubset(name=name,
                         channel_names=tuple(DEAP_CHANNELS[i - 1] for i in indices),
                         indices=tuple(indices))


def _build_registry() -> dict[str, ChannelSubset]:
    registry: dict[str, ChannelSubset] = {}

    def add(subset: ChannelSubset):
        registry[subset.name] = subset

    add(_from_indices("all", range(1, 41)))
    add(_from_indices("eeg-only", range(1, 33)))
    add(_from_indices("non-eeg", range(33, 41)))
    add(_from_names("channel-33", ["hEOG"]))
    add(_from_names("emotiv", ["AF3", "F7", "F3", "FC5", "T7", "P7", "O1", "O2",
                               "P8", "T8", "FC6", "F4", "F8", "AF4"]))
    add(_from_names("muse-12", ["AF3", "AF4", "Fp1", "Fp2", "F7", "F8", "P7", "P8",
                                "CP5", "CP6", "T7", "T8"]))
    add(_from_names("muse-8", ["AF3", "AF4", "F7", "F8", "P7", "P8", "T7", "T8"]))
    add(_from_names("muse-4a", ["AF3", "AF4", "P7", "P8"]))
    add(_from_names("muse-4b", ["F7", "F8", "T7", "T8"]))
    for group in REGION_GROUPS:
        members = [name for name in EEG_CHANNELS if electrode_region(name) == group]
        add(_from_names(group, members))
    return registry


_REGISTRY = _build_registry()


def subset_names() -> tuple[str, ...]:
    return tuple(_REGISTRY)


def resolve_subset(name: str) -> ChannelSubset:
    """Look up a registered subset by name (case-insensitive)."""
    subset = _REGISTRY.get(name.lower().strip())
    if subset is None:
        known = ", ".join(sorted(_REGISTRY))
        raise UnknownSubsetError(f"unknown subset {name!r}; known: {known}")
    return subset


def registry_as_dict() -> dict:
    """Registry as two plain maps (names and 1-based indices), for JSON dumps."""
    return {
        "subsets": {name: list(s.channel_names) for name, s in _REGISTRY.items()},
        "indices": {name: list(s.indices) for name, s in _REGISTRY.items()},
    }


@dataclass(frozen=True)
class ChannelRanking:
    """Channels ordered by PCA relevance; scores form a probability vector."""

    entries: tuple[tuple[int, float], ...]  # (1-based channel index, score)
    cumulative: tuple[float, ...]
    channel_names: tuple[str, ...]

    def __post_init__(self):
        scores = [s for _, s in self.entries]
        if any(b > a + 1e-12 for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be non-increasing")
        if self.cumulative and self.cumulative[-1] > 1.0 + 1e-9:
            raise ValueError("cumulative scores exceed 1")

    def __len__(self) -> int:
        return len(self.entries)


def pca_rank_channels(trials) -> ChannelRanking:
    """Rank channels by PCA relevance over the pooled, standardized signals.

    Each trial is standardized jointly (one mean and one population std over
    its whole channel x time matrix, preserving relative channel amplitudes),
    all (trial, time) pairs are pooled as observations with channels as
    variables, and the pooled per-channel mean is removed. The relevance of
    channel c is sum_j evr_j * loading_{j,c}^2, which sums to exactly 1
    across channels. Ties break toward the lower channel index.

    Per-channel standardization would make the covariance unit-diagonal and
    the scores identically 1/n (the formula reduces to C_cc / trace C), so
    the trial-wide form is the one that can actually rank anything.
    """
    trials = list(trials)
    if len(trials) < 2:
        raise DegenerateDataError("PCA ranking needs at least 2 trials")
    layout = trials[0].channel_names
    n_ch = trials[0].n_channels
    cross = np.zeros((n_ch, n_ch))
    col_sum = np.zeros(n_ch)
    n_obs = 0
    for t in trials:
        if t.channel_names != layout:
            raise ValueError("all trials must share one channel layout")
        centered = t.samples - t.samples.mean()
        sigma = np.sqrt((centered * centered).mean())
        z = np.zeros_like(centered) if sigma == 0.0 else centered / sigma  # (C, S)
        cross += z @ z.T
        col_sum += z.sum(axis=1)
        n_obs += t.n_samples
    mean = col_sum / n_obs
    cov = cross / n_obs - np.outer(mean, mean)
    if not np.all(np.isfinite(cov)):
        raise DegenerateDataError("channel covariance is not finite")
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.clip(eigvals[::-1], 0.0, None)
    eigvecs = eigvecs[:, ::-1]
    total = eigvals.sum()
    if total <= 0.0:
        raise DegenerateDataError("channel covariance has no variance")
    evr = eigvals / total
    scores = (evr[None, :] * eigvecs**2).sum(axis=1)
    order = sorted(range(n_ch), key=lambda c: (-scores[c], c))
    entries = tuple((c + 1, float(scores[c])) for c in order)
    cumulative = tuple(np.cumsum([s for _, s in entries]).tolist())
    names = tuple(layout[c] for c in order)
    return ChannelRanking(entries=entries, cumulative=cumulative, channel_names=names)


def top_k(ranking: ChannelRanking, k: int) -> ChannelSubset:
    """First k channels of a ranking, order preserved."""
    if not 1 <= k <= len(ranking):
        raise BadKError(f"k={k} outside [1, {len(ranking)}]")
    return ChannelSubset(name=f"pca-{k}",
                         channel_names=ranking.channel_names[:k],
                         indices=tuple(idx for idx, _ in ranking.entries[:k]))
