"""Portable "EEGP" dataset format and the synthetic desk-scale generator.

Binary layout (little-endian):

    magic "EEGP" | version u16 | n_trials u32 | n_channels u16 |
    n_samples u32 | fs f32 | meta_len u32 | UTF-8 JSON metadata |
    per trial: participant u16, video u16, vaq u8, sam_valence f32,
               sam_arousal f32, samples f32 row-major [channels x samples] |
    crc32 u32 of all preceding bytes

Sample payloads are f32, so in-memory float64 data is narrowed on write;
datasets produced by this module are generated at f32 precision to keep
write -> read round-trips bit-exact.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .channels import DEAP_CHANNELS
from .errors import (
    BadConfigError,
    BadMagicError,
    ChecksumMismatchError,
    TruncatedError,
    VersionMismatchError,
)
from .trials import Labels, Quadrant, Trial
from .util import atomic_write_bytes

FORMAT_MAGIC = b"EEGP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIHIf")
_TRIAL_HEADER = struct.Struct("<HHBff")


@dataclass(frozen=True)
class TrialRecord:
    trial: Trial
    labels: Labels


@dataclass(frozen=True)
class PortableDataset:
    """Trials plus labels sharing one channel layout and sample rate."""

    records: tuple[TrialRecord, ...]
    source: str = "synthetic"

    def __post_init__(self):
        if not self.records:
            raise BadConfigError("dataset must contain at least one trial")
        first = self.records[0].trial
        for rec in self.records:
            t = rec.trial
            if (t.channel_names != first.channel_names
                    or t.n_samples != first.n_samples
                    or t.sample_rate_hz != first.sample_rate_hz):
                raise BadConfigError("all trials must share layout, length, and rate")
        if self.source == "deap":
            pids = {r.trial.participant_id for r in self.records}
            vids = {r.trial.video_id for r in self.records}
            if len(self.records) != len(pids) * len(vids):
                raise BadConfigError(
                    f"deap dataset must be a full participants x videos grid "
                    f"({len(pids)}x{len(vids)} != {len(self.records)} trials)")

    @property
    def channel_names(self) -> tuple[str, ...]:
        return self.records[0].trial.channel_names

    @property
    def n_channels(self) -> int:
        return self.records[0].trial.n_channels

    @property
    def n_samples(self) -> int:
        return self.records[0].trial.n_samples

    @property
    def sample_rate_hz(self) -> float:
        return self.records[0].trial.sample_rate_hz

    @property
    def trials(self) -> tuple[Trial, ...]:
        return tuple(r.trial for r in self.records)

    def __len__(self) -> int:
        return len(self.records)


def dataset_bytes(dataset: PortableDataset) -> bytes:
    meta = {
        "channel_names": list(dataset.channel_names),
        "source": dataset.source,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [
        _HEADER.pack(FORMAT_MAGIC, FORMAT_VERSION, len(dataset),
                     dataset.n_channels, dataset.n_samples, dataset.sample_rate_hz),
        struct.pack("<I", len(blob)),
        blob,
    ]
    for rec in dataset.records:
        parts.append(_TRIAL_HEADER.pack(
            rec.trial.participant_id, rec.trial.video_id,
            int(rec.labels.vaq_quadrant), rec.labels.sam_valence, rec.labels.sam_arousal))
        parts.append(rec.trial.samples.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def write_portable(dataset: PortableDataset, path):
    atomic_write_bytes(path, dataset_bytes(dataset))


def read_portable(path) -> PortableDataset:
    """Read an EEGP file; rejects bad magic, wrong version, size conflicts,
    and checksum mismatches before materializing any trial."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _HEADER.size:
        raise TruncatedError(f"file is {len(buf)} bytes, shorter than the header")
    magic, version, n_trials, n_channels, n_samples, fs = _HEADER.unpack_from(buf, 0)
    if magic != FORMAT_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version} != {FORMAT_VERSION}")
    pos = _HEADER.size
    if len(buf) < pos + 4:
        raise TruncatedError("missing metadata length")
    (meta_len,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    trial_bytes = _TRIAL_HEADER.size + 4 * n_channels * n_samples
    expected = pos + meta_len + n_trials * trial_bytes + 4
    if len(buf) != expected:
        raise TruncatedError(
            f"file is {len(buf)} bytes but declared dimensions require {expected}")
    (stored_crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != stored_crc:
        raise ChecksumMismatchError("crc32 mismatch")
    try:
        meta = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TruncatedError(f"metadata block is not valid JSON: {exc}")
    pos += meta_len
    channel_names = tuple(str(n) for n in meta["channel_names"])
    source = str(meta.get("source", "unknown"))
    records = []
    for _ in range(n_trials):
        participant, video, vaq, sam_v, sam_a = _TRIAL_HEADER.unpack_from(buf, pos)
        pos += _TRIAL_HEADER.size
        if vaq > 3:
            raise TruncatedError(f"invalid quadrant code {vaq}")
        samples = (np.frombuffer(buf, dtype="<f4", count=n_channels * n_samples, offset=pos)
                   .astype(np.float64).reshape(n_channels, n_samples))
        pos += 4 * n_channels * n_samples
        trial = Trial(participant_id=participant, video_id=video, samples=samples,
                      sample_rate_hz=fs, channel_names=channel_names)
        labels = Labels(vaq_quadrant=Quadrant(vaq), sam_valence=sam_v, sam_arousal=sam_a)
        records.append(TrialRecord(trial=trial, labels=labels))
    return PortableDataset(records=tuple(records), source=source)


def labels_csv(dataset: PortableDataset) -> str:
    lines = ["participant,video,vaq,sam_valence,sam_arousal"]
    for rec in dataset.records:
        lines.append(f"{rec.trial.participant_id},{rec.trial.video_id},"
                     f"{rec.labels.vaq_quadrant.name},"
                     f"{rec.labels.sam_valence:.6f},{rec.labels.sam_arousal:.6f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    n_participants: int = 4
    n_videos: int = 8
    n_channels: int = 4
    fs_hz: float = 128.0
    duration_s: float = 4.0
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.n_participants, self.n_videos, self.n_channels) < 1:
            raise BadConfigError("participants, videos, channels must be positive")
        if self.n_participants > 32 or self.n_videos > 40 or self.n_channels > 40:
            raise BadConfigError("at most 32 participants, 40 videos, 40 channels")
        if self.fs_hz <= 0 or self.duration_s <= 0:
            raise BadConfigError("fs_hz and duration_s must be positive")
        if self.noise_sigma < 0:
            raise BadConfigError("noise_sigma must be >= 0")
        if int(round(self.fs_hz * self.duration_s)) < 2:
            raise BadConfigError("trial must span at least 2 samples")


HIGH_VALENCE_HZ = 10.0
LOW_VALENCE_HZ = 6.0
HIGH_AROUSAL_AMP = 2.0
LOW_AROUSAL_AMP = 1.0


def synth_generate(config: SynthConfig) -> PortableDataset:
    """Deterministic synthetic dataset whose labels are encoded in the signal.

    Video v gets quadrant (v - 1) mod 4 for every participant. High valence
    selects a 10 Hz dominant tone (6 Hz otherwise); high arousal selects tone
    amplitude 2.0 (1.0 otherwise). Channels share the trial's tone with
    per-channel random phases, plus white noise of the configured sigma,
    clipped to +-(amplitude + 6 sigma). Continuous SAM labels are 7 (high) or
    3 (low) plus uniform jitter of +-1, so the quadrant implied by the SAM
    values always matches the stored quadrant. Channel names follow the
    standard 40-channel layout.

    Per trial the generator draws, in order: valence jitter, arousal jitter,
    per-channel phases, then the noise matrix.
    """
    rng = np.random.default_rng(config.seed)
    n_samples = int(round(config.fs_hz * config.duration_s))
    t = np.arange(n_samples) / config.fs_hz
    names = DEAP_CHANNELS[:config.n_channels]
    records = []
    for participant in range(1, config.n_participants + 1):
        for video in range(1, config.n_videos + 1):
            quadrant = Quadrant((video - 1) % 4)
            freq = HIGH_VALENCE_HZ if quadrant.high_valence else LOW_VALENCE_HZ
            amp = HIGH_AROUSAL_AMP if quadrant.high_arousal else LOW_AROUSAL_AMP
            sam_valence = (7.0 if quadrant.high_valence else 3.0) + rng.uniform(-1.0, 1.0)
            sam_arousal = (7.0 if quadrant.high_arousal else 3.0) + rng.uniform(-1.0, 1.0)
            phases = rng.uniform(0.0, 2.0 * np.pi, size=config.n_channels)
            signal = amp * np.sin(2.0 * np.pi * freq * t[None, :] + phases[:, None])
            if config.noise_sigma > 0.0:
                signal = signal + rng.normal(0.0, config.noise_sigma,
                                             size=(config.n_channels, n_samples))
            bound = amp + 6.0 * config.noise_sigma
            signal = np.clip(signal, -bound, bound)
            signal = signal.astype(np.float32).astype(np.float64)
            trial = Trial(participant_id=participant, video_id=video, samples=signal,
                          sample_rate_hz=config.fs_hz, channel_names=names)
            labels = Labels(vaq_quadrant=quadrant,
                            sam_valence=float(np.float32(sam_valence)),
                            sam_arousal=float(np.float32(sam_arousal)))
            records.append(TrialRecord(trial=trial, labels=labels))
    return PortableDataset(records=tuple(records), source="synthetic")
