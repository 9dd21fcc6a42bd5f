"""Convert DEAP preprocessed subject archives into one portable EEGP file.

Input: a directory of pickled archives s01.dat .. s32.dat, each a dict with
`data` shaped [40 videos x 40 channels x 8064 samples] and `labels` shaped
[40 x 4] (valence, arousal, dominance, liking), plus a CSV mapping each
video to its experimenter-assigned quadrant. Output: a single EEGP v1 file
(little-endian: "EEGP" magic, u16 version, u32 n_trials, u16 n_channels,
u32 n_samples, f32 fs, u32-length JSON metadata, 13-byte trial headers with
f32 sample payloads, trailing CRC32).

The sample payload is narrowed from the archives' float64 to f32; the
narrowing is recorded in the metadata block. Label values are copied as
bit-exact f32; out-of-range SAM values abort the conversion rather than
being clamped.
"""

from __future__ import annotations

import csv
import json
import os
import pickle
import struct
import tempfile
import zlib
from collections import Counter

import numpy as np

N_VIDEOS = 40
N_CHANNELS = 40
N_SAMPLES = 8064
SAMPLE_RATE_HZ = 128.0
ALL_SUBJECTS = tuple(range(1, 33))

FORMAT_MAGIC = b"EEGP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIHIf")
_TRIAL_HEADER = struct.Struct("<HHBff")

# preprocessed-release channel order: 32 EEG electrodes (Geneva order),
# then the peripheral channels
CHANNEL_NAMES = (
    "Fp1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7",
    "CP5", "CP1", "P3", "P7", "PO3", "O1", "Oz", "Pz",
    "Fp2", "AF4", "Fz", "F4", "F8", "FC6", "FC2", "Cz",
    "C4", "T8", "CP6", "CP2", "P4", "P8", "PO4", "O2",
    "hEOG", "vEOG", "zEMG", "tEMG", "GSR", "RESP", "PLETH", "TEMP",
)

QUADRANT_CODES = {"Q1": 0, "Q2": 1, "Q3": 2, "Q4": 3}
# videos per quadrant in the study design: Q1, Q2, Q3, Q4
EXPECTED_DISTRIBUTION = {0: 8, 1: 12, 2: 10, 3: 10}


class ConvertError(Exception):
    exit_code = 2


class UsageError(ConvertError):
    exit_code = 1


class MissingSubjectError(ConvertError):
    pass


class ShapeMismatchError(ConvertError):
    pass


class BadVaqDistributionError(ConvertError):
    pass


class OutOfRangeError(ConvertError):
    pass


def read_vaq_map(path) -> dict[int, int]:
    """Parse a video_id,quadrant CSV into {video_id: quadrant code 0..3}.

    Quadrants may be written Q1..Q4 or 1..4; every video 1..40 must appear
    exactly once.
    """
    mapping: dict[int, int] = {}
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            try:
                video = int(row["video_id"])
            except (KeyError, TypeError, ValueError):
                raise UsageError(f"bad vaq map row: {row!r}")
            raw = str(row.get("quadrant", "")).strip().upper()
            if raw in QUADRANT_CODES:
                code = QUADRANT_CODES[raw]
            elif raw in {"1", "2", "3", "4"}:
                code = int(raw) - 1
            else:
                raise UsageError(f"bad quadrant {raw!r} for video {video}")
            if video in mapping:
                raise UsageError(f"video {video} mapped twice")
            mapping[video] = code
    if sorted(mapping) != list(range(1, N_VIDEOS + 1)):
        raise UsageError(f"vaq map must cover videos 1..{N_VIDEOS} exactly")
    return mapping


def check_vaq_distribution(mapping: dict[int, int], force: bool = False):
    counts = Counter(mapping.values())
    observed = {q: counts.get(q, 0) for q in range(4)}
    if observed != EXPECTED_DISTRIBUTION and not force:
        raise BadVaqDistributionError(
            f"quadrant distribution {observed} differs from the study design "
            f"{EXPECTED_DISTRIBUTION}; pass force_vaq/--force-vaq to accept it")


def _load_archive(input_dir, subject: int):
    path = os.path.join(input_dir, f"s{subject:02d}.dat")
    if not os.path.exists(path):
        raise MissingSubjectError(f"missing subject archive {path}")
    with open(path, "rb") as f:
        archive = pickle.load(f, encoding="latin1")
    try:
        data = np.asarray(archive["data"])
        labels = np.asarray(archive["labels"])
    except (TypeError, KeyError, IndexError):
        raise ShapeMismatchError(f"{path}: expected a dict with data/labels")
    if data.shape != (N_VIDEOS, N_CHANNELS, N_SAMPLES):
        raise ShapeMismatchError(
            f"{path}: data shape {data.shape} != {(N_VIDEOS, N_CHANNELS, N_SAMPLES)}")
    if labels.shape != (N_VIDEOS, 4):
        raise ShapeMismatchError(
            f"{path}: labels shape {labels.shape} != {(N_VIDEOS, 4)}")
    return data, labels


def convert(input_dir, vaq_map_file, out_path, subjects=None,
            force_vaq: bool = False) -> int:
    """Convert subject archives into one EEGP file; returns the trial count.

    `subjects` defaults to all 32; a missing archive aborts before any
    output is written. Subjects are converted one at a time and streamed to
    a temp file (renamed into place at the end), with a running CRC32.
    """
    subjects = tuple(subjects) if subjects is not None else ALL_SUBJECTS
    if not subjects or any(not 1 <= s <= 32 for s in subjects):
        raise UsageError("subjects must be a nonempty list within 1..32")
    vaq_of_video = read_vaq_map(vaq_map_file)
    check_vaq_distribution(vaq_of_video, force=force_vaq)
    for subject in subjects:  # fail on absent archives before writing anything
        path = os.path.join(input_dir, f"s{subject:02d}.dat")
        if not os.path.exists(path):
            raise MissingSubjectError(f"missing subject archive {path}")

    n_trials = len(subjects) * N_VIDEOS
    meta = json.dumps({
        "channel_names": list(CHANNEL_NAMES),
        "source": "deap",
        "narrowing": "samples stored as f32, narrowed from the archives' f64",
    }, sort_keys=True).encode("utf-8")

    out_dir = os.path.dirname(os.path.abspath(out_path)) or "."
    os.makedirs(out_dir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".deap-", suffix="~")
    crc = 0
    try:
        with os.fdopen(fd, "wb") as f:
            def emit(chunk: bytes):
                nonlocal crc
                crc = zlib.crc32(chunk, crc)
                f.write(chunk)

            emit(_HEADER.pack(FORMAT_MAGIC, FORMAT_VERSION, n_trials,
                              N_CHANNELS, N_SAMPLES, SAMPLE_RATE_HZ))
            emit(struct.pack("<I", len(meta)))
            emit(meta)
            for subject in subjects:
                data, labels = _load_archive(input_dir, subject)
                for video in range(1, N_VIDEOS + 1):
                    valence = float(labels[video - 1, 0])
                    arousal = float(labels[video - 1, 1])
                    for name, value in (("valence", valence), ("arousal", arousal)):
                        if not np.isfinite(value) or not 1.0 <= value <= 9.0:
                            raise OutOfRangeError(
                                f"s{subject:02d} video {video}: SAM {name} "
                                f"{value!r} outside [1, 9]")
                    emit(_TRIAL_HEADER.pack(subject, video,
                                            vaq_of_video[video], valence, arousal))
                    emit(np.ascontiguousarray(data[video - 1], dtype="<f4").tobytes())
            emit_crc = struct.pack("<I", crc)
            f.write(emit_crc)
        os.replace(tmp, out_path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    return n_trials
