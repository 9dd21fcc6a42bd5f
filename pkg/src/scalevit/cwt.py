"""Morlet continuous wavelet transform, scaleograms, and bilinear rasterization.

Conventions, fixed across the package:

* Mother wavelet: analytic Morlet, psi(t) = pi^(-1/4) exp(i w0 t) exp(-t^2/2).
* Scale grid frequencies are stored descending (row 0 = highest frequency),
  with scale s = w0 * fs / (2 pi f) so each daughter's center frequency maps
  back to its grid frequency.
* Daughters are L2-normalized (1/sqrt(s) factor), so a pure tone has a
  scale-independent peak response.
* Convolution is zero-padded; no cone-of-influence masking.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import BadRangeError, BadSizeError, NonFiniteError

# exp(-t^2/2) < 6e-32 beyond this point, below double-precision resolution
# of any coefficient, so truncating the daughter there is exact in float64.
_SUPPORT_CUTOFF = 12.0


def morlet(t, omega0: float = 6.0):
    """Analytic Morlet mother wavelet pi^(-1/4) exp(i w0 t) exp(-t^2/2).

    Accepts scalars or arrays; total on finite inputs.
    """
    t = np.asarray(t, dtype=np.float64)
    out = np.pi ** (-0.25) * np.exp(1j * omega0 * t) * np.exp(-0.5 * t * t)
    if out.ndim == 0:
        return complex(out)
    return out


@dataclass(frozen=True)
class ScaleGrid:
    """Log-spaced frequency/scale grid for the sampled Morlet transform."""

    frequencies_hz: np.ndarray
    scales: np.ndarray
    omega0: float
    sample_rate_hz: float

    def __post_init__(self):
        freqs = np.asarray(self.frequencies_hz, dtype=np.float64)
        scales = np.asarray(self.scales, dtype=np.float64)
        if freqs.ndim != 1 or freqs.size < 2 or freqs.shape != scales.shape:
            raise BadRangeError("grid needs >= 2 frequencies with matching scales")
        if not np.all(np.diff(freqs) < 0):
            raise BadRangeError("frequencies must be strictly descending")
        if not np.all(scales > 0):
            raise BadRangeError("scales must be positive")
        expected = self.omega0 * self.sample_rate_hz / (2.0 * np.pi * freqs)
        if not np.allclose(scales, expected, rtol=1e-9, atol=0.0):
            raise BadRangeError("scales inconsistent with frequencies")
        freqs = freqs.copy()
        scales = scales.copy()
        freqs.flags.writeable = False
        scales.flags.writeable = False
        object.__setattr__(self, "frequencies_hz", freqs)
        object.__setattr__(self, "scales", scales)

    @property
    def n_scales(self) -> int:
        return self.frequencies_hz.size

    def fingerprint(self) -> tuple:
        return (self.frequencies_hz.tobytes(), self.omega0, self.sample_rate_hz)


def scale_grid(f_min_hz: float, f_max_hz: float, n_scales: int, fs_hz: float,
               omega0: float = 6.0) -> ScaleGrid:
    """Build `n_scales` log-spaced frequencies from f_max down to f_min."""
    if not (0.0 < f_min_hz < f_max_hz < fs_hz / 2.0):
        raise BadRangeError(
            f"need 0 < f_min < f_max < fs/2, got ({f_min_hz}, {f_max_hz}, fs={fs_hz})")
    if n_scales < 2:
        raise BadRangeError(f"n_scales={n_scales} must be >= 2")
    freqs = np.geomspace(f_max_hz, f_min_hz, n_scales)
    scales = omega0 * fs_hz / (2.0 * np.pi * freqs)
    return ScaleGrid(frequencies_hz=freqs, scales=scales, omega0=float(omega0),
                     sample_rate_hz=float(fs_hz))


@dataclass(frozen=True)
class Scaleogram:
    """Coefficient magnitudes on a grid, for one channel."""

    magnitudes: np.ndarray
    grid: ScaleGrid
    channel_name: str = ""

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        if mags.ndim != 2 or mags.shape[0] != self.grid.n_scales:
            raise BadSizeError(f"magnitudes shape {mags.shape} does not match grid")
        if not np.all(np.isfinite(mags)) or np.any(mags < 0):
            raise NonFiniteError("magnitudes must be finite and non-negative")
        mags = mags.copy()
        mags.flags.writeable = False
        object.__setattr__(self, "magnitudes", mags)


@dataclass(frozen=True)
class RasterImage:
    """Grayscale raster with pixel values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise BadSizeError(f"pixels must be a nonempty 2-d array, got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise NonFiniteError("pixel values must be finite and within [0, 1]")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _daughter(scale: float, omega0: float, n_samples: int) -> np.ndarray:
    """Sampled, conjugated, L2-normalized daughter g[d] = conj(psi(d/s))/sqrt(s).

    Index d runs -L..L; coefficient(tau) = sum_d x[tau+d] g[d].
    """
    half = min(int(np.ceil(_SUPPORT_CUTOFF * scale)), n_samples - 1)
    d = np.arange(-half, half + 1, dtype=np.float64)
    return np.conj(morlet(d / scale, omega0)) / np.sqrt(scale)


class _DaughterBank:
    """Daughter wavelets (and their spectra) for one grid and signal length."""

    def __init__(self, grid: ScaleGrid, n_samples: int):
        self.kernels = [_daughter(s, grid.omega0, n_samples) for s in grid.scales]
        max_len = max(k.size for k in self.kernels)
        n_fft = 1
        while n_fft < n_samples + max_len - 1:
            n_fft *= 2
        self.n_fft = n_fft
        # full linear convolution with the reversed daughter realizes the
        # cross-correlation sum_d x[tau+d] g[d]
        self.spectra = [np.fft.fft(k[::-1], n_fft) for k in self.kernels]


_BANK_CACHE: OrderedDict[tuple, _DaughterBank] = OrderedDict()
_BANK_CACHE_SIZE = 8


def _bank_for(grid: ScaleGrid, n_samples: int) -> _DaughterBank:
    key = grid.fingerprint() + (n_samples,)
    bank = _BANK_CACHE.get(key)
    if bank is None:
        bank = _DaughterBank(grid, n_samples)
        _BANK_CACHE[key] = bank
        if len(_BANK_CACHE) > _BANK_CACHE_SIZE:
            _BANK_CACHE.popitem(last=False)
    else:
        _BANK_CACHE.move_to_end(key)
    return bank


def _cwt_fft(x: np.ndarray, grid: ScaleGrid) -> np.ndarray:
    bank = _bank_for(grid, x.size)
    xf = np.fft.fft(x, bank.n_fft)
    out = np.empty((grid.n_scales, x.size), dtype=np.complex128)
    for i, (kernel, spectrum) in enumerate(zip(bank.kernels, bank.spectra)):
        half = (kernel.size - 1) // 2
        conv = np.fft.ifft(xf * spectrum)
        out[i] = conv[half:half + x.size]
    return out


def _cwt_direct(x: np.ndarray, grid: ScaleGrid) -> np.ndarray:
    n = x.size
    out = np.empty((grid.n_scales, n), dtype=np.complex128)
    for i, scale in enumerate(grid.scales):
        g = _daughter(scale, grid.omega0, n)
        half = (g.size - 1) // 2
        for tau in range(n):
            lo = max(0, tau - half)
            hi = min(n, tau + half + 1)
            out[i, tau] = np.dot(x[lo:hi], g[lo - tau + half:hi - tau + half])
    return out


def cwt_forward(signal, grid: ScaleGrid, method: str = "fft") -> np.ndarray:
    """Complex CWT coefficients, shape (n_scales, n_samples).

    Entry (s, tau) is the zero-padded discrete cross-correlation of the
    signal with the conjugated, L2-normalized daughter at scale s, centered
    at sample tau. `method` selects the FFT-based convolution ("fft") or the
    literal time-domain sum ("direct"); the two agree to within roundoff on
    every coefficient.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"expected 1-d signal of length >= 2, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("signal contains NaN/Inf")
    if method == "fft":
        return _cwt_fft(x, grid)
    if method == "direct":
        return _cwt_direct(x, grid)
    raise ValueError(f"unknown method {method!r}")


def scaleogram(coeffs, grid: ScaleGrid, channel_name: str = "") -> Scaleogram:
    """Magnitude (complex modulus) of a coefficient matrix."""
    c = np.asarray(coeffs)
    if not np.all(np.isfinite(c.real)) or not np.all(np.isfinite(c.imag)):
        raise NonFiniteError("coefficients contain NaN/Inf")
    return Scaleogram(magnitudes=np.abs(c), grid=grid, channel_name=channel_name)


def _minmax_unit(values: np.ndarray) -> np.ndarray:
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)


def _resample_coords(n_src: int, n_dst: int):
    """Half-pixel-center source coordinates, clamped to the valid range."""
    coords = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    coords = np.clip(coords, 0.0, n_src - 1.0)
    lo = np.floor(coords).astype(np.intp)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = coords - lo
    return lo, hi, frac


def rasterize(sg: Scaleogram, height: int = 224, width: int = 224) -> RasterImage:
    """Min-max normalize magnitudes to [0, 1], then bilinearly resample.

    Uses the half-pixel-center convention x_src = (x_dst + 0.5) * w_src/w_dst
    - 0.5 with edge clamping; a constant input maps to an all-0.5 image.
    """
    if height < 1 or width < 1:
        raise BadSizeError(f"target size {height}x{width} must be >= 1x1")
    img = _minmax_unit(sg.magnitudes)
    r0, r1, rf = _resample_coords(img.shape[0], height)
    c0, c1, cf = _resample_coords(img.shape[1], width)
    rf = rf[:, None]
    cf = cf[None, :]
    top = img[np.ix_(r0, c0)] * (1.0 - cf) + img[np.ix_(r0, c1)] * cf
    bottom = img[np.ix_(r1, c0)] * (1.0 - cf) + img[np.ix_(r1, c1)] * cf
    return RasterImage(pixels=top * (1.0 - rf) + bottom * rf)


def pgm_bytes(image: RasterImage) -> bytes:
    """8-bit grayscale PGM (P5, maxval 255, row-major), value = round(pixel*255)."""
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    payload = np.rint(image.pixels * 255.0).astype(np.uint8).tobytes()
    return header + payload
