"""Human localization by joint-sparse range-angle recovery.

The solver minimizes ``0.5 * sum_l ||Y_l - A X_l B||_F^2 + gamma * ||X||_{2,1}``
with FISTA, where the l2,1 norm sums the slow-time fiber norms of the
M x P x L tensor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter

from ._io import atomic_write_bytes, atomic_write_text
from .config import RadarConfig
from .dictionaries import AngleDictionary, RangeDictionary
from .simulator import FrameCube

log = logging.getLogger(__name__)

REST_RESPIRATION_BAND = (0.1, 0.5)  # Hz
REST_HEARTBEAT_BAND = (0.83, 1.67)  # Hz


class SolverDivergence(ArithmeticError):
    pass


class LocalizationError(ValueError):
    pass


# -- spectral filter ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralWindow:
    mask: np.ndarray
    bands: tuple[tuple[float, float], ...]

    def __len__(self):
        return self.mask.size


def make_spectral_window(n_frames: int, frame_rate: float,
                         bands=(REST_RESPIRATION_BAND, REST_HEARTBEAT_BAND),
                         taper: float = 0.0) -> SpectralWindow:
    """Slow-time DFT mask passing |f| inside any band (both the bin and its mirror).

    ``taper`` > 0 adds raised-cosine shoulders of that width [Hz] outside each band.
    """
    freqs = np.abs(np.fft.fftfreq(n_frames, d=1.0 / frame_rate))
    mask = np.zeros(n_frames)
    eps = 1e-9
    for lo, hi in bands:
        inside = (freqs >= lo - eps) & (freqs <= hi + eps)
        mask[inside] = 1.0
        if taper > 0:
            below = (freqs < lo) & (freqs > lo - taper)
            above = (freqs > hi) & (freqs < hi + taper)
            for sel, dist in ((below, lo - freqs), (above, freqs - hi)):
                w = 0.5 * (1 + np.cos(np.pi * dist[sel] / taper))
                mask[sel] = np.maximum(mask[sel], w)
    return SpectralWindow(mask, tuple((float(a), float(b)) for a, b in bands))


def vital_band_filter(cube: FrameCube, window: SpectralWindow) -> FrameCube:
    if len(window) != cube.n_frames:
        raise LocalizationError(
            f"window length {len(window)} does not match {cube.n_frames} frames")
    spectrum = np.fft.fft(cube.samples, axis=2)
    out = np.fft.ifft(spectrum * window.mask[None, None, :], axis=2)
    if cube.real_only:
        out = out.real.astype(complex)
    return FrameCube(out, cube.config, cube.real_only, cube.seed)


# -- solver ------------------------------------------------------------------

def compute_lipschitz(A: RangeDictionary, B: AngleDictionary) -> float:
    """lambda_max(A^H A) * lambda_max(B^H B)."""
    a = A.matrix
    b = B.matrix
    la = np.linalg.eigvalsh(a.conj().T @ a)[-1]
    lb = np.linalg.eigvalsh(b.conj().T @ b)[-1]
    return float(la * lb)


@dataclass(frozen=True)
class SolverSettings:
    gamma: float = 100.0
    max_iters: int = 1000
    lipschitz: float | None = None  # computed from the dictionaries when None
    stop_tol: float = 1e-6
    reduce_rank: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise LocalizationError("gamma must be >= 0")
        if self.max_iters < 1:
            raise LocalizationError("max_iters must be >= 1")
        if self.lipschitz is not None and self.lipschitz <= 0:
            raise LocalizationError("lipschitz must be positive")


def soft_threshold_3d(tensor: np.ndarray, alpha: float) -> np.ndarray:
    """Shrink every slow-time fiber ``tensor[m, p, :]`` by ``alpha`` in l2 norm."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return tensor.copy()
    norms = np.linalg.norm(tensor, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > alpha, 1.0 - alpha / norms, 0.0)
    return tensor * scale


@dataclass(eq=False)
class SolverResult:
    X: np.ndarray  # M x P x L
    objective: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def ralu_jsr(cube: FrameCube, A: RangeDictionary, B: AngleDictionary,
             settings: SolverSettings = SolverSettings(),
             track_objective: bool = True) -> SolverResult:
    """FISTA for the l2,1-regularized bilinear least-squares problem.

    When ``settings.reduce_rank`` is set the iterations run on the orthonormal
    basis of the data's slow-time row space. Both the data fit and the fiber
    norms are invariant under that unitary change of basis, and every iterate
    from the zero start stays inside it, so the returned tensor is identical
    (up to rounding) to running on all L frames.
    """
    a, b = A.matrix, B.matrix
    lf = settings.lipschitz or compute_lipschitz(A, B)
    alpha = settings.gamma / lf
    frames = np.transpose(cube.samples, (2, 0, 1))  # L x N x K
    y_energy = float(np.sum(np.abs(frames) ** 2))

    basis = None
    if settings.reduce_rank:
        _, s, vh = np.linalg.svd(frames.reshape(frames.shape[0], -1).T, full_matrices=False)
        rank = int(np.sum(s > s[0] * 1e-10)) if s.size and s[0] > 0 else 0
        basis = vh[:max(rank, 1)].conj().T  # L x r
        frames = np.tensordot(basis.T, frames, axes=1)  # r x N x K
    # Iterates are kept frame-major: r x M x P.
    C = a.conj().T @ frames @ b.conj().T
    gram_a = a.conj().T @ a
    bh = b.conj().T

    def forward_gram(Z):
        # A^H A Z_l B B^H for every frame; B first keeps the inner dimension at K.
        return gram_a @ (Z @ b) @ bh

    def objective(X, gx):
        # 0.5||Y - A X B||^2 expanded through the correlation C and the Gram term.
        fit = 0.5 * y_energy - np.real(np.vdot(C, X)) + 0.5 * np.real(np.vdot(X, gx))
        return float(max(fit, 0.0) + settings.gamma * np.linalg.norm(X, axis=0).sum())

    def prox(G):
        norms = np.linalg.norm(G, axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(norms > alpha, 1.0 - alpha / norms, 0.0)
        return G * scale

    X_prev = np.zeros_like(C)
    Z = X_prev.copy()
    t = 1.0
    result = SolverResult(X_prev)
    if track_objective:
        result.objective.append(objective(X_prev, X_prev))
    for i in range(1, settings.max_iters + 1):
        G = Z - (forward_gram(Z) - C) / lf
        X = prox(G)
        if not np.all(np.isfinite(X)):
            raise SolverDivergence(f"non-finite iterate at iteration {i}")
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        Z = X + ((t - 1) / t_next) * (X - X_prev)
        t = t_next
        if track_objective:
            result.objective.append(objective(X, forward_gram(X)))
        denom = np.linalg.norm(X_prev)
        change = np.linalg.norm(X - X_prev)
        X_prev = X
        result.iterations = i
        if denom > 0 and change / denom < settings.stop_tol:
            result.converged = True
            break
        if denom == 0 and change == 0 and i > 1:
            result.converged = True
            break
    X = X_prev
    if basis is not None:
        X = np.tensordot(basis, X, axes=1)
    result.X = np.transpose(X, (1, 2, 0))
    log.debug("ralu_jsr: %d iterations, converged=%s", result.iterations, result.converged)
    return result


# -- maps --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RangeAngleMap:
    values: np.ndarray  # M x P
    distances: np.ndarray
    angles: np.ndarray


def range_angle_map(X: np.ndarray, A: RangeDictionary, B: AngleDictionary) -> RangeAngleMap:
    if not np.all(np.isfinite(X)):
        raise LocalizationError("tensor has non-finite entries")
    values = np.mean(np.abs(X) ** 2, axis=-1)
    return RangeAngleMap(values, A.bin_distances, B.grid_angles)


def angle_fft_map(cube: FrameCube, A: RangeDictionary, B: AngleDictionary) -> RangeAngleMap:
    """Range DFT over fast time, angle DFT over receivers evaluated on the angle grid.

    Equivalent to zero-padding the receiver axis and reading the spectrum at
    sin(theta_p); magnitudes are averaged over frames.
    """
    spectrum = np.einsum("nm,nkl,pk->mpl", A.matrix.conj(), cube.samples, B.matrix.conj(),
                         optimize=True)
    values = np.mean(np.abs(spectrum), axis=-1)
    return RangeAngleMap(values, A.bin_distances, B.grid_angles)


# -- support -----------------------------------------------------------------

@dataclass(frozen=True)
class SupportEntry:
    m: int
    p: int
    distance: float
    angle: float
    power: float


@dataclass(frozen=True)
class Support:
    entries: tuple[SupportEntry, ...] = ()

    @property
    def count(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class DetectionSettings:
    roi_distance: tuple[float, float] = (0.5, 2.0)
    roi_angle: tuple[float, float] = (-50.0, 50.0)
    range_thr: float = 0.1
    angle_thr: float = 0.4
    denoise_frac: float = 0.0005
    exclusion_bins: int = 2
    exclusion_deg: float = 5.0

    def __post_init__(self):
        for name in ("range_thr", "angle_thr"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise LocalizationError(f"{name} must lie in (0, 1], got {v}")
        if not 0 <= self.denoise_frac < 1:
            raise LocalizationError("denoise_frac must lie in [0, 1)")


def roi_mask(ramap: RangeAngleMap, settings: DetectionSettings):
    eps = 1e-9
    rows = (ramap.distances >= settings.roi_distance[0] - eps) & \
           (ramap.distances <= settings.roi_distance[1] + eps)
    cols = (ramap.angles >= settings.roi_angle[0] - eps) & \
           (ramap.angles <= settings.roi_angle[1] + eps)
    if not rows.any() or not cols.any():
        raise LocalizationError(
            f"empty ROI {settings.roi_distance} m x {settings.roi_angle} deg")
    return rows, cols


def normalized_roi_map(ramap: RangeAngleMap, settings: DetectionSettings) -> np.ndarray:
    """ROI-restricted map scaled by its ROI maximum, lightly denoised; zero outside."""
    rows, cols = roi_mask(ramap, settings)
    out = np.zeros_like(ramap.values, dtype=float)
    sub = ramap.values[np.ix_(rows, cols)]
    peak = sub.max()
    if peak > 0:
        sub = sub / peak
        sub = np.where(sub < settings.denoise_frac, 0.0, sub)
        out[np.ix_(rows, cols)] = sub
    return out


def detect_support(ramap: RangeAngleMap, settings: DetectionSettings = DetectionSettings()) -> Support:
    """Two-threshold 2-D peak selection on the ROI-normalized map.

    A peak is an 8-neighbour local maximum. It is kept when its range row is
    strong (row maximum >= ``range_thr``) and the peak is strong within its row
    (value / row maximum >= ``angle_thr``). Surviving peaks are then thinned
    greedily, strongest first, by an exclusion zone of ``|dm| < exclusion_bins``
    and ``|dtheta| < exclusion_deg``.
    """
    norm = normalized_roi_map(ramap, settings)
    if not norm.any():
        return Support()
    local_max = (norm == maximum_filter(norm, size=3, mode="constant", cval=0.0)) & (norm > 0)
    row_max = norm.max(axis=1)
    candidates = []
    for m, p in zip(*np.nonzero(local_max)):
        if row_max[m] < settings.range_thr:
            continue
        if norm[m, p] / row_max[m] < settings.angle_thr:
            continue
        candidates.append((norm[m, p], m, p))
    # Strongest first; ties resolved by lower (m, p) for determinism.
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    kept: list[tuple[float, int, int]] = []
    for value, m, p in candidates:
        clash = any(abs(m - km) < settings.exclusion_bins and
                    abs(ramap.angles[p] - ramap.angles[kp]) < settings.exclusion_deg
                    for _, km, kp in kept)
        if not clash:
            kept.append((value, m, p))
    entries = tuple(SupportEntry(int(m), int(p), float(ramap.distances[m]),
                                 float(ramap.angles[p]), float(v)) for v, m, p in kept)
    return Support(entries)


@dataclass(eq=False)
class LocalizationResult:
    support: Support
    ramap: RangeAngleMap
    solver: SolverResult


def localize(cube: FrameCube, A: RangeDictionary, B: AngleDictionary,
             solver: SolverSettings = SolverSettings(),
             detection: DetectionSettings = DetectionSettings(),
             bands=(REST_RESPIRATION_BAND, REST_HEARTBEAT_BAND)) -> LocalizationResult:
    """Vital-band filter, joint sparse recovery, map formation and support detection."""
    # fail on an empty ROI before spending solver time
    roi_mask(RangeAngleMap(np.zeros(0), A.bin_distances, B.grid_angles), detection)
    window = make_spectral_window(cube.n_frames, cube.config.frame_rate, bands)
    filtered = vital_band_filter(cube, window)
    result = ralu_jsr(filtered, A, B, solver, track_objective=False)
    ramap = range_angle_map(result.X, A, B)
    return LocalizationResult(detect_support(ramap, detection), ramap, result)


# -- exports -----------------------------------------------------------------

def write_map_csv(ramap: RangeAngleMap, path, values: np.ndarray | None = None) -> None:
    values = ramap.values if values is None else values
    lines = ["distance_m\\angle_deg," + ",".join(f"{a:g}" for a in ramap.angles)]
    for d, row in zip(ramap.distances, values):
        lines.append(f"{d:.6f}," + ",".join(f"{v:.6e}" for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_map_pgm(values: np.ndarray, path) -> None:
    """8-bit binary PGM, rows = range bins (nearest at top), columns = angle bins."""
    v = np.asarray(values, dtype=float)
    peak = v.max()
    img = np.zeros(v.shape, dtype=np.uint8) if peak <= 0 else \
        np.clip(np.round(255 * v / peak), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    atomic_write_bytes(path, header + img.tobytes())


def write_support(support: Support, path) -> None:
    lines = ["subject,m,p,distance_m,angle_deg,power"]
    for i, e in enumerate(support.entries):
        lines.append(f"{i},{e.m},{e.p},{e.distance:.6f},{e.angle:g},{e.power:.6e}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_support(path, config: RadarConfig | None = None) -> Support:
    rows = Path(path).read_text().strip().splitlines()
    if not rows or not rows[0].startswith("subject"):
        raise LocalizationError(f"{path}: not a support file")
    entries = []
    for row in rows[1:]:
        _, m, p, d, a, power = row.split(",")
        e = SupportEntry(int(m), int(p), float(d), float(a), float(power))
        if config is not None and not (0 <= e.m < config.range_bins and
                                       0 <= e.p < config.angle_bins):
            raise LocalizationError(f"support index ({e.m}, {e.p}) outside the grids")
        entries.append(e)
    return Support(tuple(entries))
