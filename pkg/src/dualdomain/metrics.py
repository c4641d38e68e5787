"""Image quality metrics and complexity calculators.

PSNR and SSIM follow the standard 8-bit definitions (peak 255; 11x11
Gaussian window, sigma 1.5, C1 = (0.01*255)^2, C2 = (0.03*255)^2, valid
region only).  PSNR-B augments the MSE with a blocking-effect factor
measured on the test image over the 8-pixel coding grid.

The calculators reproduce the closed-form multiply/parameter counts of the
two-stage dense model and of plain convolutional stacks; both are exact
integer arithmetic.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .errors import ValidationError
from .jpegcodec import BLOCK
from .network import DualDomainModel

PEAK = 255.0


def _check_pair(ref, test):
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValidationError(f"image shapes differ: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref, test) -> float:
    """Peak signal-to-noise ratio in dB; identical images give +inf."""
    ref, test = _check_pair(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(PEAK * PEAK / mse)


def _gaussian_window(size=11, sigma=1.5):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(ref, test) -> float:
    """Mean local structural similarity over an 11x11 Gaussian window."""
    ref, test = _check_pair(ref, test)
    if min(ref.shape) < 11:
        raise ValidationError(f"image {ref.shape} smaller than the 11x11 window")
    win = _gaussian_window()
    c1 = (0.01 * PEAK) ** 2
    c2 = (0.03 * PEAK) ** 2

    mu_x = convolve2d(ref, win, mode="valid")
    mu_y = convolve2d(test, win, mode="valid")
    xx = convolve2d(ref * ref, win, mode="valid") - mu_x * mu_x
    yy = convolve2d(test * test, win, mode="valid") - mu_y * mu_y
    xy = convolve2d(ref * test, win, mode="valid") - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def blocking_effect_factor(test) -> float:
    """Excess squared difference across 8-grid boundaries, log-weighted.

    Zero when boundary discontinuities do not exceed interior ones.
    """
    test = np.asarray(test, dtype=np.float64)
    h, w = test.shape
    h -= h % BLOCK
    w -= w % BLOCK
    img = test[:h, :w]

    hdiff = img[:, 1:] - img[:, :-1]  # between columns c and c+1
    vdiff = img[1:, :] - img[:-1, :]
    hcols = np.arange(w - 1)
    vrows = np.arange(h - 1)
    hb = (hcols % BLOCK) == BLOCK - 1
    vb = (vrows % BLOCK) == BLOCK - 1

    boundary = np.concatenate([hdiff[:, hb].ravel(), vdiff[vb, :].ravel()])
    interior = np.concatenate([hdiff[:, ~hb].ravel(), vdiff[~vb, :].ravel()])
    d_b = float(np.mean(boundary**2)) if boundary.size else 0.0
    d_bc = float(np.mean(interior**2)) if interior.size else 0.0
    if d_b <= d_bc:
        return 0.0
    eta = math.log2(BLOCK) / math.log2(min(h, w))
    return eta * (d_b - d_bc)


def psnr_b(ref, test) -> float:
    """PSNR with the blocking-effect factor added to the MSE."""
    ref, test = _check_pair(ref, test)
    h = ref.shape[0] - ref.shape[0] % BLOCK
    w = ref.shape[1] - ref.shape[1] % BLOCK
    mse = float(np.mean((ref[:h, :w] - test[:h, :w]) ** 2))
    denom = mse + blocking_effect_factor(test)
    if denom == 0.0:
        return float("inf")
    return 10.0 * math.log10(PEAK * PEAK / denom)


def d3_complexity(p1: int, p2: int, m: int):
    """(multiplies, params) of the two-stage dense model.

    Multiplies assume fast transforms at (m/2) log2(m) each; the parameter
    count follows the published closed form, which prices both diagonal
    scaling layers of a stage even though they are reciprocal-tied.
    """
    if min(p1, p2, m) < 1:
        raise ValidationError("dimensions must be positive")
    params = 2 * (p1 + p2) * (m + 1)
    multiplies = params + int(round(m * math.log2(m)))
    return multiplies, params


@dataclass(frozen=True)
class ConvSpec:
    """Convolutional stack: channel counts n0..nd, filter sizes, map sizes."""

    channels: tuple  # length d+1, n0 first
    filter_sizes: tuple  # length d
    map_sizes: tuple = None  # length d; defaults to all 1 (per output pixel)

    def __post_init__(self):
        if len(self.channels) != len(self.filter_sizes) + 1:
            raise ValidationError("need one more channel count than filter sizes")
        maps = self.map_sizes or tuple(1 for _ in self.filter_sizes)
        if len(maps) != len(self.filter_sizes):
            raise ValidationError("map sizes must match depth")
        if min(self.channels) < 1 or min(self.filter_sizes) < 1 or min(maps) < 1:
            raise ValidationError("all spec entries must be positive")
        object.__setattr__(self, "map_sizes", maps)


def conv_complexity(spec: ConvSpec):
    """(multiplies, params) of a plain convolutional stack."""
    multiplies = 0
    params = 0
    for i, s in enumerate(spec.filter_sizes):
        n_prev, n_cur = spec.channels[i], spec.channels[i + 1]
        params += n_prev * n_cur * s * s
        multiplies += n_prev * n_cur * s * s * spec.map_sizes[i] ** 2
    return multiplies, params


ARCNN_SPEC = ConvSpec(channels=(1, 64, 32, 16, 1), filter_sizes=(9, 7, 1, 5))


def count_multiplies(model: DualDomainModel, x=None) -> int:
    """Exact scalar multiply count of one patch inference.

    Runs the pipeline while pricing every stage: analysis/synthesis at
    p*m, the two diagonal scalings at p each, and the matrix-form
    DCT/IDCT at m*m each (the fast-transform figure is what
    d3_complexity reports; this counter prices what actually executes).
    """
    m = model.transform.forward.shape[0]
    if x is None:
        x = np.zeros(m)
    count = 0
    y = model.transform.forward @ x
    count += m * m
    for stage in (model.stage1, model.stage2):
        pre = stage.analysis @ y
        count += stage.size * m
        scaled = pre * stage.theta_recip
        count += stage.size
        code = stage.theta * np.sign(scaled) * np.maximum(np.abs(scaled) - 1.0, 0.0)
        count += stage.size
        y = stage.synthesis @ code
        count += m * stage.size
        if stage is model.stage1:
            y = model.transform.inverse @ y
            count += m * m
    return count


@dataclass
class EvalRow:
    name: str
    psnr: float = None
    ssim: float = None
    psnr_b: float = None
    restore_ms: float = None
    multiplies: int = None


@dataclass
class EvalReport:
    """Per-image metric rows plus an arithmetic-mean footer."""

    rows: list = field(default_factory=list)

    FIELDS = ("psnr", "ssim", "psnr_b", "restore_ms", "multiplies")
    HEADER = ("name", "psnr_db", "ssim", "psnr_b_db", "restore_ms", "multiplies")

    def add(self, row: EvalRow):
        self.rows.append(row)

    def averages(self) -> dict:
        out = {}
        for name in self.FIELDS:
            vals = [getattr(r, name) for r in self.rows if getattr(r, name) is not None]
            out[name] = (sum(vals) / len(vals)) if vals else None
        return out

    @staticmethod
    def _fmt(value):
        if value is None:
            return ""
        if isinstance(value, int):
            return str(value)
        return f"{value:.6f}"

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.HEADER)
            for r in self.rows:
                writer.writerow([r.name] + [self._fmt(getattr(r, f)) for f in self.FIELDS])
            avg = self.averages()
            writer.writerow(["average"] + [self._fmt(avg[f]) for f in self.FIELDS])

    def to_markdown(self) -> str:
        lines = ["| image | PSNR (dB) | SSIM | PSNR-B (dB) | time (ms) | multiplies |",
                 "|---|---|---|---|---|---|"]
        for r in self.rows:
            cells = [r.name] + [self._fmt(getattr(r, f)) for f in self.FIELDS]
            lines.append("| " + " | ".join(cells) + " |")
        avg = self.averages()
        cells = ["**average**"] + [self._fmt(avg[f]) for f in self.FIELDS]
        lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines)
