"""Visual-fidelity metrics between clean and perturbed images.

SSIM (11x11 Gaussian window, sigma 1.5, dynamic range 1.0), three 64-bit
perceptual hashes (average, DCT, difference), and normalized mutual
information over aligned-pixel intensity histograms. Hash and NMI scores
are on a 0-100 scale; SSIM is in [-1, 1] and is scaled by 100 in reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct
from scipy.ndimage import correlate1d

from .data import LabeledDataset

_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5  # 11-tap window

HASH_KINDS = ("ahash", "phash", "dhash")


@dataclass(frozen=True)
class HashDigest:
    bits: int  # 64-bit value, row-major MSB-first
    kind: str

    def hamming(self, other: "HashDigest") -> int:
        if self.kind != other.kind:
            raise ValueError(f"cannot compare {self.kind} with {other.kind}")
        return bin(self.bits ^ other.bits).count("1")


def _as_image(img: np.ndarray) -> np.ndarray:
    """Accept (H,W) or (C,H,W); return (C,H,W) float64."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ValueError(f"image must be (H,W) or (C,H,W), got shape {img.shape}")
    return img


def _grayscale(img: np.ndarray) -> np.ndarray:
    return _as_image(img).mean(axis=0)


def _gauss_kernel() -> np.ndarray:
    x = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / _SSIM_SIGMA) ** 2)
    return k / k.sum()


def _local_means(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Gaussian-weighted window means at all positions with a full window."""
    out = correlate1d(img, kernel, axis=-1, mode="nearest")
    out = correlate1d(out, kernel, axis=-2, mode="nearest")
    return out[_SSIM_RADIUS:-_SSIM_RADIUS, _SSIM_RADIUS:-_SSIM_RADIUS]


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    h, w = a.shape
    if min(h, w) < 2 * _SSIM_RADIUS + 1:
        # Single global window with uniform weights.
        ua, ub = a.mean(), b.mean()
        va, vb = a.var(), b.var()
        vab = ((a - ua) * (b - ub)).mean()
        return float(
            (2 * ua * ub + _SSIM_C1)
            * (2 * vab + _SSIM_C2)
            / ((ua**2 + ub**2 + _SSIM_C1) * (va + vb + _SSIM_C2))
        )
    k = _gauss_kernel()
    ua = _local_means(a, k)
    ub = _local_means(b, k)
    uaa = _local_means(a * a, k)
    ubb = _local_means(b * b, k)
    uab = _local_means(a * b, k)
    va = uaa - ua * ua
    vb = ubb - ub * ub
    vab = uab - ua * ub
    s = (
        (2 * ua * ub + _SSIM_C1)
        * (2 * vab + _SSIM_C2)
        / ((ua**2 + ub**2 + _SSIM_C1) * (va + vb + _SSIM_C2))
    )
    return float(s.mean())


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity in [-1, 1]; multichannel images average per channel."""
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean([_ssim_channel(a[c], b[c]) for c in range(a.shape[0])]))


# ---------------------------------------------------------------------------
# perceptual hashes


def _area_resample_matrix(src: int, dst: int) -> np.ndarray:
    """Exact box-average (area) resampling weights, shape (dst, src)."""
    weights = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), src)):
            weights[i, j] = min(hi, j + 1.0) - max(lo, float(j))
    return weights / scale


def _area_resize(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    h, w = img.shape
    return _area_resample_matrix(h, out_hw[0]) @ img @ _area_resample_matrix(w, out_hw[1]).T


def _pack_bits(bits: np.ndarray) -> int:
    value = 0
    for bit in bits.ravel():  # row-major, MSB first
        value = (value << 1) | int(bit)
    return value


def ahash(img: np.ndarray) -> HashDigest:
    """Average hash: 8x8 box downsample, bit = pixel strictly above mean."""
    small = _area_resize(_grayscale(img), (8, 8))
    return HashDigest(_pack_bits(small > small.mean()), "ahash")


def dhash(img: np.ndarray) -> HashDigest:
    """Difference hash: 8x9 downsample, bit = left pixel < right neighbor."""
    small = _area_resize(_grayscale(img), (8, 9))
    return HashDigest(_pack_bits(small[:, :-1] < small[:, 1:]), "dhash")


def phash(img: np.ndarray) -> HashDigest:
    """DCT hash: 32x32 downsample, 2-D DCT-II, lowest 8x8 block vs its median."""
    small = _area_resize(_grayscale(img), (32, 32))
    coeffs = dct(dct(small, axis=0, norm="ortho"), axis=1, norm="ortho")[:8, :8]
    return HashDigest(_pack_bits(coeffs > np.median(coeffs)), "phash")


def hash_similarity(a: HashDigest, b: HashDigest) -> float:
    """(1 - hamming/64) * 100."""
    return (1.0 - a.hamming(b) / 64.0) * 100.0


# ---------------------------------------------------------------------------
# mutual information


def nmi(a: np.ndarray, b: np.ndarray, bins: int = 64) -> float:
    """Normalized mutual information over aligned pixels, scaled to 0-100.

    Intensities are quantized to `bins` levels; NMI = 2*I(A;B)/(H(A)+H(B)).
    Two identical constant images score 100 by convention; if either image
    carries no information (zero entropy) and the images differ, the score
    is 0.
    """
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    qa = np.minimum((a.ravel() * bins).astype(np.int64), bins - 1)
    qb = np.minimum((b.ravel() * bins).astype(np.int64), bins - 1)
    joint = np.zeros((bins, bins))
    np.add.at(joint, (qa, qb), 1.0)
    joint /= joint.sum()
    pa, pb = joint.sum(axis=1), joint.sum(axis=0)

    def entropy(p: np.ndarray) -> float:
        nz = p[p > 0]
        return float(-(nz * np.log(nz)).sum())

    ha, hb = entropy(pa), entropy(pb)
    if ha == 0.0 or hb == 0.0:
        return 100.0 if np.array_equal(qa, qb) else 0.0
    nz = joint > 0
    mutual = float(
        (joint[nz] * np.log(joint[nz] / (pa[:, None] * pb[None, :])[nz])).sum()
    )
    return 100.0 * 2.0 * mutual / (ha + hb)


def similarity_report(clean: LabeledDataset, poisoned: LabeledDataset) -> dict[str, float]:
    """Dataset-mean of each metric on the 0-100 scale, keyed by metric name."""
    if len(clean) != len(poisoned) or clean.image_shape != poisoned.image_shape:
        raise ValueError("datasets must be aligned sample-for-sample")
    scores = {"ssim": 0.0, "ahash": 0.0, "phash": 0.0, "dhash": 0.0, "nmi": 0.0}
    hash_fns = {"ahash": ahash, "phash": phash, "dhash": dhash}
    n = len(clean)
    for i in range(n):
        a, b = clean.images[i], poisoned.images[i]
        scores["ssim"] += ssim(a, b) * 100.0
        for name, fn in hash_fns.items():
            scores[name] += hash_similarity(fn(a), fn(b))
        scores["nmi"] += nmi(a, b)
    return {name: total / n for name, total in scores.items()}
