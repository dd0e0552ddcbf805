"""Synthetic multi-domain binary classification benchmarks.

Two families: Gaussian blob features with an invariant block (same
class-conditional distribution in every domain) plus a spurious block whose
agreement with the label is set per domain, and two-moons under per-domain
rotation.  The spurious block is built so that merged-data training picks it
up while per-domain models disagree on it: each domain's spurious class
center shares a common direction but carries its own orthogonal offset, and
a domain with negative correlation flips the block against the label.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .seeding import derive_seed, stable_hash64

# Spurious-blob geometry.  The invariant block alone supports a good but
# imperfect classifier; the spurious block is cleaner in-domain (larger
# separation) so empirical risk prefers it, and worthless once flipped.
INV_SEPARATION = 0.8
SPUR_SEPARATION = 2.0
DIRECTION_MIX = 1.0  # weight of the per-domain offset vs the common direction


@dataclass(frozen=True)
class DomainSpec:
    """One domain of a synthetic family."""

    domain_id: str
    n_samples: int
    spurious_correlation: float = 0.0
    rotation_deg: float = 0.0
    noise_std: float = 0.5

    def __post_init__(self):
        if not self.domain_id:
            raise ValueError("domain_id must be non-empty")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if not -1.0 <= self.spurious_correlation <= 1.0:
            raise ValueError(
                f"spurious_correlation must lie in [-1, 1], got {self.spurious_correlation}"
            )
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")

    def to_json(self) -> dict:
        return {
            "domain_id": self.domain_id,
            "n_samples": self.n_samples,
            "spurious_correlation": self.spurious_correlation,
            "rotation_deg": self.rotation_deg,
            "noise_std": self.noise_std,
        }

    @staticmethod
    def from_json(obj: dict) -> "DomainSpec":
        return DomainSpec(
            domain_id=obj["domain_id"],
            n_samples=int(obj["n_samples"]),
            spurious_correlation=float(obj.get("spurious_correlation", 0.0)),
            rotation_deg=float(obj.get("rotation_deg", 0.0)),
            noise_std=float(obj.get("noise_std", 0.5)),
        )


@dataclass
class DomainDataset:
    """Feature matrix, integer labels and the invariant/spurious column split."""

    domain_id: str
    x: np.ndarray
    y: np.ndarray
    invariant_cols: tuple[int, ...]
    spurious_cols: tuple[int, ...]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise ValueError("x must be (n, d) with one label per row")
        cols = sorted(self.invariant_cols) + sorted(self.spurious_cols)
        if sorted(cols) != list(range(self.x.shape[1])):
            raise ValueError("invariant and spurious columns must partition the features")
        if self.y.size and self.y.min() < 0:
            raise ValueError("labels must be non-negative")

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]


def _fixed_unit(key: str, dim: int) -> np.ndarray:
    """A unit vector that depends only on its key, never on run seeds."""
    v = np.random.default_rng(stable_hash64(key)).standard_normal(dim)
    return v / np.linalg.norm(v)


def _spurious_center(domain_id: str, d_spur: int) -> np.ndarray:
    """Common direction plus a domain-specific orthogonal offset, unit norm."""
    common = _fixed_unit(f"spur-common:{d_spur}", d_spur)
    raw = _fixed_unit(f"spur-offset:{d_spur}:{domain_id}", d_spur)
    offset = raw - (raw @ common) * common
    norm = np.linalg.norm(offset)
    if norm < 1e-12:  # degenerate draw, effectively impossible but stay defined
        offset = np.zeros(d_spur)
    else:
        offset = offset / norm
    c = common + DIRECTION_MIX * offset
    return c / np.linalg.norm(c)


def gen_spurious_blobs(
    specs: Sequence[DomainSpec],
    d_inv: int,
    d_spur: int,
    seed: int,
    n_classes: int = 2,
) -> list[DomainDataset]:
    """Invariant Gaussian blobs plus a per-domain spurious block.

    Labels are balanced coin flips.  Invariant coordinates are drawn around
    class centers that are identical in every domain.  Spurious coordinates
    sit on the domain's class center with the sign agreeing with the label
    with probability (1 + rho_d) / 2, so rho_d = 1 is perfectly aligned and
    rho_d < 0 anti-aligned.  Each domain's RNG stream is keyed by its
    domain_id, so reordering specs reorders only the output list.
    """
    if n_classes != 2:
        raise ValueError("spurious blobs are a binary family")
    if d_inv < 1 or d_spur < 1:
        raise ValueError("d_inv and d_spur must be >= 1")
    if len({s.domain_id for s in specs}) != len(specs):
        raise ValueError("domain ids must be unique")
    inv_dir = _fixed_unit(f"inv-direction:{d_inv}", d_inv)
    out = []
    for spec in specs:
        rng = np.random.default_rng(derive_seed(seed, "blobs", spec.domain_id))
        n = spec.n_samples
        y = rng.integers(0, 2, size=n)
        signs = 2.0 * y - 1.0
        x_inv = signs[:, None] * (INV_SEPARATION * inv_dir)[None, :]
        x_inv = x_inv + spec.noise_std * rng.standard_normal((n, d_inv))
        center = SPUR_SEPARATION * _spurious_center(spec.domain_id, d_spur)
        p_align = 0.5 * (1.0 + spec.spurious_correlation)
        aligned = rng.random(n) < p_align
        spur_signs = np.where(aligned, signs, -signs)
        x_spur = spur_signs[:, None] * center[None, :]
        x_spur = x_spur + spec.noise_std * rng.standard_normal((n, d_spur))
        out.append(
            DomainDataset(
                domain_id=spec.domain_id,
                x=np.concatenate([x_inv, x_spur], axis=1),
                y=y,
                invariant_cols=tuple(range(d_inv)),
                spurious_cols=tuple(range(d_inv, d_inv + d_spur)),
            )
        )
    return out


def gen_rotated_moons(specs: Sequence[DomainSpec], seed: int) -> list[DomainDataset]:
    """Two interleaved half-moons rotated by each domain's angle.

    With noise_std = 0 every point lies exactly on its arc; rotation is a
    distribution shift, so both coordinates are tagged domain-varying.
    """
    if len({s.domain_id for s in specs}) != len(specs):
        raise ValueError("domain ids must be unique")
    out = []
    for spec in specs:
        rng = np.random.default_rng(derive_seed(seed, "moons", spec.domain_id))
        n = spec.n_samples
        y = rng.integers(0, 2, size=n)
        t = rng.uniform(0.0, np.pi, size=n)
        x = np.where(y[:, None] == 0,
                     np.stack([np.cos(t), np.sin(t)], axis=1),
                     np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1))
        x = x + spec.noise_std * rng.standard_normal((n, 2))
        theta = np.deg2rad(spec.rotation_deg)
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        out.append(
            DomainDataset(
                domain_id=spec.domain_id,
                x=x @ rot.T,
                y=y,
                invariant_cols=(),
                spurious_cols=(0, 1),
            )
        )
    return out


def split_train_val(
    ds: DomainDataset, ratio: float = 0.8, seed: int = 0
) -> tuple[DomainDataset, DomainDataset]:
    """Seeded shuffle, then the first floor(n * ratio) rows train."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    n = ds.n_samples
    n_train = int(n * ratio + 1e-9)  # guard n*ratio landing an ulp under an integer
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} samples at ratio {ratio} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    tr, va = perm[:n_train], perm[n_train:]
    make = lambda idx: DomainDataset(
        ds.domain_id, ds.x[idx], ds.y[idx], ds.invariant_cols, ds.spurious_cols
    )
    return make(tr), make(va)


def feature_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population std per column; constant columns get std 1."""
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return mean, np.where(std > 0.0, std, 1.0)


def apply_stats(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (x - mean) / std


def _sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".meta.json") if path.suffix == ".csv" else Path(str(path) + ".meta.json")


def save_dataset_csv(ds: DomainDataset, path) -> None:
    """One row per sample (features..., label, domain_id) plus a JSON sidecar
    naming the invariant and spurious columns."""
    path = Path(path)
    header = [f"f{j}" for j in range(ds.n_features)] + ["label", "domain_id"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n_samples):
            writer.writerow([repr(float(v)) for v in ds.x[i]] + [int(ds.y[i]), ds.domain_id])
    meta = {
        "domain_id": ds.domain_id,
        "invariant_cols": list(ds.invariant_cols),
        "spurious_cols": list(ds.spurious_cols),
    }
    with open(_sidecar_path(path), "w") as fh:
        json.dump(meta, fh)


def load_dataset_csv(path) -> DomainDataset:
    path = Path(path)
    with open(_sidecar_path(path)) as fh:
        meta = json.load(fh)
    xs, ys = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 2
        for row in reader:
            xs.append([float(v) for v in row[:d]])
            ys.append(int(row[d]))
            if row[d + 1] != meta["domain_id"]:
                raise ValueError(f"row domain {row[d + 1]!r} does not match sidecar")
    return DomainDataset(
        domain_id=meta["domain_id"],
        x=np.asarray(xs, dtype=np.float64).reshape(len(ys), d),
        y=np.asarray(ys, dtype=np.int64),
        invariant_cols=tuple(meta["invariant_cols"]),
        spurious_cols=tuple(meta["spurious_cols"]),
    )
