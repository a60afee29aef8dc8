"""Deterministic synthetic terrain surfaces, ridge images and datasets.

Randomness comes only from :func:`rng`, a Philox-4x64 counter-based generator
keyed by ``(seed, stream)`` whose counter's third word holds the sample index.
Each (seed, stream, index) triple therefore owns a disjoint 2**128-draw
substream and fixtures can be regenerated in any order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from surfseg.core import Grid2, InputError, Kind, SurfaceTrace, write_grid_csv, write_trace_csv

STREAM_SURFACE = 1
STREAM_IMAGE = 2
STREAM_SPLIT = 3
STREAM_ORACLE = 4
STREAM_AUGMENT = 5
STREAM_SHUFFLE = 6
STREAM_INIT = 7

SPLITS = ("train", "val", "test")


class SpecInfeasible(InputError):
    pass


def rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    bitgen = np.random.Philox(key=[int(seed), int(stream)], counter=[0, 0, int(index), 0])
    return np.random.Generator(bitgen)


@dataclass(frozen=True)
class SynthSpec:
    n_cols: int = 60
    n_rows: int = 512
    smoothness: float = 0.5
    n_harmonics: int = 3
    amplitude: float = 40.0
    ridge_width: float = 4.0
    image_noise_std: float = 0.2
    seed: int = 0

    @property
    def margin(self) -> float:
        return 3.0 * self.ridge_width

    def validate(self) -> "SynthSpec":
        if self.n_cols < 1 or self.n_rows < 2:
            raise SpecInfeasible("n_cols >= 1 and n_rows >= 2 required")
        if self.ridge_width <= 0 or self.smoothness < 0 or self.image_noise_std < 0:
            raise SpecInfeasible("ridge_width > 0, smoothness >= 0, image_noise_std >= 0 required")
        if self.n_harmonics < 0 or self.amplitude < 0:
            raise SpecInfeasible("n_harmonics and amplitude must be non-negative")
        room = self.n_rows - 1 - 2 * self.margin
        if room <= 0:
            raise SpecInfeasible(f"margin {self.margin:g} leaves no room in {self.n_rows} rows")
        if 2 * self.amplitude >= room:
            raise SpecInfeasible(f"amplitude {self.amplitude:g} does not fit in {room:g} rows")
        return self


BENCH_A = SynthSpec()


def gen_surface(spec: SynthSpec, index: int = 0) -> SurfaceTrace:
    spec.validate()
    r = rng(spec.seed, STREAM_SURFACE, index)
    i = np.arange(spec.n_cols)
    dev = np.zeros(spec.n_cols)
    for k in range(1, spec.n_harmonics + 1):
        amp = r.uniform(0.5, 1.0) / k
        phase = r.uniform(0.0, 2.0 * math.pi)
        dev += amp * np.sin(2.0 * math.pi * k * i / spec.n_cols + phase)
    peak = np.max(np.abs(dev))
    if peak > 0:
        dev *= spec.amplitude / peak
    slope = np.max(np.abs(np.diff(dev))) if spec.n_cols > 1 else 0.0
    if slope > spec.smoothness:
        dev *= spec.smoothness / slope
    slack = (spec.n_rows - 1 - 2 * spec.margin) / 2 - np.max(np.abs(dev))
    baseline = (spec.n_rows - 1) / 2 + r.uniform(-slack, slack)
    return SurfaceTrace(baseline + dev)


def gen_image(truth: SurfaceTrace, spec: SynthSpec, index: int = 0) -> Grid2:
    t = truth.x
    if np.any(t < 0) or np.any(t > spec.n_rows - 1):
        raise InputError("truth outside the image rows")
    j = np.arange(spec.n_rows, dtype=np.float64)[:, None]
    img = np.exp(-((j - t[None, :]) ** 2) / (2.0 * spec.ridge_width**2))
    if spec.image_noise_std > 0:
        img = img + rng(spec.seed, STREAM_IMAGE, index).normal(0.0, spec.image_noise_std, img.shape)
    return Grid2(img, Kind.IMAGE)


def split_counts(n: int, fractions) -> list[int]:
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise InputError("split fractions must be three non-negative numbers summing to 1")
    raw = [f * n for f in fr]
    counts = [math.floor(x + 1e-9) for x in raw]
    order = sorted(range(3), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[: n - sum(counts)]:
        counts[k] += 1
    return counts


def assign_splits(n: int, fractions, seed: int) -> list[str]:
    counts = split_counts(n, fractions)
    labels = [name for name, c in zip(SPLITS, counts) for _ in range(c)]
    perm = rng(seed, STREAM_SPLIT).permutation(n)
    out = [""] * n
    for slot, idx in enumerate(perm):
        out[idx] = labels[slot]
    return out


@dataclass
class Sample:
    id: str
    image: np.ndarray
    truth: np.ndarray
    split: str
    probmap: np.ndarray | None = field(default=None, repr=False)


def make_samples(spec: SynthSpec, n_samples: int, fractions=(0.6, 0.2, 0.2),
                 oracle=None, with_images: bool = True) -> list[Sample]:
    """Generate samples in memory; ``oracle`` is an ``OracleNoiseSpec`` or None."""
    from surfseg.predictor import oracle_predict

    spec.validate()
    splits = assign_splits(n_samples, fractions, spec.seed)
    samples = []
    for k in range(n_samples):
        truth = gen_surface(spec, k)
        img = gen_image(truth, spec, k).data if with_images else None
        pm = oracle_predict(oracle, truth, spec.n_rows, index=k).data if oracle is not None else None
        samples.append(Sample(f"s{k:04d}", img, truth.x, splits[k], pm))
    return samples


def gen_dataset(spec: SynthSpec, n_samples: int, fractions, out_dir, oracle=None) -> dict:
    """Write a dataset tree and return its manifest."""
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in make_samples(spec, n_samples, fractions, oracle):
        entry = {"id": s.id, "image": f"samples/{s.id}_image.csv",
                 "truth": f"samples/{s.id}_truth.csv", "split": s.split}
        write_grid_csv(out / entry["image"], s.image)
        write_trace_csv(out / entry["truth"], s.truth)
        if s.probmap is not None:
            entry["probmap"] = f"samples/{s.id}_probmap.csv"
            write_grid_csv(out / entry["probmap"], s.probmap)
        entries.append(entry)
    manifest = {"spec": asdict(spec), "samples": entries}
    if oracle is not None:
        manifest["oracle"] = asdict(oracle)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def split_samples(samples, name):
    return [s for s in samples if s.split == name]
