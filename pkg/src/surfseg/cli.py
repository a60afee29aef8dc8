"""Command-line entry point: ``surfseg <command> ...``.

Exit codes: 0 ok, 2 bad input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from surfseg import d2c, metrics, smoothing
from surfseg.core import (
    GaussianField,
    InputError,
    Kind,
    NumericalError,
    PixelSpacing,
    read_grid_csv,
    read_lines_csv,
    read_trace_csv,
    write_lines_csv,
    write_trace_csv,
)
from surfseg.geometry import PolarSpec, surface_to_contour
from surfseg.learning import (
    FinetuneConfig,
    alternate_finetune,
    init_state,
    load_checkpoint,
    read_blob,
    save_checkpoint,
)
from surfseg.pipeline import infer
from surfseg.predictor import (
    LinearPatchScorer,
    OracleNoiseSpec,
    PrecomputedMap,
    load_model,
    pretrain,
)
from surfseg.synth import SynthSpec, gen_dataset

METRICS = ("umsp", "jm", "pad", "hd")


# -- configuration ------------------------------------------------------------

@dataclass
class DatasetConfig:
    n_samples: int = 100
    split: tuple = (0.6, 0.2, 0.2)


@dataclass
class PredictorConfig:
    patch_rows: int = 9
    patch_cols: int = 9
    temperature: float = 1.0


@dataclass
class PretrainConfig:
    lr: float = 1e-4
    epochs: int = 2000
    batch_size: int = 1


@dataclass
class PolarConfig:
    cx: float = 0.0
    cy: float = 0.0
    n_angles: int = 256
    n_radii: int = 128
    r_max: float = 64.0
    wrap: bool = False

    def spec(self) -> PolarSpec:
        return PolarSpec(self.cx, self.cy, self.n_angles, self.n_radii, self.r_max, self.wrap)


@dataclass
class PathsConfig:
    manifest: str | None = None
    checkpoint: str | None = None
    out: str | None = None


@dataclass
class RunConfig:
    synth: SynthSpec = field(default_factory=SynthSpec)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    oracle: OracleNoiseSpec | None = None
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: FinetuneConfig = field(default_factory=FinetuneConfig)
    polar: PolarConfig | None = None
    spacing: PixelSpacing = field(default_factory=PixelSpacing)
    paths: PathsConfig = field(default_factory=PathsConfig)
    tau: float = d2c.DEFAULT_TAU
    wrap: bool = False

    @property
    def smooth_wrap(self) -> bool:
        return self.wrap or (self.polar is not None and self.polar.wrap)


_SECTIONS = {
    "synth": SynthSpec, "dataset": DatasetConfig, "oracle": OracleNoiseSpec,
    "predictor": PredictorConfig, "pretrain": PretrainConfig, "train": FinetuneConfig,
    "polar": PolarConfig, "spacing": PixelSpacing, "paths": PathsConfig,
}


def _check_value(name, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) for v in value)
        value = tuple(value) if ok else value
    else:
        ok = value is None or isinstance(value, (int, float, str))
    if not ok:
        raise InputError(f"bad value for '{name}': {value!r}")
    return value


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise InputError(f"'{name}' must be an object")
    defaults = cls()
    kwargs = {}
    known = {f.name for f in fields(cls)}
    for key, value in data.items():
        if key not in known:
            raise InputError(f"unknown key '{name}.{key}'")
        kwargs[key] = _check_value(f"{name}.{key}", value, getattr(defaults, key))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid '{name}': {exc}") from exc


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise InputError("config must be a JSON object")
    cfg = RunConfig()
    for key, value in data.items():
        if key in _SECTIONS:
            setattr(cfg, key, None if value is None else _section(_SECTIONS[key], value, key))
        elif key in ("tau", "wrap"):
            setattr(cfg, key, _check_value(key, value, getattr(cfg, key)))
        else:
            raise InputError(f"unknown key '{key}'")
    if not 0 < cfg.tau < 1:
        raise InputError("bad value for 'tau': must lie in (0, 1)")
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data)


# -- helpers ------------------------------------------------------------------

def thread_count() -> int:
    try:
        n = int(os.environ.get("SURFSEG_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _read_manifest(path):
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    return manifest, path.parent


def _load_split(manifest, root, split, probmap):
    pairs = []
    for s in manifest["samples"]:
        if s["split"] != split:
            continue
        key = "probmap" if probmap else "image"
        if key not in s:
            raise InputError(f"sample {s['id']} has no {key}")
        kind = Kind.PROBMAP if probmap else Kind.IMAGE
        pairs.append((read_grid_csv(root / s[key], kind).data, read_trace_csv(root / s["truth"]).x))
    return pairs


def _pick(flag, configured, what):
    value = flag if flag is not None else configured
    if value is None:
        raise InputError(f"missing {what}")
    return value


def _sig(v, digits=6):
    return float(f"{v:.{digits}g}")


# -- commands -----------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig):
    spec = cfg.synth
    if args.seed is not None:
        spec = SynthSpec(**{**asdict(spec), "seed": args.seed})
    out = _pick(args.out, cfg.paths.out, "--out")
    manifest = gen_dataset(spec, cfg.dataset.n_samples, cfg.dataset.split, out, cfg.oracle)
    counts = {k: sum(s["split"] == k for s in manifest["samples"]) for k in ("train", "val", "test")}
    print(json.dumps(counts, sort_keys=True))
    return 0


def cmd_pretrain(args, cfg: RunConfig):
    manifest, root = _read_manifest(_pick(args.manifest, cfg.paths.manifest, "--manifest"))
    seed = args.seed if args.seed is not None else cfg.train.seed
    data = _load_split(manifest, root, "train", probmap=False)
    model = LinearPatchScorer(**asdict(cfg.predictor))
    model, history = pretrain(model, data, cfg.train.sigma_rel, cfg.pretrain.lr,
                              cfg.pretrain.epochs, cfg.pretrain.batch_size, seed)
    state = init_state(model.params, cfg.train.w_init, seed)
    save_checkpoint(_pick(args.out, cfg.paths.out, "--out"), state, model.meta)
    if history:
        print(json.dumps({"kld_first": _sig(history[0]), "kld_last": _sig(history[-1])}))
    return 0


def cmd_finetune(args, cfg: RunConfig):
    manifest, root = _read_manifest(_pick(args.manifest, cfg.paths.manifest, "--manifest"))
    ckpt = args.checkpoint if args.checkpoint is not None else cfg.paths.checkpoint
    if ckpt is None and args.probmap:
        # only w is learned on precomputed maps, so a fresh state will do
        state, meta = init_state(np.empty(0), cfg.train.w_init, cfg.train.seed), {}
    else:
        state, meta = load_checkpoint(_pick(ckpt, None, "--checkpoint"))
    if args.seed is not None:
        state.rng_seed = args.seed
    train_cfg = cfg.train
    if args.rounds is not None:
        train_cfg = FinetuneConfig(**{**asdict(train_cfg), "rounds": args.rounds})
    if args.probmap:
        model = PrecomputedMap()
    else:
        model = LinearPatchScorer(weights=state.predictor.params, **meta)
    need_train = train_cfg.rounds > 0 and train_cfg.ep_unet > 0 and model.params.size
    train = _load_split(manifest, root, "train", args.probmap) if need_train else []
    val = _load_split(manifest, root, "val", args.probmap) if train_cfg.rounds > 0 else []
    state, _ = alternate_finetune(train, val, state, train_cfg, model, cfg.tau, cfg.smooth_wrap)
    save_checkpoint(_pick(args.out, cfg.paths.out, "--out"), state, meta)
    print(json.dumps({"w_comp": _sig(state.w, 12), "rounds": state.rounds_done}))
    return 0


def _infer_one(model, path, w, cfg, probmap):
    grid = read_grid_csv(path, Kind.PROBMAP if probmap else Kind.IMAGE)
    return infer(model, grid, w, cfg.tau, cfg.smooth_wrap)


def cmd_infer(args, cfg: RunConfig):
    model_path = _pick(args.model, cfg.paths.checkpoint, "--model")
    if args.probmap:
        header, _ = read_blob(model_path)
        model, log_w = PrecomputedMap(), header.get("log_w")
    else:
        model, log_w = load_model(model_path)
    if args.no_sb:
        w = None
    elif args.w is not None:
        w = args.w
    elif log_w is not None:
        w = math.exp(log_w)
    else:
        w = cfg.train.w_init
    if args.manifest:
        manifest, root = _read_manifest(args.manifest)
        out_dir = Path(_pick(args.out, cfg.paths.out, "--out"))
        out_dir.mkdir(parents=True, exist_ok=True)
        key = "probmap" if args.probmap else "image"
        jobs = [(s["id"], root / s[key]) for s in manifest["samples"] if s["split"] == args.split]
    else:
        jobs = [(None, Path(_pick(args.image, None, "--image")))]
    reports = []
    for sid, path in jobs:
        pred = _infer_one(model, path, w, cfg, args.probmap)
        target = out_dir / f"{sid}.csv" if sid is not None else args.out
        if target is None:
            raise InputError("missing --out")
        write_trace_csv(target, pred.x)
        if args.time:
            times = " ".join(f"{k}={v * 1e3:.3f}ms" for k, v in pred.timings.items())
            print(f"{sid or path.name}: {times}", file=sys.stderr)
        if args.report:
            reports.append({"id": sid, "w": w, "fallback": pred.fit.fallback.astype(int).tolist(),
                            "sigma": [_sig(s) for s in pred.fit.sigma]})
    if args.report:
        print(json.dumps(reports if args.manifest else reports[0], sort_keys=True))
    return 0


def _sample_metrics(pred, truth, which, cfg: RunConfig, sid):
    row = {"id": sid}
    if "umsp" in which:
        row["umsp"] = metrics.umsp(pred, truth, cfg.spacing)
    if {"jm", "pad", "hd"} & set(which):
        if cfg.polar is not None:
            spec = cfg.polar.spec()
            extent = spec.extent
            cp, ct = surface_to_contour(pred, spec), surface_to_contour(truth, spec)
            pp, pt = cp, ct
        else:
            extent = (int(math.ceil(max(pred.max(), truth.max()))) + 2, pred.size)
            cp, ct = metrics.terrain_contour(pred), metrics.terrain_contour(truth)
            pp, pt = metrics.terrain_points(pred), metrics.terrain_points(truth)
        if "jm" in which or "pad" in which:
            mp, mt = metrics.contour_to_mask(cp, extent), metrics.contour_to_mask(ct, extent)
            if "jm" in which:
                row["jm"] = metrics.jaccard(mp, mt)
            if "pad" in which:
                row["pad"] = metrics.pad(mp, mt)
        if "hd" in which:
            row["hd"] = metrics.hausdorff(pp, pt, cfg.spacing)
    return row


def cmd_eval(args, cfg: RunConfig):
    which = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = [m for m in which if m not in METRICS]
    if bad or not which:
        raise InputError(f"unknown metric(s): {', '.join(bad) or '(none)'}")
    if len(args.pred) != len(args.truth):
        raise InputError("--pred and --truth need the same number of files")
    preds = [read_trace_csv(p).x for p in args.pred]
    truths = [read_trace_csv(t).x for t in args.truth]
    ids = [Path(p).stem for p in args.pred]
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        rows = list(pool.map(lambda a: _sample_metrics(a[0], a[1], which, cfg, a[2]),
                             zip(preds, truths, ids)))
    summary = {}
    for m in which:
        vals = np.array([r[m] for r in rows])
        summary[m] = {"mean": _sig(vals.mean()), "std": _sig(vals.std())}
    for r in rows:
        for m in which:
            r[m] = _sig(r[m])
    text = json.dumps({"samples": rows, "summary": summary}, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_fit_gauss(args, cfg: RunConfig):
    grid = read_grid_csv(_pick(args.input, None, "--input"), Kind.PROBMAP)
    tau = args.tau if args.tau is not None else cfg.tau
    gf, reports = d2c.fit_field(grid, tau)
    lines = [gf.gamma, gf.sigma]
    if args.report:
        lines.append([1.0 if r.fallback_used else 0.0 for r in reports])
    write_lines_csv(_pick(args.out, cfg.paths.out, "--out"), lines)
    return 0


def cmd_smooth(args, cfg: RunConfig):
    lines = read_lines_csv(_pick(args.input, None, "--input"))
    if len(lines) < 2:
        raise InputError("smooth input needs a gamma line and a sigma line")
    gf = GaussianField(lines[0], lines[1])
    w = args.w if args.w is not None else cfg.train.w_init
    sys_ = smoothing.assemble(gf, w, args.wrap or cfg.smooth_wrap)
    x = smoothing.solve(sys_)
    write_trace_csv(_pick(args.out, cfg.paths.out, "--out"), x)
    if args.energy:
        print(f"{smoothing.energy(sys_, gf, x):.12g}")
    return 0


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surfseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="run config JSON")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--out", help="output directory")

    p = add("pretrain", cmd_pretrain, "pretrain the patch scorer with the column KLD loss")
    p.add_argument("--manifest")
    p.add_argument("--out", help="checkpoint to write")

    p = add("finetune", cmd_finetune, "alternating fine-tuning of predictor and smoothness weight")
    p.add_argument("--manifest")
    p.add_argument("--checkpoint", help="input checkpoint (optional with --probmap)")
    p.add_argument("--out", help="checkpoint to write")
    p.add_argument("--rounds", type=int, help="override train.rounds")
    p.add_argument("--probmap", action="store_true", help="train on precomputed probability maps")

    p = add("infer", cmd_infer, "segment one image (or a manifest split)")
    p.add_argument("--model", help="model file or checkpoint")
    p.add_argument("--image")
    p.add_argument("--manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="trace CSV (or directory with --manifest)")
    p.add_argument("--probmap", action="store_true", help="input is already a probability map")
    p.add_argument("--no-sb", action="store_true", help="skip the smoothing block")
    p.add_argument("--w", type=float, help="override the smoothness weight")
    p.add_argument("--report", action="store_true", help="print per-column fit report JSON")
    p.add_argument("--time", action="store_true", help="print per-stage wall times to stderr")

    p = add("eval", cmd_eval, "evaluate predicted traces against truth")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--truth", nargs="+", required=True)
    p.add_argument("--metrics", default=",".join(METRICS))
    p.add_argument("--out", help="also write the JSON here")

    p = add("fit-gauss", cmd_fit_gauss, "fit per-column Gaussians to a probability map")
    p.add_argument("--input")
    p.add_argument("--out")
    p.add_argument("--tau", type=float)
    p.add_argument("--report", action="store_true", help="append a line of fallback flags")

    p = add("smooth", cmd_smooth, "solve the smoothing energy for a gamma/sigma CSV")
    p.add_argument("--input")
    p.add_argument("--out")
    p.add_argument("--w", type=float)
    p.add_argument("--wrap", action="store_true", help="close the chain into a ring")
    p.add_argument("--energy", action="store_true", help="print E(x*)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
