"""Command-line entry point: ``tcd gen-data | train | eval | export``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Settings resolve as command-line flags over the ``--config`` file over defaults.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agent import evaluate_episodes, train_inverse_dynamics
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .conditioning import parse_flags, preset_name, top_y_reward_profile
from .config import ConfigError, RunConfig, load_config
from .data import DatasetFormatError, export_csv, load_dataset, save_dataset
from .envs import classify_branch, env_for_dataset, generate_dataset, make_env, template_distances
from .numerics import NonFiniteError
from .training import train_denoiser

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tcd", description="Temporally conditioned trajectory diffusion on toy envs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--env", choices=("historical", "immediate", "prospective"))
        sp.add_argument("--out", help="output path (file for gen-data, directory otherwise)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(g)
    g.add_argument("--n", type=int)
    g.add_argument("--csv", help="also export per-trajectory CSVs to this directory")

    t = sub.add_parser("train", help="train denoisers and inverse dynamics")
    common(t)
    t.add_argument("--dataset")
    t.add_argument("--flags", help="presets separated by '|', e.g. 'tcd|rtg-ts'")
    t.add_argument("--steps", type=int)

    e = sub.add_parser("eval", help="closed-loop evaluation of checkpoints")
    common(e)
    e.add_argument("--dataset")
    e.add_argument("--checkpoint", action="append", default=[])
    e.add_argument("--flags", help="presets whose checkpoints to load from --out")
    e.add_argument("--top-y", type=_int_list)
    e.add_argument("--offset", type=_float_list)
    e.add_argument("--omega", type=float)
    e.add_argument("--episodes", type=int)

    x = sub.add_parser("export", help="export a dataset or report for plotting")
    common(x)
    x.add_argument("--input", required=True, help="dataset file or JSON report")
    x.add_argument("--format", default="csv")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v.strip()
    for key, attr in (("seed", "seed"), ("env", "env"), ("n", "n"), ("flags", "flags"),
                      ("omega", "omega"), ("dataset", "dataset"), ("steps", "train_steps"),
                      ("episodes", "episodes")):
        val = getattr(args, key, None)
        if val is not None:
            over[attr] = str(val)
    return cfg.updated(over)


def _emit(msg: str) -> None:
    print(msg, flush=True)


# --- commands ----------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, out: Optional[str], csv_dir: Optional[str] = None) -> Path:
    spec = make_env(cfg.env, cfg.h, cfg.sigma)
    try:
        ds = generate_dataset(spec, cfg.n, np.random.default_rng(cfg.seed))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    path = Path(out or cfg.dataset)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, path)
    if csv_dir:
        export_dataset_csv(ds, csv_dir)
    s = ds.stats
    counts = np.bincount([t.label for t in ds.trajectories], minlength=spec.n_classes)
    _emit(json.dumps({"dataset": str(path), "env": cfg.env, "trajectories": len(ds),
                      "classes": {n: int(c) for n, c in zip(spec.class_names, counts)},
                      "T_min": s.T_min, "T_max": s.T_max, "r_min": s.r_min, "r_max": s.r_max,
                      "t_max": s.t_max}))
    return path


def cmd_train(cfg: RunConfig, out: Optional[str]) -> list[Path]:
    ds = _load_dataset(cfg.dataset)
    out_dir = Path(out or cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.cfg").write_text(cfg.to_text())
    rng = np.random.default_rng(cfg.seed)
    inverse = train_inverse_dynamics(ds, cfg.id_epochs, rng, lr=cfg.id_lr)
    written = []
    for name, flags in parse_flags(cfg.flags):
        log_path = out_dir / f"{name}.log.ndjson"
        with log_path.open("w") as fh:
            def log(rec, fh=fh):
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
            trained = train_denoiser(ds, flags, cfg.train_config(),
                                     np.random.default_rng(cfg.seed), log=log)
        ckpt = out_dir / f"{name}.ckpt"
        save_checkpoint(ckpt, trained, inverse, {"preset": name, "seed": cfg.seed,
                                                 "env": ds.env.kind})
        _emit(json.dumps({"checkpoint": str(ckpt), "preset": name,
                          "final_loss": trained.losses[-1] if trained.losses else None}))
        written.append(ckpt)
    return written


def cmd_eval(cfg: RunConfig, out: Optional[str], checkpoints: Sequence[str],
             top_ys: Optional[list[int]] = None, offsets: Optional[list[float]] = None) -> Path:
    ds = _load_dataset(cfg.dataset)
    spec = env_for_dataset(ds)
    out_dir = Path(out or cfg.out)
    if not checkpoints:
        checkpoints = [str(out_dir / f"{name}.ckpt") for name, _ in parse_flags(cfg.flags)]
    top_ys = top_ys or [cfg.top_y]
    offsets = offsets if offsets is not None else [cfg.max_return_offset]
    guidance = cfg.guidance()
    dump_dir = out_dir / "trajectories"
    dump_dir.mkdir(parents=True, exist_ok=True)
    runs = []
    for ck in checkpoints:
        trained, inverse, meta = _load_checkpoint(ck)
        if (trained.schedule.kind, trained.schedule.K) != (cfg.schedule, cfg.K):
            raise CheckpointError(
                f"{ck}: checkpoint schedule ({trained.schedule.kind}, K={trained.schedule.K}) "
                f"does not match config ({cfg.schedule}, K={cfg.K})")
        if inverse is None:
            raise CheckpointError(f"{ck}: checkpoint has no inverse-dynamics model")
        name = meta.get("preset", preset_name(trained.flags))
        for y in top_ys:
            profile = top_y_reward_profile(ds, y)
            for off in offsets:
                rng = np.random.default_rng(cfg.seed)
                results = evaluate_episodes(trained, inverse, spec, profile, guidance,
                                            cfg.episodes, off, rng)
                episodes = []
                for i, r in enumerate(results):
                    branch = _episode_branch(r, spec)
                    episodes.append({"return": r.total_return, "steps": r.steps,
                                     "rewards": r.rewards, "rtg_initial": r.rtg_initial,
                                     "rtg_final": r.rtg_final, "start_class": r.start_class,
                                     "branch": branch, "aborted": r.aborted})
                    _dump_episode(dump_dir / f"{name}_y{y}_o{off:g}_ep{i:03d}.csv", r)
                tally: dict[str, int] = {}
                for ep in episodes:
                    tally[str(ep["branch"])] = tally.get(str(ep["branch"]), 0) + 1
                runs.append({"checkpoint": str(ck), "preset": name, "flags": asdict(trained.flags),
                             "top_y": y, "offset": off, "omega": guidance.omega,
                             "seed": cfg.seed, "mean_return": float(np.mean(
                                 [e["return"] for e in episodes])),
                             "branch_counts": tally, "episodes": episodes})
                _emit(json.dumps({"preset": name, "top_y": y, "offset": off,
                                  "mean_return": runs[-1]["mean_return"]}))
    report = {"env": spec.kind, "config": cfg.to_text(), "runs": runs}
    path = out_dir / "report.json"
    path.write_text(json.dumps(report, indent=1, sort_keys=True))
    return path


def _episode_branch(r, spec) -> Optional[str]:
    fut = r.states[spec.future_start:]
    return classify_branch(fut, spec, spec.future_start).name if len(fut) >= 2 else None


def _dump_episode(path: Path, r) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        d_s = r.states.shape[1]
        w.writerow(["t"] + [f"s_{j}" for j in range(d_s)] + [f"a_{j}" for j in range(d_s)]
                   + ["r", "rtg_after"])
        rtg = r.rtg_initial
        for t in range(r.steps):
            rtg -= r.rewards[t]
            w.writerow([t] + [repr(float(v)) for v in r.states[t]]
                       + [repr(float(v)) for v in r.actions[t]] + [repr(r.rewards[t]), repr(rtg)])


def export_dataset_csv(ds, out_dir) -> list[Path]:
    """CSV export with oracle class labels and distance to the labelled template."""
    spec = env_for_dataset(ds)
    start = spec.future_start
    labels, dists = [], []
    for traj in ds.trajectories:
        d = template_distances(traj.states[start:], spec, start)
        c = classify_branch(traj.states[start:], spec, start).index
        labels.append(c)
        dists.append(float(d[c]))
    return export_csv(ds, out_dir, labels, dists)


def cmd_export(cfg: RunConfig, src: str, fmt: str, out: Optional[str]) -> Path:
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown export format {fmt!r} (expected csv or json)")
    src_path = Path(src)
    if not src_path.exists():
        raise FileNotFoundError(f"input {src} does not exist")
    out_dir = Path(out or cfg.out) / "export"
    out_dir.mkdir(parents=True, exist_ok=True)
    if src_path.suffix == ".json":
        report = json.loads(src_path.read_text())
        if fmt == "json":
            path = out_dir / "report.json"
            path.write_text(json.dumps(report, indent=1, sort_keys=True))
            return path
        path = out_dir / "episodes.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["preset", "top_y", "offset", "episode", "return", "steps", "branch"])
            for run in report["runs"]:
                for i, ep in enumerate(run["episodes"]):
                    w.writerow([run["preset"], run["top_y"], run["offset"], i, repr(ep["return"]),
                                ep["steps"], ep["branch"]])
        return path
    ds = _load_dataset(src)
    if fmt == "csv":
        export_dataset_csv(ds, out_dir)
        return out_dir / "index.csv"
    path = out_dir / "dataset.json"
    path.write_text(json.dumps({
        "env": asdict(ds.env),
        "trajectories": [{"id": t.id, "label": t.label, "states": t.states.tolist(),
                          "actions": t.actions.tolist(), "rewards": t.rewards.tolist()}
                         for t in ds.trajectories]}, sort_keys=True))
    return path


def _load_dataset(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"dataset {path} does not exist")
    return load_dataset(path)


def _load_checkpoint(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    return load_checkpoint(path)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        out = args.out
        if args.command == "gen-data":
            cmd_gen_data(cfg, out, args.csv)
        elif args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "eval":
            path = cmd_eval(cfg, out, args.checkpoint, args.top_y, args.offset)
            _emit(json.dumps({"report": str(path)}))
        else:
            path = cmd_export(cfg, args.input, args.format, out)
            _emit(json.dumps({"export": str(path)}))
    except (UsageError, ConfigError) as exc:
        print(f"tcd: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetFormatError, CheckpointError, NonFiniteError,
            FloatingPointError, ValueError) as exc:
        print(f"tcd: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
