"""Command-line entry points: train / eval / ablate / gradcheck / synth-data / dump-lab.

Exit codes: 0 ok, 2 configuration error, 3 numeric failure.  Per-iteration
metrics stream to a JSON-lines file with the fixed schema (iter, loss_total,
loss_light_edge, loss_color_edge, loss_node, val_acc, ci95, wall_ms); the
final summary line printed by `train` contains only seed-deterministic fields.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import colorspace, episodic, synth, verify
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, build_config, field_parser
from .episodic import EpisodeSpec, LossWeights, build_model, evaluate_parallel, train_loop

GRAD_TOLERANCE = 1e-5


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=str, default=None, help="flat key=value file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, type=field_parser(f), default=None)


def _config_from_args(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    return build_config(args.config, overrides)


def _load_dataset(cfg: RunConfig) -> synth.Dataset:
    if cfg.dataset == "synthetic":
        return synth.make_synthetic_dataset(
            classes=cfg.classes, per_class=cfg.per_class, size=cfg.image_size,
            seed=cfg.seed, n_val=cfg.synth_val_classes,
            n_test=cfg.synth_test_classes)
    return synth.load_dataset(cfg.dataset)


def _build(cfg: RunConfig) -> episodic.Model:
    return build_model(hidden_h=cfg.hidden_h, embed_dim=cfg.embed_dim,
                       generations=cfg.resolved_generations(), seed=cfg.seed,
                       norm_mode=cfg.norm_mode)


def _weights(cfg: RunConfig) -> LossWeights:
    return LossWeights(lam=cfg.lam, beta=cfg.beta, gamma=cfg.gamma,
                       gate=cfg.loss_gens, gamma_mode=cfg.gamma_mode)


def _spec(cfg: RunConfig) -> EpisodeSpec:
    return EpisodeSpec(cfg.k_way, cfg.n_shot, cfg.q_query, batch=cfg.batch_episodes)


def cmd_train(cfg: RunConfig) -> int:
    dataset = _load_dataset(cfg)
    model = _build(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = cfg.metrics_path
    metrics_path.parent.mkdir(parents=True, exist_ok=True)

    with open(metrics_path, "w") as mf:
        def log(it, breakdown, val_acc, val_ci, wall_ms):
            line = {
                "iter": it,
                "loss_total": round(breakdown.total, 6),
                "loss_light_edge": round(sum(breakdown.light_edge), 6),
                "loss_color_edge": round(sum(breakdown.color_edge), 6),
                "loss_node": round(sum(breakdown.node), 6),
                "val_acc": None if val_acc is None else round(val_acc, 6),
                "ci95": None if val_ci is None else round(val_ci, 6),
                "wall_ms": round(wall_ms, 3),
            }
            mf.write(json.dumps(line) + "\n")
            if val_acc is not None:
                print(f"iter {it}: loss {breakdown.total:.4f} "
                      f"val_acc {val_acc:.4f} +- {val_ci:.4f}", file=sys.stderr)

        result = train_loop(
            model, dataset, _spec(cfg), _weights(cfg), lr=cfg.lr,
            iters=cfg.train_iters, seed=cfg.seed, val_every=cfg.val_every,
            val_episodes=cfg.val_episodes, early_stop_acc=cfg.early_stop_acc,
            eval_batch=cfg.eval_batch, log=log)

    save_checkpoint(cfg.checkpoint_path, result.best_arrays)
    summary = {
        "final": True,
        "iters": result.iterations_run,
        "best_val_acc": round(result.best_val_acc, 6),
        "ci95": round(result.best_val_ci, 6),
        "checkpoint": str(cfg.checkpoint_path),
        "metrics": str(metrics_path),
    }
    print(json.dumps(summary))
    return 0


def _parse_way_sweep(s: str) -> list[int]:
    lo, _, hi = s.partition(":")
    try:
        lo, hi = int(lo), int(hi or lo)
    except ValueError as e:
        raise ConfigError(f"bad way sweep {s!r}; expected LO:HI") from e
    if lo < 2 or hi < lo:
        raise ConfigError(f"bad way sweep {s!r}")
    return list(range(lo, hi + 1))


def cmd_eval(cfg: RunConfig, way_sweep: str | None, split: str,
             trace: str | None = None) -> int:
    if cfg.checkpoint is None:
        raise ConfigError("eval requires --checkpoint")
    model = _build(cfg)
    try:
        model.store.load_arrays(load_checkpoint(cfg.checkpoint))
    except ValueError as e:
        raise ConfigError(f"checkpoint does not match config: {e}") from e
    dataset = _load_dataset(cfg)
    if trace is not None:
        from labfew import labgnn
        from labfew.tensor import no_grad

        spec = EpisodeSpec(cfg.k_way, cfg.n_shot, cfg.q_query, batch=1)
        batch = episodic.sample_episode(dataset.split(split), spec,
                                        np.random.default_rng(cfg.seed))
        with no_grad():
            history, _ = episodic.forward_episode(model, batch.images)
        with open(trace, "w") as tf:
            labgnn.dump_trace(history, tf)
    ways = _parse_way_sweep(way_sweep) if way_sweep else [cfg.k_way]
    for k in ways:
        spec = EpisodeSpec(k, cfg.n_shot, cfg.q_query, batch=1)
        mean, ci = evaluate_parallel(dataset.split(split), model, spec,
                                     cfg.eval_episodes, seed=cfg.seed + k,
                                     workers=cfg.eval_workers,
                                     batch_episodes=cfg.eval_batch)
        print(json.dumps({"k": k, "mean_acc": round(mean, 6), "ci95": round(ci, 6),
                          "episodes": cfg.eval_episodes, "split": split}))
    return 0


ABLATION_AXES = ("hidden_h", "embed_dim", "generations")


def cmd_ablate(cfg: RunConfig, axis: str, values: str) -> int:
    if axis not in ABLATION_AXES:
        raise ConfigError(f"axis must be one of {ABLATION_AXES}, got {axis!r}")
    try:
        vals = [int(v) for v in values.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"bad values {values!r}: {e}") from e
    if not vals:
        raise ConfigError("need at least one ablation value")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve_path = out_dir / f"ablate_{axis}.jsonl"
    dataset = _load_dataset(cfg)
    with open(curve_path, "w") as cf:
        for v in vals:
            run_cfg = replace(cfg, **{axis: v})
            if axis == "generations" and run_cfg.loss_gens > v:
                run_cfg = replace(run_cfg, loss_gens=v)
            run_cfg.validate()
            t0 = time.perf_counter()
            model = _build(run_cfg)
            result = train_loop(
                model, dataset, _spec(run_cfg), _weights(run_cfg), lr=run_cfg.lr,
                iters=run_cfg.train_iters, seed=run_cfg.seed,
                val_every=run_cfg.val_every, val_episodes=run_cfg.val_episodes,
                early_stop_acc=run_cfg.early_stop_acc, eval_batch=run_cfg.eval_batch)
            model.store.load_arrays(result.best_arrays)
            rng = np.random.default_rng(np.random.SeedSequence([run_cfg.seed, 4]))
            spec = EpisodeSpec(run_cfg.k_way, run_cfg.n_shot, run_cfg.q_query, batch=1)
            mean, ci = episodic.evaluate(dataset.split("test"), model, spec,
                                         run_cfg.eval_episodes, rng, run_cfg.eval_batch)
            record = {"axis": axis, "value": v, "mean_acc": round(mean, 6),
                      "ci95": round(ci, 6),
                      "wall_s": round(time.perf_counter() - t0, 3)}
            cf.write(json.dumps(record) + "\n")
            print(json.dumps(record))
    return 0


def cmd_gradcheck(trials: int, seed: int) -> int:
    results = verify.primitive_suite(trials=trials, seed=seed)
    results["end_to_end_loss"] = verify.end_to_end_check(seed=seed)
    failed = False
    for name, err in results.items():
        ok = err < GRAD_TOLERANCE
        failed |= not ok
        print(f"{name:24s} max_rel_err {err:.3e}  {'PASS' if ok else 'FAIL'}")
    return 3 if failed else 0


def cmd_synth_data(cfg: RunConfig, out: str) -> int:
    ds = synth.make_synthetic_dataset(classes=cfg.classes, per_class=cfg.per_class,
                                      size=cfg.image_size, seed=cfg.seed)
    synth.save_dataset(ds, out)
    n = sum(len(s.class_ids) for s in ds.splits.values())
    print(json.dumps({"out": out, "classes": n,
                      "images": n * cfg.per_class, "size": cfg.image_size}))
    return 0


def cmd_dump_lab(image: str | None, cfg: RunConfig, index: int, out: str) -> int:
    from PIL import Image

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if image is not None:
        arr = np.asarray(Image.open(image).convert("RGB"), dtype=np.float64) / 255.0
        rgb = arr.transpose(2, 0, 1)
    else:
        ds = synth.make_synthetic_dataset(classes=cfg.classes, per_class=max(1, index + 1),
                                          size=cfg.image_size, seed=cfg.seed)
        split = ds.split("train")
        rgb = split.class_images[0][index].astype(np.float64)
    lab = colorspace.rgb_to_lab(rgb)
    for name, channel in colorspace.channel_images(lab).items():
        Image.fromarray(channel, mode="L").save(out_dir / f"{name}.png")
    print(json.dumps({"out": str(out_dir), "channels": ["L", "a", "b"]}))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="labfew")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="meta-train and checkpoint the best model")
    _add_config_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_flags(p_eval)
    p_eval.add_argument("--way-sweep", type=str, default=None, help="K range LO:HI")
    p_eval.add_argument("--split", type=str, default="test")
    p_eval.add_argument("--trace", type=str, default=None,
                        help="dump per-generation edge matrices (JSON lines)")

    p_ablate = sub.add_parser("ablate", help="train/eval across one config axis")
    _add_config_flags(p_ablate)
    p_ablate.add_argument("--axis", type=str, required=True)
    p_ablate.add_argument("--values", type=str, required=True)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p_grad.add_argument("--trials", type=int, default=20)
    p_grad.add_argument("--seed", type=int, default=5)

    p_synth = sub.add_parser("synth-data", help="write the synthetic dataset as PNGs")
    _add_config_flags(p_synth)
    p_synth.add_argument("--out", type=str, required=True)

    p_dump = sub.add_parser("dump-lab", help="dump per-channel Lab PNGs")
    _add_config_flags(p_dump)
    p_dump.add_argument("--image", type=str, default=None)
    p_dump.add_argument("--index", type=int, default=0)
    p_dump.add_argument("--out", type=str, required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(_config_from_args(args))
        if args.command == "eval":
            return cmd_eval(_config_from_args(args), args.way_sweep, args.split, args.trace)
        if args.command == "ablate":
            return cmd_ablate(_config_from_args(args), args.axis, args.values)
        if args.command == "gradcheck":
            return cmd_gradcheck(args.trials, args.seed)
        if args.command == "synth-data":
            return cmd_synth_data(_config_from_args(args), args.out)
        if args.command == "dump-lab":
            return cmd_dump_lab(args.image, _config_from_args(args), args.index, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FloatingPointError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
