"""Command-line entry points: gen, train, eval, reconstruct.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
import argparse
import os
import sys

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageExit(f"{self.prog}: error: {message}")


class _UsageExit(Exception):
    pass


def _pin_threads():
    # must run before numpy is imported to take effect on BLAS pools
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = "1"


def _eprint(msg):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------


def cmd_gen(args):
    from .data import FlowParams, MeshParams, generate_synthetic, write_dataset

    mesh, snaps = generate_synthetic(MeshParams(nc=args.nc, seed=args.seed),
                                     FlowParams(re=args.re), m=args.snapshots, seed=args.seed)
    write_dataset(args.out, mesh, snaps)
    print(f"wrote {len(snaps)} snapshots on {args.nc} cells to {args.out}")
    return EXIT_OK


def _prepare(trajectories):
    from .graph import build_input_graph

    for tr in trajectories:
        tr.graph = build_input_graph(tr.mesh)
    widths = {tr.snaps.n_features for tr in trajectories}
    if len(widths) != 1:
        from .errors import InputError
        raise InputError(f"trajectories disagree on feature count: {sorted(widths)}")
    return widths.pop()


def cmd_train(args):
    import numpy as np

    from .config import dumps_config, load_config, model_config, train_config
    from .data import Standardizer, load_trajectories, split_train_val
    from .graph import bind_snapshot
    from .model import GraphAutoencoder
    from .train import fit

    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    overrides = {k.strip(): v.strip() for k, v in overrides.items()}
    for key in ("seed", "preset", "max_epochs"):
        if getattr(args, key, None) is not None:
            overrides[key] = str(getattr(args, key))
    if args.deterministic:
        overrides["deterministic"] = "true"
    overrides["data"] = args.data
    overrides["run_dir"] = args.run_dir
    cfg = load_config(args.config, overrides)

    trajs = load_trajectories(cfg.data)
    n_feat = _prepare(trajs)
    train_parts, val_parts = [], []
    for i, tr in enumerate(trajs):
        a, b = split_train_val(tr.snaps, cfg.val_fraction, seed=cfg.seed + i)
        train_parts.append((tr, a))
        val_parts.append((tr, b))
    stats = Standardizer.fit([a.snapshots for _, a in train_parts])
    train_set = [bind_snapshot(tr.graph, x) for tr, a in train_parts for x in stats.transform(a.snapshots)]
    val_set = [bind_snapshot(tr.graph, x) for tr, b in val_parts for x in stats.transform(b.snapshots)]

    mcfg = model_config(cfg, n_feat)
    model = GraphAutoencoder(mcfg, seed=cfg.seed)
    os.makedirs(cfg.run_dir, exist_ok=True)
    extra = {"input_features": n_feat,
             "feature_names": ",".join(trajs[0].snaps.feature_names),
             "norm_mean": tuple(float(v) for v in stats.mean),
             "norm_std": tuple(float(v) for v in stats.std)}
    with open(os.path.join(cfg.run_dir, "config.lock"), "w", encoding="utf-8") as f:
        f.write(dumps_config(cfg, extra))

    def log(row):
        _eprint(f"epoch {row['epoch']:4d}  train {row['train_mse']:.4e}  val {row['val_mse']:.4e}  lr {row['lr']:.2e}")

    clock = (lambda: 0.0) if cfg.deterministic else None
    kwargs = {"clock": clock} if clock else {}
    _, hist = fit(model, train_set, val_set, train_config(cfg), run_dir=cfg.run_dir,
                  log=None if args.quiet else log, **kwargs)
    if hist:
        best = int(np.argmin([r["val_mse"] for r in hist]))
        print(f"best val_mse {hist[best]['val_mse']:.6e} at epoch {hist[best]['epoch']}")
    return EXIT_OK


def _load_run(run_dir):
    """Model with best-checkpoint weights plus the standardiser from ``config.lock``."""
    import numpy as np

    from .config import model_config, read_lock
    from .data import Standardizer
    from .errors import CheckpointError
    from .model import GraphAutoencoder

    lock = os.path.join(run_dir, "config.lock")
    ckpt = os.path.join(run_dir, "best.ckpt")
    if not os.path.exists(lock):
        raise CheckpointError(f"no config.lock in {run_dir}")
    if not os.path.exists(ckpt):
        raise CheckpointError(f"no best.ckpt in {run_dir}")
    cfg, extra = read_lock(lock)
    n_feat = int(extra["input_features"])
    mean = np.array([float(v) for v in extra["norm_mean"].split(",")])
    std = np.array([float(v) for v in extra["norm_std"].split(",")])
    model = GraphAutoencoder(model_config(cfg, n_feat), seed=cfg.seed).load(ckpt)
    return model, Standardizer(mean=mean, std=std)


def cmd_eval(args):
    import csv

    from dataclasses import replace

    from .data import load_trajectories
    from .train import evaluate_rmse

    model, stats = _load_run(args.run_dir)
    trajs = load_trajectories(args.data)
    _prepare(trajs)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["re", "feature", "rmse"])
        for tr in trajs:
            snaps = replace(tr.snaps, snapshots=stats.transform(tr.snaps.snapshots))
            rmse = evaluate_rmse(model, tr.graph, snaps, stats)
            for name, val in zip(tr.snaps.feature_names, rmse):
                w.writerow([repr(float(tr.snaps.re)), name, repr(float(val))])
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_reconstruct(args):
    import numpy as np

    from .data import load_trajectories
    from .errors import InputError
    from .graph import bind_snapshot
    from .pool import write_mask_csv

    model, stats = _load_run(args.run_dir)
    trajs = load_trajectories(args.data)
    _prepare(trajs)
    tr = trajs[0]
    if args.trajectory is not None:
        named = [t for t in trajs if t.name == args.trajectory]
        if not named:
            raise InputError(f"no trajectory named {args.trajectory!r} under {args.data}")
        tr = named[0]
    k = args.snapshot
    if not 0 <= k < len(tr.snaps):
        raise InputError(f"snapshot index {k} out of range [0, {len(tr.snaps)})")
    g = bind_snapshot(tr.graph, stats.transform(tr.snaps.snapshots[k]))
    recon, mask = model.reconstruct(g)
    recon = stats.inverse(recon)
    os.makedirs(args.out, exist_ok=True)
    pos = tr.graph.pos
    with open(os.path.join(args.out, f"recon_{k}.csv"), "w", newline="") as f:
        f.write(",".join(["x", "y"] + [f"f{i}" for i in range(recon.shape[1])]) + "\n")
        for p, row in zip(pos, np.asarray(recon)):
            f.write(",".join(repr(float(v)) for v in (*p, *row)) + "\n")
    write_mask_csv(os.path.join(args.out, f"mask_{k}.csv"), pos, mask)
    print(f"wrote recon_{k}.csv and mask_{k}.csv to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="meshgae", description="Graph autoencoder for mesh fields.")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded execution for bitwise reproducibility")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic step-flow trajectory")
    g.add_argument("--out", required=True)
    g.add_argument("--nc", type=int, default=2000)
    g.add_argument("--snapshots", type=int, default=64)
    g.add_argument("--re", type=float, default=30000.0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train an autoencoder")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--run-dir", required=True)
    t.add_argument("--preset", choices=["model1", "model2", "model3"])
    t.add_argument("--seed", type=int)
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="normalised RMSE per trajectory and feature")
    e.add_argument("--run-dir", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("reconstruct", help="export a reconstruction and its masked field")
    r.add_argument("--run-dir", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--snapshot", type=int, required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--trajectory")
    r.set_defaults(func=cmd_reconstruct)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if "--deterministic" in argv:
        _pin_threads()
    try:
        args = build_parser().parse_args(argv)
    except _UsageExit as exc:
        _eprint(str(exc))
        return EXIT_USAGE
    if getattr(args, "set", None):
        bad = [kv for kv in args.set if "=" not in kv]
        if bad:
            _eprint(f"--set expects KEY=VALUE, got {bad[0]!r}")
            return EXIT_USAGE
    args.deterministic = getattr(args, "deterministic", False)

    from .errors import ConfigError, MeshGAEError, UsageError

    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        _eprint(f"error: {exc}")
        return EXIT_USAGE
    except (MeshGAEError, OSError, ValueError) as exc:
        _eprint(f"error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
