"""Command-line interface.

Exit codes: 0 success, 2 usage or validation error, 3 I/O or file-format
error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import fileio
from .autograd import finite_diff_check, mse_loss
from .fileio import ConfigError, FormatError, MODEL_KEYS, atomic_write, parse_kv
from .metrics import evaluate
from .pipeline import TransDenoConfig, init_params, transdeno_forward
from .rng import make_rng
from .specklesim import SceneSpec, apply_speckle, gen_clean
from .training import DivergenceError, TrainConfig, train_denoiser

log = logging.getLogger("transdeno")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

MANIFEST = "manifest.txt"
GRADCHECK_TOL = 1e-4

SCENE_KEYS = {
    "H": int,
    "W": int,
    "C": int,
    "n_targets": int,
    "target_size": int,
    "amplitude": float,
    "background": float,
    "looks": int,
    "seed": int,
    "count": int,
}

TRAIN_KEYS = {
    "learning_rate": float,
    "steps": int,
    "batch": int,
    "seed": int,
    "loss": str,
    "init_seed": int,
    **{k: v for k, v in MODEL_KEYS.items() if k not in ("H", "W", "C")},
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}", EXIT_IO) from None


# -- gen-data -----------------------------------------------------------------

def scene_seeds(seed: int, count: int):
    """Per-scene (layout seed, speckle seed) pairs derived from one run seed."""
    rng = make_rng(seed, 0xDA7A)
    return rng.integers(0, 2**63, size=(count, 2), dtype=np.uint64).tolist()


def generate_pairs(params: dict, dtype=np.float32):
    count = params["count"]
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for scene_seed, noise_seed in scene_seeds(params["seed"], count):
        spec = SceneSpec(
            H=params["H"], W=params["W"], C=params["C"],
            n_targets=params["n_targets"], target_size=params["target_size"],
            target_amplitude=params["amplitude"], background_level=params["background"],
            looks=params["looks"], seed=scene_seed,
        )
        clean = gen_clean(spec, dtype)
        out.append((clean, apply_speckle(clean, spec.looks, noise_seed)))
    return out


def cmd_gen_data(args) -> int:
    params = parse_kv(_read_text(args.spec), SCENE_KEYS, str(args.spec), required=SCENE_KEYS)
    pairs = generate_pairs(params)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = "# transdeno gen-data " + " ".join(f"{k}={params[k]}" for k in SCENE_KEYS)
    lines = [header]
    for i, (clean, noisy) in enumerate(pairs):
        for role, arr in (("clean", clean), ("noisy", noisy)):
            name = f"{role}_{i:04d}.gst"
            fileio.write_tensor(out_dir / name, arr)
            lines.append(name)
    atomic_write(out_dir / MANIFEST, ("\n".join(lines) + "\n").encode())
    print(f"wrote {len(pairs)} pairs to {out_dir}")
    return EXIT_OK


def read_dataset(data_dir):
    """Load (noisy, clean) pairs listed in a gen-data manifest."""
    data_dir = Path(data_dir)
    names = [ln.strip() for ln in _read_text(data_dir / MANIFEST).splitlines()
             if ln.strip() and not ln.startswith("#")]
    clean = {n[len("clean_"):]: n for n in names if n.startswith("clean_")}
    noisy = {n[len("noisy_"):]: n for n in names if n.startswith("noisy_")}
    if set(clean) != set(noisy) or not clean:
        raise FormatError(f"{data_dir / MANIFEST} does not list matching clean/noisy pairs")
    pairs = []
    for key in sorted(clean):
        try:
            pairs.append((fileio.read_tensor(data_dir / noisy[key]), fileio.read_tensor(data_dir / clean[key])))
        except OSError as e:
            raise CliError(f"cannot read {e.filename}: {e.strerror}", EXIT_IO) from None
    return pairs


# -- train --------------------------------------------------------------------

def cmd_train(args) -> int:
    conf = parse_kv(_read_text(args.config), TRAIN_KEYS, str(args.config))
    pairs = read_dataset(args.data_dir)
    C, H, W = pairs[0][0].shape
    model_kw = {k: conf[k] for k in MODEL_KEYS if k in conf}
    cfg = TransDenoConfig(H=H, W=W, C=C, **model_kw)
    train_kw = {k: conf[k] for k in ("learning_rate", "steps", "batch", "seed", "loss") if k in conf}
    tcfg = TrainConfig(**train_kw)
    p0 = init_params(cfg, conf.get("init_seed", tcfg.seed))
    try:
        p, history = train_denoiser(tcfg, pairs, p0, log_every=max(1, tcfg.steps // 10))
    except DivergenceError as e:
        raise CliError(f"training diverged at step {e.step} (loss {e.loss})", EXIT_NUMERIC) from None
    csv = "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(history))
    fileio.save_checkpoint(args.out, p)
    atomic_write(args.loss_csv, csv.encode())
    print(f"loss {history[0]:.6g} -> {history[-1]:.6g} over {tcfg.steps} steps")
    return EXIT_OK


# -- denoise ------------------------------------------------------------------

def cmd_denoise(args) -> int:
    if args.report and not args.clean:
        raise CliError("--report needs a --clean reference", EXIT_USAGE)
    try:
        M = fileio.read_tensor(args.inp)
        p = fileio.load_checkpoint(args.params)
        clean = fileio.read_tensor(args.clean) if args.clean else None
    except OSError as e:
        raise CliError(f"cannot read {e.filename}: {e.strerror}", EXIT_IO) from None
    out = transdeno_forward(M, p)
    fileio.write_tensor(args.out, out.astype(M.dtype))
    if args.report:
        print(evaluate(out, M, clean, peak=args.peak).to_json())
    return EXIT_OK


# -- gradcheck ----------------------------------------------------------------

def gradcheck_instance(seed: int):
    cfg = TransDenoConfig(H=4, W=4, C=2, reduction=2, group_counts=(2, 4), dtype="float64")
    p = init_params(cfg, seed)
    rng = make_rng(seed, 0x6C4C)
    M = rng.normal(size=(2, 4, 4))
    target = rng.normal(size=(2, 4, 4))
    return p, M, mse_loss(target)


def cmd_gradcheck(args) -> int:
    p, M, loss = gradcheck_instance(args.seed)
    report = finite_diff_check(p, M, loss, eps=args.eps)
    print(report.format(top=args.top))
    ok = report.max_rel_err <= GRADCHECK_TOL
    print("PASS" if ok else "FAIL", f"(tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


# -- bench --------------------------------------------------------------------

def parse_size(text: str):
    try:
        dims = tuple(int(x) for x in text.lower().split("x"))
    except ValueError:
        dims = ()
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"size must look like CxHxW, got {text!r}")
    return dims


def bench_config(C: int, H: int, W: int) -> TransDenoConfig:
    hw = H * W
    reduction = 4 if hw % 4 == 0 else 1
    counts = tuple(n for n in (2, 4, 8, 16) if (hw // reduction) % n == 0) or (1,)
    return TransDenoConfig(H=H, W=W, C=C, reduction=reduction, group_counts=counts)


def run_bench(C: int, H: int, W: int, iters: int, seed: int = 0, forward=transdeno_forward):
    """Wall time in seconds of each of ``iters`` forward calls."""
    p = init_params(bench_config(C, H, W), seed)
    M = make_rng(seed, 0xBE7C).random((C, H, W)).astype(p.dtype)
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        forward(M, p)
        times.append(time.perf_counter() - t0)
    return times


def cmd_bench(args) -> int:
    if args.iters < 1:
        raise CliError("--iters must be >= 1", EXIT_USAGE)
    C, H, W = args.size
    times = np.array(run_bench(C, H, W, args.iters, args.seed))
    print(f"size={C}x{H}x{W} iters={args.iters} mean_ms={times.mean() * 1e3:.4f} "
          f"std_ms={times.std() * 1e3:.4f}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="transdeno", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate clean/noisy speckle scene pairs")
    g.add_argument("--spec", required=True)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_gen_data)

    d = sub.add_parser("denoise", help="apply a trained module to a tensor file")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--params", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--report", action="store_true", help="print an evaluation report as JSON")
    d.add_argument("--clean", help="clean reference for --report")
    d.add_argument("--peak", type=float, default=None, help="PSNR peak (default: max of clean)")
    d.set_defaults(func=cmd_denoise)

    t = sub.add_parser("train", help="train on a gen-data directory with SGD")
    t.add_argument("--data-dir", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--loss-csv", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    c.add_argument("--eps", type=float, default=1e-5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--top", type=int, default=10, help="entries to print")
    c.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", help="time the forward pass")
    b.add_argument("--size", type=parse_size, required=True, metavar="CxHxW")
    b.add_argument("--iters", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
