"""Benchmark harness: assemble kernel operators, multiply, report CSV.

Subcommands:

* ``bench``     assemble both factors per level, time the multiplication
                (wall clock, assembly excluded), estimate the product
                error, append one CSV row per level
* ``verify``    dense-oracle checks at desk scale with a pass/fail table
* ``dump-tree`` print the block-tree listing for a given level

Configuration comes from an optional flat ``key=value`` file plus
command-line overrides.  CSV schema (stable):

    N, mode, compressor, policy, wall_s, wall_s_per_dof, est_error,
    max_far_rank, matvec_count, degraded_blocks, threads

``est_error`` is the subspace-iteration Frobenius estimate divided by
the Frobenius norm of the computed product.  Timing columns are the only
fields that are not deterministic under a fixed seed.
"""

import argparse
import csv
import io
import sys
import time
from dataclasses import dataclass, replace

import numpy as np

from . import clustering, geometry, hmatrix, multiply
from .compressors import CompressorKind
from .lowrank import EpsRank, FixedRank

KERNEL_PAIRS = {
    "exponential": (geometry.EXPONENTIAL, geometry.SCALED_EXPONENTIAL),
    "single-layer": (geometry.SINGLE_LAYER, geometry.SINGLE_LAYER),
}

CSV_COLUMNS = ("N", "mode", "compressor", "policy", "wall_s",
               "wall_s_per_dof", "est_error", "max_far_rank",
               "matvec_count", "degraded_blocks", "threads")

VERIFY_MAX_N = 1536


@dataclass(frozen=True)
class BenchConfig:
    kernel: str = "exponential"
    level_min: int = 0
    level_max: int = 2
    n_min: int = clustering.DEFAULT_NMIN
    eta: float = clustering.DEFAULT_ETA
    rank: int = 0            # > 0 selects fixed-rank truncation
    eps: float = 1e-10
    mode: str = "new"
    compressor: str = "aca"
    converter: str = "hier-approx"
    seed: int = 0
    threads: int = 1
    out: str = ""

    def policy(self):
        return FixedRank(self.rank) if self.rank > 0 else EpsRank(self.eps)

    def policy_label(self):
        return f"rank{self.rank}" if self.rank > 0 else f"eps{self.eps:g}"

    def multiply_config(self):
        return multiply.MultiplyConfig(
            mode=self.mode,
            compressor=CompressorKind(self.compressor, seed=self.seed),
            policy=self.policy(),
            converter=self.converter)


class ConfigError(ValueError):
    pass


_FIELD_PARSERS = {
    "kernel": str, "level_min": int, "level_max": int, "n_min": int,
    "eta": float, "rank": int, "eps": float, "mode": str,
    "compressor": str, "converter": str, "seed": int, "threads": int,
    "out": str,
}


def parse_config_file(path):
    """Flat key=value file; '#' starts a comment."""
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, "
                                  f"got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _FIELD_PARSERS:
                raise ConfigError(f"{path}:{lineno}: unknown field {key!r}")
            try:
                values[key] = _FIELD_PARSERS[key](value)
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: bad value {value!r} for {key!r}")
    return values


def _validate(cfg):
    if cfg.kernel not in KERNEL_PAIRS:
        raise ConfigError(f"unknown kernel pair {cfg.kernel!r} "
                          f"(choose from {sorted(KERNEL_PAIRS)})")
    if not 0 <= cfg.level_min <= cfg.level_max <= geometry.MAX_LEVEL:
        raise ConfigError("levels must satisfy "
                          f"0 <= min <= max <= {geometry.MAX_LEVEL}")
    if cfg.mode not in ("new", "traditional"):
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    if cfg.compressor not in CompressorKind.TAGS:
        raise ConfigError(f"unknown compressor {cfg.compressor!r}")
    if cfg.converter not in multiply.CONVERTERS:
        raise ConfigError(f"unknown converter {cfg.converter!r}")
    return cfg


def _setup_level(cfg, level):
    panels = geometry.build_sphere_mesh(level)
    tree = clustering.build_cluster_tree(panels, cfg.n_min)
    bct = clustering.build_block_cluster_tree(tree, cfg.eta)
    return panels, bct


def _assemble_pair(cfg, panels, bct):
    k1, k2 = KERNEL_PAIRS[cfg.kernel]
    h = hmatrix.assemble_hmatrix(k1, bct, cfg.policy(), panels)
    k = hmatrix.assemble_hmatrix(k2, bct, cfg.policy(), panels)
    return h, k


def run_benchmark(cfg, stream=None):
    """One CSV row per level; returns the rows as dictionaries."""
    _validate(cfg)
    writer = None
    if stream is not None:
        writer = csv.DictWriter(stream, fieldnames=CSV_COLUMNS)
        writer.writeheader()
    rows = []
    for level in range(cfg.level_min, cfg.level_max + 1):
        panels, bct = _setup_level(cfg, level)
        h, k = _assemble_pair(cfg, panels, bct)
        mcfg = cfg.multiply_config()
        start = time.perf_counter()
        if cfg.mode == "new":
            product = multiply.hmult_new(h, k, mcfg)
        else:
            product = multiply.hmult_traditional(h, k, mcfg)
        wall = time.perf_counter() - start
        est = multiply.estimate_product_error(
            h, k, product, seed=cfg.seed)
        norm = hmatrix.frobenius_norm(product)
        report = product.report
        row = {
            "N": len(panels),
            "mode": cfg.mode,
            "compressor": cfg.compressor,
            "policy": cfg.policy_label(),
            "wall_s": f"{wall:.6f}",
            "wall_s_per_dof": f"{wall / len(panels):.3e}",
            "est_error": f"{est / norm if norm else 0.0:.6e}",
            "max_far_rank": report.max_far_rank,
            "matvec_count": report.matvec_count,
            "degraded_blocks": report.degraded_blocks,
            "threads": cfg.threads,
        }
        rows.append(row)
        if writer is not None:
            writer.writerow(row)
            stream.flush()
    return rows


def run_verify(cfg, corrupt=False, stream=sys.stdout):
    """Dense-oracle checks; returns True when every check passes.

    ``corrupt`` is a test hook that perturbs one farfield block of the
    first factor after assembly, to prove the checks can fail.
    """
    _validate(cfg)
    level = cfg.level_max
    panels = geometry.build_sphere_mesh(level)
    if len(panels) > VERIFY_MAX_N:
        raise ConfigError(f"verify is capped at N={VERIFY_MAX_N}")
    _, bct = _setup_level(cfg, level)
    h, k = _assemble_pair(cfg, panels, bct)

    if corrupt:
        for leaf in bct.far_leaves():
            payload = h.data[leaf.id]
            if getattr(payload, "rank", 0) > 0:
                h.data[leaf.id] = type(payload)(payload.left * 1.01,
                                                payload.right)
                break

    perm = bct.tree.permutation
    k1, k2 = KERNEL_PAIRS[cfg.kernel]
    d1 = geometry.assemble_dense(k1, panels)[np.ix_(perm, perm)]
    d2 = geometry.assemble_dense(k2, panels)[np.ix_(perm, perm)]
    exact = d1 @ d2
    exact_norm = np.linalg.norm(exact)

    mcfg = cfg.multiply_config()
    if cfg.mode == "new":
        product = multiply.hmult_new(h, k, mcfg)
    else:
        product = multiply.hmult_traditional(h, k, mcfg)
    dense_product = hmatrix.to_dense(product)

    checks = []

    err = np.linalg.norm(dense_product - exact) / exact_norm
    if cfg.rank > 0:
        # fixed-rank mode has no eps contract; compare against the best
        # blockwise rank-k truncation of the exact product instead
        tol = max(10 * _best_blockwise_error(exact, bct, cfg.rank)
                  / exact_norm, 1e-12)
    else:
        tol = cfg.eps
    checks.append(("product-error", err, tol, err <= tol))

    gap = _leaf_optimality_gap(product, exact, bct, cfg)
    checks.append(("leaf-optimality", gap, 1e-10, gap <= 1e-10))

    x = np.random.default_rng(cfg.seed).standard_normal(len(panels))
    mv = hmatrix.hmat_vec(product, x)
    mv_err = (np.abs(mv - dense_product @ x).max()
              / (hmatrix.frobenius_norm(product) * np.abs(x).max()))
    checks.append(("matvec-consistency", mv_err, 1e-12, mv_err <= 1e-12))

    all_pass = all(ok for _, _, _, ok in checks)
    print(f"verify kernel={cfg.kernel} N={len(panels)} mode={cfg.mode} "
          f"compressor={cfg.compressor} policy={cfg.policy_label()}",
          file=stream)
    for name, value, tol, ok in checks:
        status = "PASS" if ok else "FAIL"
        print(f"  {status} {name}: {value:.3e} (tolerance {tol:.3e})",
              file=stream)
    print("verify: " + ("PASS" if all_pass else "FAIL"), file=stream)
    return all_pass


def _best_blockwise_error(exact, bct, rank):
    total = 0.0
    for leaf in bct.far_leaves():
        sub = exact[leaf.tau.lo:leaf.tau.hi, leaf.sigma.lo:leaf.sigma.hi]
        s = np.linalg.svd(sub, compute_uv=False)
        total += float(np.sum(s[rank:] ** 2))
    return float(np.sqrt(total))


def _leaf_optimality_gap(product, exact, bct, cfg):
    """Worst farfield excess over the best same-rank block error."""
    worst = 0.0
    factor = 1.0 if cfg.compressor == "dense-svd" else 2.0
    for leaf in bct.far_leaves():
        sub = exact[leaf.tau.lo:leaf.tau.hi, leaf.sigma.lo:leaf.sigma.hi]
        block = product.data[leaf.id]
        dense = block.to_dense() if hasattr(block, "to_dense") else block
        err = np.linalg.norm(dense - sub)
        s = np.linalg.svd(sub, compute_uv=False)
        r = getattr(block, "rank", min(sub.shape))
        best = float(np.sqrt(np.sum(s[r:] ** 2)))
        worst = max(worst, err - factor * best)
    return worst


def dump_tree_text(cfg, level):
    _, bct = _setup_level(cfg, level)
    return clustering.dump_tree(bct)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="hmat-bench",
        description="benchmark and verify compressed kernel-matrix products")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--kernel", choices=sorted(KERNEL_PAIRS))
        p.add_argument("--level-min", type=int, dest="level_min")
        p.add_argument("--level-max", type=int, dest="level_max")
        p.add_argument("--nmin", type=int, dest="n_min")
        p.add_argument("--eta", type=float)
        p.add_argument("--rank", type=int,
                       help="fixed truncation rank (0 selects eps mode)")
        p.add_argument("--eps", type=float,
                       help="relative truncation tolerance")
        p.add_argument("--mode", choices=("new", "traditional"))
        p.add_argument("--compressor", choices=CompressorKind.TAGS)
        p.add_argument("--converter", choices=multiply.CONVERTERS)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out", help="CSV output path (default stdout)")

    add_common(sub.add_parser("bench", help="run the benchmark sweep"))
    add_common(sub.add_parser("verify", help="dense-oracle checks"))
    dump = sub.add_parser("dump-tree", help="print the block-tree listing")
    add_common(dump)
    dump.add_argument("--level", type=int, default=None,
                      help="mesh level to dump (default level-max)")
    return parser


def config_from_args(args):
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for key in _FIELD_PARSERS:
        arg = getattr(args, key, None)
        if arg is not None:
            values[key] = arg
    return _validate(replace(BenchConfig(), **values))


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    if args.command == "bench":
        if cfg.out:
            with open(cfg.out, "w", newline="") as f:
                run_benchmark(cfg, stream=f)
        else:
            run_benchmark(cfg, stream=sys.stdout)
        return 0
    if args.command == "verify":
        return 0 if run_verify(cfg) else 1
    if args.command == "dump-tree":
        level = args.level if args.level is not None else cfg.level_max
        sys.stdout.write(dump_tree_text(cfg, level))
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
