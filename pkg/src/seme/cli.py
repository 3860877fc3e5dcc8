"""``seme`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .alignment import (
    AlignedPair,
    AlignmentMap,
    DistributionMatrix,
    EditCosts,
    MAPPING_MODES,
    FUSION_STRATEGIES,
    UNMAPPED_POLICIES,
    TokenSequence,
    VocabMappingTable,
    align_sequences,
    build_vocab_mapping,
    cross_entropy,
    fuse_distributions,
    map_distribution,
)
from .archive import (
    ArchiveError,
    BundleError,
    TensorArchive,
    Tensor,
    find_head,
    fingerprint_bytes,
    load_model_bundle,
    read_archive,
    write_archive,
    write_atomic,
)
from .basis import PseudoinverseConfig, bases_from_head, semantic_bases
from .decomposition import DISTRIBUTIONS, run_validation
from .merge import ERASE_POLICIES, NORMALIZATIONS, TIE_POLICIES, MergeRecipe, check_tau, merge
from .transform import CALIBRATIONS, WEIGHTINGS, TransformPlan, transform_batch

logger = logging.getLogger("seme")

DEFAULTS: dict[str, dict[str, Any]] = {
    "inspect": {"archive": None, "report": None},
    "bases": {"bundle": None, "out": None, "rcond": 1e-6, "report": None},
    "validate": {
        "bundle": None, "trials": 1000, "seed": 0, "out_json": None, "out_csv": None,
        "distribution": "gaussian", "rep_distribution": "gaussian",
        "activations": None, "activations_tensor": "reps", "rcond": 1e-6,
    },
    "transform": {
        "source_head": None, "target_head": None, "reps": None, "reps_tensor": "reps",
        "calibration": "norm_match", "temperature": 1.0, "weighting": "least_squares",
        "rcond": 1e-6, "out": None, "report": None,
    },
    "merge": {
        "pivot": None, "model": [], "tau": 20.0, "erase": "majority_sign",
        "normalization": "sum_to_one", "tie_policy": "drop_all", "out": None, "report": None,
    },
    "align": {
        "src": None, "pivot": None, "out": None, "mode": None, "table_out": None,
        "src_vocab": None, "pivot_vocab": None, "pivot_vocab_size": None, "fuzzy_max_dist": 1,
        "sub_cost": 1.0, "split_cost": 1.0, "merge_cost": 1.0, "max_span": 0,
    },
    "fuse": {
        "a": None, "b": None, "reference": None, "strategy": "min_cross_entropy",
        "table": None, "unmapped": "redistribute", "unknown_id": None,
        "out": None, "report": None,
    },
}

REQUIRED = {
    "inspect": ["archive"],
    "bases": ["bundle", "out"],
    "validate": ["bundle", "out_json"],
    "transform": ["source_head", "target_head", "reps", "out"],
    "merge": ["pivot", "model", "out"],
    "align": ["src", "pivot", "out"],
    "fuse": ["a", "b", "reference", "out"],
}

INPUT_KEYS = {
    "inspect": ["archive"],
    "bases": ["bundle"],
    "validate": ["bundle", "activations"],
    "transform": ["source_head", "target_head", "reps"],
    "merge": ["pivot", "model"],
    "align": ["src", "pivot", "src_vocab", "pivot_vocab"],
    "fuse": ["a", "b", "reference", "table"],
}

RANDOMIZED = {"validate"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seme", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"seme {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON config with a matching \"command\" field")
        sp.add_argument("--threads", type=int, default=None, help="thread cap (default $SEME_THREADS or 1)")
        sp.add_argument("--strict-seed", action="store_true", help="require --seed for randomized commands")
        sp.add_argument("--seed", type=int, default=None)
        return sp

    sp = common(sub.add_parser("inspect", help="list tensors and metadata"))
    sp.add_argument("archive", nargs="?")
    sp.add_argument("--report")

    sp = common(sub.add_parser("bases", help="write semantic bases of a model"))
    sp.add_argument("--bundle")
    sp.add_argument("--out")
    sp.add_argument("--rcond", type=float)
    sp.add_argument("--report")

    sp = common(sub.add_parser("validate", help="decomposition parallelism report"))
    sp.add_argument("--bundle")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--out-json")
    sp.add_argument("--out-csv")
    sp.add_argument("--distribution", choices=DISTRIBUTIONS, help="random-basis control distribution")
    sp.add_argument("--rep-distribution", choices=DISTRIBUTIONS)
    sp.add_argument("--activations", help="archive of representations to sample from")
    sp.add_argument("--activations-tensor")
    sp.add_argument("--rcond", type=float)

    sp = common(sub.add_parser("transform", help="semantics-preserving transformation"))
    sp.add_argument("--source-head")
    sp.add_argument("--target-head")
    sp.add_argument("--reps")
    sp.add_argument("--reps-tensor")
    sp.add_argument("--calibration", choices=CALIBRATIONS)
    sp.add_argument("--weighting", choices=WEIGHTINGS)
    sp.add_argument("--temperature", type=float)
    sp.add_argument("--rcond", type=float)
    sp.add_argument("--out")
    sp.add_argument("--report")

    sp = common(sub.add_parser("merge", help="merge models against a pivot"))
    sp.add_argument("--pivot")
    sp.add_argument("--model", action="append")
    sp.add_argument("--tau", type=float)
    sp.add_argument("--erase", choices=ERASE_POLICIES)
    sp.add_argument("--normalization", choices=NORMALIZATIONS)
    sp.add_argument("--tie-policy", choices=TIE_POLICIES)
    sp.add_argument("--out")
    sp.add_argument("--report")

    sp = common(sub.add_parser("align", help="align token sequences, optionally build a mapping table"))
    sp.add_argument("--src")
    sp.add_argument("--pivot")
    sp.add_argument("--out")
    sp.add_argument("--mode", choices=MAPPING_MODES)
    sp.add_argument("--table-out")
    sp.add_argument("--src-vocab")
    sp.add_argument("--pivot-vocab")
    sp.add_argument("--pivot-vocab-size", type=int)
    sp.add_argument("--fuzzy-max-dist", type=int)
    sp.add_argument("--sub-cost", type=float)
    sp.add_argument("--split-cost", type=float)
    sp.add_argument("--merge-cost", type=float)
    sp.add_argument("--max-span", type=int)

    sp = common(sub.add_parser("fuse", help="fuse two distribution matrices"))
    sp.add_argument("--a")
    sp.add_argument("--b")
    sp.add_argument("--reference")
    sp.add_argument("--strategy", choices=FUSION_STRATEGIES)
    sp.add_argument("--table", help="mapping table applied to --a before fusion")
    sp.add_argument("--unmapped", choices=UNMAPPED_POLICIES)
    sp.add_argument("--unknown-id", type=int)
    sp.add_argument("--out")
    sp.add_argument("--report")
    return p


def resolve_config(args: argparse.Namespace) -> dict[str, Any]:
    """flag > config file > default."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    cfg["seed"] = None
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict) or file_cfg.get("command") != cmd:
            raise UsageError(f"config file is not for command {cmd!r}")
        unknown = set(file_cfg) - set(cfg) - {"command"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update({k: v for k, v in file_cfg.items() if k != "command"})
    for key in list(cfg):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    missing = [k for k in REQUIRED[cmd] if cfg.get(k) in (None, [], "")]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    if cmd in RANDOMIZED:
        if cfg["seed"] is None:
            if args.strict_seed:
                raise UsageError("--strict-seed requires an explicit --seed")
            cfg["seed"] = DEFAULTS[cmd]["seed"]
    return cfg


def _inputs(cmd: str, cfg: dict) -> dict[str, Any]:
    fps: dict[str, Any] = {}
    for key in INPUT_KEYS[cmd]:
        val = cfg.get(key)
        if val in (None, [], ""):
            continue
        paths = val if isinstance(val, list) else [val]
        out = []
        for p in paths:
            if not os.path.isfile(p):
                raise DataError(f"input file not found: {p}")
            with open(p, "rb") as fh:
                out.append({"file": os.path.basename(p), "fingerprint": fingerprint_bytes(fh.read())})
        fps[key] = out if isinstance(val, list) else out[0]
    return fps


def _envelope(cmd: str, cfg: dict, inputs: dict, **payload) -> dict:
    return {"tool": "seme", "version": __version__, "command": cmd, "seed": cfg.get("seed"),
            "config": cfg, "inputs": inputs, **payload}


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _write_json(path: str | None, obj: Any) -> None:
    if path:
        write_atomic(path, _dump(obj).encode("utf-8"))


def _bundle(path: str):
    bundle = load_model_bundle(read_archive(path))
    if not bundle.model_id:
        meta = dict(bundle.metadata)
        meta["model_id"] = Path(path).stem
        bundle = type(bundle)(bundle.layers, bundle.lm_head, bundle.extras, meta)
    return bundle


def _read_sequences(path: str) -> list[TokenSequence]:
    """JSONL lines ``{"ids": [...], "surfaces": [...]}``, or an archive whose
    ``ids`` tensor holds one sequence per row."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw.lstrip()[:1] == b"{":
        seqs = []
        for line in raw.decode("utf-8").splitlines():
            if line.strip():
                d = json.loads(line)
                seqs.append(TokenSequence(tuple(d["ids"]), d.get("surfaces")))
        return seqs
    arr = read_archive(path)["ids"].array
    rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
    if not np.array_equal(rows, np.round(rows)):
        raise DataError("ids tensor must hold integers")
    return [TokenSequence(tuple(int(x) for x in r)) for r in rows]


def _read_distribution(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw.lstrip()[:1] in (b"[", b"{"):
        rows = []
        for line in raw.decode("utf-8").splitlines():
            if line.strip():
                d = json.loads(line)
                rows.append(d["dist"] if isinstance(d, dict) else d)
        return np.array(rows, dtype=np.float64)
    return read_archive(path)["dist"].array.astype(np.float64)


def _read_vocab(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        vocab = json.load(fh)
    if not isinstance(vocab, list) or not all(isinstance(s, str) for s in vocab):
        raise DataError(f"{path}: vocabulary must be a JSON list of strings")
    return vocab


# --------------------------------------------------------------------------
# Commands


def cmd_inspect(cfg, inputs):
    archive = read_archive(cfg["archive"])
    summary = {
        "file": os.path.basename(cfg["archive"]),
        "fingerprint": inputs["archive"]["fingerprint"],
        "tensor_count": len(archive),
        "tensors": [{"name": t.name, "dtype": "F32", "shape": list(t.shape)} for t in archive.tensors],
        "metadata": dict(archive.metadata),
    }
    sys.stdout.write(_dump(summary))
    _write_json(cfg["report"], _envelope("inspect", cfg, inputs, summary=summary))


def cmd_bases(cfg, inputs):
    if not 0 < cfg["rcond"] < 1:
        raise UsageError("rcond must lie in (0, 1)")
    bundle = _bundle(cfg["bundle"])
    bases = semantic_bases(bundle, PseudoinverseConfig(rcond=cfg["rcond"]))
    write_archive(bases.to_archive(), cfg["out"])
    _write_json(cfg["report"], _envelope(
        "bases", cfg, inputs,
        vocab_size=bases.vocab_size, latent_dim=bases.latent_dim,
        zero_norm_rows=[int(i) for i in bases.zero_rows],
        source_fingerprint=bases.source_head_fingerprint,
    ))


def cmd_validate(cfg, inputs, threads):
    if not isinstance(cfg["trials"], int) or cfg["trials"] < 1:
        raise UsageError("--trials must be >= 1")
    for key in ("distribution", "rep_distribution"):
        if cfg[key] not in DISTRIBUTIONS:
            raise UsageError(f"{key} must be one of {DISTRIBUTIONS}")
    bundle = _bundle(cfg["bundle"])
    acts = None
    if cfg["activations"]:
        acts = read_archive(cfg["activations"])[cfg["activations_tensor"]].array
    report = run_validation(
        bundle, cfg["trials"], cfg["seed"],
        random_basis_distribution=cfg["distribution"],
        representation_distribution=cfg["rep_distribution"],
        activations=acts, cfg=PseudoinverseConfig(rcond=cfg["rcond"]), threads=threads,
    )
    _write_json(cfg["out_json"], _envelope("validate", cfg, inputs, report=report.to_dict()))
    if cfg["out_csv"]:
        write_atomic(cfg["out_csv"], report.to_csv().encode("utf-8"))


def cmd_transform(cfg, inputs):
    if not cfg["temperature"] > 0:
        raise UsageError("temperature must be positive")
    if cfg["calibration"] not in CALIBRATIONS or cfg["weighting"] not in WEIGHTINGS:
        raise UsageError("unknown calibration or weighting")
    pcfg = PseudoinverseConfig(rcond=cfg["rcond"])
    src = bases_from_head(find_head(read_archive(cfg["source_head"])), pcfg)
    tgt = bases_from_head(find_head(read_archive(cfg["target_head"])), pcfg)
    plan = TransformPlan(src, tgt, cfg["temperature"], cfg["calibration"], cfg["weighting"])
    reps = read_archive(cfg["reps"])[cfg["reps_tensor"]].array
    if reps.ndim == 1:
        reps = reps.reshape(1, -1)
    out, rows = transform_batch(reps, plan)
    write_archive(TensorArchive((Tensor("reps", out),), {"source_fingerprint": src.source_head_fingerprint,
                                                          "target_fingerprint": tgt.source_head_fingerprint}),
                  cfg["out"])
    kls = [r["kl"] for r in rows]
    agree = [r["argmax_source"] == r["argmax_target"] for r in rows]
    _write_json(cfg["report"], _envelope(
        "transform", cfg, inputs,
        rows=rows, max_kl=max(kls), mean_kl=float(np.mean(kls)),
        argmax_agreement=float(np.mean(agree)),
    ))


def cmd_merge(cfg, inputs):
    try:
        check_tau(cfg["tau"])
        recipe = MergeRecipe(cfg["tau"], cfg["normalization"], cfg["erase"], cfg["tie_policy"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    pivot = _bundle(cfg["pivot"])
    models = [_bundle(p) for p in cfg["model"]]
    result = merge(models, pivot, recipe)
    write_archive(result.model.to_archive(), cfg["out"])
    _write_json(cfg["report"], _envelope("merge", cfg, inputs, merge=result.report))


def cmd_align(cfg, inputs):
    costs = EditCosts(cfg["sub_cost"], cfg["split_cost"], cfg["merge_cost"], cfg["max_span"])
    srcs = _read_sequences(cfg["src"])
    pivots = _read_sequences(cfg["pivot"])
    if len(srcs) != len(pivots):
        raise DataError(f"{len(srcs)} source sequences but {len(pivots)} pivot sequences")
    maps = [align_sequences(s, p, costs) for s, p in zip(srcs, pivots)]
    payload = {"alignments": [m.to_dict() for m in maps], "total_cost": sum(m.cost for m in maps)}
    if cfg["mode"]:
        src_vocab = _read_vocab(cfg["src_vocab"]) if cfg["src_vocab"] else None
        pivot_vocab = _read_vocab(cfg["pivot_vocab"]) if cfg["pivot_vocab"] else None
        if cfg["mode"] in ("exact", "fuzzy") and (src_vocab is None or pivot_vocab is None):
            raise UsageError(f"--mode {cfg['mode']} needs --src-vocab and --pivot-vocab")
        corpus = [AlignedPair(s, p, m) for s, p, m in zip(srcs, pivots, maps)]
        table = build_vocab_mapping(cfg["mode"], src_vocab, pivot_vocab, corpus,
                                    cfg["fuzzy_max_dist"], cfg["pivot_vocab_size"])
        payload["table"] = {"mode": table.mode, "mapped_tokens": len(table.entries)}
        if cfg["table_out"]:
            write_atomic(cfg["table_out"], table.to_json().encode("utf-8"))
    _write_json(cfg["out"], _envelope("align", cfg, inputs, **payload))


def cmd_fuse(cfg, inputs):
    a = _read_distribution(cfg["a"])
    b = _read_distribution(cfg["b"])
    if cfg["table"]:
        with open(cfg["table"], encoding="utf-8") as fh:
            table = VocabMappingTable.from_dict(json.load(fh))
        a = np.stack([map_distribution(r, table, cfg["unmapped"], cfg["unknown_id"]) for r in a])
    ref = _read_sequences(cfg["reference"])[0]
    A, B = DistributionMatrix(a), DistributionMatrix(b)
    fused = fuse_distributions(A, B, ref, cfg["strategy"])
    write_archive(TensorArchive((Tensor("dist", fused.rows),), {"strategy": cfg["strategy"]}), cfg["out"])
    ce = cross_entropy(fused.rows, ref.ids)
    _write_json(cfg["report"], _envelope(
        "fuse", cfg, inputs,
        positions=len(fused),
        selection=list(fused.sources) if fused.sources else None,
        cross_entropy=[float(x) if np.isfinite(x) else None for x in ce],
    ))


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    threads = args.threads or int(os.environ.get("SEME_THREADS", "1") or 1)
    try:
        if threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = resolve_config(args)
        inputs = _inputs(args.command, cfg)
        with threadpool_limits(limits=threads):
            if args.command == "validate":
                cmd_validate(cfg, inputs, threads)
            else:
                globals()[f"cmd_{args.command}"](cfg, inputs)
    except UsageError as exc:
        print(f"seme {args.command}: usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ArchiveError, BundleError, ValueError, KeyError, OSError) as exc:
        print(f"seme {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
