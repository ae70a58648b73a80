"""Command line entry point: ``freedomrec {prepare,train,eval,spectral,synth}``.

Run settings come from a flat ``key=value`` file (``--config``), overridden by
``--set key=value`` and the dedicated ``--seed``/``--ablation``/``--out`` flags.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from freedomrec.data import load_split, prepare_interactions, save_split, synthetic_block_dataset
from freedomrec.errors import FreedomError, ParameterError
from freedomrec.evaluation import evaluate, split_dataset
from freedomrec.interaction_graph import build_adjacency, full_normalized, read_interactions_tsv, write_pairs
from freedomrec.modality_graph import MODALITIES, FeatureMatrix, build_frozen_graph, read_fmat, write_fmat
from freedomrec.model import load_checkpoint, save_checkpoint
from freedomrec.spectral import spectral_report
from freedomrec.training import ABLATIONS, TrainConfig, apply_ablation, fit, heldout_metrics

log = logging.getLogger("freedomrec")

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_ALIASES = {"lambda": "lambda_modal"}
_PATH_KEYS = ("data_dir", "visual_features", "textual_features", "dataset")
METRICS_HEADER = ("epoch", "loss", "val_recall20", "val_ndcg20")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = TrainConfig()
    ablation: str = "freedom"
    data_dir: str | None = None
    visual_features: str | None = None
    textual_features: str | None = None
    dataset: str | None = None
    out: str | None = None
    extra: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        payload = json.dumps({"train": dataclasses.asdict(self.train), "ablation": self.ablation}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def feature_paths(self) -> dict[str, Path]:
        paths = {}
        for m in MODALITIES:
            explicit = getattr(self, f"{m}_features")
            if explicit:
                paths[m] = Path(explicit)
            elif self.data_dir and (Path(self.data_dir) / f"{m}.fmat").exists():
                paths[m] = Path(self.data_dir) / f"{m}.fmat"
        return paths

    def dump(self) -> str:
        lines = [f"ablation={self.ablation}"]
        lines += [f"{k}={v}" for k, v in dataclasses.asdict(self.train).items()]
        lines += [f"{k}={getattr(self, k)}" for k in _PATH_KEYS if getattr(self, k)]
        return "\n".join(lines) + "\n"


def parse_kv_lines(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {n}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(name: str, value: str):
    ftype = _TRAIN_FIELDS[name].type
    if ftype in ("bool", bool):
        low = value.lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise ParameterError(f"{name}: not a boolean: {value!r}")
        return low in ("1", "true", "yes")
    if ftype in ("int", int):
        return int(value)
    if ftype in ("float", float):
        return float(value)
    return value


def build_run_config(kv: dict[str, str], ablation: str | None = None) -> RunConfig:
    train_kw, other, extra = {}, {}, {}
    for key, value in kv.items():
        key = _ALIASES.get(key, key)
        if key in _TRAIN_FIELDS:
            try:
                train_kw[key] = _coerce(key, value)
            except ValueError as exc:
                raise ParameterError(f"bad value for {key}: {value!r}") from exc
        elif key in _PATH_KEYS or key in ("out", "ablation"):
            other[key] = value
        else:
            extra[key] = value
    tag = ablation or other.pop("ablation", "freedom")
    other.pop("ablation", None)
    cfg = apply_ablation(TrainConfig(**train_kw), tag)
    return RunConfig(train=cfg, ablation=tag, extra=extra, **other)


def _load_config(args) -> RunConfig:
    kv = parse_kv_lines(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    for item in args.set or []:
        kv.update(parse_kv_lines(item))
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    if args.out:
        kv["out"] = args.out
    return build_run_config(kv, args.ablation)


def _load_features(cfg: RunConfig) -> list[FeatureMatrix]:
    paths = cfg.feature_paths()
    if not paths:
        raise ParameterError("no feature files: set visual_features/textual_features or put *.fmat in data_dir")
    return [read_fmat(p, m) for m, p in sorted(paths.items())]


def _require_out(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise ParameterError("an output directory is required (--out)")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([r["epoch"], repr(float(r["loss"])), repr(float(r["val_recall20"])), repr(float(r["val_ndcg20"]))])


def _write_results(path, cfg: RunConfig, metrics: dict, best_epoch) -> dict:
    res = {
        "dataset": cfg.dataset or (Path(cfg.data_dir).name if cfg.data_dir else None),
        "config_hash": cfg.config_hash(),
        "R@10": metrics["R@10"],
        "R@20": metrics["R@20"],
        "N@10": metrics["N@10"],
        "N@20": metrics["N@20"],
        "best_epoch": best_epoch,
    }
    Path(path).write_text(json.dumps(res, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return res


def _finite(metrics: dict) -> bool:
    return all(isinstance(v, float) and math.isfinite(v) for v in metrics.values())


def cmd_prepare(args) -> int:
    users, items, _ = read_interactions_tsv(args.raw)
    prep = prepare_interactions(users, items, core=args.core)
    split = split_dataset(prep.matrix, rng=np.random.default_rng(args.seed))
    out = Path(args.out)
    save_split(out, split, prep.user_ids, prep.item_ids)
    for item in args.features or []:
        m, _, path = item.partition("=")
        fm = read_fmat(path, m)
        try:
            rows = prep.item_ids.astype(np.int64)
        except ValueError as exc:
            raise ParameterError("feature remapping needs integer raw item ids (feature row numbers)") from exc
        write_fmat(out / f"{m}.fmat", fm.features[rows])
    print(f"{split.M} users, {split.N} items, {split.n_interactions} interactions -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _require_out(cfg)
    if not cfg.data_dir:
        raise ParameterError("data_dir is required for training")
    split = load_split(cfg.data_dir)
    features = _load_features(cfg)
    result = fit(split, features, cfg.train, on_epoch=lambda r: log.info(
        "epoch %d loss %.5f val R@20 %.4f", r["epoch"], r["loss"], r["val_recall20"]))
    save_checkpoint(out / "checkpoint.frdm", result.state)
    write_metrics_csv(out / "metrics.csv", result.log)
    (out / "config.txt").write_text(cfg.dump(), encoding="utf-8")
    metrics = heldout_metrics(result, split)
    _write_results(out / "results.json", cfg, metrics, result.best_epoch)
    return 0 if _finite(metrics) else 1


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _require_out(cfg)
    split = load_split(cfg.data_dir)
    state = load_checkpoint(args.checkpoint)
    graph = build_frozen_graph(_load_features(cfg), cfg.train.k, cfg.train.alpha_v, cfg.train.weighted_graph)
    A_full = full_normalized(build_adjacency(split.train))
    metrics = evaluate(state, graph, A_full, split, args.split)
    _write_results(out / "results.json", cfg, metrics, None)
    return 0 if _finite(metrics) else 1


def cmd_spectral(args) -> int:
    cfg = _load_config(args)
    out = _require_out(cfg)
    k, alpha = cfg.train.k, cfg.train.alpha_v
    if args.random_trials:
        rows = []
        for seed in range(args.random_trials):
            rng = np.random.default_rng(seed)
            feats = [FeatureMatrix(m, rng.random((args.n_items, args.dim))) for m in MODALITIES]
            rep = spectral_report(feats, k, alpha)
            rows.append([seed, rep.frozen.lambda_max, rep.weighted.lambda_max,
                         rep.frozen.row_sum_max, rep.weighted.row_sum_max,
                         rep.frozen.max_elem, rep.weighted.max_elem,
                         int(rep.frozen.chain_holds()), int(rep.weighted.chain_holds()),
                         int(rep.max_elem_frozen <= rep.max_elem_weighted),
                         rep.laplacian_max_frozen, rep.laplacian_max_weighted])
        with open(out / "spectral_sweep.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "lambda_frozen", "lambda_weighted", "row_sum_frozen", "row_sum_weighted",
                        "max_elem_frozen", "max_elem_weighted", "chain_frozen", "chain_weighted", "max_elem_order",
                        "laplacian_frozen", "laplacian_weighted"])
            w.writerows(rows)
        ok = all(r[7] and r[8] and r[9] for r in rows)
        print(f"{len(rows)} trials, bound chain and max-element order hold in all: {ok}")
        return 0 if ok else 1
    rep = spectral_report(_load_features(cfg), k, alpha)
    (out / "spectral.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    (out / "spectral.csv").write_text(rep.to_csv(), encoding="utf-8")
    print(rep.to_csv(), end="")
    return 0 if math.isfinite(rep.lambda_max_frozen) and math.isfinite(rep.lambda_max_weighted) else 1


def cmd_synth(args) -> int:
    R, feats, _, _ = synthetic_block_dataset(args.users, args.items, args.blocks, args.p_in, args.noise, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    u, i = R.pairs()
    write_pairs(out / "interactions.tsv", u, i)
    for fm in feats:
        write_fmat(out / f"{fm.modality}.fmat", fm.features)
    print(f"wrote {R.nnz} interactions and {len(feats)} feature files to {out}")
    return 0


def _add_run_flags(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--ablation", choices=sorted(ABLATIONS))
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freedomrec", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="5-core filter, densify ids, split 80/10/10")
    p.add_argument("raw", help="raw interactions TSV (user, item[, timestamp])")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--core", type=int, default=5)
    p.add_argument("--features", action="append", metavar="MODALITY=PATH",
                   help="FMAT file indexed by raw integer item id; rows are remapped to dense ids")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="train and write checkpoint, metrics CSV and results JSON")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spectral", parents=[common], help="eigenvalue/bound report for frozen vs weighted item graphs")
    _add_run_flags(p)
    p.add_argument("--random-trials", type=int, default=0, help="sweep random non-negative features instead")
    p.add_argument("--n-items", type=int, default=100)
    p.add_argument("--dim", type=int, default=16)
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("synth", parents=[common], help="write the synthetic block dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=100)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--p-in", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.1)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (FreedomError, OSError) as exc:
        print(f"freedomrec: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
