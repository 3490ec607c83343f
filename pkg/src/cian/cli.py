"""``cian`` command line: gen-data, train, eval, explain, export-embeddings.

Exit codes: 0 ok, 2 usage/config/bad input, 3 I/O failure, 4 numerical failure.
Every command writes the fully resolved config as ``config.json`` in its
output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from cian import checkpoint
from cian.data import (
    GeneratorConfig,
    build_pairs,
    generate_dataset,
    read_jsonl,
    read_pairs,
    save_json,
    split_records,
    write_jsonl,
    write_pairs,
)
from cian.errors import (
    CianError,
    ConfigError,
    DataFormatError,
    DegenerateInputError,
    DimensionError,
    NumericalError,
    ParameterError,
)
from cian.explainer import aggregate_category_attention, explain_merchant, l1_budget_is_slack
from cian.learning import TrainConfig, evaluate, pair_scores_and_labels, select_threshold, train
from cian.model import ModelConfig, export_embeddings, init_params

log = logging.getLogger("cian")

SPLITS = ("train", "val", "test")
CHECKPOINT_NAME = "model.ckpt"


@dataclass(frozen=True)
class SplitConfig:
    fractions: tuple = (0.8, 0.1, 0.1)
    negatives_per_positive: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(x) for x in self.fractions))
        if self.negatives_per_positive < 1:
            raise ConfigError("negatives_per_positive must be >= 1")


@dataclass(frozen=True)
class ExplainConfig:
    block: str = "cross"
    budget: float = 10.0
    top_k: int = 10
    rho: float = 1.0
    tol: float = 1e-8
    max_iter: int = 5000
    init: str = "lsq"
    features: list | None = None

    def __post_init__(self):
        if self.block not in ("cross", "intra"):
            raise ConfigError(f"explain.block must be 'cross' or 'intra', got {self.block!r}")
        if self.init not in ("lsq", "t"):
            raise ConfigError(f"explain.init must be 'lsq' or 't', got {self.init!r}")
        if self.budget < 1 or self.top_k < 1:
            raise ConfigError("explain.budget and explain.top_k must be >= 1")


_SECTIONS = {
    "generator": GeneratorConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "split": SplitConfig,
    "explain": ExplainConfig,
}


def _section(cls, doc, name):
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = set(doc) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad value in config section {name!r}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        parts = {name: _section(cls_, doc.get(name, {}), name) for name, cls_ in _SECTIONS.items()}
        # model input dims follow the generator unless set explicitly
        model_doc = doc.get("model", {})
        dims = {k: getattr(parts["generator"], k) for k in ("t_dim", "d_dim") if k not in model_doc}
        if dims:
            parts["model"] = replace(parts["model"], **dims)
        return cls(**parts)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def with_overrides(self, seed=None, variant=None, package_op=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(
                cfg,
                generator=replace(cfg.generator, seed=seed),
                model=replace(cfg.model, seed=seed),
                train=replace(cfg.train, seed=seed),
                split=replace(cfg.split, seed=seed),
            )
        if variant is not None:
            cfg = replace(cfg, model=replace(cfg.model, variant=variant))
        if package_op is not None:
            cfg = replace(cfg, model=replace(cfg.model, package_op=package_op))
        return cfg


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return RunConfig.from_dict(doc)


def _resolve(args) -> RunConfig:
    cfg = load_run_config(args.config)
    return cfg.with_overrides(getattr(args, "seed", None), getattr(args, "variant", None), getattr(args, "package_op", None))


def _write_config(cfg: RunConfig, out: Path, model: ModelConfig | None = None):
    doc = cfg.to_dict()
    if model is not None:
        doc["model"] = model.to_dict()
    save_json(doc, out / "config.json")


def _load_split(data: Path, name: str):
    path = data / f"{name}.jsonl"
    records = read_jsonl(path)
    pairs_path = data / f"{name}_pairs.jsonl"
    pairs = read_pairs(pairs_path, records) if pairs_path.exists() else None
    return records, pairs


def _load_checkpoint(args, cfg: RunConfig):
    params, model = checkpoint.load(args.checkpoint)
    if args.config is not None:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if "model" in doc and cfg.model != model:
            raise ConfigError(f"checkpoint model config {model.to_dict()} differs from --config {cfg.model.to_dict()}")
    return params, model


def _check_dims(records, model: ModelConfig, what):
    if records and (records[0].t.size, records[0].d.size) != (model.t_dim, model.d_dim):
        raise DimensionError(
            f"{what} has dims (t={records[0].t.size}, d={records[0].d.size}) but the model expects "
            f"(t={model.t_dim}, d={model.d_dim})"
        )


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, gt = generate_dataset(cfg.generator)
    parts = split_records(records, cfg.split.fractions, cfg.split.seed)
    for i, (name, part) in enumerate(zip(SPLITS, parts)):
        write_jsonl(part, out / f"{name}.jsonl")
        if len({r.category for r in part}) >= 2:
            pairs = build_pairs(part, cfg.split.negatives_per_positive, cfg.split.seed + i)
            write_pairs(pairs, out / f"{name}_pairs.jsonl")
    save_json(gt.to_json(), out / "ground_truth.json")
    _write_config(cfg, out)
    log.info("wrote %s", ", ".join(f"{n}={len(p)}" for n, p in zip(SPLITS, parts)))
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    data, out = Path(args.data), Path(args.out)
    train_recs, train_pairs = _load_split(data, "train")
    val_recs, val_pairs = _load_split(data, "val")
    _check_dims(train_recs, cfg.model, "training data")
    if train_pairs is None:
        raise ConfigError(f"no train_pairs.jsonl in {data}")
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "trace.jsonl"
    with open(trace_path, "w", encoding="utf-8") as fh:

        def on_epoch(rec):
            fh.write(json.dumps(rec) + "\n")

        params, _ = train(cfg.model, train_pairs, val_pairs or [], cfg.train, init_params(cfg.model), on_epoch)
    checkpoint.save(out / CHECKPOINT_NAME, params, cfg.model)
    _write_config(cfg, out)
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    params, model = _load_checkpoint(args, cfg)
    data, out = Path(args.data), Path(args.out)
    _, val_pairs = _load_split(data, "val")
    test_recs, test_pairs = _load_split(data, "test")
    _check_dims(test_recs, model, "test data")
    if not val_pairs or not test_pairs:
        raise ConfigError(f"eval needs val_pairs.jsonl and test_pairs.jsonl in {data}")
    scores, labels = pair_scores_and_labels(val_pairs, params, model)
    threshold = select_threshold(scores, labels)
    metrics = evaluate(test_pairs, params, model, threshold)
    val_metrics = evaluate(val_pairs, params, model, threshold)
    doc = metrics.to_dict()
    doc["val_f1"] = val_metrics.f1
    out.mkdir(parents=True, exist_ok=True)
    save_json(doc, out / "metrics.json")
    _write_config(cfg, out, model)
    return 0


def _all_records(data: Path):
    records = []
    for name in SPLITS:
        path = data / f"{name}.jsonl"
        if path.exists():
            records.extend(read_jsonl(path))
    if not records:
        raise ConfigError(f"no dataset files under {data}")
    return sorted(records, key=lambda r: r.id)


def cmd_explain(args) -> int:
    cfg = _resolve(args)
    params, model = _load_checkpoint(args, cfg)
    data, out = Path(args.data), Path(args.out)
    records = _all_records(data)
    _check_dims(records, model, "dataset")
    if args.all:
        chosen = records
    else:
        if not args.ids:
            raise ConfigError("give merchant ids or --all")
        by_id = {r.id: r for r in records}
        missing = [i for i in args.ids if i not in by_id]
        if missing:
            raise ConfigError(f"unknown merchant ids: {', '.join(missing)}")
        chosen = [by_id[i] for i in args.ids]
    ex_cfg = cfg.explain
    features = ex_cfg.features if ex_cfg.features is not None else list(range(model.t_dim))
    if any(not 0 <= j < model.t_dim for j in features):
        raise ConfigError(f"explain.features must index into t (0..{model.t_dim - 1})")
    if l1_budget_is_slack(ex_cfg.budget, model.t_dim):
        log.info("L1 budget %g >= sqrt(t_dim=%d): constraint is slack, lambda will be 0", ex_cfg.budget, model.t_dim)
    solver = dict(rho=ex_cfg.rho, tol=ex_cfg.tol, max_iter=ex_cfg.max_iter, init=ex_cfg.init)
    explanations = [
        explain_merchant(params, model, r, ex_cfg.block, ex_cfg.budget, ex_cfg.top_k, **solver) for r in chosen
    ]
    rows, matrix = aggregate_category_attention(explanations, features)

    ex_dir = out / "explanations"
    ex_dir.mkdir(parents=True, exist_ok=True)
    for e in explanations:
        save_json(e.to_json(), ex_dir / f"{e.merchant_id}.json")
    with open(out / "category_attention.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["category"] + [f"f{j}" for j in features])
        for c, row in zip(rows, matrix):
            w.writerow([c] + [repr(float(x)) for x in row])
    _write_config(cfg, out, model)
    return 0


def cmd_export_embeddings(args) -> int:
    cfg = _resolve(args)
    params, model = _load_checkpoint(args, cfg)
    data, out = Path(args.data), Path(args.out)
    records = _all_records(data)
    _check_dims(records, model, "dataset")
    rows = export_embeddings(records, params, model)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "embeddings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["id", "category"] + [f"t{j}" for j in range(model.t_dim)] + [f"e_t{j}" for j in range(model.common_dim)]
        )
        for r in rows:
            w.writerow([r["id"], r["category"]] + [repr(float(x)) for x in r["t"]] + [repr(float(x)) for x in r["e_t"]])
    _write_config(cfg, out, model)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cian", description="Transaction-text matching with attention, plus explanations.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, ckpt=False, model_flags=False):
        sp.add_argument("--config", help="run config JSON (sections: generator, model, train, split, explain)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="overrides every seed in the config")
        if data:
            sp.add_argument("--data", required=True, help="dataset directory written by gen-data")
        if ckpt:
            sp.add_argument("--checkpoint", required=True)
        if model_flags:
            sp.add_argument("--variant", choices=("fc", "intra", "cross", "both"))
            sp.add_argument("--package-op", choices=("dot", "gaussian", "kernel-gaussian"))

    common(sub.add_parser("gen-data", help="generate a synthetic dataset"), data=False)
    common(sub.add_parser("train", help="train a model"), model_flags=True)
    common(sub.add_parser("eval", help="pick a threshold on val, report test metrics"), ckpt=True)
    sp = sub.add_parser("explain", help="explain merchants' transaction features")
    common(sp, ckpt=True)
    sp.add_argument("ids", nargs="*", help="merchant ids")
    sp.add_argument("--all", action="store_true", help="explain every merchant in the dataset")
    common(sub.add_parser("export-embeddings", help="write pre/post embedding CSV"), ckpt=True)
    return p


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "export-embeddings": cmd_export_embeddings,
}


def _setup_logging():
    level = os.environ.get("CIAN_LOG", "warning").upper()
    if level not in ("ERROR", "WARNING", "INFO", "DEBUG"):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (NumericalError, DegenerateInputError) as exc:
        print(f"cian: numerical failure: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, ParameterError, DataFormatError, DimensionError, CianError) as exc:
        print(f"cian: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cian: I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
