"""``lkp`` command line: ingest, synth, train-kernel, train, evaluate, trend,
sweep, verify.

Exit status: 0 success, 1 usage/configuration error, 2 data error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from datetime import datetime
from pathlib import Path

from . import _backend
from .data import InteractionDataset, ingest, make_synthetic, split
from .diversity import DiversityKernel, build_diverse_training_pairs, train_diversity_kernel
from .errors import ContractViolation, DataError, TrainingError
from .evaluation import CUTOFFS, evaluate, trends_to_csv
from .model import EmbeddingTable, TrainConfig, VARIANTS, train

log = logging.getLogger("lkp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
COMMANDS = ("ingest", "synth", "train-kernel", "train", "evaluate", "trend", "sweep", "verify")

# run-level keys beyond TrainConfig's fields, with defaults
RUN_DEFAULTS = {
    "data": None,
    "kernel": None,
    "model": None,
    "out": ".",
    "ratings": None,
    "categories": None,
    "threshold": 5.0,
    "min_interactions": 10,
    "split_ratios": [0.7, 0.1, 0.2],
    "split_seed": None,
    "num_users": 1000,
    "num_items": 2000,
    "num_categories": 20,
    "cutoffs": list(CUTOFFS),
    "threads": None,
    "variant": None,
    "kernel_rank": 64,
    "kernel_epochs": 10,
    "kernel_lr": 1e-2,
    "kernel_set_size": 5,
    "kernel_min_categories": None,
    "param": "k",
    "values": None,
}
# flag spelling -> config key where they differ
FLAG_KEYS = {"lr": "learning_rate", "kernel_mode": "kernel_mode"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("run configuration")
    g.add_argument("--config", help="JSON file of configuration keys (flags override it)")
    g.add_argument("--data", help="dataset container (JSON)")
    g.add_argument("--out", help="output directory")
    g.add_argument("--objective", choices=("lkp_ps", "lkp_nps", "bpr", "bce"))
    g.add_argument("--sampler", choices=("R", "S"))
    g.add_argument("--kernel-mode", dest="kernel_mode", choices=("pretrained", "gaussian"))
    g.add_argument("--variant", choices=sorted(VARIANTS), help="shorthand for objective/sampler/kernel-mode")
    g.add_argument("--k", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--l2", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.add_argument("--threshold", type=float)
    g.add_argument("--kernel", help="diversity kernel checkpoint")
    g.add_argument("--model", help="model checkpoint")

    p = _Parser(prog="lkp", description="k-DPP set-level ranking for diverse top-N recommendation.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="ratings + categories files -> dataset container")
    s.add_argument("--ratings")
    s.add_argument("--categories")
    sub.add_parser("synth", parents=[common], help="generate the block-structured synthetic dataset")
    sub.add_parser("train-kernel", parents=[common], help="learn the pretrained diversity kernel")
    sub.add_parser("train", parents=[common], help="train embeddings")
    sub.add_parser("evaluate", parents=[common], help="Recall/NDCG/CC/F of a checkpoint on the test split")
    s = sub.add_parser("trend", parents=[common], help="k-DPP probability trend by target count")
    s.add_argument("--trend-epochs", dest="trend_epochs", type=_int_list)
    s = sub.add_parser("sweep", parents=[common], help="grid over k (n = k) or n (k fixed)")
    s.add_argument("--param", choices=("k", "n"))
    s.add_argument("--values", type=_int_list)
    sub.add_parser("verify", parents=[common], help="run the oracle suite")
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults < config file < flags. Unknown file keys are fatal."""
    known = dict(RUN_DEFAULTS)
    for name in TrainConfig.field_names():
        known[name] = getattr(TrainConfig, name, None) if name != "trend_epochs" else []
    cfg = dict(known)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"{args.config}: top level must be an object")
        unknown = sorted(set(loaded) - set(known))
        if unknown:
            raise UsageError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg.update(loaded)
    for flag, value in vars(args).items():
        if flag in ("config", "command", "verbose") or value is None:
            continue
        cfg[FLAG_KEYS.get(flag, flag)] = value
    if cfg.get("variant"):
        obj, sampler, mode = VARIANTS[cfg["variant"]]
        cfg.update(objective=obj, sampler=sampler, kernel_mode=mode)
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(**{k: cfg[k] for k in TrainConfig.field_names() if cfg.get(k) is not None})
    except TypeError as exc:
        raise UsageError(f"bad configuration value: {exc}") from None


class Outputs:
    """``<command>-<timestamp>.<ext>`` names inside the output directory."""

    def __init__(self, out: str, command: str):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.stem = f"{command}-{datetime.now().strftime('%Y%m%dT%H%M%S')}"
        n = 1
        while any(self.dir.glob(self.stem + ".*")):
            n += 1
            self.stem = f"{command}-{datetime.now().strftime('%Y%m%dT%H%M%S')}-{n}"

    def path(self, ext: str) -> Path:
        return self.dir / f"{self.stem}.{ext}"


def _load_data(cfg: dict) -> InteractionDataset:
    if not cfg.get("data"):
        raise UsageError("--data is required")
    return InteractionDataset.load(cfg["data"])


def _load_kernel(cfg: dict, tc: TrainConfig):
    if not tc.objective.startswith("lkp") or tc.kernel_mode == "gaussian":
        return None
    if not cfg.get("kernel"):
        raise UsageError("pretrained kernel mode needs --kernel (run train-kernel first)")
    return DiversityKernel.load(cfg["kernel"])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _split_seed(cfg):
    return cfg["seed"] if cfg.get("split_seed") is None else cfg["split_seed"]


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg, out: Outputs) -> int:
    if not cfg.get("ratings") or not cfg.get("categories"):
        raise UsageError("ingest needs --ratings and --categories")
    data = ingest(cfg["ratings"], cfg["categories"], threshold=cfg["threshold"], min_interactions=cfg["min_interactions"])
    data = split(data, tuple(cfg["split_ratios"]), seed=_split_seed(cfg))
    path = out.path("json")
    data.save(path)
    print(f"{data.num_users} users, {data.num_items} items, {data.num_interactions} interactions -> {path}")
    return EXIT_OK


def cmd_synth(cfg, out: Outputs) -> int:
    data = make_synthetic(cfg["num_users"], cfg["num_items"], cfg["num_categories"], seed=cfg["seed"])
    data = split(data, tuple(cfg["split_ratios"]), seed=_split_seed(cfg))
    path = out.path("json")
    data.save(path)
    print(f"{data.num_users} users, {data.num_items} items, {data.num_interactions} interactions -> {path}")
    return EXIT_OK


def cmd_train_kernel(cfg, out: Outputs) -> int:
    data = _load_data(cfg)
    pairs = build_diverse_training_pairs(data, cfg["kernel_set_size"], cfg["kernel_min_categories"], seed=cfg["seed"])
    K = train_diversity_kernel(
        pairs, data.num_items, rank=cfg["kernel_rank"], epochs=cfg["kernel_epochs"],
        learning_rate=cfg["kernel_lr"], seed=cfg["seed"],
    )
    path = out.path("bin")
    K.save(path)
    _write_json(out.path("json"), {"pairs": len(pairs), "objective_trace": K.trace, "checkpoint": str(path)})
    print(f"{len(pairs)} diverse pairs; kernel -> {path}")
    return EXIT_OK


def _train(cfg, out: Outputs, tc: TrainConfig, data):
    K = _load_kernel(cfg, tc)
    t0 = time.perf_counter()
    result = train(tc, data, K)
    log.info("trained in %.1fs (best epoch %d)", time.perf_counter() - t0, result.best_epoch)
    return result, K


def cmd_train(cfg, out: Outputs) -> int:
    tc = train_config(cfg)
    data = _load_data(cfg)
    result, _ = _train(cfg, out, tc, data)
    ckpt = out.path("bin")
    result.model.save(ckpt)
    out.path("jsonl").write_text(result.log_jsonl())
    _write_json(out.path("json"), {
        "checkpoint": str(ckpt),
        "best_epoch": result.best_epoch,
        "best_val_ndcg5": result.best_val_ndcg5,
        "skipped_steps": result.skipped_steps,
        "skipped_instances": result.skipped_instances,
        "backend": _backend.backend_name(),
    })
    print(f"best epoch {result.best_epoch} (val NDCG@5 {result.best_val_ndcg5:.4f}) -> {ckpt}")
    return EXIT_OK


def cmd_evaluate(cfg, out: Outputs) -> int:
    if not cfg.get("model"):
        raise UsageError("evaluate needs --model")
    data = _load_data(cfg)
    model = EmbeddingTable.load(cfg["model"])
    if (model.num_users, model.num_items) != (data.num_users, data.num_items):
        raise DataError(f"checkpoint is {model.num_users}x{model.num_items}, dataset is {data.num_users}x{data.num_items}")
    report = evaluate(model, data, cfg["cutoffs"])
    path = out.path("json")
    path.write_text(report.to_json() + "\n")
    for n, m in sorted(report.metrics.items()):
        print(f"@{n}: recall {m['recall']:.4f} ndcg {m['ndcg']:.4f} cc {m['cc']:.4f} f {m['f']:.4f}")
    return EXIT_OK


def cmd_trend(cfg, out: Outputs) -> int:
    epochs = cfg.get("trend_epochs") or [0, cfg["epochs"]]
    cfg = dict(cfg, trend_epochs=list(epochs), patience=0, epochs=max(max(epochs), 0))
    tc = train_config(cfg)
    if not tc.objective.startswith("lkp"):
        raise UsageError("trend needs an lkp objective")
    result, _ = _train(cfg, out, tc, _load_data(cfg))
    out.path("csv").write_text(trends_to_csv(result.trends))
    _write_json(out.path("json"), [t.to_dict() for t in result.trends])
    print(trends_to_csv(result.trends), end="")
    return EXIT_OK


def cmd_sweep(cfg, out: Outputs) -> int:
    param = cfg["param"]
    if param not in ("k", "n"):
        raise UsageError("--param must be k or n")
    values = cfg.get("values") or (list(range(2, 8)) if param == "k" else list(range(1, 9)))
    data = _load_data(cfg)
    rows = []
    for v in values:
        run = dict(cfg)
        if param == "k":
            run.update(k=v, n=v)
        else:
            run.update(n=v, k=cfg["k"] or 5)
        tc = train_config(run)
        result, _ = _train(run, out, tc, data)
        report = evaluate(result.model, data, cfg["cutoffs"])
        for n_cut, m in sorted(report.metrics.items()):
            for metric in ("recall", "ndcg", "cc", "f"):
                rows.append([param, v, tc.k, tc.n, n_cut, metric, repr(m[metric])])
        log.info("%s=%d done", param, v)
    path = out.path("csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "value", "k", "n", "cutoff", "metric", "score"])
        w.writerows(rows)
    print(f"{len(values)} runs -> {path}")
    return EXIT_OK


def cmd_verify(cfg, out: Outputs | None) -> int:
    from .oracles import run_all

    t0 = time.perf_counter()
    results = run_all(seed=cfg["seed"] or 0)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - t0:.1f}s [{_backend.backend_name()}]")
    return EXIT_VERIFY if failed else EXIT_OK


HANDLERS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train-kernel": cmd_train_kernel,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "trend": cmd_trend,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def run(command: str, argv: list[str] | None = None) -> int:
    return main([command, *(argv or [])])


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        if args.command in ("train", "trend", "sweep"):
            train_config(cfg)  # validate before any work
        if cfg.get("threads"):
            _backend.set_threads(int(cfg["threads"]))
        out = Outputs(cfg["out"], args.command)
        _write_json(out.dir / "config-echo.json", {"command": args.command, **cfg})
        return HANDLERS[args.command](cfg, out)
    except (UsageError, ContractViolation) as exc:
        print(f"lkp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, KeyError) as exc:
        print(f"lkp {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"lkp {args.command}: training failed: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
