"""Command-line pipeline driver.

Every subcommand reads a JSON run config (paths inside it resolve
relative to the config file) and writes one canonical report, either to
--out or to stdout. Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import kernels
from .data import load_dataset, load_prompt_pool, load_verbalizer
from .errors import (DataError, IoError, NumericError, ParseError,
                     PromptFlatError, UsageError)
from .evaluation import EvalConfig, SweepSpec, correlation_study, sweep
from .metrics import mutual_information, pflat, prompt_loss, sensitivity
from .models import LogisticBagConfig, fit_logistic, load_model, save_model, save_prefix
from .perturb import PerturbationConfig, SensitivitySetConfig, build_sensitivity_set
from .prefix import SamConfig, prefix_accuracy, prefix_tune
from .reports import canonical_json, csv_rows, csv_text, write_report
from .selection import (BASE_HIGHER_BETTER, DEFAULT_ALPHA_GRID, combined_scores,
                        pflat_scores, rank_prompts, select_best, tune_alpha)

SELECT_METRICS = ("loss", "mi", "sen", "pflat")


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; the contract wants 1
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="run config JSON")
    common.add_argument("--seed", type=int, default=None,
                        help="override every master seed in the config")
    common.add_argument("--out", default=None, help="report output path")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--threads", type=int, default=None,
                        help="worker thread bound (default $PFLAT_THREADS or 1)")

    parser = _Parser(prog="promptflat",
                     description="Flatness-aware prompt selection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("score", parents=[common],
                   help="metric values for every prompt in the pool")
    p_select = sub.add_parser("select", parents=[common],
                              help="pick the best prompt by combined score")
    p_select.add_argument("--metric", choices=SELECT_METRICS, default=None)
    p_select.add_argument("--alpha", type=float, default=None)
    p_tune = sub.add_parser("tune-alpha", parents=[common],
                            help="grid-search the flatness weight on dev")
    p_tune.add_argument("--metric", choices=("loss", "mi", "sen"), default=None)
    sub.add_parser("evaluate", parents=[common],
                   help="correlation study of metrics against accuracy")
    sub.add_parser("sweep", parents=[common],
                   help="re-run the study over a perturbation grid")
    sub.add_parser("prefix-tune", parents=[common],
                   help="train a continuous prefix, optionally with SAM")
    sub.add_parser("fit-backend", parents=[common],
                   help="fit the logistic backend and save its weights")
    return parser


def _apply_threads(requested: int | None) -> int:
    n = requested
    if n is None:
        env = os.environ.get("PFLAT_THREADS", "").strip()
        n = int(env) if env else 1
    if n < 1:
        raise UsageError(f"--threads must be >= 1, got {n}")
    if kernels.USING_NUMBA:
        import numba
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    return n


def _load_config(path: str) -> dict:
    if not os.path.isfile(path):
        raise IoError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ParseError("config must be a JSON object")
    cfg["_dir"] = os.path.dirname(os.path.abspath(path))
    return cfg


def _path(cfg: dict, key: str, *, required: bool = True) -> str | None:
    value = cfg.get(key)
    if value is None:
        if required:
            raise UsageError(f"config is missing the {key!r} path")
        return None
    return os.path.join(cfg["_dir"], value)


def _seeded(cfg: dict, key: str, override: int | None, default: int = 0) -> int:
    if override is not None:
        return override
    return int(cfg.get(key, default))


def _perturbation(cfg: dict, seed: int | None) -> PerturbationConfig:
    return PerturbationConfig(
        n_samples=int(cfg.get("n_samples", 5)),
        sigma2=float(cfg.get("sigma2", 1e-4)),
        master_seed=_seeded(cfg, "master_seed", seed))


def _sensitivity(cfg: dict, seed: int | None) -> SensitivitySetConfig:
    return SensitivitySetConfig(
        k_permutations=int(cfg.get("k_permutations", 8)),
        m_edits=int(cfg.get("m_edits", 8)),
        seed=_seeded(cfg, "master_seed", seed))


def _eval_config(cfg: dict, seed: int | None) -> EvalConfig:
    kwargs = {}
    if "metrics" in cfg:
        kwargs["metrics"] = tuple(cfg["metrics"])
    return EvalConfig(alpha=float(cfg.get("alpha", 1.0)),
                      perturbation=_perturbation(cfg, seed),
                      sensitivity=_sensitivity(cfg, seed),
                      divergence=cfg.get("divergence", "kl"),
                      **kwargs)


def _model_and_pool(cfg: dict):
    model = load_model(_path(cfg, "weights"))
    pool = load_prompt_pool(_path(cfg, "pool"), model.verbalizer)
    return model, pool


def _dataset(cfg: dict, key: str, model, *, required: bool = True):
    path = _path(cfg, key, required=required)
    if path is None:
        return None
    return load_dataset(path, model.verbalizer)


def _emit(report, args) -> None:
    if args.out is not None:
        write_report(report, args.out, args.format)
        return
    if args.format == "json":
        sys.stdout.write(canonical_json(report) + "\n")
    else:
        sys.stdout.write(csv_text(csv_rows(report)))


def _cmd_score(cfg: dict, args) -> dict:
    from .evaluation import MetricEngine
    model, pool = _model_and_pool(cfg)
    test = _dataset(cfg, "test", model)
    dev = _dataset(cfg, "dev", model, required=False)
    engine = MetricEngine(model, _eval_config(cfg, args.seed), dev)
    table = engine.compute(pool, test.inputs_only())
    return {"per_prompt": [{"prompt_id": p.id, "metrics": table[p.id]}
                           for p in pool]}


def _cmd_select(cfg: dict, args) -> dict:
    model, pool = _model_and_pool(cfg)
    test = _dataset(cfg, "test", model)
    inputs = test.inputs_only()
    metric = args.metric or cfg.get("base_metric", "loss")
    alpha = args.alpha if args.alpha is not None else float(cfg.get("alpha", 0.0))
    if metric not in SELECT_METRICS:
        raise UsageError(f"unknown metric {metric!r}")

    if metric == "pflat":
        if alpha != 0.0:
            raise UsageError("--alpha applies to base metrics, not pflat itself")
        scores = pflat_scores(model, pool, inputs,
                              _perturbation(cfg, args.seed),
                              cfg.get("divergence", "kl"))
    else:
        base = {}
        if metric == "loss":
            dev = _dataset(cfg, "dev", model)
            for p in pool:
                base[p.id] = prompt_loss(model, p, dev)
        elif metric == "mi":
            for p in pool:
                base[p.id] = mutual_information(model, p, inputs)
        else:
            sen_cfg = _sensitivity(cfg, args.seed)
            for p in pool:
                perturbed = build_sensitivity_set(p, sen_cfg, model.verbalizer)
                base[p.id] = sensitivity(model, p, inputs, perturbed)
        higher = BASE_HIGHER_BETTER[metric]
        if alpha == 0.0:
            # alpha = 0 short-circuits the flatness computation entirely
            flat = {pid: 0.0 for pid in base}
        else:
            flat = pflat_scores(model, pool, inputs,
                                _perturbation(cfg, args.seed),
                                cfg.get("divergence", "kl"))
        scores = combined_scores(base, higher, flat, alpha)
    best = select_best(pool, scores)
    ranked = rank_prompts(scores)
    return {"selected": best, "score": scores[best], "metric": metric,
            "alpha": alpha,
            "ranking": [{"prompt_id": pid, "score": scores[pid]}
                        for pid in ranked]}


def _cmd_tune_alpha(cfg: dict, args) -> dict:
    model, pool = _model_and_pool(cfg)
    dev = _dataset(cfg, "dev", model)
    metric = args.metric or cfg.get("base_metric", "loss")
    grid = tuple(cfg.get("alpha_grid", DEFAULT_ALPHA_GRID))
    result = tune_alpha(model, pool, dev, metric, grid,
                        _perturbation(cfg, args.seed),
                        sen_cfg=_sensitivity(cfg, args.seed),
                        divergence=cfg.get("divergence", "kl"))
    result["base_metric"] = metric
    return result


def _cmd_evaluate(cfg: dict, args) -> dict:
    model, pool = _model_and_pool(cfg)
    test = _dataset(cfg, "test", model)
    dev = _dataset(cfg, "dev", model, required=False)
    report = correlation_study(model, pool, test, _eval_config(cfg, args.seed),
                               dev=dev)
    return report.to_dict()


def _cmd_sweep(cfg: dict, args) -> dict:
    model, pool = _model_and_pool(cfg)
    test = _dataset(cfg, "test", model)
    dev = _dataset(cfg, "dev", model, required=False)
    section = cfg.get("sweep")
    if not isinstance(section, dict):
        raise UsageError("config is missing the 'sweep' section")
    spec = SweepSpec(variable=section.get("variable", "sigma2"),
                     values=tuple(section.get("values", ())),
                     repeats=int(section.get("repeats", 1)),
                     metric=section.get("metric", "pflat"),
                     eval=_eval_config(cfg, args.seed),
                     master_seed=_seeded(cfg, "master_seed", args.seed))
    return sweep(model, pool, test, spec, dev=dev)


def _sam_config(cfg: dict, seed: int | None) -> SamConfig:
    section = cfg.get("sam", {})
    if not isinstance(section, dict):
        raise UsageError("'sam' section must be a JSON object")
    return SamConfig(rho=float(section.get("rho", 0.05)),
                     learning_rate=float(section.get("learning_rate", 5e-5)),
                     epochs=int(section.get("epochs", 25)),
                     use_flatness=bool(section.get("use_flatness", True)),
                     seed=_seeded(section, "seed", seed),
                     prefix_len=int(section.get("prefix_len", 10)))


def _cmd_prefix_tune(cfg: dict, args) -> dict:
    model = load_model(_path(cfg, "weights"))
    train = _dataset(cfg, "train", model)
    sam_cfg = _sam_config(cfg, args.seed)
    result = prefix_tune(model, train, sam_cfg)
    report = {"epochs": sam_cfg.epochs,
              "use_flatness": sam_cfg.use_flatness,
              "history": [list(row) for row in result["history"]]}
    if result["history"]:
        report["final_loss"] = result["history"][-1][1]
        report["final_grad_norm"] = result["history"][-1][2]
    test = _dataset(cfg, "test", model, required=False)
    if test is not None:
        report["test_accuracy"] = prefix_accuracy(model, result["prefix"], test)
    prefix_out = _path(cfg, "prefix_out", required=False)
    if prefix_out is not None:
        save_prefix(result["prefix"], prefix_out)
        report["prefix_out"] = cfg["prefix_out"]
    return report


def _cmd_fit_backend(cfg: dict, args) -> dict:
    backend = cfg.get("backend", "logistic")
    if backend != "logistic":
        raise UsageError("fit-backend supports only the logistic backend")
    if args.out is None:
        raise UsageError("fit-backend needs --out for the weight file")
    verbalizer = load_verbalizer(_path(cfg, "verbalizer"))
    train = load_dataset(_path(cfg, "train"), verbalizer)
    section = cfg.get("fit", {})
    fit_cfg = LogisticBagConfig(
        vocab_size=int(section.get("vocab_size", 256)),
        l2=float(section.get("l2", 1e-4)),
        train_epochs=int(section.get("train_epochs", 500)),
        learning_rate=float(section.get("learning_rate", 0.5)),
        seed=_seeded(section, "seed", args.seed))
    model = fit_logistic(train, fit_cfg, verbalizer)
    save_model(model, args.out)
    return {"weights": args.out, "backend": backend,
            "train_loss": model.train_history[-1],
            "train_grad_norm": model.train_grad_norm,
            "examples": len(train)}


_COMMANDS = {"score": _cmd_score, "select": _cmd_select,
             "tune-alpha": _cmd_tune_alpha, "evaluate": _cmd_evaluate,
             "sweep": _cmd_sweep, "prefix-tune": _cmd_prefix_tune,
             "fit-backend": _cmd_fit_backend}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_threads(args.threads)
        cfg = _load_config(args.config)
        report = _COMMANDS[args.command](cfg, args)
        if args.command != "fit-backend" or args.out is None:
            _emit(report, args)
        else:
            sys.stdout.write(canonical_json(report) + "\n")
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except PromptFlatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
