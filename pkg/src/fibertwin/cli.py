"""Command-line entry point wiring INI configs to the pipeline.

Subcommands: simulate | train | gradcheck | complexity | report.
Exit codes: 0 success, 1 numeric failure, 2 configuration error.
Every output artifact embeds the resolved configuration and the package
version; an experiment directory is never overwritten without --force.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, complexity, grad, trainer
from .signals import save_signal
from .trainer import Scenario, TrainConfig, TrainingDivergedError

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_float(text: str):
    return None if text.strip().lower() in ("auto", "none", "") else float(text)


# section -> key -> (parser, default)
_SCHEMA = {
    "signal": {
        "n_sym": (int, 32),
        "order": (int, 16),
        "rolloff": (float, 0.1),
        "oversampling": (int, 2),
        "launch_power_dbm": (float, 0.0),
        "symbol_rate_gbd": (float, 14.0),
    },
    "channel": {
        "length_km": (float, 80.0),
        "beta2_ps2_per_km": (float, -21.67),
        "gamma_per_w_km": (float, 1.27),
        "alpha_per_km": (float, 0.0),
        "m_reference": (int, 800),
        "snr_db": (float, 20.0),
    },
    "twin": {
        "m_segments": (int, 4),
        "init_mode": (str, "normal"),
    },
    "loss": {
        "norm": (str, "l1"),
        "physics": (_parse_bool, True),
        "balance_every": (int, 100),
        "balance_ema": (float, 0.1),
        "scale_beta2": (_parse_optional_float, None),
        "scale_gamma": (_parse_optional_float, None),
    },
    "train": {
        "iterations": (int, 10_000),
        "n_pairs": (int, 100),
        "batch_signals": (int, 20),
        "batch_coords": (int, 800),
        "lr0": (float, 1e-3),
        "lr_decay": (float, 0.9),
        "lr_step": (int, 5000),
        "seed": (int, 0),
        "history_stride": (int, 1),
    },
    "output": {
        "directory": (str, "runs/experiment"),
    },
}


@dataclasses.dataclass
class ExperimentConfig:
    values: dict

    @property
    def scenario(self) -> Scenario:
        s, c = self.values["signal"], self.values["channel"]
        return Scenario(
            n_sym=s["n_sym"],
            order=s["order"],
            rolloff=s["rolloff"],
            oversampling=s["oversampling"],
            launch_power_dbm=s["launch_power_dbm"],
            symbol_rate_gbd=s["symbol_rate_gbd"],
            length_km=c["length_km"],
            beta2_ps2_per_km=c["beta2_ps2_per_km"],
            gamma_per_w_km=c["gamma_per_w_km"],
            alpha_per_km=c["alpha_per_km"],
            m_reference=c["m_reference"],
        )

    @property
    def train_config(self) -> TrainConfig:
        t, lo, tw = self.values["train"], self.values["loss"], self.values["twin"]
        return TrainConfig(
            iterations=t["iterations"],
            batch_signals=t["batch_signals"],
            batch_coords=t["batch_coords"],
            lr0=t["lr0"],
            lr_decay=t["lr_decay"],
            lr_step=t["lr_step"],
            snr_db=self.values["channel"]["snr_db"],
            m_twin=tw["m_segments"],
            seed=t["seed"],
            norm=lo["norm"],
            physics=lo["physics"],
            balance_every=lo["balance_every"],
            balance_ema=lo["balance_ema"],
            init_mode=tw["init_mode"],
            scale_beta2=lo["scale_beta2"],
            scale_gamma=lo["scale_gamma"],
            history_stride=t["history_stride"],
        )

    @property
    def n_pairs(self) -> int:
        return self.values["train"]["n_pairs"]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["output"]["directory"])

    def echo(self) -> dict:
        return {"version": __version__, "config": self.values}


def _find_line(path: Path | None, token: str) -> str:
    if path is None:
        return ""
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].split(";", 1)[0]
        if token in stripped:
            return f" (line {lineno})"
    return ""


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Parse and validate an INI config; unknown keys are rejected with the
    offending line, missing keys fall back to documented defaults."""
    values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in _SCHEMA.items()}
    if path is None:
        return ExperimentConfig(values=values)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(
                f"unknown section [{section}]{_find_line(path, '[' + section + ']')}"
            )
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}{_find_line(path, key)}")
            parse, _ = _SCHEMA[section][key]
            try:
                values[section][key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for {section}.{key}: {raw!r}{_find_line(path, key)}"
                ) from exc
    return ExperimentConfig(values=values)


def default_config_text() -> str:
    """INI text listing every key with its default."""
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, default) in keys.items():
            shown = "auto" if default is None else default
            lines.append(f"{key} = {shown}")
        lines.append("")
    return "\n".join(lines)


def _prepare_out(out_dir: Path, force: bool) -> None:
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise ConfigError(f"output directory {out_dir} is not empty; use --force")
    out_dir.mkdir(parents=True, exist_ok=True)


def cmd_simulate(cfg: ExperimentConfig, out_dir: Path, force: bool) -> int:
    _prepare_out(out_dir, force)
    scenario = cfg.scenario
    dataset = trainer.build_dataset(cfg.n_pairs, scenario, seed=cfg.values["train"]["seed"])
    pair_dir = out_dir / "pairs"
    pair_dir.mkdir(exist_ok=True)
    meta = {
        "launch_power_dbm": scenario.launch_power_dbm,
        "n_sym": scenario.n_sym,
        "oversampling": scenario.oversampling,
        "seed": dataset.seed,
        "config_echo": cfg.echo(),
    }
    for k, (tx, rx) in enumerate(dataset.pairs):
        save_signal(tx, pair_dir / f"pair_{k:04d}_in.csv", meta)
        save_signal(rx, pair_dir / f"pair_{k:04d}_out.csv", meta)
    (out_dir / "config.json").write_text(json.dumps(cfg.echo(), indent=2, sort_keys=True))
    print(f"wrote {len(dataset)} signal pairs to {pair_dir}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, out_dir: Path, force: bool) -> int:
    _prepare_out(out_dir, force)
    dataset = trainer.build_dataset(cfg.n_pairs, cfg.scenario, seed=cfg.values["train"]["seed"])
    tc = cfg.train_config
    try:
        history = trainer.train(dataset, tc)
    except TrainingDivergedError as exc:
        print(f"numeric failure at iteration {exc.iteration}", file=sys.stderr)
        if exc.history is not None:
            exc.history.to_csv(out_dir / "history_partial.csv")
        (out_dir / "config.json").write_text(json.dumps(cfg.echo(), indent=2, sort_keys=True))
        return EXIT_NUMERIC
    history.to_csv(out_dir / "history.csv")
    history.save_summary(out_dir / "summary.json")
    (out_dir / "config.json").write_text(json.dumps(cfg.echo(), indent=2, sort_keys=True))
    print(
        f"beta2_hat={history.beta2_hat:.4f} (rel err {history.rel_err_beta2:.2%}), "
        f"gamma_hat={history.gamma_hat:.4f} (rel err {history.rel_err_gamma:.2%})"
    )
    return EXIT_OK


def cmd_gradcheck(cfg: ExperimentConfig, out_dir: Path | None, synthetic: bool,
                  corrupt_adjoint: bool) -> int:
    if synthetic:
        dev = grad.quadratic_probe()
        print(f"synthetic quadratic deviation: {dev:.3e}")
        return EXIT_OK if dev <= 1e-10 else EXIT_NUMERIC
    tc = cfg.train_config
    scenario = grad.default_check_scenario(
        seed=tc.seed,
        n_sym=cfg.values["signal"]["n_sym"],
        m_twin=tc.m_twin,
        snr_db=tc.snr_db,
        norm=tc.norm,
    )
    old = grad._adjoint_corruption
    if corrupt_adjoint:
        grad._adjoint_corruption = 1e-2
    try:
        worst = 0.0
        for k, rng_seed in enumerate([tc.seed, tc.seed + 1, tc.seed + 2, tc.seed + 3]):
            point = scenario.base_point if k == 0 else None
            dev = grad.finite_diff_check(scenario, point=point, rng_seed=rng_seed)
            kind = "default point" if k == 0 else f"random point {k}"
            print(f"{kind}: deviation {dev:.3e}")
            worst = max(worst, dev)
    finally:
        grad._adjoint_corruption = old
    ok = worst <= 1e-4
    print(f"worst deviation {worst:.3e}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_complexity(cfg: ExperimentConfig, out_dir: Path | None, force: bool) -> int:
    scenario = cfg.scenario
    n = scenario.n_samples
    m = cfg.values["twin"]["m_segments"]
    n_queries = cfg.values["train"]["batch_coords"]
    table = complexity.comparison_table(n, m, scenario.n_sym, n_queries)
    print(table)
    if out_dir is not None:
        _prepare_out(out_dir, force)
        report = complexity.pipeline_cost(n, m, scenario.n_sym, n_queries)
        payload = report.to_dict()
        payload["config_echo"] = cfg.echo()
        (out_dir / "cost.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(out_dir: Path) -> int:
    summary_path = out_dir / "summary.json"
    if not summary_path.exists():
        raise ConfigError(f"no summary.json under {out_dir}")
    summary = json.loads(summary_path.read_text())
    print(f"run summary from {out_dir}")
    print(f"  beta2_hat = {summary['beta2_hat']:.4f} ps^2/km "
          f"(truth {summary['truth_beta2']:.4f}, rel err {summary['rel_err_beta2']:.2%})")
    print(f"  gamma_hat = {summary['gamma_hat']:.4f} 1/(W km) "
          f"(truth {summary['truth_gamma']:.4f}, rel err {summary['rel_err_gamma']:.2%})")
    print(f"  final output mismatch = {summary['final_l_io']:.4e}")
    print(f"  beta2 profile: {np.round(summary['profile_beta2'], 3).tolist()}")
    print(f"  gamma profile: {np.round(summary['profile_gamma'], 4).tolist()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fibertwin",
        description="fiber parameter estimation via a trainable split-step twin",
    )
    parser.add_argument("--version", action="version", version=f"fibertwin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="INI config path")
        p.add_argument("--out", type=Path, default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")

    common(sub.add_parser("simulate", help="generate and store a dataset"))
    common(sub.add_parser("train", help="run an estimation and store history + summary"))
    g = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    common(g)
    g.add_argument("--synthetic", action="store_true", help="check the differencing driver on a quadratic")
    g.add_argument("--corrupt-adjoint", action="store_true", help=argparse.SUPPRESS)
    common(sub.add_parser("complexity", help="print the multiplication-count report"))
    r = sub.add_parser("report", help="summarize a finished run directory")
    r.add_argument("--out", type=Path, required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.out)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.values["train"]["seed"] = args.seed
        out_dir = args.out if args.out is not None else cfg.out_dir
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir, args.force)
        if args.command == "train":
            return cmd_train(cfg, out_dir, args.force)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, out_dir, args.synthetic, args.corrupt_adjoint)
        if args.command == "complexity":
            return cmd_complexity(cfg, args.out, args.force)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
