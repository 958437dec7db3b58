"""Command-line front end: pretrain the networks, run scenarios, compare.

Configuration is a flat key-value file with INI-style sections mirroring the
module boundaries ([plant], [hdp], [pi], [pretrain], [run]).  Every key has a
default; keys absent from the file are echoed to the log once so a run's
effective configuration is always visible.  Unknown sections or keys are
rejected rather than ignored -- a typo should fail loudly, not silently run
the nominal setup.

Exit codes: 0 on success, 1 for usage, configuration, or missing-snapshot
errors, 2 when a simulation diverges or pretraining fails to converge.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .baseline import DEFAULT_PI_GAINS, PiGains, PiController
from .hdp import HdpConfig, HdpController, make_action
from .mlp import Mlp
from .plant import PlantParams
from . import sim

__all__ = [
    "ConfigError",
    "PretrainSettings",
    "RunConfig",
    "parse_config",
    "load_config",
    "dump_config",
    "cmd_pretrain",
    "cmd_run",
    "cmd_compare",
    "main",
]

log = logging.getLogger("boosthdp.cli")

METRICS_FIELDS = (
    "scenario",
    "controller",
    "settling_time",
    "overshoot",
    "steady_state_error",
    "iae",
    "peak_deviation",
    "oscillation",
    "unsettled",
)


class ConfigError(Exception):
    """Bad configuration file, bad value, or bad command-line argument."""


@dataclass(frozen=True)
class PretrainSettings:
    """Knobs for the offline pipeline (excitation log, TD sweeps, clone)."""

    n_episodes: int = 4
    n_holds: int = 10
    max_epochs: int = 120
    learning_rate: float = 8e-4
    clone_epochs: int = 40
    clone_learning_rate: float = 0.3

    def __post_init__(self) -> None:
        for name in ("n_episodes", "n_holds", "max_epochs", "clone_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0.0 or self.clone_learning_rate <= 0.0:
            raise ValueError("pretraining rates must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Everything a subcommand needs, validated at parse time."""

    plant: PlantParams
    hdp: HdpConfig
    pi: PiGains
    pretrain: PretrainSettings
    scenarios: tuple[str, ...]
    out_dir: str
    seed: int


# section -> key -> (python type, default).  The hdp tuples are flattened to
# scalar keys so the file stays a flat key-value format.
_HDP_DEFAULT = HdpConfig()
_SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "plant": {
        "r_load": (float, 80.0),
        "l_ind": (float, 860e-6),
        "c_out": (float, 860e-6),
        "r_l": (float, 0.1),
        "v_s": (float, 60.0),
        "f_sw": (float, 20e3),
        "dt": (float, 0.5e-6),
    },
    "hdp": {
        "gamma": (float, _HDP_DEFAULT.gamma),
        "lr_critic": (float, _HDP_DEFAULT.lr_critic),
        "lr_action": (float, _HDP_DEFAULT.lr_action),
        "k_v": (float, _HDP_DEFAULT.k_v),
        "k_i": (float, _HDP_DEFAULT.k_i),
        "epochs_critic": (int, _HDP_DEFAULT.epochs_critic),
        "epochs_action": (int, _HDP_DEFAULT.epochs_action),
        "norm_v_o": (float, _HDP_DEFAULT.norm_scales[0]),
        "norm_i_l": (float, _HDP_DEFAULT.norm_scales[1]),
        "norm_e_v": (float, _HDP_DEFAULT.norm_scales[2]),
        "norm_e_i": (float, _HDP_DEFAULT.norm_scales[3]),
        "norm_duty": (float, _HDP_DEFAULT.norm_scales[4]),
        "duty_min": (float, _HDP_DEFAULT.duty_limits[0]),
        "duty_max": (float, _HDP_DEFAULT.duty_limits[1]),
    },
    "pi": {
        "kp": (float, DEFAULT_PI_GAINS.kp),
        "ki": (float, DEFAULT_PI_GAINS.ki),
        "duty_ff": (float, DEFAULT_PI_GAINS.duty_ff),
    },
    "pretrain": {
        "n_episodes": (int, 4),
        "n_holds": (int, 10),
        "max_epochs": (int, 120),
        "learning_rate": (float, 8e-4),
        "clone_epochs": (int, 40),
        "clone_learning_rate": (float, 0.3),
    },
    "run": {
        "scenarios": (str, " ".join(sim.SCENARIO_NAMES)),
        "out": (str, "out"),
        "seed": (int, 0),
    },
}


def _convert(section: str, key: str, raw: str, typ: type):
    try:
        if typ is int:
            return int(raw, 10)
        if typ is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(
            f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}"
        ) from None


def parse_config(text: str) -> tuple[RunConfig, list[tuple[str, str, object]]]:
    """Parse config text into a validated RunConfig.

    Returns the config plus the list of (section, key, value) entries that
    fell back to defaults, so the caller can echo them.
    """
    parser = configparser.ConfigParser(
        interpolation=None, delimiters=("=",), inline_comment_prefixes=("#",)
    )
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None

    values: dict[str, dict[str, object]] = {}
    defaulted: list[tuple[str, str, object]] = []
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(
                f"unknown section [{section}]; valid: "
                + " ".join(f"[{s}]" for s in _SCHEMA)
            )
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"unknown key {key!r} in [{section}]; valid: "
                    + " ".join(_SCHEMA[section])
                )
    for section, keys in _SCHEMA.items():
        values[section] = {}
        for key, (typ, default) in keys.items():
            if parser.has_option(section, key):
                values[section][key] = _convert(
                    section, key, parser.get(section, key), typ
                )
            else:
                values[section][key] = default
                defaulted.append((section, key, default))

    p, h, g, t, r = (values[s] for s in ("plant", "hdp", "pi", "pretrain", "run"))
    scenarios = tuple(r["scenarios"].replace(",", " ").split())
    for name in scenarios:
        if name not in sim.SCENARIO_NAMES:
            raise ConfigError(
                f"unknown scenario {name!r} in [run] scenarios; valid: "
                + " ".join(sim.SCENARIO_NAMES)
            )
    if not scenarios:
        raise ConfigError("[run] scenarios must list at least one scenario")
    try:
        cfg = RunConfig(
            plant=PlantParams(**p),
            hdp=HdpConfig(
                gamma=h["gamma"],
                lr_critic=h["lr_critic"],
                lr_action=h["lr_action"],
                k_v=h["k_v"],
                k_i=h["k_i"],
                epochs_critic=h["epochs_critic"],
                epochs_action=h["epochs_action"],
                norm_scales=(
                    h["norm_v_o"], h["norm_i_l"], h["norm_e_v"],
                    h["norm_e_i"], h["norm_duty"],
                ),
                duty_limits=(h["duty_min"], h["duty_max"]),
            ),
            pi=PiGains(kp=g["kp"], ki=g["ki"], duty_ff=g["duty_ff"]),
            pretrain=PretrainSettings(**t),
            scenarios=scenarios,
            out_dir=r["out"],
            seed=r["seed"],
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg, defaulted


def load_config(path: str | None) -> tuple[RunConfig, list[tuple[str, str, object]]]:
    """Load a config file, or the all-defaults config when path is None."""
    if path is None:
        return parse_config("")
    file = Path(path)
    if not file.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(file.read_text())


def _fmt(value: object) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: RunConfig) -> str:
    """Render the effective configuration; parsing it back reproduces cfg."""
    h = cfg.hdp
    flat = {
        "plant": {k: getattr(cfg.plant, k) for k in _SCHEMA["plant"]},
        "hdp": {
            "gamma": h.gamma, "lr_critic": h.lr_critic, "lr_action": h.lr_action,
            "k_v": h.k_v, "k_i": h.k_i,
            "epochs_critic": h.epochs_critic, "epochs_action": h.epochs_action,
            "norm_v_o": h.norm_scales[0], "norm_i_l": h.norm_scales[1],
            "norm_e_v": h.norm_scales[2], "norm_e_i": h.norm_scales[3],
            "norm_duty": h.norm_scales[4],
            "duty_min": h.duty_limits[0], "duty_max": h.duty_limits[1],
        },
        "pi": {k: getattr(cfg.pi, k) for k in _SCHEMA["pi"]},
        "pretrain": {k: getattr(cfg.pretrain, k) for k in _SCHEMA["pretrain"]},
        "run": {
            "scenarios": " ".join(cfg.scenarios),
            "out": cfg.out_dir,
            "seed": cfg.seed,
        },
    }
    out = io.StringIO()
    for section, keys in flat.items():
        out.write(f"[{section}]\n")
        for key, value in keys.items():
            out.write(f"{key} = {_fmt(value)}\n")
        out.write("\n")
    return out.getvalue()


def _echo_defaults(defaulted: list[tuple[str, str, object]]) -> None:
    for section, key, value in defaulted:
        log.info("default [%s] %s = %s", section, key, _fmt(value))


# ---------------------------------------------------------------------------
# subcommands


def _snapshot_paths(cfg: RunConfig) -> tuple[Path, Path]:
    out = Path(cfg.out_dir)
    return out / "critic.mlp", out / "action.mlp"


def cmd_pretrain(cfg: RunConfig) -> int:
    """Run the offline pipeline and write network snapshots plus residuals."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pt = cfg.pretrain
    teacher = sim.make_reference_law(cfg.plant, hdp_config=cfg.hdp)
    log.info(
        "excitation log: %d episodes x %d holds under duty_ff=%.4f teacher",
        pt.n_episodes, pt.n_holds, teacher.duty_ff,
    )
    transitions = sim.generate_excitation_log(
        teacher, cfg.plant, cfg.hdp, seed=cfg.seed,
        n_episodes=pt.n_episodes, n_holds=pt.n_holds,
    )
    try:
        critic, history = sim.pretrain_critic(
            cfg.plant, teacher, cfg.hdp, seed=cfg.seed,
            max_epochs=pt.max_epochs, learning_rate=pt.learning_rate,
            log=transitions,
        )
    except sim.PretrainingError as exc:
        log.error("pretraining failed: %s", exc)
        return 2
    action = make_action(seed=cfg.seed)
    clone_mse = sim.clone_action(
        action, transitions, cfg.hdp, seed=cfg.seed + 2,
        epochs=pt.clone_epochs, learning_rate=pt.clone_learning_rate,
    )
    critic_path, action_path = _snapshot_paths(cfg)
    critic.save(critic_path)
    action.save(action_path)
    residuals_path = out / "pretrain_residuals.csv"
    with open(residuals_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_squared_residual"])
        for epoch, value in enumerate(history):
            writer.writerow([epoch, repr(value)])
    log.info(
        "critic: %d epochs, residual %.4g -> %.4g (ratio %.1f); clone mse %.3g",
        len(history) - 1, history[0], history[-1],
        history[0] / history[-1] if history[-1] > 0.0 else float("inf"),
        clone_mse,
    )
    log.info("wrote %s, %s, %s", critic_path, action_path, residuals_path)
    return 0


def _load_networks(cfg: RunConfig) -> tuple[Mlp, Mlp]:
    critic_path, action_path = _snapshot_paths(cfg)
    if not critic_path.is_file() or not action_path.is_file():
        raise ConfigError(
            f"no network snapshots in {cfg.out_dir}/ "
            "(critic.mlp, action.mlp): pretrain first"
        )
    return Mlp.load(critic_path), Mlp.load(action_path)


def _build_controller(cfg: RunConfig, spec: sim.ScenarioSpec):
    if spec.controller_tag == "PI":
        pi = PiController(
            kp=cfg.pi.kp, ki=cfg.pi.ki, duty_ff=cfg.pi.duty_ff,
            dt_ctrl=cfg.plant.t_sw,
        )
        return sim.baseline_for_scenario(spec, cfg.plant, pi)
    critic, action = _load_networks(cfg)
    return HdpController(critic=critic, action=action, config=cfg.hdp)


def _upsert_metrics(path: Path, scenario: str, tag: str, m: sim.Metrics) -> None:
    """One row per (scenario, controller); a rerun replaces its old row."""
    rows: list[dict[str, str]] = []
    if path.is_file():
        with open(path, newline="") as fh:
            rows = [
                r for r in csv.DictReader(fh)
                if (r["scenario"], r["controller"]) != (scenario, tag)
            ]
    rows.append({
        "scenario": scenario,
        "controller": tag,
        "settling_time": repr(m.settling_time),
        "overshoot": repr(m.overshoot),
        "steady_state_error": repr(m.steady_state_error),
        "iae": repr(m.iae),
        "peak_deviation": repr(m.peak_deviation),
        "oscillation": str(m.oscillation),
        "unsettled": str(m.unsettled),
    })
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def _run_cell(cfg: RunConfig, scenario: str, tag: str) -> sim.Metrics:
    """Simulate one (scenario, controller) pair and write its artifacts."""
    spec = sim.builtin_scenario(scenario, tag, cfg.plant, seed=cfg.seed)
    controller = _build_controller(cfg, spec)
    trace, metrics = sim.run_scenario(spec, controller, cfg.plant, cfg.hdp)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sim.write_trace_csv(out / f"{scenario}_{tag}.csv", trace)
    _upsert_metrics(out / "metrics.csv", scenario, tag, metrics)
    return metrics


def cmd_run(cfg: RunConfig, scenario: str, tag: str) -> int:
    """Run one scenario with one controller; write trace and metrics row."""
    if scenario not in sim.SCENARIO_NAMES:
        log.error(
            "unknown scenario %r; valid: %s", scenario, " ".join(sim.SCENARIO_NAMES)
        )
        return 1
    if tag not in sim.CONTROLLER_TAGS:
        log.error(
            "unknown controller %r; valid: %s", tag, " ".join(sim.CONTROLLER_TAGS)
        )
        return 1
    try:
        m = _run_cell(cfg, scenario, tag)
    except ConfigError as exc:
        log.error("%s", exc)
        return 1
    except sim.SimulationDiverged as exc:
        log.error("%s %s diverged: %s", scenario, tag, exc)
        return 2
    log.info(
        "%s %s: settling %.2f ms, overshoot %.2f%%, iae %.4f, "
        "peak %.2f V, oscillation %s, unsettled %s",
        scenario, tag, m.settling_time * 1e3, m.overshoot, m.iae,
        m.peak_deviation, m.oscillation, m.unsettled,
    )
    return 0


def cmd_compare(cfg: RunConfig) -> int:
    """Run every configured scenario under PI and HDP and print the table.

    A failed cell is reported and skipped; the remaining cells still run and
    the exit code reflects the worst failure (divergence wins over missing
    snapshots).
    """
    worst = 0
    lines = [
        f"{'scenario':<14} {'controller':<10} {'settling_ms':>12} "
        f"{'overshoot_%':>12} {'iae':>10}"
    ]
    for scenario in cfg.scenarios:
        for tag in ("PI", "HDP"):
            try:
                m = _run_cell(cfg, scenario, tag)
            except ConfigError as exc:
                log.error("%s %s: %s", scenario, tag, exc)
                lines.append(f"{scenario:<14} {tag:<10} {'-':>12} {'-':>12} {'-':>10}")
                worst = max(worst, 1)
                continue
            except sim.SimulationDiverged as exc:
                log.error("%s %s diverged: %s", scenario, tag, exc)
                lines.append(f"{scenario:<14} {tag:<10} {'-':>12} {'-':>12} {'-':>10}")
                worst = 2
                continue
            lines.append(
                f"{scenario:<14} {tag:<10} {m.settling_time * 1e3:>12.2f} "
                f"{m.overshoot:>12.2f} {m.iae:>10.4f}"
            )
    print("\n".join(lines))
    return worst


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="configuration file")
    common.add_argument("--out", metavar="DIR", help="output directory override")
    common.add_argument("--seed", metavar="N", type=int, help="global seed override")
    parser = argparse.ArgumentParser(
        prog="boosthdp",
        description="Boost-converter neuro-controller: pretrain, run, compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain", parents=[common],
                   help="train network snapshots from the built-in teacher")
    p_run = sub.add_parser("run", parents=[common],
                           help="simulate one scenario with one controller")
    p_run.add_argument("scenario", help=" | ".join(sim.SCENARIO_NAMES))
    p_run.add_argument("controller", help=" | ".join(sim.CONTROLLER_TAGS))
    sub.add_parser("compare", parents=[common],
                   help="PI-vs-HDP metric table over the configured scenarios")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; remap
        return 0 if exc.code == 0 else 1
    try:
        cfg, defaulted = load_config(args.config)
    except ConfigError as exc:
        log.error("%s", exc)
        return 1
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
        defaulted = [d for d in defaulted if d[:2] != ("run", "out")]
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
        defaulted = [d for d in defaulted if d[:2] != ("run", "seed")]
    _echo_defaults(defaulted)
    if args.command == "pretrain":
        return cmd_pretrain(cfg)
    if args.command == "run":
        return cmd_run(cfg, args.scenario, args.controller)
    return cmd_compare(cfg)


if __name__ == "__main__":
    sys.exit(main())
