"""Command-line front end.

Subcommands: simulate, tune, train, predict, mission, auv, report.  Every run
writes a manifest (resolved config, hash, seed, version) into its output
directory; series and summaries are CSV; identical config and seed produce
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    Manifest,
    load_config,
    output_root,
)
from .controllers import PdGains, SmcAttitudeGains
from .scenarios import (
    AuvScenarioConfig,
    MissionScenarioConfig,
    RelPosScenarioConfig,
    RunReport,
    ScienceScenarioConfig,
    compute_metrics,
    run_auv_formation,
    run_relpos_formation,
    run_science_attitude_comparison,
    run_supervised_mission,
    run_transient_campaign,
)
from .supervisor import default_mission_catalog
from .surrogate import (
    MlpModel,
    TrainConfig,
    evaluate_mse,
    load_model,
    loss_history_csv,
    predict_plan,
    save_model,
    train,
)
from .tuner import (
    AttitudePlantConfig,
    Dataset,
    DistributionConfig,
    FEATURE_NAMES,
    MogaConfig,
    SaConfig,
    ScenarioSample,
    TARGET_NAMES,
    dataset_to_csv,
    moga,
    rollout_batch,
)

log = logging.getLogger("formctl.cli")


# ---------------------------------------------------------------------------
# Report and dataset I/O
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_report(report: RunReport, run_dir: Path) -> Path:
    """One directory per report: t.csv, one CSV per series, summary.csv."""
    d = run_dir / report.name
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "t.csv", "w") as fh:
        fh.write("t\n")
        fh.writelines(_fmt(v) + "\n" for v in report.t)
    for name, arr in report.series.items():
        a = np.atleast_2d(np.asarray(arr, float).T).T
        with open(d / f"{name}.csv", "w") as fh:
            fh.write(",".join(f"{name}_{j}" for j in range(a.shape[1])) + "\n")
            for row in a:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    with open(d / "summary.csv", "w") as fh:
        fh.write("metric,value\n")
        for k in sorted(report.metrics):
            fh.write(f"{k},{_fmt(report.metrics[k])}\n")
    with open(d / "meta.json", "w") as fh:
        json.dump(report.meta, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return d


def load_report_dir(d: Path) -> tuple[np.ndarray, Dict[str, np.ndarray], Dict[str, str]]:
    """Read back stored series plus the summary rows (as written strings)."""
    t = np.loadtxt(d / "t.csv", skiprows=1, ndmin=1)
    series: Dict[str, np.ndarray] = {}
    for f in sorted(d.glob("*.csv")):
        if f.name in ("t.csv", "summary.csv"):
            continue
        arr = np.loadtxt(f, skiprows=1, delimiter=",", ndmin=2)
        series[f.stem] = arr[:, 0] if arr.shape[1] == 1 else arr
    summary: Dict[str, str] = {}
    with open(d / "summary.csv") as fh:
        next(fh)
        for line in fh:
            k, v = line.strip().split(",", 1)
            summary[k] = v
    return t, series, summary


def emit_plot_data(run_dir: Path) -> List[Path]:
    """Tidy long-format (time, series, value) CSVs, one per report dir.

    Missing series are skipped (and listed); re-emission is byte-identical.
    """
    out: List[Path] = []
    missing: List[str] = []
    for d in sorted(p for p in run_dir.iterdir() if p.is_dir()):
        if not (d / "t.csv").exists():
            missing.append(d.name)
            continue
        t, series, _ = load_report_dir(d)
        dest = run_dir / f"plot_{d.name}.csv"
        with open(dest, "w") as fh:
            fh.write("time,series,value\n")
            for name in sorted(series):
                arr = np.atleast_2d(np.asarray(series[name], float).T).T
                if len(arr) != len(t):
                    continue  # series on a different rate: not plot data
                for j in range(arr.shape[1]):
                    col = f"{name}_{j}" if arr.shape[1] > 1 else name
                    for ti, vi in zip(t, arr[:, j]):
                        fh.write(f"{_fmt(ti)},{col},{_fmt(vi)}\n")
        out.append(dest)
    pareto = run_dir / "pareto.csv"
    if pareto.exists():
        dest = run_dir / "plot_pareto.csv"
        dest.write_text(pareto.read_text())
        out.append(dest)
    if missing:
        log.warning("plot data: skipped %s (no series)", ", ".join(missing))
    return out


def _dataset_from_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    n_feat = len(FEATURE_NAMES)
    if header[:n_feat] != FEATURE_NAMES:
        raise ConfigError(f"unexpected dataset schema in {path}")
    data = np.loadtxt(path, skiprows=1, delimiter=",", ndmin=2)
    return data[:, :n_feat], data[:, n_feat:]


def load_dataset_dir(d: Path) -> Dataset:
    Xtr, Ytr = _dataset_from_csv(d / "dataset_train.csv")
    Xte, Yte = _dataset_from_csv(d / "dataset_test.csv")
    std = lambda a: np.where(a.std(axis=0) == 0.0, 1.0, a.std(axis=0))
    return Dataset(
        X_train=Xtr,
        Y_train=Ytr,
        X_test=Xte,
        Y_test=Yte,
        feat_mean=Xtr.mean(axis=0),
        feat_std=std(Xtr),
        targ_mean=Ytr.mean(axis=0),
        targ_std=std(Ytr),
        seed=0,
    )


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def _science_cfg(cfg: dict) -> ScienceScenarioConfig:
    s = cfg["science"]
    return ScienceScenarioConfig(
        initial_error_deg=s["initial_error_deg"],
        error_axis=tuple(s["error_axis"]),
        duration=s["duration"],
        dt=s["dt"],
        torque_bias_bound=s["torque_bias_bound"],
        q_noise_std=s["q_noise_std"],
        omega_noise_std=s["omega_noise_std"],
    )


def _relpos_cfg(cfg: dict) -> RelPosScenarioConfig:
    r = cfg["relpos"]
    return RelPosScenarioConfig(
        duration=r["duration"],
        dt=r["dt"],
        r_rel0_km=tuple(r["r_rel0_km"]),
        v_rel0=tuple(r["v_rel0"]),
        r_rel_target_km=tuple(r["r_rel_target_km"]),
        accel_bias=tuple(r["accel_bias"]),
        accel_noise_std=r["accel_noise_std"],
        meas_r_std=r["meas_r_std"],
        meas_v_std=r["meas_v_std"],
        store_stride=r["store_stride"],
        disturbances_on=r["disturbances_on"],
    )


def _auv_cfg(cfg: dict, use_sign: bool = False) -> AuvScenarioConfig:
    a = cfg["auv"]
    return AuvScenarioConfig(
        duration=a["duration"],
        dt=a["dt"],
        r_leader_target=tuple(a["r_leader_target"]),
        offset=tuple(a["offset"]),
        current_tau=a["current_tau"],
        current_sigma=a["current_sigma"],
        meas_r_std=a["meas_r_std"],
        meas_v_std=a["meas_v_std"],
        meas_q_std=a["meas_q_std"],
        meas_w_std=a["meas_w_std"],
        store_stride=a["store_stride"],
        disturbances_on=a["disturbances_on"],
    )


def _plant_cfg(cfg: dict) -> AttitudePlantConfig:
    p = cfg["plant"]
    return AttitudePlantConfig(
        J_diag=tuple(p["J_diag"]),
        dt=p["dt"],
        torque_bias_bound=p["torque_bias_bound"],
        q_noise_std=p["q_noise_std"],
        omega_noise_std=p["omega_noise_std"],
        disturbances_on=p["disturbances_on"],
    )


def cmd_simulate(args, cfg: dict, run_dir: Path) -> int:
    seed = args.seed if args.seed is not None else cfg["global"]["seed"]
    name = args.scenario
    if name in ("attitude-smc", "attitude-pd"):
        sc = cfg["science"]
        reports = run_science_attitude_comparison(
            SmcAttitudeGains(*sc["smc_gains"]),
            PdGains(*sc["pd_gains"]),
            seed=seed,
            cfg=_science_cfg(cfg),
        )
        rep = reports["smc_att" if name.endswith("smc") else "pd"]
        write_report(rep, run_dir)
    elif name in ("relpos-smc", "relpos-pd"):
        rep = run_relpos_formation(name.split("-")[1], seed, _relpos_cfg(cfg))
        write_report(rep, run_dir)
    elif name == "auv":
        reports = run_auv_formation(
            seed, _auv_cfg(cfg), use_sign_law=cfg["auv"]["use_sign_law"]
        )
        for rep in reports.values():
            write_report(rep, run_dir)
    else:
        raise ConfigError(f"unknown scenario {name!r}")
    print(f"simulate {name}: wrote {run_dir}")
    return 0


def cmd_tune(args, cfg: dict, run_dir: Path) -> int:
    seed = args.seed if args.seed is not None else cfg["global"]["seed"]
    t = cfg["tune"]
    n = 10 if args.budget_smoke else t["scenarios"]
    iters = 200 if args.budget_smoke else t["sa_iterations"]
    method = args.method or t["method"]

    if method == "sa":
        d = cfg["distributions"]
        dists = DistributionConfig(
            q_lo=d["q_lo"], q_hi=d["q_hi"],
            omega0_mean=d["omega0_mean"], omega0_std=d["omega0_std"],
            omegaf_mean=d["omegaf_mean"], omegaf_std=d["omegaf_std"],
            w1_mean=d["w1_mean"], w1_std=d["w1_std"],
            w2_lo=d["w2_lo"], w2_hi=d["w2_hi"],
            w3_lo=d["w3_lo"], w3_hi=d["w3_hi"],
        )
        sa = SaConfig(
            initial_temp=t["sa_initial_temp"],
            cooling=t["sa_cooling"],
            iterations=iters,
            step_scales=tuple(t["sa_step_scales"]),
            seed=seed,
        )
        log.info("transient campaign: %d scenarios, %d iterations", n, iters)
        result = run_transient_campaign(
            n, sa, seed, dists=dists, plant=_plant_cfg(cfg),
            split_ratio=t["split_ratio"], jobs=cfg["global"]["jobs"],
        )
        (run_dir / "dataset_train.csv").write_text(
            dataset_to_csv(result.dataset, "train")
        )
        (run_dir / "dataset_test.csv").write_text(
            dataset_to_csv(result.dataset, "test")
        )
        with open(run_dir / "stats.csv", "w") as fh:
            fh.write("quantity,mean,mode,variance,p1,p99,max\n")
            for k, s in result.stats.items():
                fh.write(
                    f"{k},{_fmt(s.mean)},{_fmt(s.mode)},{_fmt(s.variance)},"
                    f"{_fmt(s.p_low)},{_fmt(s.p_high)},{_fmt(s.max)}\n"
                )
        log.info("campaign done: %d scenarios, %d excluded", n, result.excluded)
        print(f"tune sa: wrote {run_dir} (excluded {result.excluded})")
        return 0

    if method == "moga":
        pop = 16 if args.budget_smoke else t["moga_population"]
        gens = 10 if args.budget_smoke else t["moga_generations"]
        sc_cfg = _science_cfg(cfg)
        from .mathcore import Quaternion

        q0 = Quaternion.from_axis_angle(
            np.asarray(sc_cfg.error_axis), math.radians(sc_cfg.initial_error_deg)
        ).to_array()
        scen = ScenarioSample(
            q0=q0, omega0=np.zeros(3), qf=np.array([0.0, 0.0, 0.0, 1.0]),
            omegaf=np.zeros(3), w=np.array([1.0, 1.0, 0.0]), seed=seed,
        )
        plant = AttitudePlantConfig(
            dt=sc_cfg.dt,
            torque_bias_bound=sc_cfg.torque_bias_bound,
            q_noise_std=sc_cfg.q_noise_std,
            omega_noise_std=sc_cfg.omega_noise_std,
        )

        def objective(X: np.ndarray) -> np.ndarray:
            B = len(X)
            gains = {
                "k_smc": X[:, 0],
                "Z": np.repeat(X[:, 1:2], 3, axis=1),
                "eps": np.repeat(X[:, 2:3], 3, axis=1),
            }
            costs, _, _ = rollout_batch(
                [scen] * B, "smc_att", gains,
                np.full(B, sc_cfg.duration), plant,
            )
            return np.array([[c.E, c.e] for c in costs])

        bounds = [(0.01, 3.0), (0.001, 1.0), (0.01, 1.0)]
        archive = moga(objective, bounds, MogaConfig(pop, gens, seed=seed))
        with open(run_dir / "pareto.csv", "w") as fh:
            fh.write("E,e,k_smc,Z,eps,dominated\n")
            for x, f in zip(archive.X, archive.F):
                fh.write(
                    f"{_fmt(f[0])},{_fmt(f[1])},{_fmt(x[0])},{_fmt(x[1])},"
                    f"{_fmt(x[2])},False\n"
                )
        print(f"tune moga: wrote {run_dir / 'pareto.csv'} ({len(archive.X)} points)")
        return 0

    raise ConfigError(f"unknown tune method {method!r}")


def cmd_train(args, cfg: dict, run_dir: Path) -> int:
    seed = args.seed if args.seed is not None else cfg["global"]["seed"]
    data_dir = Path(args.data)
    ds = load_dataset_dir(data_dir)
    tr = cfg["train"]
    model = MlpModel(
        layer_sizes=(len(FEATURE_NAMES), *tr["hidden"], len(TARGET_NAMES)),
        seed=seed,
    )
    tc = TrainConfig(
        learning_rate=tr["learning_rate"],
        beta1=tr["beta1"],
        beta2=tr["beta2"],
        batch_size=tr["batch_size"],
        epochs=100 if args.budget_smoke else tr["epochs"],
        seed=seed,
    )
    model, history = train(model, ds, tc)
    save_model(model, str(run_dir / "model.npz"))
    (run_dir / "loss_history.csv").write_text(loss_history_csv(history))
    mse_tr = evaluate_mse(model, ds.X_train, ds.Y_train)
    mse_te = evaluate_mse(model, ds.X_test, ds.Y_test)
    print(f"train: MSE train {mse_tr:.5f} held-out {mse_te:.5f} -> {run_dir}")
    return 0


def _parse_vec(text: str, n: int, name: str) -> np.ndarray:
    parts = [p for p in text.split(",") if p]
    if len(parts) != n:
        raise ConfigError(f"--{name} expects {n} comma-separated values")
    return np.array([float(p) for p in parts])


def cmd_predict(args, cfg: dict, run_dir: Path) -> int:
    model = load_model(args.model)
    q0 = _parse_vec(args.q0, 4, "q0") if args.q0 else np.array([0.0, 0.0, 0.0, 1.0])
    w0 = _parse_vec(args.omega0, 3, "omega0") if args.omega0 else np.zeros(3)
    qf = _parse_vec(args.qf, 4, "qf") if args.qf else np.array([0.0, 0.0, 0.0, 1.0])
    w = (
        _parse_vec(args.weights, 3, "weights")
        if args.weights
        else np.asarray(cfg["mission"]["weights"])
    )
    plan = predict_plan(model, q0, w0, w, qf)
    out = {
        "E": plan.predicted_E,
        "e": plan.predicted_e,
        "k1": plan.gains.k1,
        "k2": plan.gains.k2,
        "T": plan.T,
        "clamped": plan.clamped,
        "out_of_distribution": plan.out_of_distribution,
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_mission(args, cfg: dict, run_dir: Path) -> int:
    seed = args.seed if args.seed is not None else cfg["global"]["seed"]
    model_path = args.model or cfg["mission"]["model_path"]
    if not model_path:
        raise ConfigError("mission requires --model (a trained predictor file)")
    model = load_model(model_path)
    m = cfg["mission"]
    mcfg = MissionScenarioConfig(
        time_scale=cfg["global"]["time_scale"],
        dt=m["dt"],
        u1=m["u1"],
        u4=m["u4"],
        science_gains=tuple(m["science_gains"]),
        weights=tuple(m["weights"]),
    )
    catalog = default_mission_catalog(mcfg.time_scale)
    trace, audit = run_supervised_mission(model, catalog, seed, mcfg)
    (run_dir / "trace.jsonl").write_text(trace.to_jsonl())
    with open(run_dir / "episodes.csv", "w") as fh:
        fh.write("state,enter,exit,duration\n")
        for row in trace.summary_rows():
            fh.write(
                f"{row['state']},{_fmt(row['enter'])},{_fmt(row['exit'])},"
                f"{_fmt(row['duration'])}\n"
            )
    with open(run_dir / "audit.csv", "w") as fh:
        fields = [
            "phase", "object", "T", "predicted_E", "predicted_e",
            "realized_E", "realized_e", "realized_e_deg",
        ]
        fh.write(",".join(fields) + "\n")
        for row in audit:
            fh.write(
                ",".join(
                    _fmt(row[k]) if isinstance(row.get(k), float) else str(row.get(k, ""))
                    for k in fields
                )
                + "\n"
            )
    n_sci = len(trace.science_episodes())
    print(f"mission: {n_sci} science episodes, trace -> {run_dir}")
    if trace.fault:
        print(f"mission fault: {trace.fault}", file=sys.stderr)
        return 1
    return 0


def cmd_auv(args, cfg: dict, run_dir: Path) -> int:
    seed = args.seed if args.seed is not None else cfg["global"]["seed"]
    reports = run_auv_formation(seed, _auv_cfg(cfg))
    for rep in reports.values():
        write_report(rep, run_dir)
    line = (
        f"auv: formation final-10% error "
        f"{reports['follower'].meta['final10_mean_error_m']:.4f} m"
    )
    if args.compare_sign:
        sign_reports = run_auv_formation(seed, _auv_cfg(cfg), use_sign_law=True)
        ratio = (
            sign_reports["follower"].metrics["sign_flip_rate"]
            / max(reports["follower"].metrics["sign_flip_rate"], 1e-12)
        )
        with open(run_dir / "chattering.csv", "w") as fh:
            fh.write("variant,sign_flip_rate\n")
            fh.write(
                f"boundary_layer,{_fmt(reports['follower'].metrics['sign_flip_rate'])}\n"
            )
            fh.write(
                f"sign_law,{_fmt(sign_reports['follower'].metrics['sign_flip_rate'])}\n"
            )
        line += f", sign-law flips {ratio:.1f}x the boundary-layer rate"
    print(line)
    return 0


def cmd_report(args, cfg: dict, run_dir: Path) -> int:
    target = Path(args.run)
    if not target.exists():
        raise ConfigError(f"run directory not found: {target}")
    failures = 0
    for d in sorted(p for p in target.iterdir() if p.is_dir()):
        if not (d / "summary.csv").exists():
            continue
        t, series, stored = load_report_dir(d)
        recomputed = compute_metrics(t, series)
        for k, v_str in stored.items():
            if k not in recomputed:
                print(f"{d.name}: {k} missing from recompute FAIL")
                failures += 1
                continue
            if _fmt(recomputed[k]) == v_str:
                print(f"{d.name}: {k} ok")
            else:
                print(
                    f"{d.name}: {k} mismatch stored={v_str} "
                    f"recomputed={_fmt(recomputed[k])} FAIL"
                )
                failures += 1
    if args.plots:
        for p in emit_plot_data(target):
            print(f"plot data: {p}")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="formctl",
        description="Formation-control simulation, tuning, and supervision toolkit",
    )
    ap.add_argument("--version", action="version", version=f"formctl {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config overlay")
    common.add_argument("--seed", type=int, default=None, help="seed override")
    common.add_argument("--out", default=None, help="output directory root")
    common.add_argument("--jobs", type=int, default=None, help="parallel workers")
    common.add_argument(
        "--budget-smoke", action="store_true", help="tiny budgets for smoke tests"
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run one scenario")
    p.add_argument(
        "--scenario",
        required=True,
        choices=["attitude-smc", "attitude-pd", "relpos-smc", "relpos-pd", "auv"],
    )
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("tune", parents=[common], help="gain-tuning campaign")
    p.add_argument("--method", choices=["sa", "moga"], default=None)
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("train", parents=[common], help="train the gain predictor")
    p.add_argument("--data", required=True, help="directory with dataset CSVs")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="one-shot prediction")
    p.add_argument("--model", required=True)
    p.add_argument("--q0", help="initial quaternion x,y,z,w")
    p.add_argument("--omega0", help="initial rate rad/s x,y,z")
    p.add_argument("--qf", help="target quaternion x,y,z,w")
    p.add_argument("--weights", help="cost weights w1,w2,w3")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("mission", parents=[common], help="supervised replay")
    p.add_argument("--model", help="trained predictor file")
    p.set_defaults(fn=cmd_mission)

    p = sub.add_parser("auv", parents=[common], help="leader-follower run")
    p.add_argument("--compare-sign", action="store_true")
    p.set_defaults(fn=cmd_auv)

    p = sub.add_parser("report", parents=[common], help="recompute summaries")
    p.add_argument("--run", required=True, help="existing run directory")
    p.add_argument("--plots", action="store_true", help="emit plot-data bundle")
    p.set_defaults(fn=cmd_report)
    return ap


def dispatch(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg["global"]["seed"] = args.seed
    if args.jobs is not None:
        cfg["global"]["jobs"] = args.jobs
    logging.basicConfig(
        level=getattr(logging, cfg["global"]["log_level"], logging.INFO),
        format="%(name)s %(levelname)s %(message)s",
    )
    run_dir = output_root(cfg, args.out) / args.command
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        Manifest(
            command=args.command, seed=cfg["global"]["seed"], config=cfg
        ).write(run_dir)
        return args.fn(args, cfg, run_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime fault
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
