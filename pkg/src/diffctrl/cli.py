"""Command-line entry point: forward | train | eval | rank | verify-pde.

Configs are strict JSON (unknown keys are errors). Every run directory gets a
complete config echo, machine-readable CSV/JSON outputs, and rendered PNG
figures next to them. Exit codes: 0 success, 1 runtime or threshold failure,
2 usage/config errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

__all__ = ["main"]


def _apply_thread_cap(argv) -> None:
    """Cap worker threads before numpy loads its BLAS (best effort)."""
    if "--threads" not in argv:
        return
    try:
        n = int(argv[argv.index("--threads") + 1])
    except (IndexError, ValueError):
        return
    if n < 1:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


class ConfigError(ValueError):
    pass


def _require_keys(obj: dict, required: set, optional: set, where: str) -> None:
    missing = required - obj.keys()
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")
    unknown = obj.keys() - required - optional
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)} (typo?)")


def _load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# experiment configs (forward / train / eval)

_EXP_REQUIRED = {"experiment", "system", "sigma", "horizon", "dt", "n_measure",
                 "m_train", "epochs", "seed", "target", "initial", "network"}
_EXP_OPTIONAL = {"domain", "drift", "bandwidth", "m_eval", "optimizer", "out_dir",
                 "forward_dir", "resume", "final_kl_threshold", "record_snapshots"}


def load_experiment_config(path, out_override=None, seed_override=None) -> dict:
    import numpy as np

    from . import core, divergence, forward, systems

    raw = _load_json(path)
    _require_keys(raw, _EXP_REQUIRED, _EXP_OPTIONAL, "config")

    sysname = raw["system"]
    system = systems.get_system(sysname)

    domain = None
    if raw.get("domain") is not None:
        dom = raw["domain"]
        _require_keys(dom, {"lower", "upper"}, set(), "config.domain")
        lower = np.asarray(dom["lower"], dtype=float)
        upper = np.asarray(dom["upper"], dtype=float)
        domain = core.BoxDomain(lower, upper, np.ones(lower.shape[0], dtype=bool))
        if domain.d != system.d:
            raise ConfigError(f"domain dimension {domain.d} != system dimension {system.d}")

    drift_raw = raw.get("drift", {"kind": "zero"})
    _require_keys(drift_raw, {"kind"}, {"k"}, "config.drift")
    drift = forward.DriftSpec(kind=drift_raw["kind"], k=drift_raw.get("k"))
    if drift.kind == "linear" and domain is not None:
        raise ConfigError("linear drift runs on an unbounded domain; drop the 'domain' block")

    def gaussian_spec(block, where):
        _require_keys(block, {"kind", "mean", "cov_scale"}, set(), where)
        if block["kind"] != "gaussian":
            raise ConfigError(f"{where}: only gaussian specs are supported here")
        mean = np.asarray(block["mean"], dtype=float)
        if mean.shape[0] != system.d:
            raise ConfigError(f"{where}: mean dimension {mean.shape[0]} != system d={system.d}")
        return core.GaussianSpec(mean=mean, cov_scale=float(block["cov_scale"]))

    target = gaussian_spec(raw["target"], "config.target")

    init_raw = raw["initial"]
    if init_raw.get("kind") == "uniform":
        _require_keys(init_raw, {"kind"}, set(), "config.initial")
        if domain is None or not domain.all_bounded:
            raise ConfigError("uniform initial density requires a bounded domain")
        initial = core.InitialSpec(kind="uniform", box=domain)
    else:
        initial = core.InitialSpec(kind="gaussian", gaussian=gaussian_spec(init_raw, "config.initial"))

    if raw.get("bandwidth") is not None:
        bandwidth = float(raw["bandwidth"])
    elif domain is not None and domain.all_bounded:
        bandwidth = divergence.default_bandwidth(domain)
    else:
        raise ConfigError("unbounded domain: an explicit 'bandwidth' is required")
    if bandwidth <= 0:
        raise ConfigError("bandwidth must be positive")

    net = raw["network"]
    _require_keys(net, {"hidden"}, set(), "config.network")
    hidden = [int(h) for h in net["hidden"]]
    if any(h < 1 for h in hidden):
        raise ConfigError("hidden layer sizes must be >= 1")

    opt = raw.get("optimizer", {})
    _require_keys(opt, set(), {"lr", "beta1", "beta2", "eps"}, "config.optimizer")

    resume = raw.get("resume")
    if resume is not None:
        _require_keys(resume, {"checkpoint"}, {"start_epoch"}, "config.resume")

    epochs = int(raw["epochs"])
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    n_measure = int(raw["n_measure"])
    horizon = float(raw["horizon"])
    dt = float(raw["dt"])
    times = forward.default_times(horizon, n_measure)
    ratios = times / dt
    if np.any(np.abs(ratios - np.rint(ratios)) > 1e-9):
        raise ConfigError(
            "measurement instants must be integer multiples of dt: "
            f"choose horizon/(n_measure-1) divisible by dt (spacing {horizon / (n_measure - 1):g})"
        )

    cfg = {
        "experiment": raw["experiment"],
        "system": sysname,
        "system_obj": system,
        "domain": domain,
        "drift": drift,
        "sigma": float(raw["sigma"]),
        "horizon": horizon,
        "dt": dt,
        "n_measure": n_measure,
        "m_train": int(raw["m_train"]),
        "m_eval": int(raw.get("m_eval", 2000)),
        "bandwidth": bandwidth,
        "target": target,
        "initial": initial,
        "hidden": hidden,
        "lr": float(opt.get("lr", 1e-3)),
        "beta1": float(opt.get("beta1", 0.9)),
        "beta2": float(opt.get("beta2", 0.999)),
        "eps": float(opt.get("eps", 1e-8)),
        "epochs": epochs,
        "seed": int(seed_override if seed_override is not None else raw["seed"]),
        "out_dir": Path(out_override or raw.get("out_dir") or f"runs/{raw['experiment']}"),
        "forward_dir": raw.get("forward_dir"),
        "resume": resume,
        "final_kl_threshold": raw.get("final_kl_threshold"),
        "record_snapshots": bool(raw.get("record_snapshots", False)),
        "times": times,
    }
    return cfg


def _echo_config(cfg: dict, out_dir: Path) -> None:
    echo = {
        "experiment": cfg["experiment"],
        "system": cfg["system"],
        "domain": None
        if cfg["domain"] is None
        else {"lower": cfg["domain"].lower.tolist(), "upper": cfg["domain"].upper.tolist()},
        "drift": cfg["drift"].to_dict(),
        "sigma": cfg["sigma"],
        "horizon": cfg["horizon"],
        "dt": cfg["dt"],
        "n_measure": cfg["n_measure"],
        "m_train": cfg["m_train"],
        "m_eval": cfg["m_eval"],
        "bandwidth": cfg["bandwidth"],
        "target": {"kind": "gaussian", "mean": cfg["target"].mean.tolist(), "cov_scale": cfg["target"].cov_scale},
        "initial": {"kind": cfg["initial"].kind}
        if cfg["initial"].kind == "uniform"
        else {
            "kind": "gaussian",
            "mean": cfg["initial"].gaussian.mean.tolist(),
            "cov_scale": cfg["initial"].gaussian.cov_scale,
        },
        "network": {"hidden": cfg["hidden"]},
        "optimizer": {"lr": cfg["lr"], "beta1": cfg["beta1"], "beta2": cfg["beta2"], "eps": cfg["eps"]},
        "epochs": cfg["epochs"],
        "seed": cfg["seed"],
        "resume": cfg["resume"],
        "record_snapshots": cfg["record_snapshots"],
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(echo, fh, indent=2)


def _forward_trace(cfg: dict, persist_dir: Path | None):
    """Load the configured forward trace or generate (and persist) it."""
    from . import core, forward

    if cfg["forward_dir"] is not None:
        return forward.load_trace(cfg["forward_dir"])
    init = core.sample_gaussian(cfg["target"], cfg["m_train"], core.derive_seed(cfg["seed"], 0, 0))
    trace = forward.simulate_forward(
        init, cfg["drift"], cfg["sigma"], cfg["domain"], cfg["dt"], cfg["times"],
        core.derive_seed(cfg["seed"], 0, 1),
    )
    if persist_dir is not None:
        forward.save_trace(trace, persist_dir)
    return trace


# ---------------------------------------------------------------------------
# subcommands


def cmd_forward(args) -> int:
    import numpy as np
    from scipy import stats

    from . import forward, plots

    cfg = load_experiment_config(args.config, args.out, args.seed)
    out = cfg["out_dir"]
    trace = _forward_trace(cfg, None)
    forward.save_trace(trace, out)
    _echo_config(cfg, out)

    final = trace.snapshots[-1].states
    variances = final.var(axis=0, ddof=1)
    print(f"forward: wrote {len(trace.snapshots)} snapshots to {out}")
    print("variance at T per coordinate:", " ".join(f"{v:.4f}" for v in variances))
    if cfg["drift"].kind == "zero" and cfg["domain"] is not None and cfg["domain"].all_bounded:
        crit = stats.chi2.ppf(0.99, 15)
        for k in range(final.shape[1]):
            counts, _ = np.histogram(final[:, k], bins=16,
                                     range=(cfg["domain"].lower[k], cfg["domain"].upper[k]))
            expected = final.shape[0] / 16
            stat = float(((counts - expected) ** 2 / expected).sum())
            verdict = "ok" if stat < crit else "NOT UNIFORM"
            print(f"uniformity chi2 x{k + 1}: {stat:.2f} (crit 1%: {crit:.2f}) {verdict}")
    plots.save_marginal_hist(final, out / "forward_final_marginals.png")
    return 0


def _write_history(path: Path, start_epoch: int, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "cost", "final_kl", "seconds"])
        for i, (c, k, s) in enumerate(zip(history.cost, history.final_kl, history.seconds)):
            w.writerow([start_epoch + i, repr(float(c)), repr(float(k)), f"{s:.3f}"])


def cmd_train(args) -> int:
    from . import core, plots, policy, reverse

    cfg = load_experiment_config(args.config, args.out, args.seed)
    out = cfg["out_dir"]
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)
    system = cfg["system_obj"]
    trace = _forward_trace(cfg, out / "forward")

    layer_sizes = [system.d + 1, *cfg["hidden"], system.m]
    start_epoch = 0
    if cfg["resume"] is not None:
        p0 = policy.load_policy(cfg["resume"]["checkpoint"], horizon=cfg["horizon"])
        if list(p0.layer_sizes) != layer_sizes:
            raise ConfigError(
                f"checkpoint architecture {list(p0.layer_sizes)} != configured {layer_sizes}"
            )
        start_epoch = int(cfg["resume"].get("start_epoch", 0))
    else:
        p0 = policy.init_policy(layer_sizes, cfg["horizon"], core.derive_seed(cfg["seed"], 3, 0))

    tc = reverse.TrainConfig(
        epochs=cfg["epochs"], lr=cfg["lr"], dt=cfg["dt"], horizon=cfg["horizon"],
        n_measure=cfg["n_measure"], m_train=cfg["m_train"], sigma=cfg["sigma"],
        bandwidth=cfg["bandwidth"], seed=cfg["seed"], initial=cfg["initial"],
        beta1=cfg["beta1"], beta2=cfg["beta2"], eps=cfg["eps"], start_epoch=start_epoch,
    )
    try:
        trained, history = reverse.train(tc, system, trace, p0)
    except reverse.TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1

    policy.save_policy(trained, out / "policy.json")
    _write_history(out / "history.csv", start_epoch, history)
    epochs = list(range(start_epoch, start_epoch + len(history.cost)))
    plots.save_history_plot(epochs, history.cost, history.final_kl, out / "history.png")

    if cfg["record_snapshots"]:
        init = core.sample_initial(cfg["initial"], cfg["m_train"],
                                   core.derive_seed(cfg["seed"], 1, start_epoch + cfg["epochs"]))
        rev = reverse.rollout(init, system, trained, cfg["dt"], cfg["times"])
        snapdir = out / "snapshots"
        snapdir.mkdir(exist_ok=True)
        for i in range(len(cfg["times"])):
            snap = rev.snapshot(i)
            header = ",".join(f"x{j + 1}" for j in range(snap.d))
            import numpy as np

            np.savetxt(snapdir / f"reverse_{i:04d}.csv", snap.states,
                       delimiter=",", header=header, comments="", fmt="%.17g")

    print(f"train: {len(history.cost)} epochs -> {out}")
    print(f"final cost: {history.cost[-1]:.6f}")
    print(f"final KL (train ensemble): {history.final_kl[-1]:.6f}")
    return 0


def cmd_eval(args) -> int:
    import numpy as np

    from . import core, divergence, plots, policy, reverse

    cfg = load_experiment_config(args.config, args.out, args.seed)
    out = cfg["out_dir"]
    system = cfg["system_obj"]
    try:
        pol = policy.load_policy(args.policy, horizon=cfg["horizon"])
    except (json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {args.policy}: {exc}") from exc
    expected = [system.d + 1, *cfg["hidden"], system.m]
    if list(pol.layer_sizes) != expected:
        raise ConfigError(f"checkpoint architecture {list(pol.layer_sizes)} != configured {expected}")

    target = core.sample_gaussian(cfg["target"], cfg["m_train"], core.derive_seed(cfg["seed"], 0, 0))
    init = core.sample_initial(cfg["initial"], cfg["m_eval"], core.derive_seed(cfg["seed"], 2, 0))
    times = np.asarray([0.0, cfg["horizon"]])
    rev = reverse.rollout(init, system, pol, cfg["dt"], times)
    final = rev.final()
    kcfg = core.KernelConfig(bandwidth=cfg["bandwidth"])
    metrics = {
        "final_kl": divergence.kl_blob(final, target, kcfg).value,
        "moment_diffs": {
            "order1": divergence.moment_diff(final, target, 1),
            "order2": divergence.moment_diff(final, target, 2),
        },
    }
    if cfg["m_eval"] <= divergence.W2_MAX_PARTICLES and target.m >= cfg["m_eval"]:
        sub = core.Ensemble(states=target.states[: cfg["m_eval"]], time=target.time)
        metrics["w2"] = divergence.wasserstein2_exact(final, sub)

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2)
    plots.save_ensemble_scatter(final.states, target.states, out / "eval_scatter.png")
    print(f"eval: final_kl={metrics['final_kl']:.6f} -> {out / 'metrics.json'}")
    if cfg["final_kl_threshold"] is not None and metrics["final_kl"] > cfg["final_kl_threshold"]:
        print(
            f"final KL {metrics['final_kl']:.4f} exceeds threshold {cfg['final_kl_threshold']}",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_rank(args) -> int:
    import numpy as np

    from . import systems

    system = systems.get_system(args.system)
    point = np.asarray([float(v) for v in args.point.split(",")], dtype=float)
    if point.shape[0] != system.d:
        raise ConfigError(f"point has {point.shape[0]} coordinates, system needs {system.d}")
    rank = systems.chow_rashevsky_rank(system, point, int(args.depth))
    print(rank)
    return 0


# ---------------------------------------------------------------------------
# PDE verification configs

_PDE_REQUIRED = {"experiment", "case", "grid", "domain", "horizon", "dt", "target", "thresholds"}
_PDE_OPTIONAL = {"heat_dt", "out_dir", "boundary"}


def load_pde_config(path, out_override=None) -> dict:
    import numpy as np

    from . import pdeverify

    raw = _load_json(path)
    _require_keys(raw, _PDE_REQUIRED, _PDE_OPTIONAL, "config")
    case = raw["case"]
    if case not in ("fully_actuated", "unicycle"):
        raise ConfigError("case must be 'fully_actuated' or 'unicycle'")
    shape = tuple(int(n) for n in raw["grid"])
    expected_ndim = 2 if case == "fully_actuated" else 3
    if len(shape) != expected_ndim or any(n < 4 for n in shape):
        raise ConfigError(f"case {case} needs a {expected_ndim}-axis grid with >= 4 cells each")

    dom = raw["domain"]
    _require_keys(dom, {"lower", "upper"}, set(), "config.domain")
    lower = [float(v) for v in dom["lower"]]
    upper = [float(v) for v in dom["upper"]]
    if len(lower) != expected_ndim or len(upper) != expected_ndim:
        raise ConfigError("domain bounds must match the grid dimension")
    default_boundary = ("flux", "flux") if case == "fully_actuated" else ("flux", "flux", "periodic")
    boundary = tuple(raw.get("boundary", default_boundary))
    if boundary != default_boundary:
        raise ConfigError(f"case {case} requires boundary {default_boundary}")

    spacing = tuple((u - l) / n for l, u, n in zip(lower, upper, shape))

    tgt = raw["target"]
    _require_keys(tgt, {"kind", "base", "amplitude", "center", "width"}, set(), "config.target")
    if tgt["kind"] != "bump":
        raise ConfigError("config.target: only 'bump' targets are supported")
    if float(tgt["base"]) <= 0:
        raise ConfigError("config.target: base must be positive (strict positivity)")

    thr = raw["thresholds"]
    _require_keys(thr, {"max_rel_l2"}, {"phi_gap_max", "min_spectral_gap", "max_cg_residual"},
                  "config.thresholds")

    horizon = float(raw["horizon"])
    dt = float(raw["dt"])
    if dt <= 0 or horizon <= 0 or abs(round(horizon / dt) * dt - horizon) > 1e-9:
        raise ConfigError("horizon must be a positive integer multiple of dt")

    template = pdeverify.GridField(values=np.ones(shape), spacing=spacing,
                                   boundary=boundary, origin=tuple(lower))
    heat_dt = raw.get("heat_dt")
    if heat_dt is not None:
        heat_dt = float(heat_dt)
        limit = pdeverify.stability_limit(template)
        if heat_dt > limit * (1 + 1e-12):
            raise ConfigError(
                f"heat_dt={heat_dt:g} violates the explicit stability bound {limit:g}"
            )
        if abs(round(dt / heat_dt) * heat_dt - dt) > 1e-9 * dt:
            raise ConfigError("dt must be an integer multiple of heat_dt")

    return {
        "experiment": raw["experiment"],
        "case": case,
        "template": template,
        "target": tgt,
        "horizon": horizon,
        "dt": dt,
        "heat_dt": heat_dt,
        "thresholds": thr,
        "out_dir": Path(out_override or raw.get("out_dir") or f"runs/{raw['experiment']}"),
        "raw": raw,
    }


def build_pde_case(cfg: dict):
    """Normalized bump target plus the case's vector fields sampled on the grid."""
    import numpy as np

    template = cfg["template"]
    shape = template.shape
    k = template.ndim
    centers = np.meshgrid(*(template.centers(a) for a in range(k)), indexing="ij")
    tgt = cfg["target"]
    c = np.asarray(tgt["center"], dtype=float)
    w = float(tgt["width"])
    r2 = sum((centers[a] - c[a]) ** 2 for a in range(k))
    values = float(tgt["base"]) + float(tgt["amplitude"]) * np.exp(-r2 / (2 * w * w))
    values /= values.sum() * template.cell_volume
    p_target = template.with_values(values)

    if cfg["case"] == "fully_actuated":
        fields = []
        for a in range(2):
            f = np.zeros(shape + (2,))
            f[..., a] = 1.0
            fields.append(f)
    else:
        theta = centers[2]
        g1 = np.zeros(shape + (3,))
        g1[..., 0] = np.cos(theta)
        g1[..., 1] = np.sin(theta)
        g2 = np.zeros(shape + (3,))
        g2[..., 2] = 1.0
        fields = [g1, g2]
    return p_target, fields


def cmd_verify_pde(args) -> int:
    from . import pdeverify, plots

    cfg = load_pde_config(args.config, args.out)
    out = cfg["out_dir"]
    p_target, fields = build_pde_case(cfg)
    thresholds = cfg["thresholds"]
    want_gap = "min_spectral_gap" in thresholds

    report = pdeverify.exact_tracking_run(
        p_target, cfg["horizon"], cfg["dt"], fields,
        heat_dt=cfg["heat_dt"], with_spectral_gap=want_gap,
    )

    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload["case"] = cfg["case"]
    payload["config"] = cfg["raw"]
    with open(out / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2)
    plots.save_tracking_error_plot(report.times, report.rel_l2_error, out / "tracking_error.png")

    failures = []
    if report.max_rel_l2_error > float(thresholds["max_rel_l2"]):
        failures.append(
            f"tracking error {report.max_rel_l2_error:.3e} > {thresholds['max_rel_l2']}"
        )
    if "phi_gap_max" in thresholds and max(report.phi_reference_gap) > float(thresholds["phi_gap_max"]):
        failures.append(
            f"phi-vs-reference gap {max(report.phi_reference_gap):.3e} > {thresholds['phi_gap_max']}"
        )
    if "max_cg_residual" in thresholds and report.cg_residual_max > float(thresholds["max_cg_residual"]):
        failures.append(f"CG residual {report.cg_residual_max:.3e} > {thresholds['max_cg_residual']}")
    if want_gap and report.spectral_gap <= float(thresholds["min_spectral_gap"]):
        failures.append(f"spectral gap {report.spectral_gap:.3e} <= {thresholds['min_spectral_gap']}")

    print(f"verify-pde [{cfg['case']}]: max rel L2 error {report.max_rel_l2_error:.3e}, "
          f"CG residual {report.cg_residual_max:.1e}"
          + (f", spectral gap {report.spectral_gap:.3e}" if want_gap else ""))
    if failures:
        for f in failures:
            print(f"FAIL: {f}", file=sys.stderr)
        return 1
    print(f"report -> {out / 'report.json'}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffctrl",
        description="Density control by tracking a diffusion noising process in reverse.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        p.add_argument("--threads", type=int, default=None, help="cap worker threads")

    p = sub.add_parser("forward", help="run the noising process and persist snapshots")
    common(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("train", help="train the feedback policy against a forward trace")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained policy on fresh initial samples")
    p.add_argument("--policy", required=True, help="policy checkpoint JSON")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rank", help="controllability rank from iterated Lie brackets")
    p.add_argument("system", help="system name, e.g. unicycle or single_integrator_2")
    p.add_argument("point", help="comma-separated state, e.g. 0,0,0")
    p.add_argument("depth", type=int, help="bracket depth")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("verify-pde", help="grid-scale exact-tracking verification")
    common(p)
    p.set_defaults(func=cmd_verify_pde)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_cap(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (KeyError, ValueError, FileNotFoundError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
