"""Command-line front end.

    spurlab simulate|verify|surrogate-compare|concentration
            [--config PATH] [--out DIR] [--seed N] [--suite NAME]

Configs are INI files (``key = value`` under ``[section]`` headers).  Unknown
sections or keys are rejected.  ``configs/`` in the repository holds one
example per subcommand.

Exit codes: 0 success, 1 a verification check failed, 2 usage or
configuration error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import verify as V
from .distributions import (GaussianTargetSpec, ToySourceSpec, bayes_accuracy,
                            random_gamma, sample_source_toy, sample_target)
from .kernels import loss_ent, loss_exp
from .loss_engine import (Classifier, PopulationObjective, StreamingObjective,
                          child_seed, empirical_accuracy, grad_deviation,
                          target_accuracy)
from .trainer import NumericAbort, TrainerConfig, TrainingError, run, train_source_classifier

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _prob(x):
    return 0 <= x <= 1


def _int_list(text: str) -> list[int]:
    return [int(float(t)) for t in text.replace(";", ",").split(",") if t.strip()]


def _radius(text: str):
    return "auto" if text.strip() == "auto" else float(text)


# key -> (parser, default, validator)
SCHEMA: dict[str, dict[str, tuple[Callable, Any, Callable | None]]] = {
    "distribution": {
        "kind": (str, "toy", lambda s: s in ("toy", "gaussian")),
        "d1": (int, 2, _pos),
        "d2": (int, 2, _pos),
        "corr_prob": (float, 0.8, _prob),
        "sigma1": (float, 1.0, _pos),
        "gamma_radius": (_radius, "auto", lambda r: r == "auto" or r > 0),
        "source_accuracy": (float, 0.959, lambda a: 0.5 < a < 1),
    },
    "trainer": {
        "variant": (str, "entropy_min", lambda s: s in ("entropy_min", "pseudo_step",
                                                        "pseudo_rounds", "noisy_gd")),
        "eta": (float, 0.5, _pos),
        "R": (float, 1.0, _pos),
        "max_steps": (int, 400, _nonneg),
        "conf_threshold": (float, 0.1, _nonneg),
        "epochs_per_round": (int, 50, _pos),
        "noise_scale": (float, 0.0, _nonneg),
        "gradient_source": (str, "empirical", lambda s: s in ("population", "empirical")),
        "stop_tol": (float, 1e-6, _nonneg),
    },
    "experiment": {
        "n_samples": (int, 10_000, _pos),
        "n_test": (int, 10_000, _pos),
        "seeds": (_int_list, [0], lambda s: len(s) > 0),
        "out": (str, "out", None),
        "source_max_steps": (int, 10_000, _pos),
        "source_eta": (float, 1.0, _pos),
    },
    "concentration": {
        "n_values": (_int_list, [10**3, 10**4, 10**5, 10**6], lambda s: all(n > 0 for n in s)),
        "trials": (int, 20, _pos),
        "n_classifiers": (int, 8, _pos),
        "gamma": (float, 2.0, _nonneg),
        "d2": (int, 2, _pos),
    },
    "verify": {
        "suite": (str, "all", lambda s: s == "all" or s in V.SUITES),
        "sigma_step": (float, 0.05, _pos),
        "sigma_max": (float, 5.0, _pos),
        "mu_extent": (float, 20.0, _pos),
        "mu_step": (float, 0.05, _pos),
    },
}


def load_config(path: str | None) -> dict[str, dict[str, Any]]:
    """Parse and validate an INI config; missing keys take their defaults."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
    out: dict[str, dict[str, Any]] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
    for section, keys in SCHEMA.items():
        out[section] = {}
        for key, (parse, default, check) in keys.items():
            if cp.has_option(section, key):
                raw = cp.get(section, key)
                try:
                    val = parse(raw)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc
                if isinstance(val, float) and not math.isfinite(val):
                    raise ConfigError(f"[{section}] {key} must be finite")
            else:
                val = default
            if check is not None and not check(val):
                raise ConfigError(f"[{section}] {key} = {val!r} is out of range")
            out[section][key] = val
    return out


# ---------------------------------------------------------------------------
# output helpers


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def svg_line_chart(panels: list[dict], width: int = 640, panel_height: int = 260) -> str:
    """Minimal SVG with one panel per dict: {title, xlabel, ylabel, series, logx, logy, note}.

    ``series`` maps a legend label to (x, y) arrays.
    """
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    H = panel_height * len(panels)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{H}" '
             f'viewBox="0 0 {width} {H}" font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{H}" fill="white"/>']
    ml, mr, mt, mb = 70, 20, 28, 42
    for p, panel in enumerate(panels):
        y0 = p * panel_height
        pw, ph = width - ml - mr, panel_height - mt - mb
        tx = (lambda v: np.log10(v)) if panel.get("logx") else (lambda v: v)
        ty = (lambda v: np.log10(v)) if panel.get("logy") else (lambda v: v)
        xs_all, ys_all = [], []
        for x, y in panel["series"].values():
            x, y = np.asarray(x, float), np.asarray(y, float)
            ok = np.isfinite(tx(np.where(x > 0, x, np.nan) if panel.get("logx") else x))
            ok &= np.isfinite(ty(np.where(y > 0, y, np.nan) if panel.get("logy") else y))
            xs_all.append(tx(x[ok]))
            ys_all.append(ty(y[ok]))
        xa = np.concatenate(xs_all) if xs_all else np.zeros(1)
        ya = np.concatenate(ys_all) if ys_all else np.zeros(1)
        if xa.size == 0:
            xa = ya = np.zeros(1)
        xmin, xmax = float(xa.min()), float(xa.max())
        ymin, ymax = float(ya.min()), float(ya.max())
        if xmax == xmin:
            xmax = xmin + 1.0
        if ymax == ymin:
            ymax = ymin + 1.0
        sx = lambda v: ml + (v - xmin) / (xmax - xmin) * pw  # noqa: E731
        sy = lambda v: y0 + mt + ph - (v - ymin) / (ymax - ymin) * ph  # noqa: E731
        parts.append(f'<text x="{width / 2:.1f}" y="{y0 + 16}" text-anchor="middle" '
                     f'font-size="13">{panel["title"]}</text>')
        parts.append(f'<rect x="{ml}" y="{y0 + mt}" width="{pw}" height="{ph}" '
                     f'fill="none" stroke="black"/>')
        for k in range(5):
            fx = xmin + k * (xmax - xmin) / 4
            fy = ymin + k * (ymax - ymin) / 4
            lx = 10 ** fx if panel.get("logx") else fx
            ly = 10 ** fy if panel.get("logy") else fy
            parts.append(f'<text x="{sx(fx):.1f}" y="{y0 + mt + ph + 14}" '
                         f'text-anchor="middle">{_fmt(lx)}</text>')
            parts.append(f'<text x="{ml - 4}" y="{sy(fy) + 4:.1f}" '
                         f'text-anchor="end">{_fmt(ly)}</text>')
        parts.append(f'<text x="{ml + pw / 2:.1f}" y="{y0 + panel_height - 8}" '
                     f'text-anchor="middle">{panel.get("xlabel", "")}</text>')
        parts.append(f'<text x="14" y="{y0 + mt + ph / 2:.1f}" text-anchor="middle" '
                     f'transform="rotate(-90 14 {y0 + mt + ph / 2:.1f})">'
                     f'{panel.get("ylabel", "")}</text>')
        for i, (label, _) in enumerate(panel["series"].items()):
            c = colors[i % len(colors)]
            x, y = xs_all[i], ys_all[i]
            if x.size:
                pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
                parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" '
                             f'points="{pts}"/>')
            ly = y0 + mt + 12 + 14 * i
            parts.append(f'<line x1="{ml + pw - 120}" y1="{ly}" x2="{ml + pw - 100}" '
                         f'y2="{ly}" stroke="{c}" stroke-width="2"/>')
            parts.append(f'<text x="{ml + pw - 96}" y="{ly + 4}">{label}</text>')
        if panel.get("note"):
            parts.append(f'<text x="{ml + 8}" y="{y0 + mt + 14}">{panel["note"]}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _workers(n_jobs: int) -> int:
    raw = os.environ.get("SPURLAB_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SPURLAB_THREADS={raw!r} is not an integer") from exc
    if cap < 1:
        raise ConfigError("SPURLAB_THREADS must be at least 1")
    return max(1, min(cap, n_jobs))


def _map(fn, jobs: list) -> list:
    n = _workers(len(jobs))
    if n == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, jobs))


# ---------------------------------------------------------------------------
# toy experiment


def _toy_source(gamma: np.ndarray, cfg: dict, seed: int) -> ToySourceSpec:
    return ToySourceSpec(gamma, cfg["distribution"]["corr_prob"], cfg["distribution"]["d2"])


def source_classifier(gamma: np.ndarray, cfg: dict, seed: int) -> Classifier:
    ex = cfg["experiment"]
    batch = sample_source_toy(_toy_source(gamma, cfg, seed), ex["n_samples"],
                              child_seed(seed, 2))
    return train_source_classifier(batch, cfg["trainer"]["R"], ex["source_eta"],
                                   ex["source_max_steps"], 1e-8)


def calibrate_radius(direction: np.ndarray, cfg: dict, seed: int,
                     lo: float = 0.25, hi: float = 6.0, tol: float = 1e-5) -> float:
    """Bisection on |gamma| so the trained source classifier hits the target accuracy."""
    goal = cfg["distribution"]["source_accuracy"]

    def acc(r):
        g = r * direction
        ws = source_classifier(g, cfg, seed)
        return target_accuracy(ws, _toy_source(g, cfg, seed).target())

    if not acc(lo) < goal < acc(hi):
        raise ConfigError(f"source accuracy {goal} not bracketed by radii [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if acc(mid) < goal:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _target_spec(cfg: dict, seed: int) -> tuple[GaussianTargetSpec, Classifier, float]:
    dist = cfg["distribution"]
    direction = random_gamma(1.0, dist["d1"], child_seed(seed, 1))
    if dist["kind"] == "gaussian":
        r = 2.0 if dist["gamma_radius"] == "auto" else dist["gamma_radius"]
        spec = GaussianTargetSpec(r * direction, dist["sigma1"], np.eye(dist["d2"]))
        v = np.concatenate([direction, np.zeros(dist["d2"])]) * 0.9
        v[dist["d1"]] = math.sqrt(1 - 0.81)
        return spec, Classifier.from_vector(v * cfg["trainer"]["R"], dist["d1"],
                                            cfg["trainer"]["R"]), r
    r = (calibrate_radius(direction, cfg, seed) if dist["gamma_radius"] == "auto"
         else dist["gamma_radius"])
    gamma = r * direction
    ws = source_classifier(gamma, cfg, seed)
    return _toy_source(gamma, cfg, seed).target(), ws, r


def _trainer_config(cfg: dict, seed: int) -> TrainerConfig:
    t = cfg["trainer"]
    return TrainerConfig(variant=t["variant"], eta=t["eta"], R=t["R"], max_steps=t["max_steps"],
                         conf_threshold=t["conf_threshold"],
                         epochs_per_round=t["epochs_per_round"], noise_scale=t["noise_scale"],
                         seed=child_seed(seed, 5), gradient_source=t["gradient_source"],
                         stop_tol=t["stop_tol"])


def run_toy(cfg: dict, seed: int, surrogate: str = "exp") -> dict:
    """Train the source classifier and self-train it on the target; returns run data."""
    spec, ws, radius = _target_spec(cfg, seed)
    tcfg = _trainer_config(cfg, seed)
    ex = cfg["experiment"]
    if tcfg.gradient_source == "population":
        if surrogate != "exp":
            raise ConfigError("population gradients are available for the exp surrogate only")
        source = PopulationObjective(spec)
    else:
        source = StreamingObjective(spec, ex["n_samples"], child_seed(seed, 3), surrogate)
    traj = run(ws, tcfg, source)
    test = sample_target(spec, ex["n_test"], child_seed(seed, 4))
    d1 = spec.d1
    w0, wf = traj.weights[0], traj.weights[-1]
    bayes_w = np.concatenate([spec.gamma / np.linalg.norm(spec.gamma), np.zeros(spec.d2)])
    summary = {
        "seed": seed,
        "surrogate": surrogate,
        "variant": tcfg.variant,
        "gamma": [float(g) for g in spec.gamma],
        "gamma_radius": float(radius),
        "bayes_accuracy": bayes_accuracy(spec),
        "bayes_test_accuracy": empirical_accuracy(bayes_w, test),
        "initial_accuracy": float(traj.rows[0][4]),
        "final_accuracy": float(traj.rows[-1][4]),
        "initial_test_accuracy": empirical_accuracy(w0, test),
        "final_test_accuracy": empirical_accuracy(wf, test),
        "initial_w2": [float(x) for x in w0[d1:]],
        "final_w2": [float(x) for x in wf[d1:]],
        "initial_norm_w2": float(np.linalg.norm(w0[d1:])),
        "final_norm_w2": float(np.linalg.norm(wf[d1:])),
        "steps": len(traj) - 1,
    }
    return {"summary": summary, "csv": traj.to_csv(),
            "steps": traj.column("step").tolist(),
            "accuracy": traj.column("accuracy").tolist(),
            "norm_w2": traj.column("norm_w2").tolist()}


def _simulate_job(args):
    cfg, seed, surrogate = args
    return run_toy(cfg, seed, surrogate)


def _seeds(cfg: dict, seed_override: int | None) -> list[int]:
    return [seed_override] if seed_override is not None else list(cfg["experiment"]["seeds"])


def cmd_simulate(cfg: dict, out: Path, seed: int | None) -> int:
    seeds = _seeds(cfg, seed)
    results = _map(_simulate_job, [(cfg, s, "exp") for s in seeds])
    for s, res in zip(seeds, results):
        atomic_write(out / f"trajectory_{s}.csv", res["csv"])
    atomic_write(out / "summary.json", json.dumps(
        {"command": "simulate", "runs": [r["summary"] for r in results]}, indent=2) + "\n")
    panels = [
        {"title": "target accuracy", "xlabel": "step", "ylabel": "accuracy",
         "series": {f"seed {s}": (r["steps"], r["accuracy"]) for s, r in zip(seeds, results)}},
        {"title": "spurious weight norm", "xlabel": "step", "ylabel": "|w2|",
         "series": {f"seed {s}": (r["steps"], r["norm_w2"]) for s, r in zip(seeds, results)}},
    ]
    atomic_write(out / "report.svg", svg_line_chart(panels))
    return EXIT_OK


def surrogate_ratio_table(t_max: float = 10.0, step: float = 0.01) -> np.ndarray:
    t = np.round(np.arange(-t_max, t_max + step / 2, step), 10)
    return np.column_stack([t, loss_ent(t), loss_exp(t), loss_ent(t) / loss_exp(t)])


def cmd_surrogate_compare(cfg: dict, out: Path, seed: int | None) -> int:
    seeds = _seeds(cfg, seed)
    jobs = [(cfg, s, surr) for s in seeds for surr in ("exp", "ent")]
    results = _map(_simulate_job, jobs)
    runs = []
    for (_, s, surr), res in zip(jobs, results):
        atomic_write(out / f"trajectory_{surr}_{s}.csv", res["csv"])
        runs.append(res["summary"])
    tab = surrogate_ratio_table()
    lines = ["t,loss_ent,loss_exp,ratio"] + [",".join(f"{x:.17g}" for x in row) for row in tab]
    atomic_write(out / "surrogate_ratio.csv", "\n".join(lines) + "\n")
    ratio = tab[:, 3]
    atomic_write(out / "summary.json", json.dumps({
        "command": "surrogate-compare", "runs": runs,
        "ratio_min": float(ratio.min()), "ratio_max": float(ratio.max()),
        "ratio_within_quarter_to_four": bool(ratio.min() >= 0.25 and ratio.max() <= 4.0),
    }, indent=2) + "\n")
    panels = [
        {"title": "spurious weight norm", "xlabel": "step", "ylabel": "|w2|",
         "series": {f"{surr} seed {s}": (res["steps"], res["norm_w2"])
                    for (_, s, surr), res in zip(jobs, results)}},
        {"title": "loss ratio ent/exp", "xlabel": "t", "ylabel": "ratio",
         "series": {"ratio": (tab[:, 0], ratio)}},
    ]
    atomic_write(out / "report.svg", svg_line_chart(panels))
    return EXIT_OK


def cmd_concentration(cfg: dict, out: Path, seed: int | None) -> int:
    c = cfg["concentration"]
    if len(set(c["n_values"])) < 4:
        raise ConfigError("concentration needs at least 4 distinct n values")
    s = seed if seed is not None else cfg["experiment"]["seeds"][0]
    spec = GaussianTargetSpec([c["gamma"]], 1.0, np.eye(c["d2"]))
    grid = V.default_concentration_grid(spec, cfg["trainer"]["R"], c["n_classifiers"],
                                        child_seed(s, 6))
    table = grad_deviation(spec, c["n_values"], c["trials"], grid, s)
    fit = V.sample_rate_fit(table)
    atomic_write(out / "deviation.csv", table.to_csv())
    ns, means = table.mean_by_n()
    spread = {}
    for n in ns:
        vals = np.array([r[2] for r in table.rows if r[0] == n])
        spread[str(int(n))] = float(vals.std(ddof=1)) if vals.size > 1 else None
    atomic_write(out / "summary.json", json.dumps({
        "command": "concentration", "slope": fit.slope, "slope_stderr": fit.stderr,
        "slope_band_95": [fit.slope - 1.96 * fit.stderr, fit.slope + 1.96 * fit.stderr],
        "trials": c["trials"], "mean_sup_dev": {str(int(n)): float(m) for n, m in zip(ns, means)},
        "std_sup_dev": spread,
    }, indent=2) + "\n")
    fitted = np.exp(fit.intercept) * ns ** fit.slope
    atomic_write(out / "report.svg", svg_line_chart([{
        "title": "gradient deviation vs n", "xlabel": "n", "ylabel": "sup deviation",
        "logx": True, "logy": True, "note": f"fitted slope {fit.slope:.4f} +- {fit.stderr:.4f}",
        "series": {"mean sup_dev": (ns, means), "fit": (ns, fitted)}}]))
    return EXIT_OK


def cmd_verify(cfg: dict, out: Path, suite: str) -> int:
    if suite != "all" and suite not in V.SUITES:
        raise ConfigError(f"unknown suite {suite!r}")
    v = cfg["verify"]
    grid = np.round(np.arange(v["sigma_step"], v["sigma_max"] + v["sigma_step"] / 2,
                              v["sigma_step"]), 10)
    if grid.size == 0:
        raise ConfigError("empty sigma grid")
    reports = V.run_suite(suite, sigma_grid=grid, mu_extent=v["mu_extent"], mu_step=v["mu_step"])
    for r in reports:
        atomic_write(out / "witnesses" / f"{r.check_name}.csv", V.witness_csv(r))
    atomic_write(out / "verify_summary.csv", V.summary_csv(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spurlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["simulate", "verify", "surrogate-compare", "concentration"])
    p.add_argument("--config", help="INI config file")
    p.add_argument("--out", help="output directory (overrides [experiment] out)")
    p.add_argument("--seed", type=int, help="run a single seed instead of the config list")
    p.add_argument("--suite", help="verify selector: all, kernels, lemmas, examples, finite-sample")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg["experiment"]["out"])
        if args.command == "verify":
            suite = args.suite or cfg["verify"]["suite"]
            return cmd_verify(cfg, out, suite)
        if args.suite is not None:
            raise ConfigError("--suite applies to the verify command only")
        cmd = {"simulate": cmd_simulate, "surrogate-compare": cmd_surrogate_compare,
               "concentration": cmd_concentration}[args.command]
        return cmd(cfg, out, args.seed)
    except ConfigError as exc:
        print(f"spurlab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericAbort, FloatingPointError) as exc:
        print(f"spurlab: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TrainingError, OSError) as exc:
        print(f"spurlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
