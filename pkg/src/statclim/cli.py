"""Command-line orchestration.

Subcommands: estimate, select, smooth, diagnose, validate, project,
mc-study.  Settings come from an INI config file (flat key-value with
sections) overridden by flags; every run writes the exact resolved config
next to its outputs so results are reproducible byte-for-byte.  All outputs
are CSV/JSON for external plotting.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data, estimate, presets, simulate, ssm
from .params import Constants, ForcingForm, OBS_NAMES, STATE_NAMES
from .simulate import Scenario, UncertaintySetup

_DEFAULTS: dict[str, dict[str, str]] = {
    "data": {"observations": "", "covariates": "", "scenario": "",
             "params": "", "cov_phys": ""},
    "model": {"form": "log", "c_preind": "591.3060", "delta": "1.0"},
    "estimate": {"n_starts": "5", "max_iter": "500", "seed": "0",
                 "jitter": "0.25", "compute_se": "true",
                 "transform": "default"},
    "ecs": {"f2x": "3.93", "ci_halfwidth": "0.47"},
    "simulate": {"setups": "det,param,param-state,full", "n_paths": "10000",
                 "seed": "42", "jobs": "1", "init_source": "",
                 "threshold": "1.5", "window_start": "", "window_end": "",
                 "n_trajectories": "50"},
    "mc": {"n_reps": "200", "n_obs": "64", "seed": "0", "jobs": "1",
           "start_at_truth": "true", "truth": "mc", "free": ""},
    "output": {"dir": "out"},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved settings for one run; serializable back to INI."""

    sections: dict[str, dict[str, str]] = field(
        default_factory=lambda: {s: dict(kv) for s, kv in _DEFAULTS.items()})

    def get(self, section: str, key: str) -> str:
        return self.sections[section][key]

    def set(self, section: str, key: str, value) -> None:
        if section not in self.sections or key not in self.sections[section]:
            raise ConfigError(f"unknown config entry [{section}] {key}")
        self.sections[section][key] = str(value)

    def get_int(self, section: str, key: str) -> int:
        try:
            return int(self.get(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer, got "
                              f"{self.get(section, key)!r}") from None

    def get_float(self, section: str, key: str) -> float:
        try:
            return float(self.get(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number, got "
                              f"{self.get(section, key)!r}") from None

    def get_bool(self, section: str, key: str) -> bool:
        val = self.get(section, key).strip().lower()
        if val in ("1", "true", "yes", "on"):
            return True
        if val in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key} must be a boolean, got {val!r}")

    def path(self, section: str, key: str, required_for: str | None = None):
        val = self.get(section, key).strip()
        if not val:
            if required_for:
                raise ConfigError(
                    f"command {required_for!r} needs [{section}] {key} "
                    f"(or the matching flag)")
            return None
        p = Path(val)
        if required_for and not p.exists():
            raise ConfigError(f"[{section}] {key}: file not found: {p}")
        return p

    def write(self, path) -> None:
        cp = configparser.ConfigParser()
        for section in _DEFAULTS:
            cp[section] = self.sections[section]
        with open(path, "w", encoding="utf-8") as fh:
            cp.write(fh)


def load_config(path=None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for section in cp.sections():
        if section not in cfg.sections:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in cp[section].items():
            cfg.set(section, key, value)
    return cfg


_FORM_ALIASES = {f.value: f for f in ForcingForm}
_SETUP_ALIASES = {s.value: s for s in UncertaintySetup}


def _parse_form(name: str) -> ForcingForm:
    if name not in _FORM_ALIASES:
        raise ConfigError(f"unknown forcing form {name!r}; choose from "
                          f"{sorted(_FORM_ALIASES)}")
    return _FORM_ALIASES[name]


def _parse_setups(value: str) -> list[UncertaintySetup]:
    out = []
    for token in value.split(","):
        token = token.strip()
        if not token:
            continue
        if token not in _SETUP_ALIASES:
            raise ConfigError(f"unknown uncertainty setup {token!r}; choose "
                              f"from {sorted(_SETUP_ALIASES)}")
        out.append(_SETUP_ALIASES[token])
    if not out:
        raise ConfigError("no uncertainty setups selected")
    return out


def _consts(cfg: RunConfig) -> Constants:
    return Constants(c_preind=cfg.get_float("model", "c_preind"),
                     delta=cfg.get_float("model", "delta"))


def _estimate_options(cfg: RunConfig) -> estimate.EstimateOptions:
    return estimate.EstimateOptions(
        n_starts=cfg.get_int("estimate", "n_starts"),
        jitter=cfg.get_float("estimate", "jitter"),
        seed=cfg.get_int("estimate", "seed"),
        max_iter=cfg.get_int("estimate", "max_iter"),
        compute_se=cfg.get_bool("estimate", "compute_se"),
        transform_variant=cfg.get("estimate", "transform"))


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.get("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(cfg: RunConfig, command: str):
    obs = data.load_observations(cfg.path("data", "observations", command))
    cov = data.load_covariates(cfg.path("data", "covariates", command))
    if not np.array_equal(obs.years, cov.years):
        raise ConfigError(
            f"observations cover {obs.years[0]}-{obs.years[-1]} but "
            f"covariates cover {cov.years[0]}-{cov.years[-1]}")
    return obs, cov


def _load_params(cfg: RunConfig, command: str):
    form = _parse_form(cfg.get("model", "form"))
    return estimate.load_params_csv(cfg.path("data", "params", command), form)


def _r(x) -> str:
    return repr(float(x))


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_estimate(cfg: RunConfig) -> None:
    obs, cov = _load_data(cfg, "estimate")
    form = _parse_form(cfg.get("model", "form"))
    consts = _consts(cfg)
    result = estimate.maximize_likelihood(obs, cov, form=form,
                                          options=_estimate_options(cfg),
                                          consts=consts)
    out = _outdir(cfg)
    estimate.write_estimate_csv(result, out / "params.csv")
    if result.cov_free is not None:
        estimate.write_cov_phys_csv(result.cov_physical(),
                                    out / "cov_phys.csv")
    meta = {
        "form": form.value, "loglik": result.loglik, "n_years": result.n_years,
        "n_params": result.k, "bic": result.bic,
        "converged": result.trace.converged,
        "iterations": result.trace.iterations,
        "n_evals": result.trace.n_evals,
        "grad_norm": result.trace.grad_norm,
        "best_start": result.trace.best_start,
        "start_logliks": result.trace.start_logliks,
        "hessian_warning": result.hessian_warning,
        "seed": cfg.get_int("estimate", "seed"),
    }
    if result.se is not None and "lambda" in result.free_names:
        lam = result.estimate_for("lambda")
        if lam > 0:
            ecs, ecs_se = estimate.ecs_with_se(
                lam, result.se_for("lambda") ** 2,
                f2x=cfg.get_float("ecs", "f2x"),
                f2x_ci_halfwidth=cfg.get_float("ecs", "ci_halfwidth"))
            meta["ecs"] = ecs
            meta["ecs_se"] = ecs_se
    _write_json(out / "fit.json", meta)


def cmd_select(cfg: RunConfig) -> None:
    obs, cov = _load_data(cfg, "select")
    rows, results = estimate.compare_forcing_forms(
        obs, cov, options=_estimate_options(cfg), consts=_consts(cfg))
    out = _outdir(cfg)
    estimate.write_comparison_csv(rows, out / "model_comparison.csv")
    for form, res in results.items():
        estimate.write_estimate_csv(res, out / f"params_{form.value}.csv")


def cmd_smooth(cfg: RunConfig) -> None:
    obs, cov = _load_data(cfg, "smooth")
    params = _load_params(cfg, "smooth")
    consts = _consts(cfg)
    filt = ssm.ekf_filter(params, obs, cov, consts)
    smooth = ssm.rts_smooth(filt)
    p = params.apply_form()
    out = _outdir(cfg)
    means, sds = smooth.state_mean(), smooth.state_sd()
    with open(out / "smoothed_states.csv", "w", newline="\n",
              encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year"] + list(STATE_NAMES)
                   + [f"{n}_sd" for n in STATE_NAMES]
                   + ["t_m_plus_mu_m", "t_d_plus_mu_d", "ohc_implied"])
        for i, year in enumerate(smooth.years):
            t_d = means[i, 5]
            w.writerow([int(year)] + [_r(v) for v in means[i]]
                       + [_r(v) for v in sds[i]]
                       + [_r(means[i, 4] + p.offsets.mu_m),
                          _r(t_d + p.offsets.mu_d),
                          _r(p.physical.h_d * (p.offsets.mu_d + t_d))])
    _write_json(out / "summary.json", {
        "loglik": filt.loglik,
        "final_year": int(smooth.years[-1]),
        "final_t_m_plus_mu_m": float(means[-1, 4] + p.offsets.mu_m),
    })


def cmd_diagnose(cfg: RunConfig) -> None:
    obs, cov = _load_data(cfg, "diagnose")
    params = _load_params(cfg, "diagnose")
    filt = ssm.ekf_filter(params, obs, cov, _consts(cfg))
    resid = ssm.standardized_residuals(filt)
    out = _outdir(cfg)
    with open(out / "residuals.csv", "w", newline="\n",
              encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year"] + list(OBS_NAMES))
        for i, year in enumerate(filt.years):
            w.writerow([int(year)] + ["" if not np.isfinite(v) else _r(v)
                                      for v in resid[i]])
    report = estimate.residual_diagnostics(resid)
    estimate.write_diagnostics_csv(report, out / "diagnostics.csv")


def _bands_rows(setup: UncertaintySetup, ensemble) -> list[list]:
    rows = []
    for scale, names in (("state", STATE_NAMES), ("observation", OBS_NAMES)):
        for name in names:
            bands = simulate.quantile_bands(ensemble, variable=name,
                                            scale=scale)
            for i, year in enumerate(bands.years):
                rows.append([setup.value, scale, name, int(year),
                             _r(bands.values[0, i]), _r(bands.values[1, i]),
                             _r(bands.values[2, i])])
    return rows


def _write_bands(path, rows) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setup", "scale", "variable", "year", "q025", "q500",
                    "q975"])
        w.writerows(rows)


def _write_deterministic(path, ensemble) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year"] + list(STATE_NAMES) + list(OBS_NAMES))
        for i, year in enumerate(ensemble.years):
            w.writerow([int(year)]
                       + [_r(v) for v in ensemble.states[0, i]]
                       + [_r(v) for v in ensemble.observations[0, i]])


def _simulation_inputs(cfg: RunConfig, command: str, default_source: str):
    obs, cov = _load_data(cfg, command)
    params = _load_params(cfg, command)
    cov_phys = estimate.load_cov_phys_csv(
        cfg.path("data", "cov_phys", command))
    n_paths = cfg.get_int("simulate", "n_paths")
    if n_paths < 1:
        raise ConfigError("n_paths must be positive")
    source = cfg.get("simulate", "init_source").strip() or default_source
    return obs, cov, params, cov_phys, n_paths, source


def cmd_validate(cfg: RunConfig) -> None:
    obs, cov, params, cov_phys, n_paths, source = _simulation_inputs(
        cfg, "validate", "filtered-first")
    consts = _consts(cfg)
    seed = cfg.get_int("simulate", "seed")
    jobs = cfg.get_int("simulate", "jobs")
    belief, _ = simulate.initial_belief_from_history(params, obs, cov, source,
                                                     consts)
    scenario = Scenario(cov.years, cov.e_total, cov.f_ex, source)
    out = _outdir(cfg)
    rows = []
    coverage = {}
    invalid = {}
    for setup in _parse_setups(cfg.get("simulate", "setups")):
        ens = simulate.simulate_paths(params, scenario, setup, n_paths, seed,
                                      cov_phys=cov_phys, init=belief,
                                      consts=consts, jobs=jobs)
        rows.extend(_bands_rows(setup, ens))
        invalid[setup.value] = ens.n_invalid
        if setup is UncertaintySetup.DETERMINISTIC:
            _write_deterministic(out / "deterministic.csv", ens)
        if setup is UncertaintySetup.PARAM_STATE_MEAS:
            coverage = _coverage(ens, obs)
        del ens
    _write_bands(out / "validate_bands.csv", rows)
    _write_json(out / "summary.json", {
        "n_paths": n_paths, "seed": seed, "init_source": source,
        "invalid_paths": invalid, "coverage_95": coverage,
    })


def _coverage(ensemble, obs) -> dict[str, float]:
    """Share of observed points inside the pointwise 95% observation bands."""
    out = {}
    for j, name in enumerate(OBS_NAMES):
        bands = simulate.quantile_bands(ensemble, variable=name,
                                        scale="observation")
        lo, hi = bands.values[0], bands.values[2]
        col = obs.values[:, j]
        seen = np.isfinite(col)
        if not np.any(seen):
            continue
        inside = (col[seen] >= lo[seen]) & (col[seen] <= hi[seen])
        out[name] = float(np.mean(inside))
    return out


def cmd_project(cfg: RunConfig) -> None:
    obs, cov, params, cov_phys, n_paths, source = _simulation_inputs(
        cfg, "project", "filtered-last")
    consts = _consts(cfg)
    seed = cfg.get_int("simulate", "seed")
    jobs = cfg.get_int("simulate", "jobs")
    scen_table = data.load_scenario(cfg.path("data", "scenario", "project"))
    belief, anchor = simulate.initial_belief_from_history(params, obs, cov,
                                                          source, consts)
    scenario = simulate.projection_scenario(
        scen_table, anchor, float(cov.e_total[-1]), float(cov.f_ex[-1]),
        source)
    thresholds = [float(v) for v in
                  cfg.get("simulate", "threshold").split(",") if v.strip()]
    w_lo = cfg.get("simulate", "window_start").strip()
    w_hi = cfg.get("simulate", "window_end").strip()
    window = (int(w_lo) if w_lo else int(scen_table.years[0]),
              int(w_hi) if w_hi else int(scen_table.years[-1]))
    n_traj = cfg.get_int("simulate", "n_trajectories")
    out = _outdir(cfg)

    rows = []
    invalid = {}
    exceed: dict[str, dict] = {repr(th): {} for th in thresholds}
    traj_rows = []
    p = params.apply_form()
    for setup in _parse_setups(cfg.get("simulate", "setups")):
        ens = simulate.simulate_paths(params, scenario, setup, n_paths, seed,
                                      cov_phys=cov_phys, init=belief,
                                      consts=consts, jobs=jobs)
        rows.extend(_bands_rows(setup, ens))
        invalid[setup.value] = ens.n_invalid
        for th in thresholds:
            exceed[repr(th)][setup.value] = {
                scale: simulate.exceedance_probability(
                    ens, th, variable="t_m", scale=scale, window=window)
                for scale in ("state", "observation")}
        t_state = ens.variable_paths("t_m", "state") + p.offsets.mu_m
        t_obs = ens.variable_paths("t_m", "observation")
        for k in range(min(n_traj, t_state.shape[0])):
            for i, year in enumerate(ens.years):
                traj_rows.append([setup.value, k, int(year),
                                  _r(t_state[k, i]), _r(t_obs[k, i])])
        if setup is UncertaintySetup.DETERMINISTIC:
            _write_deterministic(out / "deterministic.csv", ens)
        del ens
    _write_bands(out / "project_bands.csv", rows)
    with open(out / "trajectories.csv", "w", newline="\n",
              encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setup", "path", "year", "t_m_plus_mu_m", "t_m_star"])
        w.writerows(traj_rows)
    _write_json(out / "exceedance.json", {
        "thresholds": exceed, "window": list(window), "n_paths": n_paths,
        "seed": seed, "init_source": source, "invalid_paths": invalid,
    })


def cmd_mc_study(cfg: RunConfig) -> None:
    truth_key = cfg.get("mc", "truth").strip()
    if truth_key == "mc":
        truth = presets.mc_truth_params()
    elif truth_key == "fitted":
        truth = presets.fitted_params()
    else:
        form = _parse_form(cfg.get("model", "form"))
        truth = estimate.load_params_csv(Path(truth_key), form)
    free_list = cfg.get("mc", "free").strip()
    if free_list:
        from .params import IDX, N_PARAMS
        mask = np.zeros(N_PARAMS, dtype=bool)
        for token in free_list.split(","):
            token = token.strip()
            if token not in IDX:
                raise ConfigError(f"unknown parameter {token!r} in [mc] free")
            mask[IDX[token]] = True
        truth = truth.copy()
        truth.free_mask = mask
    cov_path = cfg.path("data", "covariates")
    cov = (data.load_covariates(cov_path) if cov_path
           else presets.synthetic_covariates(1959, 2022))
    consts = _consts(cfg)
    result = simulate.mc_study(
        truth, cov, n_reps=cfg.get_int("mc", "n_reps"),
        n_obs=cfg.get_int("mc", "n_obs"),
        master_seed=cfg.get_int("mc", "seed"),
        start_at_truth=cfg.get_bool("mc", "start_at_truth"),
        jobs=cfg.get_int("mc", "jobs"), consts=consts)
    out = _outdir(cfg)
    with open(out / "mc_table.csv", "w", newline="\n",
              encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "true_value", "mc_mean", "mc_std"])
        for j, name in enumerate(result.free_names):
            w.writerow([name, _r(result.true_values[j]),
                        _r(result.mc_mean[j]), _r(result.mc_std[j])])
    _write_json(out / "mc_meta.json", {
        "n_requested": result.n_requested,
        "n_ok": result.estimates.shape[0],
        "n_failed": result.n_failed,
        "n_iteration_capped": result.n_iteration_capped,
        "seed": result.master_seed,
        "n_obs": cfg.get_int("mc", "n_obs"),
        "start_at_truth": cfg.get_bool("mc", "start_at_truth"),
        "truth": truth_key,
    })


COMMANDS = {
    "estimate": cmd_estimate,
    "select": cmd_select,
    "smooth": cmd_smooth,
    "diagnose": cmd_diagnose,
    "validate": cmd_validate,
    "project": cmd_project,
    "mc-study": cmd_mc_study,
}


def dispatch(command: str, cfg: RunConfig) -> int:
    """Run one command; returns the process exit status.

    Failures produce a machine-readable error record on stderr and, when
    the output directory exists, in error.json.
    """
    if command not in COMMANDS:
        _emit_error(command, ConfigError(f"unknown command {command!r}"), cfg)
        return 1
    try:
        out = _outdir(cfg)
        cfg.write(out / "run_config.ini")
        COMMANDS[command](cfg)
        return 0
    except Exception as exc:  # noqa: BLE001 - boundary of the CLI
        _emit_error(command, exc, cfg)
        return 1


def _emit_error(command: str, exc: Exception, cfg: RunConfig) -> None:
    record = {"command": command, "error": type(exc).__name__,
              "message": str(exc)}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    try:
        out = Path(cfg.get("output", "dir"))
        if out.is_dir():
            _write_json(out / "error.json", record)
    except Exception:  # noqa: BLE001 - error reporting must not raise
        pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="statclim",
        description="Statistical reduced-complexity climate model")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", type=Path, default=None,
                       help="INI config file")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed for this command")
        p.add_argument("--paths", type=int, default=None,
                       help="number of simulated paths")
        p.add_argument("--form", choices=sorted(_FORM_ALIASES),
                       default=None, help="forcing functional form")
        p.add_argument("--setup", choices=sorted(_SETUP_ALIASES),
                       default=None, help="single uncertainty setup")
        p.add_argument("--threshold", type=float, default=None,
                       help="temperature threshold, degC")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker processes")
        p.add_argument("--observations", type=Path, default=None)
        p.add_argument("--covariates", type=Path, default=None)
        p.add_argument("--scenario", type=Path, default=None)
        p.add_argument("--params", type=Path, default=None,
                       help="params.csv from a previous estimate run")
        p.add_argument("--cov-phys", type=Path, default=None,
                       help="cov_phys.csv from a previous estimate run")
        p.add_argument("--n-reps", type=int, default=None,
                       help="Monte Carlo replications")
    return parser


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> None:
    if args.out is not None:
        cfg.set("output", "dir", args.out)
    if args.seed is not None:
        for section in ("estimate", "simulate", "mc"):
            cfg.set(section, "seed", args.seed)
    if args.paths is not None:
        cfg.set("simulate", "n_paths", args.paths)
    if args.form is not None:
        cfg.set("model", "form", args.form)
    if args.setup is not None:
        cfg.set("simulate", "setups", args.setup)
    if args.threshold is not None:
        cfg.set("simulate", "threshold", args.threshold)
    if args.jobs is not None:
        cfg.set("simulate", "jobs", args.jobs)
        cfg.set("mc", "jobs", args.jobs)
    if args.observations is not None:
        cfg.set("data", "observations", args.observations)
    if args.covariates is not None:
        cfg.set("data", "covariates", args.covariates)
    if args.scenario is not None:
        cfg.set("data", "scenario", args.scenario)
    if args.params is not None:
        cfg.set("data", "params", args.params)
    if args.cov_phys is not None:
        cfg.set("data", "cov_phys", args.cov_phys)
    if args.n_reps is not None:
        cfg.set("mc", "n_reps", args.n_reps)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
    except ConfigError as exc:
        print(json.dumps({"command": args.command,
                          "error": type(exc).__name__,
                          "message": str(exc)}, sort_keys=True),
              file=sys.stderr)
        return 1
    return dispatch(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
