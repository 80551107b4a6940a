"""Declarative scenarios: parsing, resolved defaults, and task runners.

A scenario is an INI file with a ``[scenario]`` section plus optional
``[distribution]``, ``[tau]``, ``[x_grid]``, ``[numerics]`` and ``[mc]``
sections; every knob has a default, so a file carrying only a name, a
distribution and a count is runnable.  ``run_scenario`` dispatches on the
``task`` field and returns (rows, summary): rows become the CSV table, the
summary embeds the fully resolved configuration so a rerun is bit-identical.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import classify, pathological, sim, stopped, tailcalc
from .dist import Distribution, LatticeDistribution, discretize, parse_spec
from .errors import ValidationError
from .stopped import CountingDistribution

_DEFAULTS = {
    "scenario": {"task": "stopped", "method": "exact", "description": ""},
    "distribution": {"step": "0.05", "x_max": ""},
    "tau": {"spec": "", "rule": ""},
    "x_grid": {"kind": "log", "start": "10", "stop": "1000", "count": "8"},
    "numerics": {"cell_budget": str(tailcalc.CELL_BUDGET),
                 "series_rel_budget": "1e-3", "tolerance": "0.05",
                 "n_max": "100", "c": "", "beta": "", "k": "4",
                 "generations": "2", "h": "sqrt", "n_list": "1 5 20 100",
                 "lower": ""},
    "mc": {"samples": "1000000", "seed": "20260810"},
}


@dataclass
class Scenario:
    """A fully resolved experiment description."""

    name: str
    config: dict[str, dict[str, str]] = field(default_factory=dict)

    @property
    def task(self) -> str:
        return self.config["scenario"]["task"]

    @property
    def method(self) -> str:
        return self.config["scenario"]["method"]

    @property
    def description(self) -> str:
        return self.config["scenario"]["description"]

    def f(self, section: str, key: str) -> float:
        return float(self.config[section][key])

    def i(self, section: str, key: str) -> int:
        return int(float(self.config[section][key]))

    def x_grid(self) -> np.ndarray:
        g = self.config["x_grid"]
        kind, n = g["kind"], int(g["count"])
        lo, hi = float(g["start"]), float(g["stop"])
        if kind == "log":
            return np.geomspace(lo, hi, n)
        if kind == "linear":
            return np.linspace(lo, hi, n)
        raise ValidationError(f"x_grid kind must be log or linear, got {kind!r}")

    def distribution(self) -> Distribution:
        spec = self.config["distribution"].get("spec", "")
        if not spec:
            raise ValidationError(f"scenario {self.name!r}: [distribution] spec missing")
        if spec.split()[0] == "offspring":
            kv = dict(p.split("=", 1) for p in spec.split()[1:])
            return stopped.power_offspring(float(kv["alpha"]), float(kv["mean"]),
                                           int(kv.get("n_cap", 4096)))
        return parse_spec(spec)

    def lattice(self, x_max: float | None = None) -> LatticeDistribution:
        d = self.distribution()
        if isinstance(d, LatticeDistribution):
            return d
        step = self.f("distribution", "step")
        raw = self.config["distribution"].get("x_max", "")
        if x_max is None:
            x_max = float(raw) if raw else self._default_x_max(d, step)
        return discretize(d, step, x_max)

    def _default_x_max(self, d: Distribution, step: float) -> float:
        stop = float(self.config["x_grid"]["stop"])
        drop = max(0.0, -d.support_start)
        n_guess = self.i("numerics", "n_max")
        return stop + drop * n_guess + 64 * step

    def tau(self, scale_hint: float | None = None) -> CountingDistribution:
        spec = self.config["tau"].get("spec", "")
        if not spec:
            raise ValidationError(f"scenario {self.name!r}: [tau] spec missing")
        return parse_tau_spec(spec, scale_hint)

    def rule(self) -> sim.StoppingRule:
        raw = self.config["tau"].get("rule", "")
        if raw:
            return parse_rule_spec(raw, self)
        return sim.StoppingRule.independent(self.tau())


def parse_tau_spec(spec: str, scale_hint: float | None = None) -> CountingDistribution:
    """Counting-law specs: geometric p=, deterministic n=, power alpha=,
    weibull_matched beta= [scale=]."""
    parts = spec.split()
    if not parts:
        raise ValidationError("empty counting spec")
    kind, kv = parts[0], dict(p.split("=", 1) for p in parts[1:])
    try:
        if kind == "geometric":
            return CountingDistribution.geometric(float(kv.get("p", 0.5)),
                                                  int(kv.get("n_cap", 256)))
        if kind == "deterministic":
            return CountingDistribution.deterministic(int(kv["n"]))
        if kind == "power":
            return CountingDistribution.power_tail(float(kv["alpha"]),
                                                   int(kv.get("n_cap", 4096)))
        if kind == "weibull_matched":
            scale = float(kv["scale"]) if "scale" in kv else scale_hint
            if scale is None:
                raise ValidationError("weibull_matched needs scale= or a hint")
            return stopped.weibull_matched_counting(float(kv["beta"]), scale,
                                                    int(kv.get("n_cap", 20000)))
    except KeyError as exc:
        raise ValidationError(f"counting spec {spec!r} missing {exc}") from exc
    raise ValidationError(f"unknown counting spec kind {kind!r}")


def parse_rule_spec(spec: str, scenario: Scenario | None = None) -> sim.StoppingRule:
    parts = spec.split()
    kind, kv = parts[0], dict(p.split("=", 1) for p in parts[1:])
    if kind == "bounded_first_exceed":
        return sim.StoppingRule.bounded_first_exceed(float(kv["a"]), int(kv["cap"]))
    if kind == "first_nonpositive":
        return sim.StoppingRule.first_nonpositive()
    if kind == "h_of_first_increment":
        return sim.StoppingRule.h_of_first_increment(float(kv["beta"]))
    if kind == "independent" and scenario is not None:
        return sim.StoppingRule.independent(scenario.tau())
    raise ValidationError(f"unknown stopping rule {kind!r}")


def parse_scenario_text(text: str, name_hint: str = "") -> Scenario:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"scenario parse error: {exc}") from exc
    config: dict[str, dict[str, str]] = {}
    for section, defaults in _DEFAULTS.items():
        merged = dict(defaults)
        if cp.has_section(section):
            merged.update({k: v for k, v in cp.items(section)})
        config[section] = merged
    name = config["scenario"].get("name", "") or name_hint
    if not name:
        raise ValidationError("scenario has no name")
    config["scenario"]["name"] = name
    sc = Scenario(name=name, config=config)
    _validate(sc)
    return sc


def _validate(sc: Scenario) -> None:
    if sc.task not in _RUNNERS:
        raise ValidationError(f"unknown task {sc.task!r}; known: {sorted(_RUNNERS)}")
    if sc.method not in ("exact", "simulate", "both"):
        raise ValidationError(f"method must be exact|simulate|both, not {sc.method!r}")
    if "spec" in sc.config["distribution"] and sc.config["distribution"]["spec"]:
        sc.distribution()  # raises ValidationError with the offending field


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario_text(fh.read())


def bundled_scenarios() -> dict[str, Scenario]:
    """All scenarios shipped inside the package, keyed by name."""
    out = {}
    root = resources.files("stopsum") / "scenarios"
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".ini"):
            sc = parse_scenario_text(entry.read_text(), entry.name[:-4])
            out[sc.name] = sc
    return out


# ---------------------------------------------------------------------------
# task runners


def run_scenario(sc: Scenario):
    """Dispatch to the task runner; returns (rows, summary)."""
    rows, summary = _RUNNERS[sc.task](sc)
    summary = {"name": sc.name, "task": sc.task, "config": sc.config, **summary}
    return rows, summary


def _run_stopped(sc: Scenario):
    xs = sc.x_grid()
    lat = sc.lattice()
    tau = sc.tau(scale_hint=lat.mean())
    budget = sc.f("numerics", "series_rel_budget")
    vals, rems, terms = stopped.stopped_tail_grid(lat, tau, xs, "sum", budget,
                                                  sc.i("numerics", "cell_budget"))
    mu = lat.mean()
    rows = []
    for x, v, r in zip(xs, vals, rems):
        light = stopped.predictor_light_tau(lat, tau, float(x))
        comparable = (stopped.predictor_comparable_tau(lat, tau, float(x))
                      if mu > 0 else float("nan"))
        rows.append({"x": float(x), "exact": float(v),
                     "predictor_light": light, "predictor_comparable": comparable,
                     "ratio": float(v) / light if light > 0 else float("nan")})
    summary = {"terms_used": terms,
               "remainder_bound": float(rems[0]),
               "increment_mean": mu, "tau_mean": tau.mean()}
    if mu >= 0:
        c = sc.config["numerics"].get("c", "")
        c = float(c) if c else mu + 1.0
        diag = stopped.condition_eq1_check(tau, lat, c, xs)
        summary["condition_eq1"] = {"c": c, "verdict": str(diag.verdict),
                                    "ratios": [p.ratio for p in diag.points]}
    if sc.method in ("simulate", "both"):
        rows, summary = _attach_mc(sc, lat, xs, rows, summary,
                                   exact=[r["exact"] for r in rows])
    return rows, summary


def _attach_mc(sc: Scenario, lat, xs, rows, summary, exact=None):
    rule = sc.rule()
    est_s, est_m, est_tau = sim.simulate_stopped_sum(
        lat, rule, xs, sc.i("mc", "samples"), sc.i("mc", "seed"))
    for i, row in enumerate(rows):
        row["mc_estimate"] = est_s[i].value
        row["mc_std_error"] = est_s[i].std_error
        row["z"] = (sim.compare_exact(est_s[i], exact[i])
                    if exact is not None and est_s[i].std_error > 0 else float("nan"))
    summary["mc"] = {"samples": est_s[0].samples, "seed": est_s[0].seed,
                     "tau_mean_estimate": est_tau.value, "breaches": est_s[0].breaches,
                     "valid": all(e.valid for e in est_s)}
    return rows, summary


def _run_simulate(sc: Scenario):
    xs = sc.x_grid()
    lat = sc.lattice()
    rule = sc.rule()
    est_s, est_m, est_tau = sim.simulate_stopped_sum(
        lat, rule, xs, sc.i("mc", "samples"), sc.i("mc", "seed"))
    exact_vals = None
    if rule.kind == "independent" and sc.method == "both":
        vals, _, _ = stopped.stopped_tail_grid(
            lat, rule.tau, xs, "sum", sc.f("numerics", "series_rel_budget"))
        exact_vals = vals
    rows = []
    for i, x in enumerate(xs):
        exact = float(exact_vals[i]) if exact_vals is not None else float("nan")
        z = (sim.compare_exact(est_s[i], exact)
             if exact_vals is not None and est_s[i].std_error > 0 else float("nan"))
        rows.append({"x": float(x), "estimate": est_s[i].value,
                     "std_error": est_s[i].std_error,
                     "max_estimate": est_m[i].value,
                     "exact_if_available": exact, "z": z})
    prediction = [est_tau.value * float(lat.tail(float(x))) for x in xs]
    summary = {"tau_mean_estimate": est_tau.value,
               "tau_mean_std_error": est_tau.std_error,
               "prediction_mean_times_tail": prediction,
               "breaches": est_s[0].breaches,
               "valid": all(e.valid for e in est_s)}
    return rows, summary


def _run_kesten(sc: Scenario):
    xs = sc.x_grid()
    lat = sc.lattice()
    n_max = sc.i("numerics", "n_max")
    x_hi = tailcalc.window_for(lat, n_max, float(np.max(xs)))
    powers = tailcalc.LatticePowers(lat, x_hi, sc.i("numerics", "cell_budget"))
    log_f = np.asarray(lat.log_tail(xs), dtype=float)
    rows = []
    for n, state in powers.sequential(n_max):
        grid = powers.state_tail(state, n)
        ratios = np.exp(grid.log_tail_at(xs) - log_f)
        for x, r in zip(xs, ratios):
            rows.append({"n": n, "x": float(x), "ratio": float(r),
                         "ratio_over_n": float(r) / n})
    k_hat = max(r["ratio_over_n"] for r in rows)
    half = float(np.max(xs)) / 2
    k_hat_half = max(r["ratio_over_n"] for r in rows if r["x"] <= half)
    summary = {"k_hat": k_hat, "k_hat_half_grid": k_hat_half,
               "relative_change_on_doubling": abs(k_hat / k_hat_half - 1),
               "n_max": n_max, "increment_mean": lat.mean()}
    return rows, summary


def _run_bound_nonneg(sc: Scenario):
    xs = sc.x_grid()
    lat = sc.lattice()
    n_max = sc.i("numerics", "n_max")
    c = sc.f("numerics", "c")
    diag = tailcalc.bound_check_nonneg_mean(lat, c, n_max, xs)
    rows = [{"n": p.n, "x": p.x, "scaled_sup": p.ratio} for p in diag.points]
    half = [r["scaled_sup"] for r in rows if r["x"] <= float(np.max(xs)) / 2]
    sup_full = diag.verdict.sup
    sup_half = max(half) if half else sup_full
    summary = {"sup": sup_full, "sup_half_grid": sup_half,
               "relative_change_on_doubling": abs(sup_full / sup_half - 1),
               "c": c, "verdict": str(diag.verdict)}
    return rows, summary


def _run_maxima(sc: Scenario):
    xs = sc.x_grid()
    lat = sc.lattice()
    n_list = sorted(int(v) for v in
                    sc.config["numerics"].get("n_list", "1 5 20 100").split())
    drop = max(0.0, -lat.support_start)
    x_hi = float(np.max(xs)) + max(n_list) * drop + 2 * lat.step
    grids = tailcalc.max_partial_sum_tail(lat, max(n_list), x_hi=x_hi,
                                          snapshots=tuple(n_list))
    rows = []
    for n in n_list:
        for x in xs:
            approx = tailcalc.integrated_tail_maxima_approx(lat, n, float(x))
            exact = float(grids[n].tail_at(float(x)))
            rows.append({"n": n, "x": float(x), "exact": exact, "approx": approx,
                         "ratio": exact / approx if approx > 0 else float("nan")})
    summary = {"n_list": n_list, "increment_mean": lat.mean()}
    return rows, summary


def _run_bigjump(sc: Scenario):
    xs = sc.x_grid()
    lat = sc.lattice()
    h_kind = sc.config["numerics"].get("h", "sqrt")
    if h_kind != "sqrt":
        raise ValidationError("only h=sqrt windows are bundled")
    h = math.sqrt
    diag = tailcalc.big_jump_range_check(lat, h, xs, "two_sided")
    rows = [{"x": p.x, "worst_n": p.n, "max_abs_deviation": p.ratio}
            for p in diag.points]
    lower = (tailcalc.big_jump_range_check(lat, h, xs, "lower")
             if sc.config["numerics"].get("lower", "") == "1" else None)
    summary = {"verdict": str(diag.verdict),
               "deviations": [p.ratio for p in diag.points]}
    if lower is not None:
        summary["lower_variant_max_shortfall"] = max(p.ratio for p in lower.points)
    return rows, summary


def _run_branching(sc: Scenario):
    xs = sc.x_grid()
    off = sc.lattice()
    gens = sc.i("numerics", "generations")
    mu = off.mean()
    rows = []
    for x in xs:
        exact = stopped.gw_generation_tail(off, gens, float(x))
        two_term = mu * float(off.tail(float(x))) + float(off.tail(float(x) / mu))
        rows.append({"x": float(x), "exact": exact, "two_term": two_term,
                     "ratio": exact / two_term})
    summary = {"generations": gens, "offspring_mean": mu}
    if sc.method in ("simulate", "both"):
        est = sim.simulate_gw(off, gens, float(xs[-1]), sc.i("mc", "samples"),
                              sc.i("mc", "seed"))
        summary["mc"] = {"x": float(xs[-1]), "estimate": est.value,
                         "std_error": est.std_error,
                         "z": sim.compare_exact(est, rows[-1]["exact"])
                         if est.std_error > 0 else float("nan"),
                         "breaches": est.breaches}
    return rows, summary


def _run_superlinearity(sc: Scenario):
    k = sc.i("numerics", "k")
    G = pathological.build_pathological(max(k, 3))
    rows = []
    for kk in range(3, k + 1):
        rep = pathological.superlinearity_report(G, kk)
        rows.append({"k": kk, "n": rep.n, "x": rep.x, "step": rep.step,
                     "ratio": rep.ratio, "ratio_lower": rep.ratio_lower,
                     "predicted_floor": rep.predicted_floor,
                     "shift_bound_ok": int(rep.shift_bound_ok)})
    jk = {kk: pathological.verify_Jk(G, kk) for kk in (3, 4) if kk <= G.k_max}
    summary = {
        "b": G.b,
        "levels": [float(v) for v in G.R],
        "endpoints": [float(v) for v in G.t],
        "rates": [float(v) for v in G.r],
        "n_seq": [int(v) for v in G.n_seq],
        "x_seq": [float(v) for v in G.x_seq],
        "jk": {str(kk): {"log_value": r.log_value, "log_bound": r.log_bound,
                         "containment": r.containment_ok, "passes": r.passes}
               for kk, r in jk.items()},
    }
    return rows, summary


def _run_kluppelberg(sc: Scenario):
    k = sc.i("numerics", "k")
    G = pathological.build_pathological(max(k, 4))
    xs = [float(G.t[j]) for j in range(3, k + 1)]
    diag = classify.kluppelberg_criterion(G.view, xs)
    rows = [{"x": p.x, "value": p.ratio} for p in diag.points]
    formula = [math.exp(G.R[j - 1]) / G.R[j - 1] ** 2 for j in range(3, k + 1)]
    summary = {"verdict": str(diag.verdict), "lower_bound_formula": formula,
               "target": G.view.integrated_tail(0.0, math.inf)}
    return rows, summary


def _run_blowup_series(sc: Scenario):
    beta = sc.f("numerics", "beta")
    lat = sc.lattice()
    tau = stopped.weibull_matched_counting(beta, lat.mean())
    xs = sc.x_grid()
    budget = sc.f("numerics", "series_rel_budget")
    vals, rems, terms = stopped.stopped_tail_grid(lat, tau, xs, "sum", budget)
    ratios = vals / np.exp(np.asarray(lat.log_tail(xs), dtype=float))
    rows = [{"x": float(x), "exact": float(v), "ratio": float(r)}
            for x, v, r in zip(xs, vals, ratios)]
    threshold = 10.0 * tau.mean()
    crossed = [r["x"] for r in rows if r["ratio"] > threshold]
    summary = {"beta": beta, "tau_mean": tau.mean(), "increment_mean": lat.mean(),
               "threshold": threshold, "terms_used": terms,
               "crossed_at": crossed[0] if crossed else None}
    return rows, summary


_RUNNERS = {
    "stopped": _run_stopped,
    "simulate": _run_simulate,
    "kesten": _run_kesten,
    "bound_nonneg": _run_bound_nonneg,
    "maxima": _run_maxima,
    "bigjump": _run_bigjump,
    "branching": _run_branching,
    "superlinearity": _run_superlinearity,
    "kluppelberg": _run_kluppelberg,
    "blowup_series": _run_blowup_series,
}
