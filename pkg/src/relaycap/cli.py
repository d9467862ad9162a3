"""Command line driver: single points, parameter sweeps, simulation and validation.

Configuration files are flat ``key = value`` text with ``#`` comments, for
example::

    sweep = snr_r_db
    grid_min = 0
    grid_max = 20
    grid_points = 9
    policies = MCG, MDE, NoBuffer
    eps = 0.05
    d_max = 1.0

Links default to collinear Rayleigh fading set by ``d`` and ``alpha``. They
can be overridden, e.g. ``rd = discrete: 0.5@0.3, 2.0@0.7`` or
``sd = constant: 1.0`` or ``sr = rayleigh: 16``.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np

from .capacity import CapacityResult, effective_capacity
from .delay import DelayConstraint
from .exceptions import DomainError, RelayCapError
from .fading import Constant, Discrete, FadingSpec, Rayleigh, Scenario
from .mgf import make_engine
from .policies import effective_capacity_mde, mcg_policy, mde_policy, nobuffer_capacity
from .queuesim import SimConfig, simulate, validate_capacity

SWEEP_PARAMS = ("snr_r_db", "epsilon", "d", "lambda")
POLICIES = ("MCG", "MDE", "NoBuffer")
CSV_COLUMNS = ["param", "policy", "case_label", "R_eps_bits_per_s", "theta1", "theta2", "J1", "J2", "prZ", "runtime_ms"]


# ---------------------------------------------------------------------------
# Link specs


def format_link(link) -> str:
    if link is None:
        return "default"
    if isinstance(link, Rayleigh):
        return f"rayleigh: {link.mean!r}"
    if isinstance(link, Constant):
        return f"constant: {link.gain!r}"
    if isinstance(link, Discrete):
        return "discrete: " + ", ".join(f"{g!r}@{p!r}" for g, p in zip(link.gains, link.probs))
    raise DomainError(f"cannot serialize link {link!r}")


def parse_link(text: str):
    text = text.strip()
    if text in ("", "default"):
        return None
    kind, _, body = text.partition(":")
    kind = kind.strip().lower()
    body = body.strip()
    if kind == "rayleigh":
        return Rayleigh(float(body))
    if kind == "constant":
        return Constant(float(body))
    if kind == "discrete":
        pairs = [item.split("@") for item in body.split(",") if item.strip()]
        if any(len(p) != 2 for p in pairs):
            raise DomainError(f"discrete link entries must look like gain@prob: {text!r}")
        return Discrete(tuple(float(g) for g, _ in pairs), tuple(float(p) for _, p in pairs))
    raise DomainError(f"unknown link type {kind!r}")


# ---------------------------------------------------------------------------
# Sweep specification


@dataclass(frozen=True)
class SweepSpec:
    sweep: Optional[str] = None
    grid_min: float = 0.0
    grid_max: float = 20.0
    grid_points: int = 9
    grid_scale: str = "linear"
    policies: tuple = ("MCG", "MDE", "NoBuffer")
    eps: float = 0.05
    d_max: float = 1.0
    d: float = 0.5
    snr_r_db: float = 10.0
    snr_s_db: float = 0.0
    alpha: float = 4.0
    gamma: float = 1.0
    T: float = 1e-3
    B: float = 180e3
    decode_factor: float = 1.0
    sd: object = None
    sr: object = None
    rd: object = None
    engine: str = "auto"
    tol: float = 1e-8
    mc_samples: int = 10**6
    seed: int = 0
    horizon: int = 10**6
    tag_period: int = 50
    out: Optional[str] = None

    def __post_init__(self):
        if self.sweep is not None:
            if self.sweep not in SWEEP_PARAMS:
                raise DomainError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {self.sweep!r}")
            if self.grid_points < 2:
                raise DomainError("a sweep needs at least two grid points")
            if self.grid_scale not in ("linear", "log"):
                raise DomainError("grid_scale must be linear or log")
            for v in self.grid():
                self._check_value(v)
        if self.sweep != "epsilon":
            DelayConstraint(self.eps, self.d_max)
        elif not self.d_max > 0:
            raise DomainError(f"d_max must be positive, got {self.d_max}")
        if self.sweep != "d" and not 0 < self.d < 1:
            raise DomainError(f"d must lie in (0, 1), got {self.d}")
        bad = [p for p in self.policies if p not in POLICIES]
        if bad or not self.policies:
            raise DomainError(f"unknown policies {bad}; choose from {POLICIES}")
        if self.engine not in ("auto", "quad", "mc", "enum"):
            raise DomainError(f"unknown engine {self.engine!r}")

    def _check_value(self, v):
        if self.sweep == "d" and not 0 < v < 1:
            raise DomainError(f"d must lie in (0, 1), got {v}")
        if self.sweep == "epsilon" and not 0 < v <= 1:
            raise DomainError(f"epsilon must lie in (0, 1], got {v}")
        if self.sweep == "lambda" and not v >= 0:
            raise DomainError(f"lambda must be non-negative, got {v}")

    def grid(self):
        if self.sweep is None:
            return [None]
        if self.grid_scale == "log":
            return list(np.geomspace(self.grid_min, self.grid_max, self.grid_points))
        return list(np.linspace(self.grid_min, self.grid_max, self.grid_points))

    def point(self, value):
        """(scenario, constraint, decode_factor) with the swept parameter set to ``value``."""
        d, snr_r_db, eps, lam = self.d, self.snr_r_db, self.eps, self.decode_factor
        if self.sweep == "d":
            d = value
        elif self.sweep == "snr_r_db":
            snr_r_db = value
        elif self.sweep == "epsilon":
            eps = value
        elif self.sweep == "lambda":
            lam = value
        base = Scenario.geometric(d, snr_r_db, self.snr_s_db, self.alpha, self.gamma, self.T, self.B)
        links = {k: getattr(self, k) for k in ("sd", "sr", "rd")}
        fading = FadingSpec(**{k: (v if v is not None else getattr(base.fading, k)) for k, v in links.items()})
        return base.replace(fading=fading), DelayConstraint(eps, self.d_max), lam

    def make_engine(self, scenario):
        name = self.engine
        if name == "auto":
            name = "quad" if scenario.fading.continuous else "enum"
        return make_engine(name, tol=self.tol, mc_samples=self.mc_samples, seed=self.seed)

    # serialization

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("sd", "sr", "rd"):
                text = format_link(v)
            elif f.name == "policies":
                text = ", ".join(v)
            elif v is None:
                text = "none"
            elif isinstance(v, float):
                text = repr(v)
            else:
                text = str(v)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SweepSpec":
        kinds = {f.name: f for f in fields(cls)}
        defaults = cls()
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep or key not in kinds:
                raise DomainError(f"line {lineno}: cannot parse {raw!r}")
            values[key] = _convert(key, val, getattr(defaults, key))
        return cls(**values)


def _convert(key, val, default):
    if key in ("sd", "sr", "rd"):
        return parse_link(val)
    if key == "policies":
        return tuple(p.strip() for p in val.split(",") if p.strip())
    if val.lower() == "none":
        return None
    if key in ("sweep", "grid_scale", "engine", "out"):
        return val
    if isinstance(default, bool):
        return val.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(float(val))
    return float(val)


# ---------------------------------------------------------------------------
# Runs


def _fmt(x):
    if x is None:
        return ""
    x = float(x)
    return repr(x)


def _capacity(policy_name, scenario, constraint, lam, engine):
    if policy_name == "MCG":
        return effective_capacity(mcg_policy(lam), scenario, constraint, engine)
    if policy_name == "MDE":
        return effective_capacity_mde(scenario, constraint, engine, decode_factor=lam)
    raise DomainError(f"{policy_name} has no buffered capacity")


def _row_for(spec: SweepSpec, value, policy_name, deterministic):
    start = time.perf_counter()
    row = {"param": "" if value is None else _fmt(value), "policy": policy_name}
    try:
        scenario, constraint, lam = spec.point(value)
        engine = spec.make_engine(scenario)
        if policy_name == "NoBuffer":
            rate = nobuffer_capacity(scenario, constraint, engine)
            row.update(case_label="single-queue", R_eps_bits_per_s=_fmt(rate / scenario.T))
            row.update(theta1="", theta2="", J1=_fmt(constraint.j0), J2="", prZ="")
        else:
            res: CapacityResult = _capacity(policy_name, scenario, constraint, lam, engine)
            p = res.point
            row.update(case_label=res.case_label, R_eps_bits_per_s=_fmt(res.r_eps_per_s))
            row.update(
                theta1=_fmt(p.theta1) if p else "",
                theta2=_fmt(p.theta2) if p else "",
                J1=_fmt(p.j1_per_s) if p else "",
                J2=_fmt(p.j2_per_s) if p else "",
                prZ=_fmt(res.prob_routed),
            )
        ok = True
    except (RelayCapError, ValueError, ArithmeticError) as exc:
        row.update(case_label=f"error:{type(exc).__name__}", R_eps_bits_per_s="", theta1="", theta2="", J1="", J2="", prZ="")
        ok = False
    elapsed = 0.0 if deterministic else (time.perf_counter() - start) * 1e3
    row["runtime_ms"] = "0" if deterministic else f"{elapsed:.1f}"
    return row, ok


def run_sweep(spec: SweepSpec, deterministic=False):
    """All (grid value, policy) rows in grid order and whether every point succeeded."""
    rows, all_ok = [], True
    for value in spec.grid():
        for pol in spec.policies:
            row, ok = _row_for(spec, value, pol, deterministic)
            rows.append(row)
            all_ok &= ok
    return rows, all_ok


def write_csv(rows, columns, path=None):
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    wr.writeheader()
    for r in rows:
        wr.writerow(r)
    text = buf.getvalue()
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return text


VALIDATE_COLUMNS = [
    "param", "policy", "case_label", "R_eps_bits_per_s", "multiplier", "violation", "samples",
    "monotone", "below_ok", "above_ok", "low_confidence", "passed",
]


def run_validate(spec: SweepSpec):
    rows, all_ok = [], True
    for value in spec.grid():
        for pol in spec.policies:
            base = {"param": "" if value is None else _fmt(value), "policy": pol}
            if pol == "NoBuffer":
                continue
            try:
                scenario, constraint, lam = spec.point(value)
                engine = spec.make_engine(scenario)
                res = _capacity(pol, scenario, constraint, lam, engine)
            except (RelayCapError, ValueError, ArithmeticError) as exc:
                rows.append({**base, "case_label": f"error:{type(exc).__name__}"})
                all_ok = False
                continue
            base.update(case_label=res.case_label, R_eps_bits_per_s=_fmt(res.r_eps_per_s))
            if res.case_label == "unstable" or res.r_eps <= 0:
                rows.append({**base, "passed": "unstable"})
                continue
            policy = _sim_policy(pol, res, scenario, lam, engine)
            cfg = SimConfig(rate=0.0, horizon=spec.horizon, seed=spec.seed, tag_period=spec.tag_period)
            rep = validate_capacity(scenario, policy, constraint, res.r_eps, cfg)
            for r in rep.rows():
                rows.append({
                    **base,
                    "multiplier": _fmt(r["multiplier"]),
                    "violation": _fmt(r["violation"]),
                    "samples": r["samples"],
                    "monotone": rep.monotone,
                    "below_ok": rep.below_ok,
                    "above_ok": rep.above_ok,
                    "low_confidence": rep.low_confidence,
                    "passed": rep.passed,
                })
            all_ok &= rep.passed
    return rows, all_ok


def _sim_policy(name, res, scenario, lam, engine):
    if name == "MCG":
        return mcg_policy(lam)
    th = res.point.theta1 if res.point is not None and math.isfinite(res.point.theta1) else 0.0
    return mde_policy(th, scenario, engine, decode_factor=lam)


SIM_COLUMNS = ["policy", "rate_bits_per_s", "violation", "samples", "routing_fraction", "overflow_exponent_q1", "unstable_trend"]


def run_simulate(spec: SweepSpec, rate_per_s=None, trace=None):
    scenario, constraint, lam = spec.point(spec.grid()[0])
    engine = spec.make_engine(scenario)
    rows = []
    for pol in spec.policies:
        if pol == "NoBuffer":
            continue
        res = _capacity(pol, scenario, constraint, lam, engine)
        policy = _sim_policy(pol, res, scenario, lam, engine)
        rate = rate_per_s * scenario.T if rate_per_s is not None else res.r_eps
        st = simulate(scenario, policy, SimConfig(rate=rate, horizon=spec.horizon, seed=spec.seed,
                                                  tag_period=spec.tag_period), d_max_score=constraint.d_max)
        if trace:
            st.write_trace(trace)
        rows.append({
            "policy": pol,
            "rate_bits_per_s": _fmt(rate / scenario.T),
            "violation": _fmt(st.violation(constraint.d_max)),
            "samples": st.n_scored(constraint.d_max),
            "routing_fraction": _fmt(st.routing_fraction()),
            "overflow_exponent_q1": _fmt(st.overflow_exponent(1)),
            "unstable_trend": st.unstable_trend(),
        })
    return rows


# ---------------------------------------------------------------------------
# Entry point


def build_parser():
    ap = argparse.ArgumentParser(prog="relaycap", description="Effective capacity of a buffer-aided full-duplex relay link.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("capacity", "sweep", "simulate", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", help="CSV output path (default: stdout)")
        p.add_argument("--seed", type=int)
        p.add_argument("--engine", choices=("quad", "mc", "enum"))
        p.add_argument("--mc-samples", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        if name in ("capacity", "sweep"):
            p.add_argument("--deterministic", action="store_true", help="write runtime_ms as 0 for reproducible files")
        if name == "simulate":
            p.add_argument("--rate", type=float, help="arrival rate in bits/s (default: the analytic capacity)")
            p.add_argument("--trace", help="write a per-block trace CSV here")
    return ap


def load_spec(args) -> SweepSpec:
    text = ""
    if args.config:
        with open(args.config) as fh:
            text = fh.read()
    text += "\n".join(args.set) + "\n"
    spec = SweepSpec.from_text(text)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.engine is not None:
        over["engine"] = args.engine
    if args.mc_samples is not None:
        over["mc_samples"] = args.mc_samples
    if args.tol is not None:
        over["tol"] = args.tol
    if args.out is not None:
        over["out"] = args.out
    return replace(spec, **over) if over else spec


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = load_spec(args)
        if args.command == "capacity":
            spec = replace(spec, sweep=None)
        elif args.command == "sweep" and spec.sweep is None:
            raise DomainError("sweep needs a 'sweep = <parameter>' entry")
    except (RelayCapError, ValueError, OSError) as exc:
        print(f"relaycap: {exc}", file=sys.stderr)
        return 2

    if args.command in ("capacity", "sweep"):
        rows, ok = run_sweep(spec, deterministic=args.deterministic)
        write_csv(rows, CSV_COLUMNS, spec.out)
        return 0 if ok else 1
    if args.command == "simulate":
        try:
            rows = run_simulate(replace(spec, sweep=None), args.rate, args.trace)
        except (RelayCapError, ValueError, ArithmeticError) as exc:
            print(f"relaycap: {exc}", file=sys.stderr)
            return 1
        write_csv(rows, SIM_COLUMNS, spec.out)
        return 0
    rows, ok = run_validate(spec)
    write_csv(rows, VALIDATE_COLUMNS, spec.out)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
