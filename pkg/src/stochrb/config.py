"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored; unknown keys are an error.
Validation collects every violated constraint before raising.
"""
import hashlib
import json
import math
from dataclasses import dataclass, field

from .boussinesq import StepConfig
from .coupling import CouplingConfig
from .fields import Grid
from .params import NondimParams

KINDS = ("run_finite_pr", "run_infinite_pr", "couple", "nusselt_sweep",
         "verify_comparison", "martingale_test")


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


KEYS = {
    "kind": str, "pr": float, "ra": float, "ra_tilde": float, "aspect": float,
    "n1": int, "n2": int, "sigma_tilde_norm": float,
    "nx": int, "nz": int, "dt": float, "t_end": float, "cfl_max": float,
    "dealias": _bool, "noise": _bool,
    "seed": int, "members": int, "threads": int,
    "init_amplitude": float, "burn_in": float, "sample_every": int, "checkpoint_every": int,
    "lambda1": float, "lambda2": float, "n1_nudge": int, "n2_nudge": int,
    "r_budget": float, "mode": str, "auto_modes": _bool, "sync_eps": float,
    "fit_window": float,
    "sweep_ra": _floats, "sweep_ra_tilde": _floats,
    "v_amplitude": float, "gamma": float, "k_list": _floats, "eta_list": _floats,
    "output_dir": str,
}

DEFAULTS = {
    "pr": 1.0, "ra": 1000.0, "ra_tilde": 10.0, "aspect": 2.0, "n1": 0, "n2": 8,
    "sigma_tilde_norm": None, "nx": 32, "nz": 33, "dt": 1e-4, "t_end": 1.0, "cfl_max": 0.5,
    "dealias": True, "noise": True, "seed": 0, "members": 1, "threads": 1,
    "init_amplitude": 1.0, "burn_in": 0.0, "sample_every": 10, "checkpoint_every": 0,
    "lambda1": 0.0, "lambda2": 0.0, "n1_nudge": 0, "n2_nudge": 0, "r_budget": 5000.0,
    "mode": "case_ii", "auto_modes": False, "sync_eps": 1e-10, "fit_window": 0.5,
    "sweep_ra": (), "sweep_ra_tilde": (), "v_amplitude": 5.0, "gamma": 0.25,
    "k_list": (2.0, 4.0, 8.0), "eta_list": (0.0, 0.01, 0.05), "output_dir": "out",
}


class ValidationError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def parse_config_text(text):
    """Parse the flat format into a dict of typed values."""
    out, problems = {}, []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {n}: expected key = value")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            problems.append(f"line {n}: unknown key {key!r}")
            continue
        if key in out:
            problems.append(f"line {n}: duplicate key {key!r}")
            continue
        try:
            out[key] = KEYS[key](val)
        except ValueError as exc:
            problems.append(f"line {n}: bad value for {key}: {exc}")
    if problems:
        raise ValidationError(problems)
    return out


def load_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    params: NondimParams
    grid: Grid
    step: StepConfig
    coupling: CouplingConfig = None
    seed: int = 0
    members: int = 1
    output_dir: str = "out"
    checkpoint_every: int = 0
    options: dict = field(default_factory=dict)

    def opt(self, key):
        return self.options[key]

    def canonical(self):
        """Everything that determines the outputs, as sorted JSON.

        Thread count and output location do not enter.
        """
        d = dict(self.options)
        d.pop("threads", None)
        d.pop("output_dir", None)
        return json.dumps(d, sort_keys=True, default=list)

    @property
    def spec_hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def build_spec(values: dict, overrides=None) -> ExperimentSpec:
    """Typed values to a validated spec; ``overrides`` wins over the file."""
    opts = dict(DEFAULTS)
    opts.update(values)
    opts.update({k: v for k, v in (overrides or {}).items() if v is not None})
    problems = []
    if "kind" not in values and not (overrides or {}).get("kind"):
        problems.append("kind is required")
    kind = opts.get("kind")
    if kind is not None and kind not in KINDS:
        problems.append(f"kind must be one of {', '.join(KINDS)}, got {kind!r}")
    if opts["members"] < 1:
        problems.append("members must be >= 1")
    if opts["threads"] < 1:
        problems.append("threads must be >= 1")
    if not 0 <= opts["seed"] < 2 ** 64:
        problems.append("seed must be an unsigned 64-bit integer")
    for k in ("t_end", "dt"):
        if not opts[k] > 0:
            problems.append(f"{k} must be > 0")
    if opts["burn_in"] < 0 or opts["burn_in"] >= opts["t_end"]:
        problems.append("burn_in must lie in [0, t_end)")
    if opts["sample_every"] < 1:
        problems.append("sample_every must be >= 1")
    if opts["checkpoint_every"] < 0:
        problems.append("checkpoint_every must be >= 0")
    if kind == "run_infinite_pr":
        opts["pr"] = math.inf
    if kind == "nusselt_sweep":
        if not opts["sweep_ra"] or len(opts["sweep_ra"]) != len(opts["sweep_ra_tilde"]):
            problems.append("nusselt_sweep needs sweep_ra and sweep_ra_tilde of equal nonzero length")
    if kind in ("martingale_test",) and opts["members"] < 100:
        problems.append("martingale_test needs members >= 100")

    def attempt(fn):
        try:
            return fn()
        except ValueError as exc:
            problems.append(str(exc))
            return None

    pr = opts["pr"]
    params = attempt(lambda: NondimParams(pr=pr, ra=opts["ra"], ra_tilde=opts["ra_tilde"],
                                          aspect=opts["aspect"], n1=opts["n1"], n2=opts["n2"],
                                          sigma_tilde_norm=opts["sigma_tilde_norm"]))
    grid = attempt(lambda: Grid(opts["nx"], opts["nz"], opts["aspect"]))
    step = attempt(lambda: StepConfig(dt=opts["dt"], cfl_max=opts["cfl_max"],
                                      dealias=opts["dealias"], noise=opts["noise"]))
    coupling = None
    if kind == "couple":
        coupling = attempt(lambda: CouplingConfig(
            lambda1=opts["lambda1"], lambda2=opts["lambda2"], n1_nudge=opts["n1_nudge"],
            n2_nudge=opts["n2_nudge"], r_budget=opts["r_budget"], mode=opts["mode"],
            auto_modes=opts["auto_modes"], sync_eps=opts["sync_eps"],
            fit_window=opts["fit_window"]))
        if params is not None and not opts["auto_modes"]:
            if opts["n2_nudge"] > opts["n2"]:
                problems.append("Girsanov shift not representable: n2_nudge exceeds n2")
            if opts["n1_nudge"] > (0 if params.infinite_pr else opts["n1"]):
                problems.append("Girsanov shift not representable: n1_nudge exceeds n1")
    if problems:
        raise ValidationError(problems)
    opts["kind"] = kind
    return ExperimentSpec(kind=kind, params=params, grid=grid, step=step, coupling=coupling,
                          seed=opts["seed"], members=opts["members"],
                          output_dir=opts["output_dir"], checkpoint_every=opts["checkpoint_every"],
                          options=opts)


def with_options(spec: ExperimentSpec, **changes) -> ExperimentSpec:
    opts = {k: v for k, v in spec.options.items()}
    opts.update(changes)
    return build_spec(opts)


def format_config(opts):
    """Inverse of ``parse_config_text`` for the keys present."""
    lines = []
    for k in sorted(opts):
        v = opts[k]
        if v is None:
            continue
        if isinstance(v, (tuple, list)):
            v = ", ".join(repr(float(x)) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
