"""Experiment drivers behind the command line.

Each experiment kind is a small driver object that knows how to build,
advance, sample and checkpoint a batch of ensemble members.  A shared
loop handles sampling cadence, checkpoints, ``stop_after`` and resume.
Members are split into contiguous chunks run on a thread pool; every
per-member computation is independent of the batch it sits in, so the
outputs do not depend on the thread count.
"""
import math
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache

import numpy as np
from scipy import stats as sstats

from . import __version__
from .boussinesq import (CFLError, DIAGNOSTIC_COLUMNS, ScalarState, SolverState, build_bases,
                         comparison_initial, energy_diagnostics, initial_state,
                         step_comparison_S, step_drift_diffusion, step_finite_pr)
from .config import ExperimentSpec, with_options
from .coupling import (CouplingConfig, auto_mode_count, couple_infinite_pr, estimate_decay,
                       step_coupled_pair)
from .fields import ScalarField, VelocityField, integrate
from .infinite_pr import InfPrState, initial_inf_state, step_infinite_pr
from .noise import (INIT_LANE, WienerStream, build_temperature_basis, build_velocity_basis,
                    combine, derive_member_seed, philox_normals)
from .outputs import (CsvWriter, has_checkpoint, load_member_checkpoint,
                      save_member_checkpoint, write_csv, write_json)
from .params import build_background_profile
from .stats import (NUSSELT_FUNCTIONALS, TimeAverager, WindowTooShort, background_bound,
                    exponential_moment_report, martingale_exceedance_test, nusselt_estimates,
                    nusselt_functionals, pointwise_background_inequality,
                    theta_martingale_increments)

INIT_MODES = 8


class Stopped(Exception):
    """Raised internally when ``stop_after`` interrupts a run."""


def member_ids(spec: ExperimentSpec, members=None):
    members = range(spec.members) if members is None else members
    return [derive_member_seed(spec.seed, m) for m in members]


def total_steps(spec):
    return int(round(spec.opt("t_end") / spec.step.dt))


@lru_cache(maxsize=8)
def _init_basis(grid):
    return build_temperature_basis(INIT_MODES, grid)


def initial_theta(spec, ids, counter=0, amplitude=None):
    """Smooth random wall-vanishing field per member, drawn on the INIT lane."""
    amp = spec.opt("init_amplitude") if amplitude is None else amplitude
    g = np.stack([philox_normals(spec.seed, t, counter, INIT_MODES, INIT_LANE) for t in ids])
    return amp * combine(_init_basis(spec.grid), g) / math.sqrt(INIT_MODES)


def frozen_velocity(spec, ids, n_modes=6):
    """Smooth no-slip velocity per member scaled to max speed ``v_amplitude``."""
    basis = build_velocity_basis(n_modes, spec.grid)
    g = np.stack([philox_normals(spec.seed, t, 7, n_modes, INIT_LANE) for t in ids])
    psi = combine(basis, g)
    v = VelocityField(spec.grid, psi)
    speed = np.sqrt(v.u1 ** 2 + v.u2 ** 2).max(axis=(-2, -1))
    scale = spec.opt("v_amplitude") / np.where(speed > 0, speed, 1.0)
    return VelocityField(spec.grid, psi * scale[:, None, None])


def _take(state, j):
    """Member j of a batched solver state as plain arrays."""
    h = state.history
    if h is None:
        hist = {}
    elif isinstance(h, tuple):
        hist = {"hist_theta": h[0][j], "hist_omega": h[1][j]}
    else:
        hist = {"hist_theta": h[j]}
    return hist


def _stack_history(arrays, finite):
    if "hist_theta" not in arrays[0]:
        return None
    th = np.stack([a["hist_theta"] for a in arrays])
    if finite:
        return (th, np.stack([a["hist_omega"] for a in arrays]))
    return th


# ------------------------------------------------------------------ drivers

class TrajectoryDriver:
    """Plain finite- or infinite-Pr trajectories with diagnostics and Nusselt averages."""
    csv_name = "trajectory.csv"
    columns = ("t",) + DIAGNOSTIC_COLUMNS

    def __init__(self, spec):
        self.spec = spec
        self.params = spec.params
        self.grid = spec.grid
        self.finite = not spec.params.infinite_pr
        self.bases = build_bases(spec.params, spec.grid)
        self.profile = build_background_profile(self.params.ra, self.params.ra_tilde, self.grid)

    def stream(self, ids, step):
        return WienerStream(self.spec.seed, tuple(ids), step)

    def initial(self, ids):
        th = ScalarField(self.grid, initial_theta(self.spec, ids))
        if self.finite:
            return initial_state(th, self.stream(ids, 0))
        return initial_inf_state(th, self.params.ra, self.stream(ids, 0))

    def advance(self, s):
        if self.finite:
            return step_finite_pr(s, self.params, self.bases, self.spec.step)
        return step_infinite_pr(s, self.params, self.bases.temperature, self.spec.step)

    def pack(self, s, j):
        fields = {"theta": s.theta.values[j], "psi": s.velocity.psi[j]}
        return fields, _take(s, j)

    def unpack(self, ids, step, t, fields, arrays):
        th = ScalarField(self.grid, np.stack([f["theta"] for f in fields]))
        vel = VelocityField(self.grid, np.stack([f["psi"] for f in fields]))
        hist = _stack_history(arrays, self.finite)
        cls = SolverState if self.finite else InfPrState
        return cls(t, th, vel, self.stream(ids, step), step, hist)

    def time(self, s):
        return s.t

    def new_acc(self):
        return {"avg": TimeAverager(t_start=self.spec.opt("burn_in"), names=NUSSELT_FUNCTIONALS),
                "min_residual": math.inf}

    def acc_to_json(self, a):
        return {"avg": a["avg"].to_dict(), "min_residual": a["min_residual"]}

    def acc_from_json(self, d):
        return {"avg": TimeAverager.from_dict(d["avg"]), "min_residual": d["min_residual"]}

    def sample(self, s, accs):
        diag = energy_diagnostics(s)
        nf = nusselt_functionals(s)
        res = pointwise_background_inequality(s, self.profile, self.params)
        rows = []
        for j, acc in enumerate(accs):
            row = {"t": s.t}
            row.update({k: diag[k][j] for k in DIAGNOSTIC_COLUMNS})
            rows.append(row)
            acc["avg"].update({"t": s.t, **{k: nf[k][j] for k in NUSSELT_FUNCTIONALS}})
            r = float(res[j])
            acc["min_residual"] = min(acc["min_residual"], r)
        return rows

    def finish(self, acc):
        out = {"t_end": acc["avg"].t_now, "min_background_residual": acc["min_residual"]}
        try:
            est = nusselt_estimates(acc["avg"], self.params,
                                    noise_norm_sq=self.bases.temperature.total_norm_sq)
            out["nusselt"] = est.as_dict()
        except WindowTooShort as exc:
            out["nusselt"] = None
            out["nusselt_note"] = str(exc)
        return out


class CouplingDriver:
    """Reference/nudged trajectory pairs under shared noise."""
    csv_name = "coupling.csv"
    columns = ("t", "diff_u_sq", "diff_theta_sq", "girsanov_cost", "log_density", "stopped")

    def __init__(self, spec):
        self.spec = spec
        params, ccfg = spec.params, spec.coupling
        self.grid = spec.grid
        self.c_discrete = None
        if ccfg.auto_modes:
            n, c = auto_mode_count(ccfg.lambda2, spec.grid)
            self.c_discrete = c
            if params.n2 < n:
                params = with_options(spec, n2=n).params
            ccfg = CouplingConfig(**{**ccfg.__dict__, "n2_nudge": n})
        self.params, self.ccfg = params, ccfg
        self.finite = not params.infinite_pr
        self.bases = build_bases(params, spec.grid)
        ccfg.validate(self.bases)

    def stream(self, ids, step):
        return WienerStream(self.spec.seed, tuple(ids), step)

    def _init_one(self, th, ids, step=0):
        f = ScalarField(self.grid, th)
        if self.finite:
            return initial_state(f, self.stream(ids, step))
        return initial_inf_state(f, self.params.ra, self.stream(ids, step))

    def initial(self, ids):
        U = self._init_one(initial_theta(self.spec, ids, 0), ids)
        V = self._init_one(initial_theta(self.spec, ids, 1), ids)
        return (U, V, None)

    def advance(self, b):
        U, V, row = b
        if self.finite:
            return step_coupled_pair(U, V, self.params, self.bases, self.ccfg, self.spec.step, row)
        return couple_infinite_pr(U, V, self.ccfg, self.params, self.bases.temperature,
                                  self.spec.step, row)

    def time(self, b):
        return b[0].t

    def pack(self, b, j):
        U, V, row = b
        fields = {"theta": U.theta.values[j], "psi": U.velocity.psi[j],
                  "ntheta": V.theta.values[j], "npsi": V.velocity.psi[j]}
        arrays = {k: v for k, v in _take(U, j).items()}
        arrays.update({"n" + k: v for k, v in _take(V, j).items()})
        if row is not None:
            arrays["ledger"] = np.array([row["girsanov_cost"][j], row["log_density"][j],
                                         float(row["stopped"][j])])
        return fields, arrays

    def unpack(self, ids, step, t, fields, arrays):
        cls = SolverState if self.finite else InfPrState

        def build(prefix):
            th = ScalarField(self.grid, np.stack([f[prefix + "theta"] for f in fields]))
            vel = VelocityField(self.grid, np.stack([f[prefix + "psi"] for f in fields]))
            hist = _stack_history([{k[len(prefix):]: v for k, v in a.items() if k.startswith(prefix + "hist")}
                                   for a in arrays], self.finite)
            return cls(t, th, vel, self.stream(ids, step), step, hist)

        row = None
        if "ledger" in arrays[0]:
            led = np.stack([a["ledger"] for a in arrays])
            row = {"girsanov_cost": led[:, 0].copy(), "log_density": led[:, 1].copy(),
                   "stopped": led[:, 2] > 0.5}
        return (build(""), build("n"), row)

    def new_acc(self):
        return {"t": [], "total": [], "stopped_ever": False, "cost": 0.0, "log_density": 0.0}

    def acc_to_json(self, a):
        return dict(a)

    def acc_from_json(self, d):
        return dict(d)

    def sample(self, b, accs):
        U, V, row = b
        g = self.grid
        du = integrate((V.velocity.u1 - U.velocity.u1) ** 2 + (V.velocity.u2 - U.velocity.u2) ** 2, g)
        dth = integrate((V.theta.values - U.theta.values) ** 2, g)
        rows = []
        for j, acc in enumerate(accs):
            cost = float(row["girsanov_cost"][j]) if row else 0.0
            logd = float(row["log_density"][j]) if row else 0.0
            stopped = bool(row["stopped"][j]) if row else False
            rows.append({"t": U.t, "diff_u_sq": du[j], "diff_theta_sq": dth[j],
                         "girsanov_cost": cost, "log_density": logd, "stopped": stopped})
            acc["t"].append(float(U.t))
            acc["total"].append(float(du[j] + dth[j]))
            acc["stopped_ever"] = acc["stopped_ever"] or stopped
            acc["cost"], acc["log_density"] = cost, logd
        return rows

    def finish(self, acc):
        fit = estimate_decay(acc["t"], acc["total"], self.ccfg.fit_window, self.ccfg.sync_eps)
        return {"synced": fit.synced, "rate": fit.rate, "r_squared": fit.r_squared,
                "rate_defined": fit.rate_defined, "stopped_ever": acc["stopped_ever"],
                "girsanov_cost": acc["cost"], "log_density": acc["log_density"],
                "final_difference": acc["total"][-1]}


class ComparisonDriver:
    """Drift-diffusion xi and comparison solution S with a frozen velocity."""
    csv_name = "comparison.csv"
    columns = ("t", "margin_min", "max_abs_xi", "max_abs_S")

    def __init__(self, spec):
        self.spec = spec
        self.params = spec.params
        self.grid = spec.grid
        self.basis = build_temperature_basis(spec.params.n2, spec.grid)
        self._v = {}

    def velocity(self, ids):
        key = tuple(ids)
        if key not in self._v:
            self._v[key] = frozen_velocity(self.spec, ids)
        return self._v[key]

    def stream(self, ids, step):
        return WienerStream(self.spec.seed, tuple(ids), step)

    def initial(self, ids):
        xi0 = ScalarField(self.grid, initial_theta(self.spec, ids))
        s0 = comparison_initial(xi0, self.params.ra_tilde)
        st = self.stream(ids, 0)
        return (ScalarState(0.0, xi0, st), ScalarState(0.0, s0, st), self.velocity(ids))

    def advance(self, b):
        xi, S, v = b
        cfg = self.spec.step
        return (step_drift_diffusion(xi, v, self.params, self.basis, cfg),
                step_comparison_S(S, v, self.params, self.basis, cfg), v)

    def time(self, b):
        return b[0].t

    def pack(self, b, j):
        xi, S, _ = b
        arrays = {}
        if xi.history is not None:
            arrays = {"hist_xi": xi.history[j], "hist_S": S.history[j]}
        return {"xi": xi.field.values[j], "S": S.field.values[j]}, arrays

    def unpack(self, ids, step, t, fields, arrays):
        st = self.stream(ids, step)
        hx = np.stack([a["hist_xi"] for a in arrays]) if "hist_xi" in arrays[0] else None
        hs = np.stack([a["hist_S"] for a in arrays]) if "hist_S" in arrays[0] else None
        xi = ScalarState(t, ScalarField(self.grid, np.stack([f["xi"] for f in fields])), st, step, hx)
        S = ScalarState(t, ScalarField(self.grid, np.stack([f["S"] for f in fields])), st, step, hs)
        return (xi, S, self.velocity(ids))

    def new_acc(self):
        return {"min_margin": math.inf}

    def acc_to_json(self, a):
        return dict(a)

    def acc_from_json(self, d):
        return dict(d)

    def margins(self, b):
        xi, S, _ = b
        # the wall rows carry the documented initial jump; compare interior points
        m = (np.abs(S.field.values) + 2 * self.params.ra_tilde - np.abs(xi.field.values))
        return m[..., 1:-1].min(axis=(-2, -1))

    def sample(self, b, accs):
        xi, S, _ = b
        m = self.margins(b)
        rows = []
        for j, acc in enumerate(accs):
            acc["min_margin"] = min(acc["min_margin"], float(m[j]))
            rows.append({"t": xi.t, "margin_min": m[j],
                         "max_abs_xi": np.abs(xi.field.values[j]).max(),
                         "max_abs_S": np.abs(S.field.values[j]).max()})
        return rows

    def observe_every_step(self, b, accs):
        m = self.margins(b)
        for j, acc in enumerate(accs):
            acc["min_margin"] = min(acc["min_margin"], float(m[j]))

    def finish(self, acc):
        tol = -1e-6 * self.params.ra_tilde
        return {"min_margin": acc["min_margin"], "tolerance": tol,
                "ok": acc["min_margin"] >= tol}


class MartingaleDriver(TrajectoryDriver):
    """Trajectories recording the ||theta||^2 Ito martingale increments."""
    csv_name = "trajectory.csv"

    def new_acc(self):
        return {"dm": [], "dq": [], "endpoint": None}

    def acc_to_json(self, a):
        return dict(a)

    def acc_from_json(self, d):
        return dict(d)

    def before_step(self, s, accs):
        n1 = len(self.bases.velocity) if self.finite else 0
        n = self.bases.n_draws if self.finite else len(self.bases.temperature)
        dt = self.spec.step.dt
        dw = math.sqrt(dt) * s.stream.normals(n)[..., n1:]
        dm, dq = theta_martingale_increments(s.theta.values, self.bases.temperature, dw, dt)
        for j, acc in enumerate(accs):
            acc["dm"].append(float(dm[j]))
            acc["dq"].append(float(dq[j]))

    def sample(self, s, accs):
        diag = energy_diagnostics(s)
        rows = []
        for j, acc in enumerate(accs):
            row = {"t": s.t}
            row.update({k: diag[k][j] for k in DIAGNOSTIC_COLUMNS})
            rows.append(row)
            acc["endpoint"] = [float(diag["norm_u_sq"][j]), float(diag["norm_theta_sq"][j]),
                               float(diag["theta_l4"][j]) ** 2]
        return rows

    def finish(self, acc):
        return {"endpoint": acc["endpoint"], "dm": acc["dm"], "dq": acc["dq"]}


DRIVERS = {"run_finite_pr": TrajectoryDriver, "run_infinite_pr": TrajectoryDriver,
           "couple": CouplingDriver, "verify_comparison": ComparisonDriver,
           "martingale_test": MartingaleDriver}


# ------------------------------------------------------------- shared loop

def _member_dir(out, m):
    d = os.path.join(out, f"member_{m:04d}")
    os.makedirs(d, exist_ok=True)
    return d


def _save(driver, spec, ckpt, members, bundle, step, accs, writers):
    for w in writers:
        w.flush()
    for j, m in enumerate(members):
        fields, arrays = driver.pack(bundle, j)
        meta = {"step": step, "t": driver.time(bundle), "stream_step": step,
                "csv_rows": writers[j].rows, "acc": driver.acc_to_json(accs[j])}
        save_member_checkpoint(ckpt, m, spec.spec_hash, spec.grid, fields, arrays, meta)


def _drive_group(driver, spec, out, members, stop_after, resume):
    ids = member_ids(spec, members)
    ckpt = os.path.join(out, "checkpoint")
    n_steps = total_steps(spec)
    every = spec.opt("sample_every")
    ck_every = spec.checkpoint_every
    if resume:
        loaded = [load_member_checkpoint(ckpt, m, spec.spec_hash) for m in members]
        metas = [x[3] for x in loaded]
        step = metas[0]["step"]
        t = metas[0]["t"]
        bundle = driver.unpack(ids, step, t, [x[1] for x in loaded], [x[2] for x in loaded])
        accs = [driver.acc_from_json(mt["acc"]) for mt in metas]
        writers = [CsvWriter(os.path.join(_member_dir(out, m), driver.csv_name), driver.columns,
                             spec.spec_hash, keep_rows=mt["csv_rows"])
                   for m, mt in zip(members, metas)]
    else:
        step = 0
        bundle = driver.initial(ids)
        accs = [driver.new_acc() for _ in members]
        writers = [CsvWriter(os.path.join(_member_dir(out, m), driver.csv_name), driver.columns,
                             spec.spec_hash) for m in members]
        for w, r in zip(writers, driver.sample(bundle, accs)):
            w.write(r)
    try:
        while step < n_steps:
            if hasattr(driver, "before_step"):
                driver.before_step(bundle, accs)
            bundle = driver.advance(bundle)
            step += 1
            if hasattr(driver, "observe_every_step"):
                driver.observe_every_step(bundle, accs)
            if step % every == 0 or step == n_steps:
                for w, r in zip(writers, driver.sample(bundle, accs)):
                    w.write(r)
            stop = stop_after is not None and step >= stop_after
            if (ck_every and step % ck_every == 0) or stop:
                _save(driver, spec, ckpt, members, bundle, step, accs, writers)
            if stop and step < n_steps:
                raise Stopped(step)
    finally:
        for w in writers:
            w.close()
    return [driver.finish(a) for a in accs]


def _chunks(members, threads):
    return [list(map(int, c)) for c in np.array_split(np.asarray(members), threads) if len(c)]


def _drive(driver, spec, out, stop_after=None, resume=False):
    members = list(range(spec.members))
    ckpt = os.path.join(out, "checkpoint")
    if resume:
        missing = [m for m in members if not has_checkpoint(ckpt, m)]
        if missing:
            from .outputs import CheckpointError
            raise CheckpointError(f"no checkpoint for members {missing} in {ckpt}")
        groups = {}
        for m in members:
            step = load_member_checkpoint(ckpt, m, spec.spec_hash)[3]["step"]
            groups.setdefault(step, []).append(m)
        work = [c for g in groups.values() for c in _chunks(g, spec.opt("threads"))]
    else:
        if os.path.isdir(ckpt):
            shutil.rmtree(ckpt)
        work = _chunks(members, spec.opt("threads"))

    def job(chunk):
        return chunk, _drive_group(driver, spec, out, chunk, stop_after, resume)

    if len(work) == 1:
        results = [job(work[0])]
    else:
        with ThreadPoolExecutor(max_workers=spec.opt("threads")) as ex:
            results = list(ex.map(job, work))
    per = {}
    for chunk, res in results:
        per.update(zip(chunk, res))
    return [per[m] for m in members]


# --------------------------------------------------------------- summaries

def _header(spec, out):
    os.makedirs(out, exist_ok=True)
    from .config import format_config
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(f"# spec_hash={spec.spec_hash} version={__version__}\n")
        fh.write(format_config({k: v for k, v in spec.options.items()
                                if k not in ("threads", "output_dir")}))


def _manifest(spec, out, bases):
    write_json(os.path.join(out, "manifest.json"), {
        "seed": spec.seed,
        "member_seed_rule": "trajectory_id = splitmix64(seed xor member_index)",
        "trajectory_ids": member_ids(spec),
        "rng": "Philox4x64 keyed (seed, trajectory_id), counter (0, step, lane, 0), Box-Muller",
        "temperature_basis": bases.temperature.manifest(),
        "velocity_basis": bases.velocity.manifest(),
    }, spec.spec_hash)


def _bases_for(driver):
    from .boussinesq import Bases
    if hasattr(driver, "bases"):
        return driver.bases
    return Bases(driver.basis, build_velocity_basis(0, driver.grid))


def run_experiment(spec: ExperimentSpec, out=None, stop_after=None, resume=False):
    """Run (or resume) ``spec``; returns the summary dict, or None if stopped early."""
    out = out or spec.output_dir
    _header(spec, out)
    stale = os.path.join(out, "summary.json")
    if not resume and os.path.exists(stale):
        os.remove(stale)
    if spec.kind == "nusselt_sweep":
        return run_nusselt_sweep(spec, out)
    driver = DRIVERS[spec.kind](spec)
    _manifest(spec, out, _bases_for(driver))
    try:
        per = _drive(driver, spec, out, stop_after, resume)
    except Stopped:
        return None
    summary = {"kind": spec.kind, "members": per}
    if spec.kind in ("run_finite_pr", "run_infinite_pr"):
        summary.update(_trajectory_summary(driver, per))
    elif spec.kind == "couple":
        summary.update(_coupling_summary(driver, per))
    elif spec.kind == "verify_comparison":
        summary.update(_comparison_summary(driver, per))
    elif spec.kind == "martingale_test":
        summary = _martingale_summary(spec, out, per)
    write_json(os.path.join(out, "summary.json"), summary, spec.spec_hash)
    return summary


def _trajectory_summary(driver, per):
    prof = driver.profile
    nus = [p["nusselt"]["nu_flux"] for p in per if p.get("nusselt")]
    return {"params": driver.params.__dict__,
            "background_bound": background_bound(driver.params, prof),
            "delta": prof.delta,
            "nu_flux_mean": float(np.mean(nus)) if nus else None,
            "min_background_residual": min(p["min_background_residual"] for p in per)}


def _coupling_summary(driver, per):
    n = len(per)
    synced = [p for p in per if p["synced"]]
    decaying = [p for p in per if p["rate_defined"] and p["rate"] < 0 and p["r_squared"] > 0.9]
    logd = np.array([p["log_density"] for p in per])
    return {"n2_nudge": driver.ccfg.n2_nudge, "n2_forced": len(driver.bases.temperature),
            "lambda1": driver.ccfg.lambda1, "lambda2": driver.ccfg.lambda2,
            "c_discrete": driver.c_discrete, "r_budget": driver.ccfg.r_budget,
            "fraction_synced": len(synced) / n,
            "fraction_decaying": len(decaying) / n,
            "fraction_synced_and_decaying": sum(1 for p in synced if p in decaying) / n,
            "budget_exhausted_on_synced": sum(1 for p in synced if p["stopped_ever"]),
            "mean_density": float(np.mean(np.exp(logd))),
            "max_cost": max(p["girsanov_cost"] for p in per)}


def _comparison_summary(driver, per):
    m = min(p["min_margin"] for p in per)
    tol = -1e-6 * driver.params.ra_tilde
    return {"min_margin": m, "tolerance": tol, "ok": m >= tol}


def _martingale_summary(spec, out, per):
    gamma = spec.opt("gamma")
    dm = np.array([p["dm"] for p in per])
    dq = np.array([p["dq"] for p in per])
    table = martingale_exceedance_test(dm, dq, gamma, spec.opt("k_list"))
    write_csv(os.path.join(out, "exceedance.csv"), ("K", "frequency", "bound", "sigma", "exceed", "n", "ok"),
              [r.as_dict() for r in table], spec.spec_hash)
    ends = np.array([p["endpoint"] for p in per])
    moments = {}
    for p, col in ((2, 1), (4, 2)):
        rows = exponential_moment_report(ends[:, 0] + ends[:, col], spec.opt("eta_list"))
        moments[f"p{p}"] = [r.as_dict() for r in rows]
    return {"kind": spec.kind, "gamma": gamma, "exceedance": [r.as_dict() for r in table],
            "all_ok": all(r.ok for r in table), "exponential_moments": moments,
            "members": len(per)}


# ------------------------------------------------------------- Nusselt sweep

SWEEP_COLUMNS = ("ra", "ra_tilde", "ra_ra_tilde", "dt", "nu_flux", "hw_flux", "nu_grad_t",
                 "hw_grad_t", "nu_grad_u", "hw_grad_u", "bound", "nu_over_sqrt", "below_bound")


def _sweep_point(spec, out, i, ra, rt, max_retries=6):
    dt = spec.step.dt
    kind = "run_finite_pr" if math.isfinite(spec.params.pr) else "run_infinite_pr"
    for _ in range(max_retries):
        sub = with_options(spec, kind=kind, ra=ra, ra_tilde=rt, dt=dt, members=1, threads=1)
        pdir = os.path.join(out, f"point_{i:02d}")
        if os.path.isdir(pdir):
            shutil.rmtree(pdir)
        try:
            s = run_experiment(sub, pdir)
        except CFLError as exc:
            dt = min(exc.suggested_dt, dt / 2)
            continue
        m = s["members"][0]
        est = m["nusselt"]
        bound = s["background_bound"]
        return {"ra": ra, "ra_tilde": rt, "ra_ra_tilde": ra * rt, "dt": dt,
                "nu_flux": est["nu_flux"], "hw_flux": est["hw_flux"],
                "nu_grad_t": est["nu_grad_t"], "hw_grad_t": est["hw_grad_t"],
                "nu_grad_u": est["nu_grad_u"], "hw_grad_u": est["hw_grad_u"],
                "bound": bound, "nu_over_sqrt": est["nu_flux"] / math.sqrt(ra * rt),
                "below_bound": est["nu_flux"] <= bound + est["hw_flux"]}
    raise CFLError(float("nan"), dt, -1)


def run_nusselt_sweep(spec, out):
    pts = list(zip(spec.opt("sweep_ra"), spec.opt("sweep_ra_tilde")))
    with ThreadPoolExecutor(max_workers=spec.opt("threads")) as ex:
        rows = list(ex.map(lambda a: _sweep_point(spec, out, a[0], *a[1]), enumerate(pts)))
    write_csv(os.path.join(out, "sweep.csv"), SWEEP_COLUMNS, rows, spec.spec_hash)
    x = np.log([r["ra_ra_tilde"] for r in rows])
    summary = {"kind": spec.kind, "points": rows,
               "all_below_bound": all(r["below_bound"] for r in rows)}
    if len(rows) >= 2:
        summary["bound_exponent"] = float(sstats.linregress(x, np.log([r["bound"] for r in rows])).slope)
        summary["nu_exponent"] = float(sstats.linregress(x, np.log([r["nu_flux"] for r in rows])).slope)
    write_json(os.path.join(out, "summary.json"), summary, spec.spec_hash)
    return summary
