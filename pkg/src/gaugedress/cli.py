"""Command-line batch driver.

``gaugedress run CONFIG`` executes the configured tasks and writes one JSON
record per task.  ``gauge-check``, ``xi-check`` and ``refine`` automate the
invariance, propagator and resolution checks.  Exit status is 0 on
success, 2 for an invalid configuration and 3 when a numerical check fails
or a task raises a numerical error.

Result files contain no timings or thread counts, so identical inputs give
byte-identical results; wall times go to ``timing.json``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

from . import _accel
from .config import VEV_KINDS, ConfigError, ExperimentConfig, TaskSpec, canonical_json, load_config
from .connection import (
    ConnectionError_,
    curvature,
    compute_connection,
    ffexample_reference,
    interior_deviation,
    interior_mask,
)
from .dressing import dress, dress_series, series_term_norms
from .fields import (
    EnvelopeDecayError,
    FieldError,
    GaussianBivector,
    RandomGaugeFunction,
    chiral_gauge_transform,
    fourier,
    gauge_transform,
    sample_ansatz,
)
from .propagator import GaussianTestFunction, KernelError, XiKernel, weak_divergence_check
from .vev import (
    MaxwellShell,
    ModelParams,
    ShellRangeError,
    VanishingDenominatorError,
    VevResult,
    prepare,
    prob_1to2,
    prob_2to2,
    prob_annihilate,
    vev2_psi,
    vev2_xi,
    vev3,
    vev4,
)

__all__ = ["main", "run_config", "gauge_check", "xi_check", "refine", "Runner", "EXIT_OK", "EXIT_INVALID", "EXIT_CHECK"]

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_CHECK = 3

#: errors that mark a task as numerically failed rather than crash the run
NUMERICAL_ERRORS = (ShellRangeError, VanishingDenominatorError, ConnectionError_, ArithmeticError, FloatingPointError)


def _pair(z) -> list:
    z = complex(z)
    return [z.real, z.imag]


def theta_seed(seed: int, sample: int, index: int, chirality: int = 0) -> int:
    """Deterministic seed of the gauge function for one field and sample."""
    return int(np.random.SeedSequence([seed, sample, index, chirality]).generate_state(1)[0])


class Runner:
    """Evaluates the tasks of one configuration on its lattice.

    Prepared (dressed and shell-transformed) fields are cached per field
    name and gauge sample, so every field is dressed once per sample.
    """

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.params = ModelParams(cfg.mass, cfg.coupling, cfg.connection, cfg.kernel)
        self._prepared = {}
        self._bivectors = {}
        self._thetas = {}

    # fields -----------------------------------------------------------------
    def validate_fields(self):
        """Sample every field once so that boundary-decay problems surface early."""
        for name in sorted(self.cfg.fields):
            try:
                sample_ansatz(self.cfg.fields[name], self.cfg.lattice)
            except EnvelopeDecayError as e:
                raise ConfigError(f"$.fields.{name}: {e}") from None
        for name in sorted(self.cfg.bivectors):
            spec = self.cfg.bivectors[name]
            if isinstance(spec, GaussianBivector):
                self._bivector_shell(name, None)

    def spinor(self, name: str, sample: int | None = None):
        f = sample_ansatz(self.cfg.fields[name], self.cfg.lattice)
        if sample is None:
            return f
        t1, t2 = self.thetas(name, sample)
        grad = self.cfg.gauge["gradient"]
        if t2 is None:
            return gauge_transform(f, t1, gradient=grad)
        return chiral_gauge_transform(f, t1, t2, gradient=grad)

    def thetas(self, name: str, sample: int):
        key = (name, sample)
        if key not in self._thetas:
            g = self.cfg.gauge
            idx = sorted(self.cfg.fields).index(name)

            def make(ch):
                return RandomGaugeFunction(
                    theta_seed(self.cfg.seed, sample, idx, ch), amplitude=g["amplitude"],
                    correlation_length=g["correlation_length"], width=g["width"], modes=g["modes"],
                )

            chiral = self.cfg.connection.kind == "chiral"
            self._thetas[key] = (make(0), make(1) if chiral else None)
        return self._thetas[key]

    def prepared(self, name: str, sample: int | None = None, curvature: bool = False, conjugate: bool = False):
        key = (name, sample)
        have = self._prepared.get(key)
        if have is not None:
            ok_c = not curvature or have.maxwell is not None
            ok_j = not conjugate or have.conj_shell is not None
            if ok_c and ok_j:
                return have
            curvature = curvature or have.maxwell is not None
            conjugate = conjugate or have.conj_shell is not None
        p = prepare(self.spinor(name, sample), self.params, curvature=curvature, conjugate=conjugate)
        self._prepared[key] = p
        return p

    def release(self, sample: int):
        for key in [k for k in self._prepared if k[1] == sample]:
            del self._prepared[key]

    def _bivector_shell(self, name: str, sample: int | None):
        spec = self.cfg.bivectors[name]
        if isinstance(spec, GaussianBivector):
            if name not in self._bivectors:
                self._bivectors[name] = MaxwellShell.from_bivector(spec.sample(self.cfg.lattice))
            return self._bivectors[name]
        return self.prepared(spec[1], sample, curvature=True).maxwell

    # tasks -------------------------------------------------------------------
    def vev(self, task: TaskSpec, sample: int | None = None) -> VevResult:
        """Value of a VEV or probability task, optionally on gauge-transformed fields."""
        P = self.params
        lam = P.lam != 0.0
        a = task.args
        kind = task.kind

        def sp(n, curv=lam, conj=False):
            return self.prepared(n, sample, curvature=curv, conjugate=conj)

        if kind == "vev2":
            if task.options["field"] == "xi":
                return vev2_xi(sp(a[0], False), sp(a[1], False), P)
            return vev2_psi(sp(a[0]), sp(a[1]), P, normal_ordered=task.options["normal_ordered"])
        if kind == "vev3":
            return vev3(self._bivector_shell(a[0], sample), sp(a[1]), sp(a[2]), P)
        if kind == "vev4":
            return vev4(*(sp(n) for n in a), P)
        process = task.options["process"]
        if process == "2to2":
            return prob_2to2(*(sp(n) for n in a), P)
        f = self._bivector_shell(a[2], sample)
        if process == "1to2":
            return prob_1to2(sp(a[0], True), sp(a[1], True), f, P)
        return prob_annihilate(sp(a[0], True), sp(a[1], True, True), f, P)

    def run_task(self, task: TaskSpec) -> dict:
        cfg = self.cfg
        rec = {"task": task.id, "kind": task.kind, "digest": cfg.task_digest(task)}
        kind = task.kind
        if kind in VEV_KINDS:
            r = self.vev(task)
            rec.update(value=_pair(r.value), quad_error=r.quad_error)
        elif kind == "dress":
            rec.update(self._dress_report(task))
        elif kind == "connection":
            rec.update(self._connection_report(task))
        elif kind == "series-compare":
            rec.update(self._series_report(task))
        elif kind == "xi-check":
            rec.update(xi_report(cfg, task))
        elif kind == "gauge-check":
            rec.update(gauge_report(self, task.options["tasks"], task.options["samples"]))
        return rec

    def _dress_report(self, task):
        f = sample_ansatz(self.cfg.fields[task.args[0]], self.cfg.lattice)
        d = dress(f, self.params.kernel, self.params.connection)
        v = d.values()
        return {
            "phase_max_abs": float(np.max(np.abs(d.phase))),
            "imag_residue": d.provenance.imag_residue,
            "norm_ratio": float(np.linalg.norm(v) / np.linalg.norm(f.values())),
            "provenance": d.provenance.to_dict(),
        }

    def _connection_report(self, task):
        o = task.options
        f = sample_ansatz(self.cfg.fields[task.args[0]], self.cfg.lattice)
        u = compute_connection(f, self.params.connection, o["method"])
        if isinstance(u, tuple):
            u = type(u[0])(u[0].lattice, 0.5 * (u[0].data + u[1].data))
        out = {"max_abs": float(np.max(np.abs(u.data))), "rms": float(np.sqrt(np.mean(u.data**2)))}
        if o["reference"] == "ffexample":
            ref_opts = {k: v for k, v in o["ffexample"].items() if k in ("k1", "k2", "k3", "theta")}
            ur, fr = ffexample_reference(self.cfg.lattice, **ref_opts)
            mask = interior_mask(self.cfg.lattice, o["interior_radius"])
            out["max_interior_deviation"] = interior_deviation(u.data, ur.data, mask)
            out["curvature_interior_deviation"] = interior_deviation(curvature(u).data, fr.data, mask)
        return out

    def _series_report(self, task):
        o = task.options
        f = sample_ansatz(self.cfg.fields[task.args[0]], self.cfg.lattice)
        kw = {"kernel": self.params.kernel, "connection": self.params.connection, "scale": o["scale"]}
        approx = dress_series(f, o["order"], **kw)
        full = fourier(dress(f, self.params.kernel, self.params.connection, scale=o["scale"]), self.cfg.lattice)
        return {
            "residual": float(np.linalg.norm(approx - full) / np.linalg.norm(full)),
            "term_norms": series_term_norms(f, o["order"], **kw),
        }


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def gauge_report(runner: Runner, task_ids, samples: int) -> dict:
    """Deviation of each VEV task under ``samples`` random gauge transformations.

    A deviation passes when ``|v' - v| <= max(tol |v|, 3 (e + e'))`` with the
    configured tolerance ``tol`` and the quadrature errors ``e``, ``e'``.
    """
    cfg = runner.cfg
    tasks = [cfg.task(t) for t in task_ids]
    base = {t.id: runner.vev(t) for t in tasks}
    per_task = {t.id: {"max_relative_deviation": 0.0, "max_excess": 0.0} for t in tasks}
    seeds = []
    for s in range(samples):
        seeds.append({n: [th.seed for th in runner.thetas(n, s) if th is not None] for n in sorted(cfg.fields)})
        for t in tasks:
            v0, v1 = base[t.id], runner.vev(t, s)
            dev = abs(v1.value - v0.value)
            allow = max(cfg.tolerance * abs(v0.value), 3.0 * (v0.quad_error + v1.quad_error))
            rel = dev / abs(v0.value) if v0.value != 0 else (0.0 if dev == 0 else float("inf"))
            rec = per_task[t.id]
            rec["max_relative_deviation"] = max(rec["max_relative_deviation"], rel)
            rec["max_excess"] = max(rec["max_excess"], dev / allow if allow > 0 else (0.0 if dev == 0 else float("inf")))
        runner.release(s)
    ok = all(r["max_excess"] <= 1.0 for r in per_task.values())
    return {"samples": samples, "tolerance": cfg.tolerance, "seeds": seeds, "tasks": per_task, "pass": ok}


def xi_report(cfg: ExperimentConfig, task: TaskSpec | None = None) -> dict:
    """Weak divergence ``int Xi . d f`` against the exact ``-f(0)``."""
    o = task.options if task is not None else {"kernel": None, "width": 2.0, "tolerance": None}
    kernel = cfg.kernel if o["kernel"] is None else XiKernel.from_dict(o["kernel"])
    tol = cfg.tolerance if o["tolerance"] is None else o["tolerance"]
    f = GaussianTestFunction((0.0, 0.0, 0.0, 0.0), o["width"])
    w = weak_divergence_check(kernel, f, cfg.lattice)
    err = abs(w + 1.0)
    return {"kernel": kernel.to_dict(), "value": w, "expected": -1.0, "relative_error": err, "tolerance": tol, "pass": err <= tol}


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def _execute(runner: Runner, tasks, timings: list) -> tuple:
    records, failed = [], False
    for t in tasks:
        t0 = time.perf_counter()
        try:
            rec = runner.run_task(t)
        except NUMERICAL_ERRORS as e:
            rec = {"task": t.id, "kind": t.kind, "digest": runner.cfg.task_digest(t), "error": f"{type(e).__name__}: {e}"}
        timings.append({"task": t.id, "wall_time": time.perf_counter() - t0})
        if "error" in rec or rec.get("pass") is False:
            failed = True
        records.append(rec)
    return records, failed


def run_config(path_or_cfg, timings: list | None = None) -> list:
    """Execute all tasks of a configuration and return their records."""
    cfg = path_or_cfg if isinstance(path_or_cfg, ExperimentConfig) else load_config(path_or_cfg)
    runner = Runner(cfg)
    runner.validate_fields()
    records, _ = _execute(runner, cfg.tasks, timings if timings is not None else [])
    return records


def gauge_check(cfg: ExperimentConfig, n_samples: int) -> dict:
    """Gauge-invariance report over every VEV and probability task."""
    runner = Runner(cfg)
    runner.validate_fields()
    ids = [t.id for t in cfg.tasks if t.kind in VEV_KINDS]
    if not ids:
        raise ConfigError("configuration has no VEV or probability tasks to check")
    return gauge_report(runner, ids, n_samples)


def xi_check(cfg: ExperimentConfig) -> list:
    tasks = [t for t in cfg.tasks if t.kind == "xi-check"] or [None]
    return [xi_report(cfg, t) for t in tasks]


def _numeric_pairs(a, b, prefix=""):
    out = {}
    if isinstance(a, dict):
        for k in a:
            if k in b and k not in ("digest", "task", "kind", "pass", "seeds", "provenance", "kernel"):
                out.update(_numeric_pairs(a[k], b[k], f"{prefix}{k}."))
        return out
    if isinstance(a, list) and len(a) == 2 and all(isinstance(x, float) for x in a) and prefix.endswith("value."):
        za, zb = complex(*a), complex(*b)
        return {prefix[:-1]: {"coarse": a, "fine": b, "difference": abs(zb - za)}}
    if isinstance(a, (int, float)) and not isinstance(a, bool):
        return {prefix[:-1]: {"coarse": a, "fine": b, "difference": abs(b - a)}}
    return out


def refine(cfg: ExperimentConfig, factor: int, timings: list) -> tuple:
    """Run every task at the configured and at the refined resolution."""
    if factor < 2:
        raise ConfigError("refinement factor must be an integer >= 2")
    fine_cfg = cfg.refined(factor)
    out, failed = [], False
    lo_runner, hi_runner = Runner(cfg), Runner(fine_cfg)
    lo_runner.validate_fields()
    hi_runner.validate_fields()
    lo, f1 = _execute(lo_runner, cfg.tasks, timings)
    hi, f2 = _execute(hi_runner, fine_cfg.tasks, timings)
    for a, b in zip(lo, hi):
        rec = {"task": a["task"], "kind": a["kind"], "digest": a["digest"], "factor": factor,
               "extents": [list(cfg.lattice.extents), list(fine_cfg.lattice.extents)]}
        if "error" in a or "error" in b:
            rec["error"] = a.get("error") or b.get("error")
        else:
            rec["pairs"] = _numeric_pairs(a, b)
        out.append(rec)
    return out, failed or f1 or f2


def _write(records, args, cfg: ExperimentConfig, timings, extra_timing):
    lines = "".join(canonical_json(r) + "\n" for r in records)
    if args.out is None:
        sys.stdout.write(lines)
        return
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "results.ndjson"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(lines)
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    if args.csv:
        _write_csv(records, args.out)
    with open(os.path.join(args.out, "timing.json"), "w", encoding="utf-8") as fh:
        json.dump({"tasks": timings, **extra_timing}, fh, indent=2)
        fh.write("\n")


def _flatten(rec, prefix=""):
    out = {}
    for k, v in rec.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif k == "value" and isinstance(v, list) and len(v) == 2:
            out[key + ".re"], out[key + ".im"] = v
        elif isinstance(v, (int, float, str, bool)) or v is None:
            out[key] = v
    return out


def _write_csv(records, outdir):
    by_kind = {}
    for r in records:
        by_kind.setdefault(r["kind"], []).append(_flatten(r))
    for kind, rows in sorted(by_kind.items()):
        cols = sorted({c for r in rows for c in r})
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        with open(os.path.join(outdir, f"{kind}.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaugedress", description="Gauge-invariant dressing and VEV experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment configuration (JSON)")
    common.add_argument("--out", default=None, help="output directory (default: results to stdout)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for compiled kernels")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--tolerance", type=float, default=None, help="override the configured tolerance")
    common.add_argument("--csv", action="store_true", help="also write one CSV table per task kind")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="execute all configured tasks")
    g = sub.add_parser("gauge-check", parents=[common], help="gauge invariance of every VEV task")
    g.add_argument("--samples", type=int, default=3)
    sub.add_parser("xi-check", parents=[common], help="weak divergence of the configured kernel(s)")
    r = sub.add_parser("refine", parents=[common], help="re-run at a finer lattice and report pairs")
    r.add_argument("--factor", type=int, default=2)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = _accel.set_threads(args.threads)
    timings = []
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.tolerance)
        t0 = time.perf_counter()
        if args.command == "run":
            runner = Runner(cfg)
            runner.validate_fields()
            records, failed = _execute(runner, cfg.tasks, timings)
        elif args.command == "gauge-check":
            if args.samples < 1:
                raise ConfigError("--samples must be >= 1")
            rep = gauge_check(cfg, args.samples)
            records = [{"kind": "gauge-check", "seed": cfg.seed, **rep}]
            failed = not rep["pass"]
        elif args.command == "xi-check":
            records = [{"kind": "xi-check", **r} for r in xi_check(cfg)]
            failed = not all(r["pass"] for r in records)
        else:
            records, failed = refine(cfg, args.factor, timings)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (FieldError, KernelError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except NUMERICAL_ERRORS as e:
        print(f"numerical error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CHECK
    extra = {"total_wall_time": time.perf_counter() - t0, "threads": threads, "backend": _accel.backend()}
    _write(records, args, cfg, timings, extra)
    for r in records:
        if "error" in r:
            print(f"task {r.get('task')}: {r['error']}", file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
