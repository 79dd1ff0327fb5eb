"""Experiment configuration: parsing, validation and canonical form.

A configuration is a JSON document::

    {
      "schema": "gaugedress.experiment/1",
      "lattice": {"sites": 32, "box": 20.0},
      "mass": 1.0, "coupling": 0.0,
      "connection": {"kind": "principal"},
      "kernel": {"variant": "grad_retarded"},
      "seed": 0, "tolerance": 1e-3,
      "gauge": {"amplitude": 0.5, "correlation_length": 4.0, "width": 2.0},
      "fields": {"a": {"ffexample": {}}, "b": {"terms": [...]}},
      "bivectors": {"f": {"gaussian": {"components": [1, 0, 0, 0, 0, 0]}}},
      "tasks": [{"id": "t1", "kind": "vev2", "args": ["a", "b"]}]
    }

Parse errors carry the line and column of the offending character;
validation errors carry the JSON path of the offending entry.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .connection import ConnectionSpec
from .fields import AnsatzTerm, FieldError, GaussianBivector, ffexample_terms
from .lattice import Lattice, LatticeError
from .propagator import KernelError, XiKernel

__all__ = [
    "SCHEMA",
    "ConfigError",
    "TaskSpec",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "canonical_json",
]

SCHEMA = "gaugedress.experiment/1"

#: positional arguments per task kind: (names, which of them are bivectors)
_ARITY = {
    "dress": ("s",),
    "connection": ("s",),
    "vev2": ("s", "s"),
    "vev3": ("b", "s", "s"),
    "vev4": ("s", "s", "s", "s"),
    "series-compare": ("s",),
    "xi-check": (),
    "gauge-check": (),
}
_PROB_ARITY = {"2to2": ("s", "s", "s", "s"), "1to2": ("s", "s", "b"), "annihilate": ("s", "s", "b")}
_OPTIONS = {
    "dress": {},
    "connection": {"reference": None, "ffexample": {}, "interior_radius": 2.0, "method": "auto"},
    "vev2": {"field": "xi", "normal_ordered": False},
    "vev3": {},
    "vev4": {},
    "prob": {"process": "2to2"},
    "series-compare": {"order": 2, "scale": 0.01},
    "xi-check": {"kernel": None, "width": 2.0, "tolerance": None},
    "gauge-check": {"samples": 3, "tasks": None},
}
VEV_KINDS = ("vev2", "vev3", "vev4", "prob")
_TOP = {
    "schema", "lattice", "mass", "coupling", "connection", "kernel", "seed",
    "tolerance", "gauge", "fields", "bivectors", "tasks",
}
_GAUGE_DEFAULTS = {"amplitude": 0.5, "correlation_length": 4.0, "width": 2.0, "modes": 24, "gradient": "auto"}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def canonical_json(obj) -> str:
    """Deterministic JSON text (sorted keys, no whitespace)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TaskSpec:
    id: str
    kind: str
    args: tuple
    options: dict

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "args": list(self.args), "options": dict(self.options)}


@dataclass
class ExperimentConfig:
    """Validated experiment description."""

    lattice: Lattice
    mass: float
    coupling: float
    connection: ConnectionSpec
    kernel: XiKernel
    fields: dict
    bivectors: dict
    tasks: list
    seed: int = 0
    tolerance: float = 1e-3
    gauge: dict = field(default_factory=lambda: dict(_GAUGE_DEFAULTS))

    # construction ---------------------------------------------------------
    def field_terms(self, name: str) -> list:
        return self.fields[name]

    def bivector(self, name: str):
        """``GaussianBivector`` or ``("curvature_of", field_name)``."""
        return self.bivectors[name]

    def task(self, tid: str) -> TaskSpec:
        for t in self.tasks:
            if t.id == tid:
                return t
        raise KeyError(tid)

    def refined(self, factor: int) -> "ExperimentConfig":
        """Same experiment on a lattice with ``factor`` times the sites per axis."""
        out = ExperimentConfig(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.lattice = self.lattice.refined(factor)
        return out

    def with_overrides(self, seed: int | None = None, tolerance: float | None = None) -> "ExperimentConfig":
        out = ExperimentConfig(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        if seed is not None:
            out.seed = int(seed)
        if tolerance is not None:
            if not (np.isfinite(tolerance) and tolerance > 0):
                raise ConfigError("tolerance must be positive")
            out.tolerance = float(tolerance)
        return out

    # canonical form -------------------------------------------------------
    def _physics(self) -> dict:
        return {
            "lattice": self.lattice.to_dict(),
            "mass": self.mass,
            "coupling": self.coupling,
            "connection": self.connection.to_dict(),
            "kernel": self.kernel.to_dict(),
        }

    def _field_dict(self, name):
        return {"terms": [t.to_dict() for t in self.fields[name]]}

    def _bivector_dict(self, name):
        b = self.bivectors[name]
        if isinstance(b, GaussianBivector):
            return {"gaussian": b.to_dict()}
        return {"curvature_of": b[1]}

    def to_dict(self) -> dict:
        d = {"schema": SCHEMA, **self._physics()}
        d.update(
            seed=self.seed,
            tolerance=self.tolerance,
            gauge=dict(self.gauge),
            fields={n: self._field_dict(n) for n in sorted(self.fields)},
            bivectors={n: self._bivector_dict(n) for n in sorted(self.bivectors)},
            tasks=[t.to_dict() for t in self.tasks],
        )
        return d

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def task_digest(self, task: TaskSpec) -> str:
        """Hash of everything a task's result depends on."""
        spinors, bivs = set(), set()
        pending = [task]
        while pending:
            t = pending.pop()
            for name, role in zip(t.args, _roles(t)):
                (bivs if role == "b" else spinors).add(name)
            if t.kind == "gauge-check":
                pending.extend(self.task(i) for i in t.options["tasks"])
        for b in list(bivs):
            spec = self.bivectors[b]
            if not isinstance(spec, GaussianBivector):
                spinors.add(spec[1])
        payload = {
            "schema": SCHEMA,
            "physics": self._physics(),
            "task": task.to_dict(),
            "fields": {n: self._field_dict(n) for n in sorted(spinors)},
            "bivectors": {n: self._bivector_dict(n) for n in sorted(bivs)},
        }
        if task.kind == "gauge-check":
            payload.update(seed=self.seed, tolerance=self.tolerance, gauge=self.gauge)
        if task.kind == "xi-check":
            payload.update(tolerance=self.tolerance)
        return _digest(payload)


def _roles(task: TaskSpec) -> tuple:
    if task.kind == "prob":
        return _PROB_ARITY[task.options["process"]]
    return _ARITY[task.kind]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate configuration text."""
    try:
        raw = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from None
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None
    try:
        return _validate(raw)
    except ConfigError as e:
        raise ConfigError(f"{source}: {e}") from None


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, str(path))


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def _need(cond, path, msg):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _obj(x, path) -> dict:
    _need(isinstance(x, dict), path, "expected an object")
    return x


def _known(d: dict, allowed, path):
    for k in d:
        _need(k in allowed, f"{path}.{k}", "unknown key")


def _num(x, path, positive=False) -> float:
    _need(isinstance(x, (int, float)) and not isinstance(x, bool), path, "expected a number")
    x = float(x)
    _need(np.isfinite(x), path, "expected a finite number")
    if positive:
        _need(x > 0, path, "must be positive")
    return x


def _int(x, path, minimum=None) -> int:
    _need(isinstance(x, int) and not isinstance(x, bool), path, "expected an integer")
    if minimum is not None:
        _need(x >= minimum, path, f"must be >= {minimum}")
    return int(x)


def _lattice(d, path) -> Lattice:
    d = _obj(d, path)
    try:
        if "sites" in d:
            _known(d, {"sites", "box", "time_sites", "time_box"}, path)
            n = _int(d["sites"], f"{path}.sites")
            box = _num(d.get("box", 20.0), f"{path}.box", positive=True)
            nt = _int(d["time_sites"], f"{path}.time_sites") if "time_sites" in d else None
            lt = _num(d["time_box"], f"{path}.time_box", positive=True) if "time_box" in d else None
            return Lattice.cubic(n, box, nt, lt)
        _known(d, {"extents", "spacings", "origin"}, path)
        _need("extents" in d and "spacings" in d, path, "needs 'sites' or 'extents' and 'spacings'")
        ext = [_int(v, f"{path}.extents[{i}]") for i, v in enumerate(d["extents"])]
        sp = [_num(v, f"{path}.spacings[{i}]", positive=True) for i, v in enumerate(d["spacings"])]
        org = None
        if d.get("origin") is not None:
            org = [_num(v, f"{path}.origin[{i}]") for i, v in enumerate(d["origin"])]
        return Lattice(ext, sp, org)
    except LatticeError as e:
        raise ConfigError(f"{path}: {e}") from None


def _connection(d, path) -> ConnectionSpec:
    d = _obj(d, path)
    _known(d, {"kind", "M1", "M2", "allow_improper"}, path)
    kind = d.get("kind", "principal")
    _need(kind in ("principal", "general", "chiral"), f"{path}.kind", f"unknown connection kind {kind!r}")
    if kind != "general":
        return ConnectionSpec(kind)

    def weight(v, p):
        if isinstance(v, str):
            _need(v == "fierz", p, "string weights must be 'fierz'")
            return v
        if isinstance(v, list):
            _need(len(v) == 2, p, "complex numbers are [re, im]")
            return complex(_num(v[0], p), _num(v[1], p))
        return _num(v, p)

    return ConnectionSpec(
        "general", weight(d.get("M1", 1.0), f"{path}.M1"), weight(d.get("M2", 0.0), f"{path}.M2"),
        bool(d.get("allow_improper", False)),
    )


def _kernel(d, path) -> XiKernel:
    d = _obj(d, path)
    _known(d, {"variant", "weights", "lambda", "allow_improper", "damping", "padding", "spinor", "direction"}, path)
    try:
        return XiKernel.from_dict(d)
    except (KernelError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def _field(d, path) -> list:
    d = _obj(d, path)
    _known(d, {"terms", "ffexample", "scale"}, path)
    _need(("terms" in d) != ("ffexample" in d), path, "needs exactly one of 'terms' or 'ffexample'")
    try:
        if "terms" in d:
            _need(isinstance(d["terms"], list) and d["terms"], f"{path}.terms", "expected a non-empty list")
            terms = []
            for i, t in enumerate(d["terms"]):
                try:
                    terms.append(AnsatzTerm.from_dict(_obj(t, f"{path}.terms[{i}]")))
                except (FieldError, KeyError, TypeError, ValueError) as e:
                    raise ConfigError(f"{path}.terms[{i}]: {e}") from None
        else:
            opts = _obj(d["ffexample"], f"{path}.ffexample")
            allowed = {"k1", "k2", "k3", "theta", "taper_width", "regulator_width", "regulator_order", "center"}
            _known(opts, allowed, f"{path}.ffexample")
            terms = ffexample_terms(**opts)
    except (FieldError, TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{path}: {e}") from None
    if "scale" in d:
        s = _num(d["scale"], f"{path}.scale")
        _need(s != 0, f"{path}.scale", "must be nonzero")
        terms = [t.scaled(s) for t in terms]
    return terms


def _bivector(d, path, fields):
    d = _obj(d, path)
    _known(d, {"gaussian", "curvature_of"}, path)
    _need(len(d) == 1, path, "needs exactly one of 'gaussian' or 'curvature_of'")
    if "curvature_of" in d:
        name = d["curvature_of"]
        _need(name in fields, f"{path}.curvature_of", f"undefined field {name!r}")
        return ("curvature_of", name)
    g = _obj(d["gaussian"], f"{path}.gaussian")
    _known(g, {"components", "center", "width", "wavevector"}, f"{path}.gaussian")
    try:
        return GaussianBivector(**g)
    except (FieldError, TypeError, ValueError) as e:
        raise ConfigError(f"{path}.gaussian: {e}") from None


def _options(kind, d, path) -> dict:
    defaults = _OPTIONS[kind]
    d = _obj(d, path)
    _known(d, set(defaults), path)
    out = dict(defaults)
    out.update(d)
    return out


def _task(d, i, fields, bivectors) -> TaskSpec:
    path = f"tasks[{i}]"
    d = _obj(d, path)
    _known(d, {"id", "kind", "args", "options"}, path)
    tid = d.get("id", f"t{i}")
    _need(isinstance(tid, str) and tid, f"{path}.id", "expected a non-empty string")
    kind = d.get("kind")
    _need(kind in _OPTIONS, f"{path}.kind", f"unknown task kind {kind!r}")
    opts = _options(kind, d.get("options", {}), f"{path}.options")
    if kind == "prob":
        _need(opts["process"] in _PROB_ARITY, f"{path}.options.process", f"unknown process {opts['process']!r}")
        roles = _PROB_ARITY[opts["process"]]
    else:
        roles = _ARITY[kind]
    args = d.get("args", [])
    _need(isinstance(args, list), f"{path}.args", "expected a list")
    _need(len(args) == len(roles), f"{path}.args", f"{kind} takes {len(roles)} arguments, got {len(args)}")
    for j, (a, role) in enumerate(zip(args, roles)):
        p = f"{path}.args[{j}]"
        if role == "s":
            _need(a in fields, p, f"undefined field {a!r}")
        else:
            _need(a in bivectors, p, f"undefined bivector {a!r}")
    _check_options(kind, opts, f"{path}.options")
    return TaskSpec(tid, kind, tuple(args), opts)


def _check_options(kind, o, path):
    if kind == "vev2":
        _need(o["field"] in ("xi", "psi"), f"{path}.field", "must be 'xi' or 'psi'")
        _need(isinstance(o["normal_ordered"], bool), f"{path}.normal_ordered", "expected a boolean")
    elif kind == "connection":
        _need(o["reference"] in (None, "ffexample"), f"{path}.reference", "must be null or 'ffexample'")
        _need(o["method"] in ("auto", "jet", "fd4", "spectral"), f"{path}.method", "unknown method")
        o["interior_radius"] = _num(o["interior_radius"], f"{path}.interior_radius", positive=True)
        _obj(o["ffexample"], f"{path}.ffexample")
    elif kind == "series-compare":
        o["order"] = _int(o["order"], f"{path}.order", 0)
        o["scale"] = _num(o["scale"], f"{path}.scale")
    elif kind == "xi-check":
        if o["kernel"] is not None:
            _kernel(o["kernel"], f"{path}.kernel")
        o["width"] = _num(o["width"], f"{path}.width", positive=True)
        if o["tolerance"] is not None:
            o["tolerance"] = _num(o["tolerance"], f"{path}.tolerance", positive=True)
    elif kind == "gauge-check":
        o["samples"] = _int(o["samples"], f"{path}.samples", 1)


def _validate(raw) -> ExperimentConfig:
    raw = _obj(raw, "$")
    _known(raw, _TOP, "$")
    _need(raw.get("schema") == SCHEMA, "$.schema", f"expected {SCHEMA!r}, got {raw.get('schema')!r}")
    _need("lattice" in raw, "$", "missing 'lattice'")
    lat = _lattice(raw["lattice"], "$.lattice")
    mass = _num(raw.get("mass", 1.0), "$.mass", positive=True)
    lam = _num(raw.get("coupling", 0.0), "$.coupling")
    conn = _connection(raw.get("connection", {}), "$.connection")
    kern = _kernel(raw.get("kernel", {}), "$.kernel")
    seed = _int(raw.get("seed", 0), "$.seed", 0)
    tol = _num(raw.get("tolerance", 1e-3), "$.tolerance", positive=True)
    gauge = dict(_GAUGE_DEFAULTS)
    g = _obj(raw.get("gauge", {}), "$.gauge")
    _known(g, set(_GAUGE_DEFAULTS), "$.gauge")
    for k, v in g.items():
        if k == "gradient":
            _need(v in ("auto", "exact", "spectral", "lattice"), "$.gauge.gradient", "must be auto, exact, spectral or lattice")
            gauge[k] = v
        elif k == "modes":
            gauge[k] = _int(v, "$.gauge.modes", 1)
        else:
            gauge[k] = _num(v, f"$.gauge.{k}", positive=True)
    fields = {}
    for name, fd in _obj(raw.get("fields", {}), "$.fields").items():
        fields[name] = _field(fd, f"$.fields.{name}")
    bivs = {}
    for name, bd in _obj(raw.get("bivectors", {}), "$.bivectors").items():
        bivs[name] = _bivector(bd, f"$.bivectors.{name}", fields)
    tasks_raw = raw.get("tasks", [])
    _need(isinstance(tasks_raw, list), "$.tasks", "expected a list")
    tasks = [_task(t, i, fields, bivs) for i, t in enumerate(tasks_raw)]
    ids = [t.id for t in tasks]
    for i, tid in enumerate(ids):
        _need(tid not in ids[:i], f"tasks[{i}].id", f"duplicate task id {tid!r}")
    vev_ids = [t.id for t in tasks if t.kind in VEV_KINDS]
    for i, t in enumerate(tasks):
        if t.kind != "gauge-check":
            continue
        sel = t.options["tasks"]
        if sel is None:
            t.options["tasks"] = list(vev_ids)
        else:
            _need(isinstance(sel, list), f"tasks[{i}].options.tasks", "expected a list of task ids")
            for j, s in enumerate(sel):
                _need(s in vev_ids, f"tasks[{i}].options.tasks[{j}]", f"{s!r} is not a VEV or probability task")
    return ExperimentConfig(lat, mass, lam, conn, kern, fields, bivs, tasks, seed, tol, gauge)
