"""Command line entry point.

Subcommands ``validate``, ``certify``, ``evolve``, ``f-profile`` and ``oracle``
read a JSON experiment config and write reports and CSV tables to an output
directory.  Exit codes: 0 success, 1 failed check or pipeline stage, 2 usage
or config error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .analysis import GapFunction, QuadratureSpec, criteria_check, default_quadrature, f_profile, search_gap
from .discriminant import default_oracle_L, oracle_point_spectrum
from .evolution import BOUNDARY_POLICIES, LatticeBox, LatticeState, LightConeError, evolve, return_probability_series
from .model import (
    CoinScheme, ModelError, ShiftParams, admissible_axes, assumption_ratio_holds,
    derived_scalars, full_validation,
)
from .spectral_map import assemble_report, essential_arcs, free_angle, g_pm, verify_on_truncation

SCHEMA_VERSION = 1
ARC_POINTS = 200


class ConfigError(ValueError):
    """Malformed or incomplete experiment config."""


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage '{stage}': {type(exc).__name__}: {exc}")
        self.stage = stage


def _complex_list(values, name: str) -> list[complex]:
    if not isinstance(values, list):
        raise ConfigError(f"{name} must be a list")
    out = []
    for v in values:
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            out.append(complex(v))
        elif isinstance(v, list) and len(v) == 2 and all(isinstance(c, (int, float)) for c in v):
            out.append(complex(v[0], v[1]))
        else:
            raise ConfigError(f"{name}: entries must be numbers or [re, im] pairs, got {v!r}")
    return out


def _real_list(values, name: str) -> list[float]:
    vals = _complex_list(values, name)
    if any(v.imag != 0 for v in vals):
        raise ConfigError(f"{name} must be real")
    return [v.real for v in vals]


def _int(block: dict, key: str, default, lo: int, defaults: list, prefix: str):
    if key not in block or block[key] is None:
        if default is not None:
            defaults.append(f"{prefix}.{key}")
        return default
    v = block[key]
    if not isinstance(v, int) or isinstance(v, bool) or v < lo:
        raise ConfigError(f"{prefix}.{key} must be an integer >= {lo}, got {v!r}")
    return v


@dataclass
class ExperimentConfig:
    params: ShiftParams
    scheme: CoinScheme
    p0: list[float] | None
    quadrature: QuadratureSpec
    oracle_L: int | None
    verify_L: int | None
    T_max: int
    box_radius: int | None
    boundary: str
    seed: int
    profile_points: int
    out_dir: Path
    snapshots: list[int]
    initial: dict
    raw: dict
    defaults: list[str] = field(default_factory=list)

    def provenance(self, command: str) -> dict:
        blob = json.dumps(self.raw, sort_keys=True).encode()
        return {
            "package": "qwdefect", "version": __version__, "command": command,
            "schema_version": SCHEMA_VERSION, "config_sha256": hashlib.sha256(blob).hexdigest(),
            "seed": self.seed, "defaults_applied": list(self.defaults),
            "quadrature": {"N": self.quadrature.N, "R": self.quadrature.R, "tol": self.quadrature.tol},
            "config": self.raw,
        }


def parse_config(raw: dict, out: str | None = None, seed: int | None = None) -> ExperimentConfig:
    """Check and convert a decoded JSON config; raises :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    model = raw.get("model")
    if not isinstance(model, dict):
        raise ConfigError("missing 'model' block")
    for key in ("dim", "p", "q", "Phi", "Omega"):
        if key not in model:
            raise ConfigError(f"model.{key} is required")
    dim = model["dim"]
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise ConfigError(f"model.dim must be a positive integer, got {dim!r}")
    p = _real_list(model["p"], "model.p")
    q = _complex_list(model["q"], "model.q")
    Phi = _complex_list(model["Phi"], "model.Phi")
    Omega = _complex_list(model["Omega"], "model.Omega")
    p0 = None
    if model.get("p0") is not None:
        p0 = _real_list(model["p0"], "model.p0")
        if len(p0) != dim or any(v not in (-1.0, 1.0) for v in p0):
            raise ConfigError(f"model.p0 must have {dim} entries in {{-1, 1}}")
    try:
        params = ShiftParams(dim, p, q)
        scheme = CoinScheme(dim, Phi, Omega)
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc

    defaults: list[str] = []
    num = raw.get("numerics", {}) or {}
    if not isinstance(num, dict):
        raise ConfigError("'numerics' must be an object")
    quad = num.get("quadrature", {}) or {}
    dq = default_quadrature(dim)
    N = _int(quad, "N", dq.N, 32, defaults, "numerics.quadrature")
    R = _int(quad, "R", dq.R, 0, defaults, "numerics.quadrature")
    try:
        qs = QuadratureSpec(N=N, R=R)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    boundary = num.get("boundary", "truncate_zero")
    if "boundary" not in num:
        defaults.append("numerics.boundary")
    if boundary not in BOUNDARY_POLICIES:
        raise ConfigError(f"numerics.boundary must be one of {BOUNDARY_POLICIES}")
    cfg_seed = _int(num, "seed", 0, 0, defaults, "numerics")
    if seed is not None:
        cfg_seed = seed
    outputs = raw.get("outputs", {}) or {}
    if not isinstance(outputs, dict):
        raise ConfigError("'outputs' must be an object")
    out_dir = Path(out or outputs.get("directory") or "qwdefect_out")
    T_max = _int(num, "T_max", 100, 0, defaults, "numerics")
    snapshots = outputs.get("snapshots", [T_max])
    if not isinstance(snapshots, list) or any(not isinstance(s, int) or s < 0 or s > T_max for s in snapshots):
        raise ConfigError("outputs.snapshots must be a list of integers in [0, T_max]")
    initial = outputs.get("initial", raw.get("initial", {"kind": "delta"})) or {"kind": "delta"}
    if initial.get("kind", "delta") not in ("delta", "eigenvector"):
        raise ConfigError("initial.kind must be 'delta' or 'eigenvector'")
    if initial.get("kind") == "eigenvector" and "file" not in initial:
        raise ConfigError("initial.file is required for an eigenvector initial state")
    return ExperimentConfig(
        params=params, scheme=scheme, p0=p0, quadrature=qs,
        oracle_L=_int(num, "oracle_L", None, 2, defaults, "numerics"),
        verify_L=_int(num, "verify_L", None, 2, defaults, "numerics"),
        T_max=T_max,
        box_radius=_int(num, "box_radius", None, 1, defaults, "numerics"),
        boundary=boundary, seed=cfg_seed,
        profile_points=_int(num, "profile_points", 50, 2, defaults, "numerics"),
        out_dir=out_dir, snapshots=sorted(set(snapshots)), initial=initial, raw=raw,
        defaults=defaults,
    )


def load_config(path: str, out: str | None = None, seed: int | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return parse_config(raw, out, seed)


def _clean(obj):
    """Make ``obj`` strict-JSON serializable: complex -> [re, im], non-finite -> string."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [_clean(float(obj.real)), _clean(float(obj.imag))]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, set):
        return sorted(_clean(v) for v in obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, allow_nan=False)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, StageError):
        raise
    except Exception as exc:  # noqa: BLE001  labelled and re-raised
        raise StageError(name, exc) from exc


def _certifiable(cfg: ExperimentConfig) -> str | None:
    """Reason the analytic route does not apply, or None."""
    if cfg.params.dim < 2:
        return "dimension below 2"
    if not assumption_ratio_holds(cfg.scheme):
        return "coin scheme violates the orthogonality/coupling assumption"
    if not admissible_axes(cfg.params, cfg.scheme):
        return "(p, q) lies in no admissible D_l"
    return None


def write_f_profile(path: Path, profiles) -> None:
    rows = [(rep.gap, lam, v, dv, e) for rep in profiles for lam, v, dv, e in rep.rows()]
    _write_csv(path, ["gap", "lambda", "f", "f_prime", "error"], rows)


def write_band(path: Path, band: tuple[float, float]) -> None:
    rows = []
    for branch, (a, b) in zip(("+", "-"), essential_arcs(band)):
        for ang in np.linspace(a, b, ARC_POINTS):
            rows.append((branch, float(ang), math.cos(ang), math.sin(ang), math.cos(ang)))
    _write_csv(path, ["branch", "angle", "re", "im", "lambda"], rows)


def cmd_validate(cfg: ExperimentConfig) -> int:
    report = full_validation(cfg.params, cfg.scheme, cfg.p0)
    out = {"validation": report.as_dict(), "provenance": cfg.provenance("validate")}
    if report.ok:
        ds = derived_scalars(cfg.params, cfg.scheme)
        out["scalars"] = _scalars(ds)
    write_json(cfg.out_dir / "validation.json", out)
    for c in report.checks:
        tag = "ok  " if c.passed else ("FAIL" if c.required else "warn")
        print(f"[{tag}] {c.name} residual={c.residual:.3g} {c.detail}")
    print("valid" if report.ok else "invalid: " + ", ".join(c.name for c in report.failed()))
    return 0 if report.ok else 1


def _scalars(ds) -> dict:
    return {"aPhi": ds.aPhi, "aOmega": ds.aOmega, "alpha": ds.alpha, "theta": ds.theta,
            "lambda_q": ds.lambda_q, "phi_q_norm_sq": ds.phi_q_norm_sq, "band": list(ds.band)}


def _gap_searches(cfg: ExperimentConfig, gf: GapFunction) -> dict:
    out = {}
    for gap in ("lower", "upper"):
        out[gap] = _stage(f"search_gap[{gap}]", search_gap, gap, cfg.params, cfg.scheme, cfg.quadrature, gf)
    return out


def cmd_certify(cfg: ExperimentConfig) -> int:
    validation = full_validation(cfg.params, cfg.scheme, cfg.p0)
    if not validation.ok:
        print("invalid model: " + ", ".join(c.name for c in validation.failed()), file=sys.stderr)
        write_json(cfg.out_dir / "report.json",
                   {"validation": validation.as_dict(), "provenance": cfg.provenance("certify")})
        return 1
    ds = derived_scalars(cfg.params, cfg.scheme)
    notes = []
    searches, criteria, profiles = {}, None, []
    reason = _certifiable(cfg)
    if reason is None:
        criteria = _stage("criteria_check", criteria_check, cfg.params, cfg.scheme, cfg.p0)
        gf = GapFunction(cfg.params, cfg.scheme, cfg.quadrature)
        searches = _gap_searches(cfg, gf)
        profiles = _stage("f_profile", f_profile, cfg.params, cfg.scheme, cfg.quadrature,
                          cfg.profile_points, searches)
    else:
        notes.append(f"analytic route skipped: {reason}; oracle only")
    zeros = [s.zero for s in searches.values() if s.zero is not None]
    oracle_L = cfg.oracle_L
    if oracle_L is None:
        oracle_L = default_oracle_L(ds, cfg.params.dim, zeros[0] if zeros else None)
        notes.append(f"oracle_L defaulted to {oracle_L}")
    oracle = _stage("oracle_point_spectrum", oracle_point_spectrum, cfg.params, cfg.scheme, oracle_L)
    verify_L = cfg.verify_L or oracle_L
    verifications = {}
    angles = []
    for lam in zeros:
        for g in g_pm(lam):
            verifications[g] = _stage("verify_on_truncation", verify_on_truncation,
                                      cfg.params, cfg.scheme, g, verify_L, seed=cfg.seed)
            angles.append(math.acos(lam))
    birth = [_stage("verify_on_truncation", verify_on_truncation, cfg.params, cfg.scheme,
                    complex(s), verify_L, seed=cfg.seed) for s in (1.0, -1.0)]
    ctrl_angle = free_angle(ds.band, angles)
    control = _stage("verify_on_truncation", verify_on_truncation, cfg.params, cfg.scheme,
                     complex(math.cos(ctrl_angle), math.sin(ctrl_angle)), verify_L, seed=cfg.seed)
    report = assemble_report(cfg.params, cfg.scheme, searches, criteria, oracle,
                             verifications, birth, cfg.p0, control)
    report.notes.extend(notes)
    out = report.as_dict()
    out["scalars"] = _scalars(ds)
    out["validation"] = validation.as_dict()
    out["f_profiles"] = [p.as_dict() for p in profiles]
    out["provenance"] = cfg.provenance("certify")
    out["provenance"].update({"oracle_L": oracle_L, "verify_L": verify_L})
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out_dir / "report.json", out)
    if profiles:
        write_f_profile(cfg.out_dir / "f_profile.csv", profiles)
    write_band(cfg.out_dir / "band.csv", ds.band)
    for i, (g, ver) in enumerate(verifications.items()):
        if ver.eigenvector is not None and ver.converged:
            np.savez(cfg.out_dir / f"eigenvector_{i}.npz", amplitudes=ver.eigenvector.amplitudes,
                     radius=ver.L, g=np.array([g.real, g.imag]))
    print(f"band [{ds.band[0]:.12g}, {ds.band[1]:.12g}]")
    if criteria is not None:
        print(f"criteria up={criteria.up} down={criteria.down}")
    for t in report.t_eigenvalues:
        print(f"lambda* = {t['lambda']:.15g} ({t['gap']} gap)")
    for u in report.u_eigenvalues:
        res = u.get("verification", {}).get("residual")
        print(f"U-eigenvalue {u['value'][0]:+.12f}{u['value'][1]:+.12f}i residual={res}")
    print(f"wrote {cfg.out_dir / 'report.json'}")
    return 0


def _initial_state(cfg: ExperimentConfig) -> LatticeState:
    init = cfg.initial
    dim = cfg.params.dim
    if init.get("kind", "delta") == "eigenvector":
        try:
            data = np.load(init["file"])
        except OSError as exc:
            raise ConfigError(f"cannot read eigenvector file {init['file']}: {exc}") from exc
        amp = data["amplitudes"]
        small = LatticeState(LatticeBox(dim, int(data["radius"]), "truncate_zero"), amp)
        radius = cfg.box_radius or small.box.radius + cfg.T_max + 1
        if radius < small.box.radius:
            raise ConfigError("numerics.box_radius is smaller than the eigenvector box")
        return small.embed(LatticeBox(dim, radius, cfg.boundary)).normalized()
    vec = init.get("vector")
    vec = cfg.scheme.Omega if vec is None else np.array(_complex_list(vec, "initial.vector"))
    if vec.size != 2 * dim:
        raise ConfigError(f"initial.vector must have {2 * dim} entries")
    x = init.get("site")
    radius = cfg.box_radius or cfg.T_max + 1 + (max(abs(v) for v in x) if x else 0)
    state = LatticeState.delta(LatticeBox(dim, radius, cfg.boundary), vec, x)
    return state.normalized()


def cmd_evolve(cfg: ExperimentConfig) -> int:
    state = _initial_state(cfg)
    try:
        series, running = return_probability_series(cfg.params, cfg.scheme, state, cfg.T_max)
    except LightConeError as exc:
        print(f"light-cone violation: {exc}", file=sys.stderr)
        return 1
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(cfg.out_dir / "return_series.csv", ["t", "P_origin", "time_average"],
               ((t, s, r) for t, (s, r) in enumerate(zip(series, running))))
    coords = [c.reshape(-1) for c in np.meshgrid(*state.box.coords(), indexing="ij")]
    cols = [f"x{j + 1}" for j in range(state.box.dim)]
    t_done = 0
    for T in cfg.snapshots:
        state = evolve(state, cfg.params, cfg.scheme, T - t_done)
        t_done = T
        prob = np.sum(np.abs(state.amplitudes) ** 2, axis=-1).reshape(-1)
        _write_csv(cfg.out_dir / f"prob_t{T}.csv", cols + ["P"],
                   (tuple(int(c[i]) for c in coords) + (prob[i],) for i in range(prob.size)))
    summary = {"T_max": cfg.T_max, "box_radius": state.box.radius,
               "boundary": state.box.boundary_policy, "initial": cfg.initial,
               "return_probability_final": series[-1], "time_average_final": running[-1],
               "snapshots": cfg.snapshots, "provenance": cfg.provenance("evolve")}
    write_json(cfg.out_dir / "evolve.json", summary)
    print(f"time-averaged return probability at t={cfg.T_max}: {running[-1]:.6g}")
    return 0


def cmd_f_profile(cfg: ExperimentConfig) -> int:
    reason = _certifiable(cfg)
    if reason is not None or not full_validation(cfg.params, cfg.scheme).ok:
        print(f"gap function not available: {reason or 'invalid model'}", file=sys.stderr)
        return 1
    profiles = _stage("f_profile", f_profile, cfg.params, cfg.scheme, cfg.quadrature, cfg.profile_points)
    write_f_profile(cfg.out_dir / "f_profile.csv", profiles)
    print(f"wrote {cfg.out_dir / 'f_profile.csv'}")
    return 0


def cmd_oracle(cfg: ExperimentConfig) -> int:
    if not full_validation(cfg.params, cfg.scheme).ok:
        print("invalid model", file=sys.stderr)
        return 1
    ds = derived_scalars(cfg.params, cfg.scheme)
    L = cfg.oracle_L or default_oracle_L(ds, cfg.params.dim)
    res = _stage("oracle_point_spectrum", oracle_point_spectrum, cfg.params, cfg.scheme, L)
    write_json(cfg.out_dir / "oracle.json", {**res.as_dict(), "provenance": cfg.provenance("oracle")})
    for e in res.eigenvalues:
        print(f"{e.value:.15g} gap={e.gap} shell={e.decay_score:.3g} kept={e.kept}")
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "certify": cmd_certify,
    "evolve": cmd_evolve,
    "f-profile": cmd_f_profile,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qwdefect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", help="output directory (overrides outputs.directory)")
        sp.add_argument("--seed", type=int, help="seed for randomized starts (overrides numerics.seed)")
        sp.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = load_config(args.config, args.out, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error in {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
