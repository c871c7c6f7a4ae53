"""Command-line front end: bound -> localize -> converge.

A single INI file drives a run::

    [system]
    name = vanderpol
    mu = 1.0

    [bound]
    observable = x2
    sense = max
    degree = 8

    [localize]
    box = -3 3, -3 3
    epsilon = 0.01

Every stage writes its outputs to the run directory and records them in
``manifest.json`` together with a hash of the effective configuration.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass
from importlib import metadata

import numpy as np

from . import moehlis
from .dynamics import IntegratorControl, list_systems, make_system, time_average
from .localize import EmptyCloudWarning, PointCloud, SamplerConfig, build_indicator_poly, choose_epsilon, harvest
from .polyalg import parse_polynomial
from .sdp import SolverSettings, check_residuals, export_sdpa, solve_sdp
from .sos import (BoundCertificate, CertificateError, SemialgebraicSet, SizeGuardError, VAnsatz,
                  compile_bound_problem, extract_certificate, size_guard)
from .upo import (ConvergedToEquilibrium, NoConvergence, ShootingSettings, close_orbit, orbit_average,
                  recurrence_guesses, symmetry_images)

log = logging.getLogger("sosupo")

EXIT_OK, EXIT_EMPTY, EXIT_NOCONV, EXIT_SOLVER, EXIT_USAGE = 0, 2, 3, 4, 1

# allowed keys and defaults per section; None means "no default"
SCHEMA: dict[str, dict[str, object]] = {
    "system": {"name": None},
    "bound": {
        "observable": None,
        "sense": "max",
        "degree": 4,
        "symmetry": "on",
        "weighted": "off",
        "tail": "",
        "tail_free": "off",
        "prune": "on",
        "cert_tol": 1e-6,
    },
    "omega": {"ball_radius_sq": "", "ball_center": ""},
    "solver": {"gap_tol": 1e-8, "feas_tol": 1e-8, "max_iterations": 200, "guard": "on"},
    "localize": {
        "box": "",
        "n_starts": 100,
        "step_tol": 1e-6,
        "grad_tol": 1e-6,
        "grad_tol_ladder": "",
        "max_iters": 500,
        "keep": "full_trails",
        "epsilon": "",
        "epsilon_ladder": "",
        "reference_average": "",
        "reference_time": 500.0,
    },
    "converge": {
        "horizon": 30.0,
        "near_tol": 0.05,
        "max_starts": 20,
        "tol": 1e-9,
        "max_orbits": 1,
        "images": "on",
    },
    "run": {"seed": 0, "out": "run"},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Parsed configuration; ``system_params`` holds the extra keys of ``[system]``."""

    sections: dict[str, dict[str, str]]
    system_params: dict[str, float]

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        sections: dict[str, dict[str, str]] = {}
        params: dict[str, float] = {}
        for name in cp.sections():
            if name not in SCHEMA:
                raise ConfigError(f"unknown section [{name}]")
            for key, val in cp[name].items():
                if name == "system" and key != "name":
                    try:
                        params[key] = float(val)
                    except ValueError as exc:
                        raise ConfigError(f"system parameter {key} must be numeric") from exc
                    continue
                if key not in SCHEMA[name]:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                sections.setdefault(name, {})[key] = val.strip()
        cfg = cls(sections, params)
        if cfg.get("system", "name") is None:
            raise ConfigError("[system] name is required")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.parse(fh.read())

    def get(self, section: str, key: str):
        if key not in SCHEMA[section]:
            raise KeyError(key)
        return self.sections.get(section, {}).get(key, SCHEMA[section][key])

    def num(self, section: str, key: str) -> float:
        return float(self.get(section, key))

    def integer(self, section: str, key: str) -> int:
        return int(self.get(section, key))

    def flag(self, section: str, key: str) -> bool:
        v = str(self.get(section, key)).lower()
        if v not in ("on", "off", "true", "false", "yes", "no", "1", "0"):
            raise ConfigError(f"[{section}] {key} must be on/off")
        return v in ("on", "true", "yes", "1")

    def set(self, section: str, key: str, value) -> None:
        if key not in SCHEMA[section]:
            raise KeyError(key)
        self.sections.setdefault(section, {})[key] = str(value)

    def text(self) -> str:
        """Canonical printout; parsing it gives back an equal config."""
        out = io.StringIO()
        for name in SCHEMA:
            items = dict(self.sections.get(name, {}))
            if name == "system":
                items.update({k: repr(v) for k, v in sorted(self.system_params.items())})
            if not items:
                continue
            out.write(f"[{name}]\n")
            for k in sorted(items):
                out.write(f"{k} = {items[k]}\n")
            out.write("\n")
        return out.getvalue()

    def hash(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.text() == other.text()


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# ---------------------------------------------------------------------------
# manifest


class Manifest:
    def __init__(self, out: str, cfg: RunConfig):
        self.out = out
        self.path = os.path.join(out, "manifest.json")
        self.cfg = cfg
        self.data = {
            "config_hash": cfg.hash(),
            "versions": {"sosupo": _version(), "coefficient_generator": moehlis.GENERATOR_VERSION},
            "stages": {},
        }
        if os.path.exists(self.path):
            with open(self.path) as fh:
                old = json.load(fh)
            if old.get("config_hash") == self.data["config_hash"]:
                self.data = old

    def done(self, stage: str) -> bool:
        st = self.data["stages"].get(stage)
        return bool(st and st.get("status") == "ok"
                    and all(os.path.exists(os.path.join(self.out, p)) for p in st.get("outputs", [])))

    def record(self, stage: str, status: str, seconds: float, outputs=(), **extra) -> None:
        self.data["stages"][stage] = {"status": status, "seconds": round(seconds, 3), "outputs": list(outputs),
                                      **extra}
        self.save()

    def save(self) -> None:
        os.makedirs(self.out, exist_ok=True)
        body = {k: v for k, v in self.data.items() if k != "manifest_hash"}
        body["manifest_hash"] = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]
        self.data = body
        with open(self.path, "w") as fh:
            json.dump(body, fh, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# stages


def _system(cfg: RunConfig):
    return make_system(cfg.get("system", "name"), **cfg.system_params)


def _omega(cfg: RunConfig, n: int):
    r2 = cfg.get("omega", "ball_radius_sq")
    if not r2:
        return None
    c = cfg.get("omega", "ball_center")
    center = _floats(c) if c else None
    return SemialgebraicSet.ball(n, float(r2), center)


def _ansatz(cfg: RunConfig, system) -> VAnsatz:
    d = cfg.integer("bound", "degree")
    tail = cfg.get("bound", "tail")
    tail_poly = parse_polynomial(tail, system.n) if tail else None
    tail_free = cfg.flag("bound", "tail_free")
    if cfg.flag("bound", "symmetry") and system.symmetry_group is not None:
        return VAnsatz(d, "invariant", system.symmetry_group, tail_poly, tail_free)
    return VAnsatz(d, "full", None, tail_poly, tail_free)


def _solver_settings(cfg: RunConfig) -> SolverSettings:
    return SolverSettings(gap_tol=cfg.num("solver", "gap_tol"), feas_tol=cfg.num("solver", "feas_tol"),
                          max_iterations=cfg.integer("solver", "max_iterations"))


def _compile(cfg: RunConfig):
    system = _system(cfg)
    obs = cfg.get("bound", "observable")
    if obs is None:
        raise ConfigError("[bound] observable is required")
    phi = system.observable(obs)
    sense = cfg.get("bound", "sense")
    if sense not in ("max", "min"):
        raise ConfigError("[bound] sense must be max or min")
    target = phi if sense == "max" else -phi
    prob = compile_bound_problem(system.f, target, _ansatz(cfg, system), _omega(cfg, system.n),
                                 cfg.flag("bound", "weighted"), cfg.flag("bound", "prune"))
    return system, phi, sense, prob


def stage_bound(cfg: RunConfig, out: str) -> BoundCertificate:
    system, phi, sense, prob = _compile(cfg)
    if cfg.flag("solver", "guard"):
        try:
            size_guard(prob)
        except SizeGuardError as exc:
            path = os.path.join(out, "problem.dat-s")
            export_sdpa(prob, path)
            raise SizeGuardError(f"{exc}; SDPA file written to {path} for an external solver "
                                 f"(see `sosupo export-sdpa`)") from exc
    settings = _solver_settings(cfg)
    sol = solve_sdp(prob, settings)
    report = check_residuals(prob, sol, settings)
    cert = extract_certificate(prob, sol, cfg.num("bound", "cert_tol"), sense=sense)
    cert.info.update({"system": system.name, "parameters": dict(system.parameters),
                      "observable": cfg.get("bound", "observable"), "residual_flags": report.flags,
                      "solve_time": sol.solve_time, "iterations": sol.iterations, "size": prob.size_summary()})
    cert.to_json(os.path.join(out, "certificate.json"))
    return cert


def _load_certificate(path: str) -> BoundCertificate:
    cert = BoundCertificate.from_json(path)
    cert.verify(max(1e-6, 10 * cert.identity_residual))
    return cert


def _epsilons(cfg: RunConfig, cert: BoundCertificate, system, override: float | None) -> tuple[list[float], dict]:
    info = {}
    if override is not None:
        return [choose_epsilon(cert.lambda_eff, user=override)], info
    ladder = cfg.get("localize", "epsilon_ladder")
    if ladder:
        return sorted(_floats(ladder), reverse=True), info
    eps = cfg.get("localize", "epsilon")
    if eps:
        return [choose_epsilon(cert.lambda_eff, user=float(eps))], info
    ref = cfg.get("localize", "reference_average")
    if ref:
        ref = float(ref)
    else:
        # short simulation from the centre of the start box
        box = np.array(_box(cfg, system))
        a0 = box.mean(axis=1) + 0.1 * (box[:, 1] - box[:, 0]) * np.linspace(0.3, 0.7, system.n)
        T = cfg.num("localize", "reference_time")
        ref = time_average(system, cert.phi, a0, T, 0.2 * T, IntegratorControl("dop853"))
        info["reference_simulation"] = {"a0": a0.tolist(), "T": T}
    info["reference_average"] = ref
    ref_eff = ref if cert.sense == "max" else -ref
    return [choose_epsilon(cert.lambda_eff, ref_eff)], info


def _box(cfg: RunConfig, system):
    text = cfg.get("localize", "box")
    if text:
        parts = [p for p in text.split(",") if p.strip()]
        box = [tuple(float(x) for x in p.split()) for p in parts]
        if len(box) == 1 and system.n > 1:
            box = box * system.n
        if len(box) != system.n or any(len(b) != 2 for b in box):
            raise ConfigError(f"[localize] box needs {system.n} 'lo hi' pairs")
        return box
    r2 = cfg.get("omega", "ball_radius_sq")
    if r2:
        c = cfg.get("omega", "ball_center")
        center = _floats(c) if c else [0.0] * system.n
        r = math.sqrt(float(r2))
        return [(x - r, x + r) for x in center]
    raise ConfigError("no start box: give [localize] box or an absorbing ball in [omega]")


def stage_localize(cfg: RunConfig, out: str, cert: BoundCertificate, seed: int,
                   epsilon: float | None = None) -> tuple[list[str], dict]:
    system = _system(cfg)
    P = build_indicator_poly(cert)
    ladder = cfg.get("localize", "grad_tol_ladder")
    scfg = SamplerConfig(
        _box(cfg, system),
        n_starts=cfg.integer("localize", "n_starts"),
        rng_seed=seed,
        step_tol=cfg.num("localize", "step_tol"),
        grad_tol=cfg.num("localize", "grad_tol"),
        max_iters=cfg.integer("localize", "max_iters"),
        keep=cfg.get("localize", "keep"),
        grad_tol_ladder=tuple(_floats(ladder)) if ladder else None,
    )
    eps_list, info = _epsilons(cfg, cert, system, epsilon)
    outputs, stats = [], {"epsilons": eps_list, **info, "degenerate": P.degenerate, "clouds": []}
    for k, eps in enumerate(eps_list):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", EmptyCloudWarning)
            cloud = harvest(P, scfg, eps)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        name = f"cloud_{k}"
        cloud.to_csv(os.path.join(out, name + ".csv"))
        cloud.to_json(os.path.join(out, name + ".json"))
        outputs += [name + ".csv", name + ".json"]
        stats["clouds"].append({"epsilon": eps, **cloud.stats})
        print(f"epsilon = {eps:.4g}: {len(cloud)} points from {cloud.stats['runs_with_points']} of "
              f"{scfg.n_starts} runs (min final P {cloud.stats['min_final_P']:.3e})")
    return outputs, stats


def stage_converge(cfg: RunConfig, out: str, cloud: PointCloud, cert: BoundCertificate | None):
    system = _system(cfg)
    guesses = recurrence_guesses(system, cloud, cfg.num("converge", "horizon"), cfg.num("converge", "near_tol"),
                                 max_starts=cfg.integer("converge", "max_starts"))
    settings = ShootingSettings(tol=cfg.num("converge", "tol"))
    orbits, failures = [], []
    for k, g in enumerate(guesses):
        if len(orbits) >= cfg.integer("converge", "max_orbits"):
            break
        try:
            orb = close_orbit(system, g, settings)
        except NoConvergence as exc:
            failures.append({"guess": k, "reason": "no_convergence", "residual": exc.residual})
            continue
        except ConvergedToEquilibrium as exc:
            failures.append({"guess": k, "reason": "equilibrium", "speed": exc.speed})
            continue
        except Exception as exc:  # integration blow-up and the like
            failures.append({"guess": k, "reason": type(exc).__name__, "message": str(exc)})
            continue
        # skip orbits we already have (same period, one lies on the other)
        if any(abs(o.T - orb.T) < 1e-6 * orb.T and
               np.min(np.linalg.norm(o.samples - orb.a0, axis=1)) < 1e-3 for o in orbits):
            continue
        orbits.append(orb)
    outputs, summaries = [], []
    for k, orb in enumerate(orbits):
        for name, poly in system.observables.items():
            orb.averages[name] = orbit_average(orb, poly)
        if cert is not None:
            orb.averages["certificate_phi"] = orbit_average(orb, cert.phi)
        family = [orb]
        if cfg.flag("converge", "images") and system.symmetry_group is not None:
            family = symmetry_images(orb, system.symmetry_group, system)
        for j, o in enumerate(family):
            stem = f"orbit_{k}" + (f"_image{j}" if j else "")
            o.save(os.path.join(out, stem + ".json"), os.path.join(out, stem + ".csv"))
            outputs += [stem + ".json", stem + ".csv"]
        s = orb.summary()
        s["images"] = len(family)
        summaries.append(s)
        line = f"orbit {k}: T = {orb.T:.10g}, closure {orb.closure_residual:.2e}, |mult|max = {s['max_multiplier']:.4g}"
        if cert is not None:
            line += (f"; average {orb.averages['certificate_phi']:.10g} vs bound {cert.lam:.10g} "
                     f"({cert.sense_label})")
        print(line)
    return outputs, {"orbits": summaries, "n_guesses": len(guesses), "failures": failures}


# ---------------------------------------------------------------------------
# command handlers


def _prepare(args) -> tuple[RunConfig, str, int]:
    cfg = RunConfig.load(args.config)
    if getattr(args, "degree", None) is not None:
        cfg.set("bound", "degree", args.degree)
    if getattr(args, "symmetry", None) is not None:
        cfg.set("bound", "symmetry", args.symmetry)
    if getattr(args, "weighted", None) is not None:
        cfg.set("bound", "weighted", args.weighted)
    if getattr(args, "seed", None) is not None:
        cfg.set("run", "seed", args.seed)
    if getattr(args, "epsilon", None) is not None:
        cfg.set("localize", "epsilon", args.epsilon)
        cfg.sections.get("localize", {}).pop("epsilon_ladder", None)
    out = args.out or cfg.get("run", "out")
    os.makedirs(out, exist_ok=True)
    return cfg, out, cfg.integer("run", "seed")


def cmd_bound(args) -> int:
    cfg, out, _ = _prepare(args)
    man = Manifest(out, cfg)
    t0 = time.perf_counter()
    try:
        cert = stage_bound(cfg, out)
    except (SizeGuardError, CertificateError) as exc:
        man.record("bound", "failed", time.perf_counter() - t0, error=str(exc))
        print(f"bound stage failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    man.record("bound", "ok", time.perf_counter() - t0, ["certificate.json"], lam=cert.lam, sense=cert.sense,
               identity_residual=cert.identity_residual, gram_min_eig=cert.gram_min_eig)
    print(cert.summary())
    return EXIT_OK


def cmd_localize(args) -> int:
    cfg, out, seed = _prepare(args)
    man = Manifest(out, cfg)
    cert_path = args.certificate or os.path.join(out, "certificate.json")
    cert = _load_certificate(cert_path)
    t0 = time.perf_counter()
    outputs, stats = stage_localize(cfg, out, cert, seed)
    empty = all(c["accepted"] == 0 for c in stats["clouds"])
    man.record("localize", "empty" if empty else "ok", time.perf_counter() - t0, outputs, **stats)
    return EXIT_EMPTY if empty else EXIT_OK


def _pick_cloud(out: str, stats: dict | None = None) -> str:
    # the tightest nonempty cloud
    k = 0
    while os.path.exists(os.path.join(out, f"cloud_{k + 1}.json")):
        k += 1
    for j in range(k, -1, -1):
        p = os.path.join(out, f"cloud_{j}.json")
        if os.path.exists(p) and len(PointCloud.from_json(p)):
            return p
    return os.path.join(out, "cloud_0.json")


def cmd_converge(args) -> int:
    cfg, out, _ = _prepare(args)
    man = Manifest(out, cfg)
    cloud_path = args.cloud or _pick_cloud(out)
    cloud = PointCloud.from_json(cloud_path) if cloud_path.endswith(".json") else \
        PointCloud.from_csv(cloud_path, float("inf"))
    cert_path = os.path.join(out, "certificate.json")
    cert = _load_certificate(cert_path) if os.path.exists(cert_path) else None
    t0 = time.perf_counter()
    outputs, stats = stage_converge(cfg, out, cloud, cert)
    ok = bool(stats["orbits"])
    man.record("converge", "ok" if ok else "no_convergence", time.perf_counter() - t0, outputs, **stats)
    if not ok:
        best = min((f.get("residual", math.inf) for f in stats["failures"]), default=math.inf)
        print(f"all {stats['n_guesses']} guesses failed (best residual {best:.3e})", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg, out, seed = _prepare(args)
    man = Manifest(out, cfg)
    if man.done("bound"):
        print("bound: up to date")
        cert = BoundCertificate.from_json(os.path.join(out, "certificate.json"))
    else:
        t0 = time.perf_counter()
        try:
            cert = stage_bound(cfg, out)
        except (SizeGuardError, CertificateError) as exc:
            man.record("bound", "failed", time.perf_counter() - t0, error=str(exc))
            print(f"bound stage failed: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        man.record("bound", "ok", time.perf_counter() - t0, ["certificate.json"], lam=cert.lam, sense=cert.sense,
                   identity_residual=cert.identity_residual, gram_min_eig=cert.gram_min_eig)
    print(cert.summary())
    if man.done("localize"):
        print("localize: up to date")
    else:
        t0 = time.perf_counter()
        outputs, stats = stage_localize(cfg, out, cert, seed)
        empty = all(c["accepted"] == 0 for c in stats["clouds"])
        man.record("localize", "empty" if empty else "ok", time.perf_counter() - t0, outputs, **stats)
        if empty:
            return EXIT_EMPTY
    if man.done("converge"):
        print("converge: up to date")
        return EXIT_OK
    cloud = PointCloud.from_json(_pick_cloud(out))
    t0 = time.perf_counter()
    outputs, stats = stage_converge(cfg, out, cloud, cert)
    ok = bool(stats["orbits"])
    man.record("converge", "ok" if ok else "no_convergence", time.perf_counter() - t0, outputs, **stats)
    return EXIT_OK if ok else EXIT_NOCONV


def cmd_export(args) -> int:
    cfg, out, _ = _prepare(args)
    _, _, _, prob = _compile(cfg)
    path = args.file or os.path.join(out, "problem.dat-s")
    export_sdpa(prob, path)
    s = prob.size_summary()
    print(f"wrote {path}: {s['rows']} constraints, blocks {s['blocks']}, {s['free']} free variables")
    return EXIT_OK


def cmd_systems(args) -> int:
    for name, desc in list_systems().items():
        print(f"{name:10s} {desc}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sosupo", description="SOS bounds on time averages and periodic-orbit search")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, bound=False, localize=False):
        sp.add_argument("--config", required=True, help="INI run configuration")
        sp.add_argument("--out", help="output directory (default [run] out)")
        sp.add_argument("--seed", type=int)
        if bound:
            sp.add_argument("--degree", type=int)
            sp.add_argument("--symmetry", choices=("on", "off"))
            sp.add_argument("--weighted", choices=("on", "off"))
        if localize:
            sp.add_argument("--epsilon", type=float)

    sp = sub.add_parser("bound", help="compute a certified bound")
    common(sp, bound=True)
    sp.set_defaults(func=cmd_bound)
    sp = sub.add_parser("localize", help="sample the small sublevel set of the indicator polynomial")
    common(sp, localize=True)
    sp.add_argument("--certificate", help="certificate JSON (default <out>/certificate.json)")
    sp.set_defaults(func=cmd_localize)
    sp = sub.add_parser("converge", help="close periodic orbits seeded from a cloud")
    common(sp)
    sp.add_argument("--cloud", help="cloud JSON or CSV (default: tightest nonempty cloud in <out>)")
    sp.set_defaults(func=cmd_converge)
    sp = sub.add_parser("pipeline", help="bound, localize and converge in one run")
    common(sp, bound=True, localize=True)
    sp.set_defaults(func=cmd_pipeline)
    sp = sub.add_parser("export-sdpa", help="write the bound SDP in SDPA sparse format")
    common(sp, bound=True)
    sp.add_argument("--file", help="destination (default <out>/problem.dat-s)")
    sp.set_defaults(func=cmd_export)
    sp = sub.add_parser("systems", help="built-in systems")
    sp.add_argument("action", choices=("list",))
    sp.set_defaults(func=cmd_systems)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
