"""Command-line surface: certify | pipeline | report.

The pipeline runs partition -> induce -> spectrum/ldp with per-stage
artifacts (JSON + CSV) and a manifest carrying the configuration, file
hashes and wall times.  Reruns with the same configuration and seed
produce byte-identical CSV files.  The report command consolidates the
artifacts into a summary with rendered figures.
"""

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import __version__
from .maps import QuadraticMap, resolve_observable, OBS_X
from .certify import CertificationConfig, certification_report, LAMBDA_DEFAULT
from .binding import BindingConfig, compute_delta_table, \
    build_critical_partition
from .inducing import build_induced_map, return_time_tail
from .thermo import build_measure_family, birkhoff_spectrum, \
    spectrum_property_check
from .ldp import rate_function, legendre_check, deviation_probability


@dataclass
class RunConfig:
    a: float = 2.0
    lam: float = LAMBDA_DEFAULT
    epsilon: float = 0.01
    N: int = 1
    horizon_certify: int = 1000
    horizon_anchor: int = 300
    horizon_induce: int = 20          # T_max of the induced construction
    horizon_ldp: int = 20             # n of the Lebesgue free energy
    precision_bits: int = 128
    seed: int = 20240
    out: str = "runs/latest"
    obs: str = "x"
    workers: int = 1
    # config-file-only knobs
    p_max: int = 40
    prune_floor: float = 1e-6
    mixing_period_bound: int = 8
    deviation_window: tuple = (0.3, 0.5)
    deviation_n: int = 30
    deviation_samples: int = 100_000
    alpha_points: int = 41
    period_bound: int = 12
    acip_orbits: int = 32
    acip_n: int = 100_000

    def validate(self):
        if not (0.0 < self.a <= 2.0):
            raise ValueError(f"a={self.a} outside (0, 2]")
        for name in ("horizon_certify", "horizon_anchor", "horizon_induce",
                     "horizon_ldp", "N", "precision_bits"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        resolve_observable(self.obs)

    def to_dict(self):
        d = asdict(self)
        d["deviation_window"] = list(self.deviation_window)
        return d

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _parse_config_file(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = val
    return out


_FLAG_FIELDS = {
    "a": float, "lam": float, "epsilon": float, "N": int,
    "horizon_certify": int, "horizon_anchor": int, "horizon_induce": int,
    "horizon_ldp": int, "precision_bits": int, "seed": int, "out": str,
    "obs": str, "workers": int, "p_max": int, "prune_floor": float,
    "mixing_period_bound": int, "deviation_n": int, "deviation_samples": int,
    "alpha_points": int, "period_bound": int, "acip_orbits": int,
    "acip_n": int,
}


def build_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, val in _parse_config_file(args.config).items():
            if key == "deviation_window":
                cfg.deviation_window = tuple(float(v) for v in val.split(","))
            elif key in _FLAG_FIELDS:
                setattr(cfg, key, _FLAG_FIELDS[key](val))
            else:
                raise ValueError(f"unknown config key {key!r}")
    for key, conv in _FLAG_FIELDS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(cfg, key, conv(flag))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------

def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True,
                               allow_nan=True, default=float) + "\n")
    return path


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if v is None:
                cells.append("")
            elif isinstance(v, (float, np.floating)):
                cells.append(repr(float(v)))
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Manifest:
    def __init__(self, config: RunConfig):
        self.config = config
        self.files = {}
        self.timings = {}
        self.t0 = time.time()

    def add(self, stage, path):
        rel = Path(path).name
        self.files[rel] = {"sha256": _sha256(path), "stage": stage}

    def time_stage(self, stage, seconds):
        self.timings[stage] = round(seconds, 3)

    def write(self, out_dir):
        payload = {
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "version": __version__,
            "files": self.files,
            "wall_times": self.timings,
        }
        return _write_json(Path(out_dir) / "manifest.json", payload)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_certify(args):
    try:
        cfg = build_config(args)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ccfg = CertificationConfig(lam=cfg.lam, horizon=cfg.horizon_certify,
                               mixing_period_bound=cfg.mixing_period_bound,
                               precision=cfg.precision_bits)
    t0 = time.time()
    report = certification_report(cfg.a, ccfg)
    manifest = Manifest(cfg)
    path = _write_json(out / "condition_report.json", report.to_dict())
    manifest.add("certify", path)
    manifest.time_stage("certify", time.time() - t0)
    manifest.write(out)
    status = "PASS" if report.passed else "FAIL"
    print(f"a={cfg.a}: {status} (a2 margin {report.a2_margin:.6g}, "
          f"a3 margin {report.a3_margin:.6g}, a4 {report.a4_status}) "
          f"up to horizon {cfg.horizon_certify}")
    return 0 if report.passed else 1


STAGE_ORDER = ("partition", "induce", "spectrum", "ldp")


def _load_induced(out: Path):
    data = json.loads((out / "induced_system.json").read_text())
    return data


def cmd_pipeline(args):
    try:
        cfg = build_config(args)
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
        bad = [s for s in stages if s not in STAGE_ORDER]
        if bad:
            raise ValueError(f"unknown stages {bad}")
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stages = sorted(set(stages), key=STAGE_ORDER.index)
    # dependency check: every stage needs its predecessor in this run or
    # as an artifact on disk
    deps = {"induce": ["critical_partition.json"],
            "spectrum": ["induced_system.json"],
            "ldp": ["induced_system.json"]}
    provided = set()
    for s in stages:
        provided.add(s)
    for s in stages:
        for f in deps.get(s, []):
            stage_of = "partition" if "partition" in f else "induce"
            if stage_of not in provided and not (out / f).exists():
                print(f"dependency violation: stage '{s}' needs {f} "
                      f"(run stage '{stage_of}' first)", file=sys.stderr)
                return 2

    manifest = Manifest(cfg)
    qmap = QuadraticMap(cfg.a, max(cfg.precision_bits, 64))
    state = {}
    try:
        for stage in stages:
            t0 = time.time()
            if stage == "partition":
                _stage_partition(cfg, qmap, out, manifest, state)
            elif stage == "induce":
                _stage_induce(cfg, qmap, out, manifest, state)
            elif stage == "spectrum":
                _stage_spectrum(cfg, qmap, out, manifest, state)
            elif stage == "ldp":
                _stage_ldp(cfg, qmap, out, manifest, state)
            manifest.time_stage(stage, time.time() - t0)
            print(f"stage {stage}: done in {time.time() - t0:.1f}s")
    except Exception as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        manifest.write(out)
        return 1
    manifest.write(out)
    return 0


def _binding_config(cfg: RunConfig) -> BindingConfig:
    return BindingConfig(
        epsilon=cfg.epsilon, N=cfg.N, p_max=cfg.p_max,
        anchor_horizon=cfg.horizon_anchor,
        precision=max(cfg.precision_bits, 128))


def _stage_partition(cfg, qmap, out, manifest, state):
    bcfg = _binding_config(cfg)
    table = compute_delta_table(qmap, bcfg)
    part = build_critical_partition(qmap, bcfg, table)
    state["partition"] = part
    p1 = _write_json(out / "delta_table.json", table.to_dict())
    p2 = _write_csv(out / "delta_table.csv", ["p", "delta"], table.pairs())
    p3 = _write_json(out / "critical_partition.json", part.to_dict())
    for p in (p1, p2, p3):
        manifest.add("partition", p)


def _stage_induce(cfg, qmap, out, manifest, state):
    part = state.get("partition")
    if part is None:
        bcfg = _binding_config(cfg)
        part = build_critical_partition(qmap, bcfg)
        state["partition"] = part
    hp_map = QuadraticMap(cfg.a, max(cfg.precision_bits, 192))
    system = build_induced_map(
        hp_map, part, T_max=cfg.horizon_induce,
        prune_floor=cfg.prune_floor,
        precision=max(cfg.precision_bits, 2 * cfg.horizon_induce + 64))
    fit = return_time_tail(system)
    state["system"] = system
    payload = system.to_dict()
    payload["tail_fit"] = fit
    p1 = _write_json(out / "induced_system.json", payload)
    p2 = _write_csv(out / "tail.csv", ["n", "tail_mass"],
                    list(enumerate(float(t) for t in system.tail_counts)))
    for p in (p1, p2):
        manifest.add("induce", p)


def _family(cfg, qmap, state):
    if "family" in state:
        return state["family"]
    system = state["system"]
    obs = resolve_observable(cfg.obs)
    fam = build_measure_family(
        qmap, system, [obs], period_bound=cfg.period_bound,
        acip_orbits=cfg.acip_orbits, acip_n=cfg.acip_n, seed=cfg.seed)
    state["family"] = fam
    state["obs"] = obs
    return fam


def _stage_spectrum(cfg, qmap, out, manifest, state):
    if "system" not in state:
        raise RuntimeError("spectrum stage requires the induce stage "
                           "in the same run")
    fam = _family(cfg, qmap, state)
    obs = state["obs"]
    curve = birkhoff_spectrum(qmap, obs, fam, alpha_grid=cfg.alpha_points)
    mean = fam.acip.means[obs.name]
    check = spectrum_property_check(curve, mean)
    rows = [(r["alpha"], r["B"], r["witness_h"], r["witness_lambda"],
             r["witness_mean"]) for r in curve.rows()]
    p1 = _write_csv(out / "spectrum.csv",
                    ["alpha", "B", "witness_h", "witness_lambda",
                     "witness_mean"], rows)
    meta = {
        "observable": obs.name, "acip_mean": mean,
        "c_phi": curve.c_phi, "d_phi": curve.d_phi,
        "property_check": {"passed": check["passed"],
                           "violations": [list(map(float, v[1:])) + [v[0]]
                                          for v in check["violations"]]},
        "notes": curve.notes,
    }
    p2 = _write_json(out / "spectrum_meta.json", meta)
    state["spectrum"] = curve
    for p in (p1, p2):
        manifest.add("spectrum", p)


def _stage_ldp(cfg, qmap, out, manifest, state):
    if "system" not in state:
        raise RuntimeError("ldp stage requires the induce stage in the "
                           "same run")
    fam = _family(cfg, qmap, state)
    obs = state["obs"]
    lo, hi = fam.mean_range(obs.name)
    alphas = list(np.linspace(lo, hi, cfg.alpha_points))
    curve = rate_function(qmap, obs, alphas, fam)
    p1 = _write_csv(out / "rate.csv", ["alpha", "F"],
                    [(r["alpha"], r["F"]) for r in curve.rows()])
    n = min(cfg.horizon_ldp, 22)
    rows = legendre_check(qmap, [obs], n, fam)
    p2 = _write_csv(out / "legendre.csv",
                    ["phi_name", "n", "P_n", "family_max", "delta",
                     "delta_corrected"],
                    [(r["phi"], r["n"], r["P_n"], r["family_max"],
                      r["delta"], r["delta_corrected"]) for r in rows])
    dev = deviation_probability(
        qmap, obs, cfg.deviation_window, n=cfg.deviation_n,
        samples=cfg.deviation_samples, seed=cfg.seed, tilt=2.0)
    p3 = _write_json(out / "deviation.json", dev.to_dict())
    for p in (p1, p2, p3):
        manifest.add("ldp", p)


def cmd_report(args):
    out = Path(args.out if args.out else "runs/latest")
    if not out.exists() or not any(out.iterdir()):
        print(f"no artifacts in {out}", file=sys.stderr)
        return 2
    from .reporting import consolidate
    try:
        payload = consolidate(out)
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 2
    _write_json(out / "report.json", payload)
    (out / "summary.txt").write_text(payload["summary_text"])
    print(payload["summary_text"])
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="birkspec",
        description="quadratic-map certification, induced Markov systems, "
                    "Birkhoff spectra and large-deviation rates")
    sub = ap.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--a", type=float)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--bigN", dest="N", type=int)
        p.add_argument("--horizon-certify", dest="horizon_certify", type=int)
        p.add_argument("--horizon-anchor", dest="horizon_anchor", type=int)
        p.add_argument("--horizon-induce", dest="horizon_induce", type=int)
        p.add_argument("--horizon-ldp", dest="horizon_ldp", type=int)
        p.add_argument("--precision-bits", dest="precision_bits", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--obs", type=str)
        p.add_argument("--out", type=str)
        p.add_argument("--workers", type=int)
        p.add_argument("--config", type=str, help="key = value config file")

    pc = sub.add_parser("certify", help="check the expansion/recurrence "
                        "conditions for one parameter")
    shared(pc)
    pp = sub.add_parser("pipeline", help="run construction stages")
    shared(pp)
    pp.add_argument("--stages", type=str, default="partition,induce",
                    help="comma list from partition,induce,spectrum,ldp")
    pr = sub.add_parser("report", help="consolidate artifacts and render "
                        "figures")
    pr.add_argument("--out", type=str)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "certify":
        return cmd_certify(args)
    if args.command == "pipeline":
        return cmd_pipeline(args)
    if args.command == "report":
        return cmd_report(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
