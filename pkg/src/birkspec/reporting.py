"""Consolidated reports: merged JSON, human-readable summary, figures.

Figures are rendered straight to files next to the delimited outputs
(no interactive backend).
"""

import csv
import json
import math
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def _read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    return header, data


def _maybe(path):
    return path if path.exists() else None


def _verify_hashes(out: Path, manifest):
    import hashlib
    bad = []
    for name, meta in manifest.get("files", {}).items():
        p = out / name
        if not p.exists():
            bad.append((name, "missing"))
            continue
        h = hashlib.sha256(p.read_bytes()).hexdigest()
        if h != meta["sha256"]:
            bad.append((name, "hash mismatch"))
    return bad


def _fig_delta(out, report):
    path = out / "delta_table.csv"
    if not path.exists():
        return None
    _, data = _read_csv(path)
    ps = [int(r[0]) for r in data]
    ds = [float(r[1]) for r in data]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.semilogy(ps, ds, "o-", ms=3)
    ax.set_xlabel("p")
    ax.set_ylabel(r"$\delta_p$")
    ax.set_title("binding scales")
    fig.tight_layout()
    target = out / "delta_table.png"
    fig.savefig(target, dpi=130)
    plt.close(fig)
    return target


def _fig_tail(out, report):
    path = out / "tail.csv"
    if not path.exists():
        return None
    _, data = _read_csv(path)
    ns = [int(r[0]) for r in data]
    ts = [float(r[1]) for r in data]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    pos = [(n, t) for n, t in zip(ns, ts) if t > 0]
    ax.semilogy([p[0] for p in pos], [p[1] for p in pos], "o-", ms=3)
    fit = report.get("induce", {}).get("tail_fit") or {}
    if fit.get("status") == "ok":
        lo, hi = fit["window"]
        xs = [lo, hi]
        ax.semilogy(xs, [math.exp(fit["slope"] * x +
                                  math.log(fit["C1_hat"])) for x in xs],
                    "r--", label=f"zeta = {fit['zeta_hat']:.3f}")
        ax.legend()
    ax.set_xlabel("n")
    ax.set_ylabel("|{R > n}|")
    ax.set_title("return-time tail")
    fig.tight_layout()
    target = out / "tail.png"
    fig.savefig(target, dpi=130)
    plt.close(fig)
    return target


def _fig_curve(out, name, csv_name, ylabel, title):
    path = out / csv_name
    if not path.exists():
        return None
    _, data = _read_csv(path)
    xs, ys = [], []
    for r in data:
        if r[1] == "":
            continue
        xs.append(float(r[0]))
        ys.append(float(r[1]))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(xs, ys, "o-", ms=3)
    ax.set_xlabel(r"$\alpha$")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    target = out / name
    fig.savefig(target, dpi=130)
    plt.close(fig)
    return target


def consolidate(out: Path):
    out = Path(out)
    report = {"artifacts": {}, "checks": [], "missing": []}
    manifest = None
    mpath = out / "manifest.json"
    if mpath.exists():
        manifest = json.loads(mpath.read_text())
        report["config"] = manifest.get("config")
        report["hash_verification"] = _verify_hashes(out, manifest)

    for name, key in (("condition_report.json", "certify"),
                      ("delta_table.json", "partition"),
                      ("induced_system.json", "induce"),
                      ("spectrum_meta.json", "spectrum_meta"),
                      ("deviation.json", "deviation")):
        p = out / name
        if p.exists():
            payload = json.loads(p.read_text())
            if key == "induce":
                payload.pop("branches", None)
                payload.pop("tail", None)
            report[key] = payload
            report["artifacts"][name] = "ok"
        else:
            report["missing"].append(name)

    for name in ("delta_table.csv", "tail.csv", "spectrum.csv", "rate.csv",
                 "legendre.csv"):
        p = out / name
        if p.exists():
            report["artifacts"][name] = "ok"
        else:
            report["missing"].append(name)

    checks = report["checks"]
    if "certify" in report:
        checks.append(("conditions not falsified",
                       bool(report["certify"]["passed"])))
    if "induce" in report:
        fit = report["induce"].get("tail_fit") or {}
        if fit.get("status") == "ok":
            checks.append(("tail decays (slope < 0, r2 >= 0.9)",
                           fit["slope"] < 0 and fit["r_squared"] >= 0.9))
        checks.append(("branch coverage",
                       report["induce"].get("coverage", 0.0)))
    spectrum_line = None
    if "spectrum_meta" in report and (out / "spectrum.csv").exists():
        meta = report["spectrum_meta"]
        _, data = _read_csv(out / "spectrum.csv")
        mean = meta["acip_mean"]
        best = None
        for r in data:
            if r[1] == "":
                continue
            a, b = float(r[0]), float(r[1])
            if best is None or abs(a - mean) < abs(best[0] - mean):
                best = (a, b)
        if best:
            spectrum_line = (f"B at the reference mean {mean:.4f}: "
                             f"{best[1]:.4f} (alpha = {best[0]:.4f})")
            checks.append(("B(mean) within 0.05 of 1",
                           abs(best[1] - 1.0) <= 0.05))
    if (out / "rate.csv").exists():
        _, data = _read_csv(out / "rate.csv")
        vals = [float(r[1]) for r in data if r[1] != ""]
        if vals:
            checks.append(("rate function <= 1e-2 everywhere",
                           max(vals) <= 1e-2))

    figures = []
    for fn in (_fig_delta, _fig_tail):
        p = fn(out, report)
        if p:
            figures.append(p.name)
    p = _fig_curve(out, "spectrum.png", "spectrum.csv", "B", "Birkhoff spectrum")
    if p:
        figures.append(p.name)
    p = _fig_curve(out, "rate.png", "rate.csv", "F", "rate function")
    if p:
        figures.append(p.name)
    report["figures"] = figures

    lines = [f"artifact report for {out}"]
    if manifest:
        lines.append(f"config hash {manifest['config_hash'][:16]}  "
                     f"version {manifest.get('version')}")
        bad = report.get("hash_verification") or []
        lines.append("manifest hashes: " +
                     ("all verified" if not bad else f"PROBLEMS {bad}"))
    for name in sorted(report["artifacts"]):
        lines.append(f"  {name}: present")
    for name in report["missing"]:
        lines.append(f"  {name}: stage missing")
    if spectrum_line:
        lines.append(spectrum_line)
    lines.append("checks:")
    for label, val in checks:
        if isinstance(val, bool):
            lines.append(f"  [{'PASS' if val else 'FAIL'}] {label}")
        else:
            lines.append(f"  [....] {label}: {val:.4f}")
    if figures:
        lines.append("figures: " + ", ".join(figures))
    report["summary_text"] = "\n".join(lines) + "\n"
    return report
