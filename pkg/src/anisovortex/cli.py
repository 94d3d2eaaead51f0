"""Command-line entry point: ``anisovortex <command> [options]``.

Every option can also come from a ``key = value`` config file given with
``--config``; command-line flags win.  The effective settings are echoed
into each output file.  Exit codes: 0 success, 1 a check failed or a
solver did not converge, 2 bad usage or configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
from pathlib import Path

import numpy as np

from anisovortex import __version__
from anisovortex import certificates, forms, spectrum
from anisovortex.errors import ConvergenceError, ParameterError
from anisovortex.grid import build_grid
from anisovortex.profile import solve_profile, validate_profile

log = logging.getLogger("anisovortex")

COMMANDS = ("profile", "identities", "spectrum", "delta1", "certify-pos", "certify-neg", "diagram")

DEFAULTS = {
    "r_min": 1e-3,
    "r_max": 40.0,
    "nodes": 1024,
    "kind": "geometric",
    "tol": 1e-10,
    "eig_tol": 1e-8,
    "out": ".",
    "seed": 0,
    "deltas": None,
    "delta": None,
    "nmax": 64,
    "width": 0.01,
    "dilation": 64,
    "n_limit": 64,
    "samples": 20,
    "svg": False,
}

IDENTITY_DELTAS = (-0.9, -0.5, -0.2, 0.0, 0.3, 0.7)
IDENTITY_MODES = (2, 3, 5, 9)
IDENTITY_FAIL = 1e-6


class UsageError(Exception):
    pass


def read_config(path):
    """Parse a ``key = value`` file; '#' starts a comment."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for number, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{number}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{number}: unknown key {key!r}")
        values[key] = value
    return values


def _float_list(text):
    """'a,b,c' or 'lo:hi:count' -> list of floats."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"range must be lo:hi:count, got {text!r}")
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise UsageError("range count must be positive")
        return [float(x) for x in np.linspace(lo, hi, count)]
    return [float(x) for x in text.split(",") if x.strip()]


def _coerce(key, value):
    if value is None:
        return None
    default = DEFAULTS[key]
    try:
        if key in ("deltas", "delta"):
            return _float_list(value)
        if isinstance(default, bool):
            return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="anisovortex", description="Stability of the anisotropic degree-one vortex.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config")
        cmd.add_argument("--r-min", dest="r_min")
        cmd.add_argument("--r-max", dest="r_max")
        cmd.add_argument("--nodes")
        cmd.add_argument("--kind", choices=("geometric", "uniform"))
        cmd.add_argument("--tol", help="profile Newton tolerance")
        cmd.add_argument("--eig-tol", dest="eig_tol")
        cmd.add_argument("--out", help="output directory")
        cmd.add_argument("--seed")
        cmd.add_argument("-v", "--verbose", action="store_true")
        if name in ("identities",):
            cmd.add_argument("--deltas")
            cmd.add_argument("--samples")
        if name in ("spectrum", "diagram"):
            cmd.add_argument("--delta", help="list a,b,c or range lo:hi:count")
            cmd.add_argument("--nmax")
            cmd.add_argument("--svg", action="store_const", const=True)
        if name in ("delta1", "diagram"):
            cmd.add_argument("--width")
            if name == "delta1":
                cmd.add_argument("--nmax")
        if name == "certify-pos":
            cmd.add_argument("--delta", required=False)
            cmd.add_argument("--dilation")
        if name == "certify-neg":
            cmd.add_argument("--delta", required=False)
            cmd.add_argument("--n-limit", dest="n_limit")
    return parser


def effective_config(args):
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    cfg = {key: _coerce(key, value) for key, value in cfg.items()}
    check_config(cfg, args.command)
    return cfg


def check_config(cfg, command):
    """Reject configurations that would fail a precondition later on."""
    if not 0 < cfg["r_min"] < cfg["r_max"]:
        raise UsageError("need 0 < r_min < r_max")
    if cfg["r_max"] < 20:
        raise UsageError("r_max must be at least 20")
    if cfg["nodes"] < 16:
        raise UsageError("nodes must be at least 16")
    if cfg["tol"] <= 0 or cfg["eig_tol"] <= 0:
        raise UsageError("tolerances must be positive")
    if cfg["nmax"] < 2:
        raise UsageError("nmax must be at least 2")
    if cfg["width"] < 1e-3:
        raise UsageError("width must be at least 1e-3")
    for d in (cfg["delta"] or []) + (cfg["deltas"] or []):
        if not -1 < d < 1:
            raise UsageError(f"delta must lie in (-1, 1), got {d}")
    if command == "certify-pos":
        if not cfg["delta"] or len(cfg["delta"]) != 1 or not 0 < cfg["delta"][0] < 1:
            raise UsageError("certify-pos needs a single --delta in (0, 1)")
        if cfg["dilation"] < 1:
            raise UsageError("dilation must be a positive integer")
    if command == "certify-neg":
        if not cfg["delta"] or len(cfg["delta"]) != 1 or not -1 < cfg["delta"][0] < 0:
            raise UsageError("certify-neg needs a single --delta in (-1, 0)")
        if cfg["n_limit"] < 2:
            raise UsageError("n-limit must be at least 2")
    if command in ("spectrum",) and not cfg["delta"]:
        raise UsageError("spectrum needs --delta")


def _echoed(cfg):
    # the output directory is left out so that reruns elsewhere compare equal
    return sorted(k for k in cfg if k != "out")


def header_lines(cfg, command):
    lines = [f"anisovortex {__version__} {command}"]
    lines += [f"{key}={cfg[key]}" for key in _echoed(cfg)]
    return lines


def header_dict(cfg, command):
    return {"command": command, "version": __version__, **{k: cfg[k] for k in _echoed(cfg)}}


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _profile(cfg):
    grid = build_grid(cfg["r_min"], cfg["r_max"], cfg["nodes"], cfg["kind"])
    return solve_profile(grid, tol=cfg["tol"])


# commands ------------------------------------------------------------------


def cmd_profile(cfg, out):
    p = _profile(cfg)
    probes = tuple(r for r in (20.0, 40.0) if r < cfg["r_max"])
    report = validate_profile(p, tol=cfg["tol"], probe_radii=probes)
    p.to_csv(out / "profile.csv", header_lines(cfg, "profile"))
    data = {
        "config": header_dict(cfg, "profile"),
        "origin_slope": p.origin_slope,
        "residual_norm": p.residual_norm,
        "iterations": p.iterations,
        "validation": report.as_dict(),
        "ok": report.ok,
    }
    _write_json(out / "validation.json", data)
    print(f"profile: slope {p.origin_slope:.12f}, residual {p.residual_norm:.2e}, valid {report.ok}")
    return 0 if report.ok else 1


def identity_suite(p, deltas, samples, seed):
    """All identity checks over seeded random endpoint-vanishing inputs."""
    rng = np.random.default_rng(seed)
    grid = p.grid
    checks = []
    for delta in deltas:
        for _ in range(samples):
            x = forms.random_test_function(grid, rng)
            y = forms.random_test_function(grid, rng)
            for which in forms.IDENTITIES:
                if which == "Qn_Q1":
                    for n in IDENTITY_MODES:
                        checks.append(forms.identity_check(p, delta, n, (x, y), which))
                else:
                    checks.append(forms.identity_check(p, delta, 1, (x, y), which))
    return checks


def cmd_identities(cfg, out):
    p = _profile(cfg)
    deltas = cfg["deltas"] or list(IDENTITY_DELTAS)
    checks = identity_suite(p, deltas, cfg["samples"], cfg["seed"])
    data = {"config": header_dict(cfg, "identities"), "checks": [c.as_dict() for c in checks]}
    _write_json(out / "identities.json", data)
    worst = {}
    for c in checks:
        worst[c.identity] = max(worst.get(c.identity, 0.0), c.relative_gap)
    for name in forms.IDENTITIES:
        print(f"{name}: max relative gap {worst[name]:.2e}")
    return 0 if max(worst.values()) <= IDENTITY_FAIL else 1


def svg_plot(series, path, xlabel="delta", ylabel="lambda_min", title=""):
    """Minimal SVG line plot; ``series`` maps a label to (x, y) lists."""
    width, height, pad = 640, 420, 60
    xs = [x for xv, _ in series.values() for x in xv]
    ys = [y for _, yv in series.values() for y in yv if y is not None and math.isfinite(y)]
    if not xs or not ys:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys + [0.0]), max(ys + [0.0])
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colours = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{sy(0):.1f}" x2="{width - pad}" y2="{sy(0):.1f}" stroke="#999" stroke-dasharray="4"/>',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle">{xlabel}</text>',
        f'<text x="15" y="{height / 2}" transform="rotate(-90 15 {height / 2})" text-anchor="middle">{ylabel}</text>',
        f'<text x="{width / 2}" y="25" text-anchor="middle">{title}</text>',
        f'<text x="{pad}" y="{height - pad + 15}" text-anchor="middle">{x0:.3g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 15}" text-anchor="middle">{x1:.3g}</text>',
        f'<text x="{pad - 5}" y="{height - pad}" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 5}" y="{pad + 4}" text-anchor="end">{y1:.3g}</text>',
    ]
    for k, (label, (xv, yv)) in enumerate(series.items()):
        colour = colours[k % len(colours)]
        pts = [(x, y) for x, y in zip(xv, yv) if y is not None and math.isfinite(y)]
        if len(pts) > 1:
            coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
            parts.append(f'<polyline points="{coords}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="2.5" fill="{colour}"/>')
        parts.append(f'<text x="{width - pad + 5}" y="{pad + 15 * k + 10}" fill="{colour}">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _scan(p, cfg):
    reports = []
    for delta in cfg["delta"]:
        rep = spectrum.stability_verdict(p, delta, n_max=cfg["nmax"], tol=cfg["eig_tol"], dilation=cfg["dilation"])
        reports.append(rep)
        print(f"delta {delta:+.4f}: {rep.verdict} (tail {rep.tail_condition})")
        for note in rep.notes:
            print(f"    {note}")
    return reports


def _diagram_svg(reports, path):
    by_mode = {}
    for rep in reports:
        for m in rep.modes:
            by_mode.setdefault(m.n, ([], []))
            by_mode[m.n][0].append(rep.delta)
            by_mode[m.n][1].append(m.lambda_min)
    shown = {f"n={n}": v for n, v in sorted(by_mode.items()) if n <= 7}
    svg_plot(shown, path, title="lowest eigenvalue per mode")


def cmd_spectrum(cfg, out):
    p = _profile(cfg)
    reports = _scan(p, cfg)
    spectrum.export_diagram(reports, out / "diagram.csv", header_lines(cfg, "spectrum"))
    if cfg["svg"]:
        _diagram_svg(reports, out / "spectrum.svg")
    return 0


def cmd_delta1(cfg, out):
    p = _profile(cfg)
    est = spectrum.estimate_delta1(p, cfg["width"], n_max=cfg["nmax"], tol=cfg["eig_tol"])
    spectrum.export_delta1(est, out / "delta1.json", header_dict(cfg, "delta1"))
    flag = " (inconclusive probes: bracket conditional on modes n <= nmax)" if est.inconclusive else ""
    print(f"delta1 in ({est.bracket_lo:.4f}, {est.bracket_hi:.4f}]{flag}")
    if not est.lo_witnessed:
        print("no unstable probe found; lower end left at -1")
    return 0 if est.bracket_hi <= spectrum.CRITICAL_DELTA else 1


def cmd_certify_pos(cfg, out):
    p = _profile(cfg)
    delta = cfg["delta"][0]
    w = certificates.positive_delta_certificate(p, delta, cfg["dilation"])
    certificates.export_witness(w, out / "witness_pos.json", out / "witness_pos.csv", header_lines(cfg, "certify-pos"))
    print(f"Q0 = {w.form_value:.8f} at dilation {w.dilation} (limit {w.analytic_limit:.8f})")
    return 0 if w.form_value < 0 else 1


def cmd_certify_neg(cfg, out):
    p = _profile(cfg)
    delta = cfg["delta"][0]
    found = certificates.find_unstable_mode(p, delta, cfg["n_limit"])
    if found is None:
        attempts = [certificates.high_mode_attempt(p, delta, n) for n in range(2, cfg["n_limit"] + 1)]
        data = {
            "config": header_dict(cfg, "certify-neg"),
            "kind": "high_mode",
            "delta": delta,
            "found": False,
            "attempts": [
                {"n": a.n, "window": a.window, "epsilon": a.epsilon, "form_value": a.form_value, "bound": a.bound, "reason": a.reason}
                for a in attempts
            ],
        }
        _write_json(out / "witness_neg.json", data)
        print(f"no negative high-mode witness for n <= {cfg['n_limit']}")
        return 1
    n, w = found
    certificates.export_witness(w, out / "witness_neg.json", out / "witness_neg.csv", header_lines(cfg, "certify-neg"))
    print(f"B = {w.form_value:.8f} at n = {n}, window {w.window}")
    return 0


def cmd_diagram(cfg, out):
    if not cfg["delta"]:
        cfg["delta"] = _float_list("-0.95:0.5:20")
    status = cmd_profile(cfg, out)
    p = _profile(cfg)
    reports = _scan(p, cfg)
    spectrum.export_diagram(reports, out / "diagram.csv", header_lines(cfg, "diagram"))
    _diagram_svg(reports, out / "diagram.svg")
    est = spectrum.estimate_delta1(p, cfg["width"], n_max=cfg["nmax"], tol=cfg["eig_tol"])
    spectrum.export_delta1(est, out / "delta1.json", header_dict(cfg, "diagram"))
    print(f"delta1 in ({est.bracket_lo:.4f}, {est.bracket_hi:.4f}]")
    return status


HANDLERS = {
    "profile": cmd_profile,
    "identities": cmd_identities,
    "spectrum": cmd_spectrum,
    "delta1": cmd_delta1,
    "certify-pos": cmd_certify_pos,
    "certify-neg": cmd_certify_neg,
    "diagram": cmd_diagram,
}


def _join_negative_values(argv):
    """``--delta -0.3,0.1`` -> ``--delta=-0.3,0.1`` (argparse would read an option)."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok in ("--delta", "--deltas"):
            nxt = next(it, None)
            if nxt is not None and re.match(r"-[\d.]", nxt):
                out.append(f"{tok}={nxt}")
                continue
            out.append(tok)
            if nxt is not None:
                out.append(nxt)
            continue
        out.append(tok)
    return out


def run(argv=None):
    parser = build_parser()
    argv = _join_negative_values(sys.argv[1:] if argv is None else list(argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = effective_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg, out)
    except (UsageError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        if exc.residual is not None:
            print(f"    residual {exc.residual:.3e} after {exc.iterations} iterations", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
