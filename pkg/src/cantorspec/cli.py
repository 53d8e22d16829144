"""Batch command line: continued fractions, label sets, IDS scans, gap tables,
KAM traces, a quick self-check and plot-data export.

Every artifact carries the library version and a hash of the resolved job
configuration; identical configuration and seed give byte-identical files
whatever the thread count.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

PRESETS = {
    "golden": (math.sqrt(5) - 1) / 2,
    "silver": math.sqrt(2) - 1,
    "bronze": (math.sqrt(13) - 3) / 2,
}


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"config key '{key}': {msg}")
        self.key = key


@dataclass
class JobConfig:
    frequency: list = field(default_factory=lambda: ["golden"])  # per coordinate: preset name or turns
    depth: int = 20
    s: float = 0.45
    lam: float = 0.1
    potential: str = "single"  # single | kset
    k0: list = field(default_factory=lambda: [1])
    coeff: float = math.exp(-1)
    scale_base: int = 40
    scale_count: int = 5
    scale_sequence: list = field(default_factory=list)
    target_epsilon: float = 0.05
    e_min: float = -2.5
    e_max: float = 2.5
    resolution: float = 0.01
    n: int = 20000
    phases: int = 8
    label_bound: int = 8
    energy: float = 0.0
    max_steps: int = 8
    kam_eta: float = 1e-4
    kam_gate_max: float = 1e-2
    kam_gate_power: float = 0.0
    mode: str = "toy"
    seed: int = 0

    @property
    def turns(self) -> tuple[float, ...]:
        out = []
        for f in self.frequency:
            out.append(PRESETS[f] if isinstance(f, str) else float(f))
        return tuple(out)

    @property
    def alpha(self) -> tuple[float, ...]:
        return tuple(2 * math.pi * t for t in self.turns)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in dataclasses.fields(JobConfig)}
_LISTS = {"frequency", "k0", "scale_sequence"}


def _coerce(key: str, value, proto):
    try:
        if key in _LISTS:
            items = value if isinstance(value, list) else [x for x in str(value).replace(",", " ").split() if x]
            if key == "frequency":
                return [x if isinstance(x, str) and x in PRESETS else float(x) for x in items]
            return [int(x) for x in items]
        if isinstance(proto, bool):
            return str(value).lower() in ("1", "true", "yes")
        if isinstance(proto, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("not an integer")
            return int(value)
        if isinstance(proto, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"cannot parse {value!r} ({exc})") from None


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines (``#`` comments) or a JSON object."""
    stripped = text.strip()
    if stripped.startswith("{"):
        data = json.loads(stripped)
        if not isinstance(data, dict):
            raise ConfigError("<root>", "JSON config must be an object")
        return data
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, "expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_config(values: dict) -> JobConfig:
    base = JobConfig()
    kw = {}
    for key, value in values.items():
        if key not in _FIELDS:
            raise ConfigError(key, "unknown key")
        kw[key] = _coerce(key, value, getattr(base, key))
    cfg = dataclasses.replace(base, **kw)
    validate_config(cfg)
    return cfg


def validate_config(cfg: JobConfig) -> None:
    for f in cfg.frequency:
        if isinstance(f, str) and f not in PRESETS:
            raise ConfigError("frequency", f"unknown preset {f!r}")
    if not cfg.frequency:
        raise ConfigError("frequency", "empty")
    if cfg.depth < 1:
        raise ConfigError("depth", "must be positive")
    if not 0 < cfg.s < 0.5:
        raise ConfigError("s", "must lie in (0, 1/2)")
    if not abs(cfg.lam) <= 1:
        raise ConfigError("lam", "must satisfy |lam| <= 1")
    if cfg.potential not in ("single", "kset"):
        raise ConfigError("potential", "must be 'single' or 'kset'")
    if cfg.potential == "single" and len(cfg.k0) != len(cfg.frequency):
        raise ConfigError("k0", "dimension differs from frequency")
    if cfg.potential == "single" and not any(cfg.k0):
        raise ConfigError("k0", "must be nonzero")
    if cfg.scale_base < 2:
        raise ConfigError("scale_base", "must be at least 2")
    if cfg.scale_count < 1:
        raise ConfigError("scale_count", "must be positive")
    if not cfg.target_epsilon > 0:
        raise ConfigError("target_epsilon", "must be positive")
    if not cfg.e_min < cfg.e_max:
        raise ConfigError("e_min", "must be below e_max")
    if not cfg.resolution > 0:
        raise ConfigError("resolution", "must be positive")
    if cfg.n < 1:
        raise ConfigError("n", "must be positive")
    if cfg.phases < 1:
        raise ConfigError("phases", "must be positive")
    if cfg.max_steps < 1:
        raise ConfigError("max_steps", "must be positive")
    if not cfg.kam_eta > 0:
        raise ConfigError("kam_eta", "must be positive")
    if cfg.mode not in ("toy", "exact"):
        raise ConfigError("mode", "must be 'toy' or 'exact'")
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")


def load_config(path: str | None, overrides: dict | None = None) -> JobConfig:
    values = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError("--config", f"file not found: {path}")
        values = parse_config(p.read_text())
    values.update(overrides or {})
    return build_config(values)


# objects from config -----------------------------------------------------------
def make_scales(cfg: JobConfig):
    from .kset import scales

    seq = cfg.scale_sequence or None
    return scales(cfg.scale_base, cfg.s, len(seq) if seq else cfg.scale_count, cfg.mode, seq)


def make_kset(cfg: JobConfig):
    from .kset import GevreyParams, KLabel, KSet, build_kset

    sc = make_scales(cfg)
    params = GevreyParams(cfg.s, cfg.lam)
    if cfg.potential == "single":
        return KSet([KLabel(1, tuple(cfg.k0), cfg.coeff)], params, sc, cfg.alpha)
    return build_kset(cfg.alpha, sc, params, cfg.target_epsilon)


def make_cocycle(cfg: JobConfig, kset=None):
    from .cocycle import SchrodingerCocycle
    from .fourier import FourierSeries

    if cfg.potential == "single":
        v = FourierSeries.cosine(tuple(cfg.k0), cfg.coeff)
    else:
        v = (kset or make_kset(cfg)).potential()
    return SchrodingerCocycle.make(cfg.alpha, cfg.lam, v)


def kam_params(cfg: JobConfig):
    from .kam import KamParams

    if cfg.mode == "toy":
        return KamParams(eta=cfg.kam_eta, gate_max=cfg.kam_gate_max, gate_power=cfg.kam_gate_power,
                         max_steps=cfg.max_steps, seed=cfg.seed % 2 ** 32)
    return KamParams(max_steps=cfg.max_steps, seed=cfg.seed % 2 ** 32)


# artifacts ------------------------------------------------------------------------
def meta(cfg: JobConfig, command: str) -> dict:
    return {"version": __version__, "config_hash": cfg.digest(), "command": command,
            "config": cfg.to_json()}


def header(cfg: JobConfig, command: str, columns: list[str] | None = None) -> str:
    line = f"# cantorspec {__version__} command={command} config_hash={cfg.digest()}\n"
    if columns:
        line += "# columns: " + ",".join(columns) + "\n"
    return line


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def cmd_cf(cfg: JobConfig, out: Path, threads: int | None) -> int:
    from .diophantine import cf_expand

    text = header(cfg, "cf")
    for i, t in enumerate(cfg.turns):
        cf = cf_expand(t, cfg.depth)
        text += f"# coordinate {i}\n" + cf.tsv()
    sys.stdout.write(text)
    _write(out, "cf.tsv", text)
    return 0


def cmd_kset(cfg: JobConfig, out: Path, threads: int | None) -> int:
    from .kset import validate_kset

    ks = make_kset(cfg)
    rep = validate_kset(ks)
    data = {"meta": meta(cfg, "kset"), "kset": ks.to_json(),
            "validation": {k: {"pass": ok, "offending": bad} for k, (ok, bad) in rep.checks.items()},
            "coefficient_checks": ks.coefficient_checks()}
    _write(out, "kset.json", json.dumps(data, indent=2, sort_keys=True) + "\n")
    for line in rep.lines():
        print(line)
    return 0 if rep.passed else 1


def energy_grid(cfg: JobConfig) -> np.ndarray:
    m = int(math.floor((cfg.e_max - cfg.e_min) / cfg.resolution + 1e-9)) + 1
    return cfg.e_min + cfg.resolution * np.arange(m)


def cmd_scan_ids(cfg: JobConfig, out: Path, threads: int | None) -> int:
    from .cocycle import ids_scan

    c = make_cocycle(cfg)
    grid = energy_grid(cfg)
    rho, ids, err = ids_scan(c, grid, cfg.n, cfg.phases, threads)
    buf = io.StringIO()
    buf.write(header(cfg, "scan-ids"))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["E", "rho", "N", "error"])
    for row in zip(grid, rho, ids, err):
        w.writerow([repr(float(x)) for x in row])
    _write(out, "ids.csv", buf.getvalue())
    return 0


def cmd_gaps(cfg: JobConfig, out: Path, threads: int | None) -> int:
    from .gaps import gaps_csv, gaps_json, scan_gaps

    ks = make_kset(cfg) if cfg.potential == "kset" else None
    c = make_cocycle(cfg, ks)
    scan = scan_gaps(c, (cfg.e_min, cfg.e_max), cfg.resolution, kset=ks, n=cfg.n, phases=cfg.phases,
                     threads=threads, label_bound=cfg.label_bound, s=cfg.s)
    _write(out, "gaps.csv", gaps_csv(scan, header(cfg, "gaps")))
    _write(out, "gaps.json", gaps_json(scan, meta(cfg, "gaps")) + "\n")
    for r in scan.records:
        print(f"{list(r.label)}\t{r.e_minus!r}\t{r.e_plus!r}\t{r.width!r}")
    return 0


def cmd_kam_run(cfg: JobConfig, out: Path, threads: int | None) -> int:
    from .kam import kam_iterate

    ks = make_kset(cfg)
    run = kam_iterate(cfg.alpha, cfg.lam, cfg.energy, ks, kam_params(cfg))
    text = json.dumps({"meta": meta(cfg, "kam-run")}, sort_keys=True) + "\n" + run.trace_lines()
    _write(out, "kam_trace.jsonl", text)
    print(f"steps={len(run.reports)} stop={run.stop_reason}")
    return 0


def verify_checks() -> list[tuple[str, bool, str]]:
    """Fast property checks over the whole stack."""
    from .algebra2 import exp_sl2, log_sl2
    from .cocycle import SchrodingerCocycle, rotation_number
    from .diophantine import cf_expand
    from .fourier import FourierSeries
    from .gaps import mp_det, mp_synthetic
    from .kam import homological_check, schrodinger_constant, solve_homological, split_resonant

    out = []
    rng = np.random.default_rng(0)
    cf = cf_expand(PRESETS["golden"], 20)
    fib = [1, 1]
    while len(fib) < 21:
        fib.append(fib[-1] + fib[-2])
    out.append(("golden continued fraction", all(a == 1 for a in cf.partial_quotients) and cf.q == fib, ""))

    x = rng.normal(size=(200, 2, 2)) * 0.5
    x[:, 1, 1] = -x[:, 0, 0]
    err = float(np.abs(log_sl2(exp_sl2(x)) - x).max())
    out.append(("exp/log round trip", err <= 1e-12, f"{err:.1e}"))

    alpha = (2 * math.pi * PRESETS["golden"],)
    c0 = SchrodingerCocycle.make(alpha, 0.0, FourierSeries.zeros(1))
    errs = []
    for e in (-1.5, -0.3, 0.8, 1.7):
        r = rotation_number(c0.at(e), 20000, 4)
        t = math.acos(e / 2) / (2 * math.pi)
        errs.append(abs(r.value - t))
    out.append(("free rotation number", max(errs) <= 1e-4, f"{max(errs):.1e}"))

    from .kam import W_E
    a = schrodinger_constant(0.7)
    f = FourierSeries.cosine((3,), 1e-3)
    f = FourierSeries(f.keys, f.vals[:, None, None] * W_E[None], f.denom)
    sp = split_resonant(f, a, 1e-3, 10, alpha)
    y = solve_homological(a, sp.nre, alpha)
    chk = homological_check(a, sp.nre, y, alpha, 0.1, 1e-3)
    out.append(("homological solve", chk["residual_ok"] and chk["bound_ok"], f"{chk['relative_residual']:.1e}"))

    worst = 0.0
    for _ in range(100):
        z, dl = rng.uniform(1e-8, 1e-2), rng.uniform(0, 1)
        av = rng.normal(size=3)
        data = mp_synthetic(z, (abs(av[0]), av[1], abs(av[2])))
        d, det = mp_det(data, dl)
        worst = max(worst, abs(d - det - 0.25 * dl ** 2 * z ** 2 * data.averages[0] ** 2))
    out.append(("determinant identity", worst <= 1e-12, f"{worst:.1e}"))
    return out


def cmd_verify(cfg: JobConfig, out: Path, threads: int | None) -> int:
    res = verify_checks()
    lines = [f"{'PASS' if ok else 'FAIL'}\t{name}\t{info}" for name, ok, info in res]
    npass = sum(ok for _, ok, _ in res)
    lines.append(f"{npass}/{len(res)} passed")
    text = header(cfg, "verify") + "\n".join(lines) + "\n"
    sys.stdout.write("\n".join(lines) + "\n")
    _write(out, "verify.txt", text)
    return 0 if npass == len(res) else 1


# plot data --------------------------------------------------------------------------
EXPORT_KINDS = ("gaps", "trace", "ids")


def _data_lines(text: str) -> list[str]:
    return [ln for ln in text.splitlines() if ln and not ln.startswith("#")]


def export_plot_data(path: str, kind: str) -> str:
    """Plot-ready CSV for an artifact; the first line names the columns."""
    if kind not in EXPORT_KINDS:
        raise ValueError(f"unknown export kind {kind!r}; expected one of {', '.join(EXPORT_KINDS)}")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"artifact not found: {path}")
    text = p.read_text()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if kind == "gaps":
        buf.write("# columns: x=label_index,y=log_width\n")
        w.writerow(["label_index", "log_width"])
        rows = list(csv.DictReader(_data_lines(text)))
        for i, r in enumerate(rows):
            w.writerow([i, repr(math.log(float(r["width"])))])
    elif kind == "trace":
        buf.write("# columns: j,log_F\n")
        w.writerow(["j", "log_F"])
        for ln in text.splitlines():
            rec = json.loads(ln)
            if "eps" in rec and isinstance(rec["eps"], (int, float)) and rec["eps"] > 0:
                w.writerow([rec["j"], repr(math.log(rec["eps"]))])
    else:
        lines = _data_lines(text)
        buf.write("# columns: " + lines[0] + "\n")
        buf.write("\n".join(lines) + "\n")
    return buf.getvalue()


COMMANDS = {"cf": cmd_cf, "kset": cmd_kset, "scan-ids": cmd_scan_ids, "gaps": cmd_gaps,
            "kam-run": cmd_kam_run, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cantorspec", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value or JSON job file")
    common.add_argument("--threads", type=int, default=None, help="worker threads (CANTORSPEC_THREADS)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key")
    g = common.add_mutually_exclusive_group()
    g.add_argument("--toy", dest="mode", action="store_const", const="toy")
    g.add_argument("--exact", dest="mode", action="store_const", const="exact")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    ex = sub.add_parser("export")
    ex.add_argument("artifact")
    ex.add_argument("kind", choices=EXPORT_KINDS)
    ex.add_argument("--out", default=None, help="output file (default stdout)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            text = export_plot_data(args.artifact, args.kind)
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return 0
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(item, "expected KEY=VALUE")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.mode is not None:
            overrides["mode"] = args.mode
        cfg = load_config(args.config, overrides)
        threads = args.threads
        if threads is None and os.environ.get("CANTORSPEC_THREADS"):
            threads = int(os.environ["CANTORSPEC_THREADS"])
        return COMMANDS[args.command](cfg, Path(args.out), threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
