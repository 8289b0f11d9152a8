"""Config-driven command line entry point.

Exit codes: 0 success, 1 verdict FAIL, 2 invalid config, 3 ℏ outside the
validated regime.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .morse_circle import (
    CriticalPoint,
    MorseSequence,
    NonGenericError,
    NotMorseError,
    agmon_distance,
    find_gradient_trees,
    morse_differential,
    morse_product,
)
from .spectral_subspace import RegimeError, hbar_floor, regime_check
from .tree_combinatorics import enumerate_topologies

MODES = ("spectrum", "morse", "trees", "product", "sweep", "verify", "wkb")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_REGIME = 0, 1, 2, 3

DEFAULTS = {
    "n": 1024,
    "tolerances": {"A": 0.05, "p": 0.2},
    "output": {"dir": ".", "prefix": "mwl"},
}


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("mwl").joinpath("config_schema.json").read_text())


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, sets: list[str]) -> dict:
    cfg = copy.deepcopy(cfg)
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p} is not an object")
        node[parts[-1]] = _parse_value(val)
    return cfg


def resolve(cfg: dict, mode: str | None = None) -> dict:
    """Validate against the schema and fill defaults."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {path}: {e.message}")
    out = copy.deepcopy(DEFAULTS)
    for key, val in cfg.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = {**out[key], **val}
        else:
            out[key] = val
    if mode:
        out["mode"] = mode
    if "mode" not in out:
        raise ConfigError("config error at mode: no mode given on the command line or in the config")
    out.setdefault("k", max(1, len(out["functions"]) - 1))
    return out


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def hbar_list(cfg: dict) -> list[float]:
    h = cfg.get("hbar")
    if h is None:
        from .asymptotic_analysis import DEFAULT_HBARS

        return list(DEFAULT_HBARS.get(cfg["k"], DEFAULT_HBARS[3]))
    if isinstance(h, (int, float)):
        return [float(h)]
    if isinstance(h, dict):
        return [float(x) for x in np.linspace(h["start"], h["stop"], h["num"])]
    return [float(x) for x in h]


def build_sequence(cfg: dict) -> MorseSequence:
    fs = list(cfg["functions"])
    if len(fs) == 1:
        fs = [{}] + fs
    return MorseSequence(fs)


def select_q(seq: MorseSequence, cfg: dict) -> tuple[CriticalPoint, ...]:
    k = cfg["k"]
    sels = cfg.get("q")
    if not sels or len(sels) != k + 1:
        raise ConfigError(f"config error at q: need {k + 1} selectors (q_01..q_{k - 1}{k}, q_0{k})")
    wanted = [(i, i + 1) for i in range(k)] + [(0, k)]
    out = []
    for pos, (sel, lab) in enumerate(zip(sels, wanted)):
        if tuple(sel["pair"]) != lab:
            raise ConfigError(f"config error at q/{pos}/pair: expected {list(lab)}")
        if lab not in seq.criticals:
            raise ConfigError(f"config error at q/{pos}: sequence has no pair {lab}")
        cs = seq.criticals[lab]
        if "window" in sel:
            lo, hi = sel["window"]
            pool = [c for c in cs if lo <= c.theta <= hi and sel.get("index") in (None, c.index)]
            if len(pool) != 1:
                raise ConfigError(f"config error at q/{pos}/window: {len(pool)} critical points match")
            out.append(pool[0])
        elif "theta" in sel:
            out.append(seq.crit(*lab, {"theta": sel["theta"]}))
        else:
            pool = [c for c in cs if sel.get("index") in (None, c.index)]
            r = sel.get("rank", 0)
            if r >= len(pool):
                raise ConfigError(f"config error at q/{pos}/rank: only {len(pool)} candidates")
            out.append(pool[r])
    return tuple(out)


def _crit_json(c: CriticalPoint) -> dict:
    return {"theta": c.theta, "index": c.index, "hessian": c.hessian, "value": c.value}


def _check_floor(seq: MorseSequence, k: int, hbars: list[float], n: int):
    pairs = [(i, j) for i in range(k + 1) for j in range(i + 1, k + 1)]
    bad = []
    for i, j in pairs:
        fl = hbar_floor(seq.diff(i, j), n)
        bad += [{"pair": f"{i}{j}", "hbar": h, "floor": fl} for h in hbars if h < fl]
    if bad:
        raise RegimeError(f"ℏ below the grid floor: {bad}")


# ---------------------------------------------------------------------------
# modes


def run_spectrum(cfg: dict) -> tuple[dict, int]:
    seq = build_sequence(cfg)
    reports = []
    for hb in hbar_list(cfg):
        for i, j in seq.pairs():
            rep = regime_check(seq.diff(i, j), hb, cfg["n"])
            rep["pair"] = f"{i}{j}"
            reports.append(rep)
    return {"reports": reports}, EXIT_OK


def run_morse(cfg: dict) -> tuple[dict, int]:
    seq = build_sequence(cfg)
    out = []
    for i, j in seq.pairs():
        f = seq.diff(i, j)
        cs = seq.criticals[(i, j)]
        delta, mins, maxs = morse_differential(f)
        agmon = [[agmon_distance(f, a.theta, b.theta, cs) for b in cs] for a in cs]
        out.append(
            {
                "pair": f"{i}{j}",
                "criticals": [_crit_json(c) for c in cs],
                "differential": {"rows_max": [c.theta for c in maxs], "cols_min": [c.theta for c in mins], "matrix": delta.astype(int).tolist()},
                "agmon": agmon,
            }
        )
    return {"pairs": out}, EXIT_OK


def run_trees(cfg: dict) -> tuple[dict, int]:
    k = cfg["k"]
    res = {"topologies": [t.to_json() for t in enumerate_topologies(k)]}
    if cfg.get("q"):
        seq = build_sequence(cfg)
        q = select_q(seq, cfg)
        found = []
        for t in enumerate_topologies(k):
            found += [g.to_json() for g in find_gradient_trees(seq, q, t)]
        total, per = morse_product(seq, q)
        res.update({"q": [_crit_json(c) for c in q], "gradient_trees": found, "morse_product": total, "per_topology": per})
    return res, EXIT_OK


def run_product(cfg: dict) -> tuple[dict, int]:
    from .asymptotic_analysis import hbar_sweep

    seq = build_sequence(cfg)
    q = select_q(seq, cfg)
    hb = hbar_list(cfg)[0]
    _check_floor(seq, cfg["k"], [hb], cfg["n"])
    s = hbar_sweep(seq, q, cfg["k"], [hb], n=cfg["n"])
    if s.dropped:
        raise RegimeError(s.dropped[0]["reason"])
    return {"product": s.to_json()}, EXIT_OK


def run_sweep(cfg: dict, verify: bool = False) -> tuple[dict, int]:
    from .asymptotic_analysis import FitError, fit_asymptotics, hbar_sweep

    seq = build_sequence(cfg)
    q = select_q(seq, cfg)
    hbars = hbar_list(cfg)
    _check_floor(seq, cfg["k"], hbars, cfg["n"])
    s = hbar_sweep(seq, q, cfg["k"], hbars, n=cfg["n"])
    res = {"sweep": s.to_json()}
    status = EXIT_OK
    try:
        rep = fit_asymptotics(s, seq, cfg["tolerances"]["A"], cfg["tolerances"]["p"])
        res["fit"] = rep.to_json()
    except FitError as exc:
        res["fit"] = {"error": str(exc)}
        if s.dropped:
            raise RegimeError(f"too few ℏ values left after regime drops: {s.dropped}") from exc
        rep = None
    if verify:
        passed = rep.passed if rep is not None else False
        res["verdict"] = "PASS" if passed else "FAIL"
        status = EXIT_OK if passed else EXIT_FAIL
    res["_sweep_obj"] = s
    return res, status


def run_wkb(cfg: dict) -> tuple[dict, int]:
    from . import laplace_wkb as lw

    w = cfg.get("wkb", {})
    lap_h = w.get("laplace_hbar", [0.02, 0.01, 0.005])
    quartic = lambda x: x**2 / 2 + x**4 / 4
    one = lambda x: 1 + 0 * x
    slopes = {str(N): lw.laplace_error_slope(quartic, one, N, lap_h) for N in (1, 2, 3)}
    tr_h = w.get("transport_hbar", [0.2, 0.1, 0.05, 0.025])
    order = lw.transport_order_slope(lw.elementary_bump, tr_h)
    checks = {
        "laplace_slopes": all(abs(s - (int(N) + 0.5)) <= 0.2 for N, s in slopes.items()),
        "transport_residual": order["max_residual"] < 1e-6,
        "order_slope": abs(order["slope"] - 1) <= 0.3,
    }
    res = {"laplace_slopes": slopes, "transport": order}
    if cfg["k"] >= 3 and cfg.get("q"):
        seq = build_sequence(cfg)
        q = select_q(seq, cfg)
        edge = w.get("amplification_edge", "13")
        hb = w.get("amplification_hbar", 0.05)
        _check_floor(seq, cfg["k"], [hb], cfg["n"])
        amp = lw.homotopy_amplification_ratio(seq, q, hb, cfg["n"], edge=(int(edge[0]), int(edge[1])))
        res["amplification"] = amp
        checks["amplification"] = abs(amp["ratio"] - 1) <= 0.1
    res["checks"] = checks
    return res, EXIT_OK if all(checks.values()) else EXIT_FAIL


RUNNERS = {
    "spectrum": run_spectrum,
    "morse": run_morse,
    "trees": run_trees,
    "product": run_product,
    "sweep": run_sweep,
    "verify": lambda cfg: run_sweep(cfg, verify=True),
    "wkb": run_wkb,
}


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run(cfg: dict, write: bool = True) -> tuple[int, dict]:
    """Dispatch a resolved config; returns (exit status, output record)."""
    meta = {"tool_version": __version__, "config_hash": config_hash(cfg)}
    mode = cfg["mode"]
    try:
        result, status = RUNNERS[mode](cfg)
    except ConfigError as exc:
        return EXIT_CONFIG, {**meta, "error": str(exc)}
    except (RegimeError, NotMorseError, NonGenericError) as exc:
        return EXIT_REGIME, {**meta, "error": f"{type(exc).__name__}: {exc}"}
    sweep = result.pop("_sweep_obj", None)
    record = _clean({**meta, "mode": mode, "config": cfg, "result": result})
    if write:
        outdir = Path(cfg["output"]["dir"])
        outdir.mkdir(parents=True, exist_ok=True)
        stem = f"{cfg['output']['prefix']}_{mode}"
        (outdir / f"{stem}.json").write_text(json.dumps(record, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
        if sweep is not None:
            sweep.write_csv(outdir / f"{stem}.csv", meta)
    return status, record


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="mwl", description="Witten-deformation products on the circle versus Morse trees.")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", "-c", help="JSON experiment config")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (dotted path, JSON value)")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--no-write", action="store_true", help="print the record instead of writing files")
    args = ap.parse_args(argv)
    try:
        raw = json.loads(Path(args.config).read_text()) if args.config else {}
        if args.out:
            args.set.append(f"output.dir={json.dumps(args.out)}")
        cfg = resolve(apply_overrides(raw, args.set), args.mode)
    except (ConfigError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status, record = run(cfg, write=not args.no_write)
    if "error" in record:
        print(f"error: {record['error']}", file=sys.stderr)
    elif args.no_write:
        print(json.dumps(record, sort_keys=True, indent=2, ensure_ascii=False))
    else:
        res = record["result"]
        line = f"{record['mode']}: exit {status}"
        if "verdict" in res:
            line += f" verdict {res['verdict']}"
        print(line)
    return status


if __name__ == "__main__":
    sys.exit(main())
