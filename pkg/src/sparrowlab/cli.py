"""sparrowlab command line: figure data, simulations and attack demos.

Every run resolves its parameters from defaults, then an optional
``key=value`` config file, then ``--set``/``--seed``/``--trials`` flags, and
echoes the resolved set into its output. CSVs start with one ``#`` comment
line naming tool, command and seed; JSON reports carry the same in fields.

Exit codes: 0 ok, 2 bad configuration, 3 the requested run is infeasible.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from sparrowlab import __version__
from sparrowlab.adversary import (
    AttackPreconditionError,
    CodebookError,
    DecodeResult,
    Infeasible,
    Structure,
    build_codebook,
    combine_repeats,
    estimate,
    measure_disruption,
    preimage_attack,
    repetition_recovery_exact,
    repetition_transmit,
)
from sparrowlab.analytics import (
    binomial_ci,
    pc_kerasures,
    pc_kerrors,
    pd_elisha,
    solve_k_for_pd,
)
from sparrowlab.bitcore import BitString, Mask, erase_bits, random_bits, xor_bits
from sparrowlab.rasim import SimConfig, estimate_pc_montecarlo, run_covert_session
from sparrowlab.schemes import (
    DigestBackend,
    Hint,
    ObfuscatedBroadcast,
    SchemeConfig,
    SchemeError,
    Variant,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

FIGURE_L = 40
FIGURE_M = (4, 8, 16, 24, 32)
FIGURE_PD_TARGETS = (0.01, 0.1, 0.5)
FIGURE_M_RANGE = range(1, 33)
EXPLICIT_BOOK_MAX_M = 20


class ConfigError(ValueError):
    pass


class InfeasibleRun(RuntimeError):
    pass


# --- configuration ---------------------------------------------------------------


SIM_KEYS: dict[str, tuple[Callable, object]] = {
    "scheme": (str, "plain"),
    "n_bits": (int, 40),
    "k": (int, 0),
    "l_bits": (int, 0),
    "salt_bits": (int, -1),
    "digest": (str, DigestBackend.TRUNCATED_HASH.value),
    "m_bits": (int, 40),
    "structure": (str, ""),
    "message_bits": (int, 0),
    "exchange_ms": (float, 30.0),
    "backoff_ms": (float, 10.0),
    "background_rate": (float, 0.0),
    "duration_s": (float, 60.0),
    "n_preambles": (int, 64),
    "seed": (int, 0),
}

SWEEP_KEYS = dict(SIM_KEYS, sweep_param=(str, "k"), sweep_values=(str, "0,2,4,6"), trials=(int, 0))

ATTACK_KEYS: dict[str, dict[str, tuple[Callable, object]]] = {
    "preimage": {
        "n_bits": (int, 16),
        "m_bits": (int, 4),
        "k": (int, 4),
        "salt_bits": (int, 64),
        "digest": (str, DigestBackend.RANDOM_PERMUTATION.value),
        "trials": (int, 10**4),
        "seed": (int, 0),
    },
    "repetition": {
        "n_bits": (int, 8),
        "k": (int, 4),
        "repeats": (int, 8),
        "trials": (int, 10**4),
        "seed": (int, 0),
    },
    "mindist": {
        "scheme": (str, "kerrors"),
        "n_bits": (int, 12),
        "k": (int, 2),
        "m_bits": (int, 3),
        "seed": (int, 0),
    },
}


def read_config_file(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        out[key.strip()] = value.strip()
    return out


def resolve(schema: dict, file_values: dict[str, str], overrides: dict[str, str]) -> dict:
    merged = dict(file_values)
    merged.update(overrides)
    unknown = sorted(set(merged) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)} (known: {', '.join(sorted(schema))})")
    resolved = {}
    for key, (conv, default) in schema.items():
        if key in merged:
            try:
                resolved[key] = conv(merged[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {merged[key]!r}") from exc
        else:
            resolved[key] = default
    return resolved


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if getattr(args, "trials", None) is not None:
        out["trials"] = str(args.trials)
    return out


def _load(args, schema) -> dict:
    file_values = read_config_file(Path(args.config)) if args.config else {}
    return resolve(schema, file_values, _overrides(args))


def scheme_from(cfg: dict) -> SchemeConfig:
    name = cfg.get("scheme", "plain").lower()
    n, k = cfg["n_bits"], cfg.get("k", 0)
    try:
        if name == "plain":
            if k:
                raise ConfigError("plain scheme takes k=0")
            return SchemeConfig.plain(n)
        if name == "kerrors":
            return SchemeConfig.kerrors(n, k)
        if name == "kerasures":
            return SchemeConfig.kerasures(n, k)
        if name == "elisha":
            salt = cfg.get("salt_bits", -1)
            return SchemeConfig.elisha(
                n,
                k,
                l_bits=cfg.get("l_bits", 0),
                salt_bits=64 if salt < 0 else salt,
                backend=DigestBackend(cfg.get("digest", DigestBackend.TRUNCATED_HASH.value)),
            )
    except SchemeError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(f"bad scheme setting: {exc}") from exc
    raise ConfigError(f"unknown scheme {name!r} (plain, kerrors, kerasures, elisha)")


def _book_for(cfg: dict, scheme: SchemeConfig, rng: np.random.Generator):
    n, m = scheme.n_bits, cfg["m_bits"]
    text = cfg["structure"] or ("full" if m == n else "random")
    try:
        structure = Structure.parse(text)
    except ValueError as exc:
        raise ConfigError(f"bad structure {text!r}") from exc
    if structure != Structure.full() and m > EXPLICIT_BOOK_MAX_M:
        raise ConfigError(
            f"m_bits={m} needs an explicit 2^{m}-word codebook; use m_bits <= "
            f"{EXPLICIT_BOOK_MAX_M} or m_bits == n_bits (structure=full)"
        )
    if structure == Structure.full() and scheme.variant is Variant.ELISHA:
        raise ConfigError("ELISHA needs an explicit codebook (m_bits < n_bits)")
    try:
        return build_codebook(n, m, structure, rng)
    except CodebookError as exc:
        raise InfeasibleRun(str(exc)) from exc


def sim_from(cfg: dict) -> SimConfig:
    try:
        return SimConfig(
            scheme_from(cfg),
            exchange_ms=cfg["exchange_ms"],
            backoff_ms=cfg["backoff_ms"],
            background_rate=cfg["background_rate"],
            duration_s=cfg["duration_s"],
            seed=cfg["seed"],
            n_preambles=cfg["n_preambles"],
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


# --- output ----------------------------------------------------------------------


def write_atomic(out: Optional[str], text: str) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    path = Path(out)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent if str(path.parent) else ".")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc.strerror}") from exc
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _log10(p: float) -> float:
    return math.log10(p) if p > 0 else -math.inf


def _csv(comment: str, header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _stamp(command: str, seed) -> str:
    return f"sparrowlab {__version__} command={command} seed={seed}"


def _json(obj: dict) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


# --- figure ----------------------------------------------------------------------


def figure_rows(name: str) -> tuple[list[str], list[list]]:
    L = FIGURE_L
    if name == "pc-ker":
        header = ["K", "pc_kerrors", "log10_pc_kerrors", "pc_kerasures", "log10_pc_kerasures"]
        rows = []
        for k in range(L + 1):
            a, b = pc_kerrors(L, k), pc_kerasures(L, k)
            rows.append([k, a.p_c, a.log2_p_c * math.log10(2), b.p_c, b.log2_p_c * math.log10(2)])
        return header, rows
    if name == "m-pb":
        header = ["K"] + [f"pd_M{m}" for m in FIGURE_M]
        rows = [[k] + [pd_elisha(L, k, m).p_d for m in FIGURE_M] for k in range(L + 1)]
        return header, rows
    if name == "pc-pb":
        header = ["M", "K", "pc", "log10_pc", "pd"]
        rows = []
        for m in FIGURE_M:
            for k in range(L + 1):
                pc = 2.0 ** (k - L)
                rows.append([m, k, pc, (k - L) * math.log10(2), pd_elisha(L, k, m).p_d])
        return header, rows
    if name == "m-pc":
        header = ["M", "pd_target", "k", "pc", "log10_pc", "baseline_pc", "log10_baseline_pc"]
        rows = []
        for pd in FIGURE_PD_TARGETS:
            for m in FIGURE_M_RANGE:
                k = solve_k_for_pd(L, m, pd)
                rows.append([m, pd, k, 2.0 ** (k - L), (k - L) * math.log10(2), 2.0**-m, -m * math.log10(2)])
        return header, rows
    raise ConfigError(f"unknown figure {name!r} (pc-ker, m-pb, pc-pb, m-pc)")


def cmd_figure(args) -> int:
    header, rows = figure_rows(args.name)
    # analytic output: identical for every seed
    write_atomic(args.out, _csv(_stamp(f"figure {args.name}", "none"), header, rows))
    return EXIT_OK


# --- simulate / sweep -----------------------------------------------------------------


def _message_bits(cfg: dict, sim: SimConfig, m: int) -> int:
    if cfg["message_bits"] > 0:
        return cfg["message_bits"]
    slots = max(1, math.floor(sim.duration_s * 1000.0 / sim.tau_ms + 1e-9))
    return max(m, 1) * slots


def simulate(cfg: dict) -> dict:
    sim = sim_from(cfg)
    rng = np.random.default_rng(cfg["seed"])
    book_rng, run_rng = rng.spawn(2)
    book = _book_for(cfg, sim.scheme, book_rng)
    try:
        report = run_covert_session(sim, book, _message_bits(cfg, sim, book.m_bits), run_rng)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = asdict(report)
    if sim.scheme.variant is Variant.ELISHA:
        out["pd_closed_form"] = pd_elisha(sim.scheme.l_bits, sim.scheme.k, book.m_bits).p_d
    return out


def cmd_simulate(args) -> int:
    cfg = _load(args, SIM_KEYS)
    report = simulate(cfg)
    doc = {
        "tool": f"sparrowlab {__version__}",
        "command": "simulate",
        "seed": cfg["seed"],
        "resolved_config": cfg,
        "report": report,
    }
    write_atomic(args.out, _json(doc))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args, SWEEP_KEYS)
    param = cfg["sweep_param"]
    if param not in SIM_KEYS or param == "scheme":
        raise ConfigError(f"sweep_param must be a numeric simulate key, got {param!r}")
    conv = SIM_KEYS[param][0]
    try:
        values = [conv(v) for v in cfg["sweep_values"].split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep_values {cfg['sweep_values']!r}") from exc
    if not values:
        raise ConfigError("sweep_values is empty")
    trials = cfg["trials"]
    header = [param, "goodput_bps", "attempts", "disruption_rate", "pd_closed_form",
              "empirical_p_c", "false_accept_rate"]
    if trials:
        header += ["mc_p_c", "mc_p_c_lo", "mc_p_c_hi"]
    rows = []
    for v in values:
        point = {k: cfg[k] for k in SIM_KEYS}
        point[param] = v
        rep = simulate(point)
        row = [v, rep["goodput_bps"], rep["attempts"], rep["disruption_rate"],
               rep.get("pd_closed_form", ""), rep["empirical_p_c"], rep["false_accept_rate"]]
        if trials:
            try:
                mc = estimate_pc_montecarlo(scheme_from(point), trials, np.random.default_rng(point["seed"]))
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            row += [mc.p_c, mc.ci[0], mc.ci[1]]
        rows.append(row)
    stamp = _stamp(f"sweep {param}={cfg['sweep_values']}", cfg["seed"])
    write_atomic(args.out, _csv(stamp, header, rows))
    return EXIT_OK


# --- attack demos -------------------------------------------------------------------


def _masks(n: int, k: int):
    from itertools import combinations

    for c in combinations(range(n), k):
        yield BitString(n, sum(1 << (n - 1 - p) for p in c))


def demo_preimage(cfg: dict) -> dict:
    rng = np.random.default_rng(cfg["seed"])
    n, m, k = cfg["n_bits"], cfg["m_bits"], cfg["k"]
    backend = DigestBackend(cfg["digest"])
    try:
        book = build_codebook(n, m, Structure.random(), rng)
        unsalted = SchemeConfig.elisha(n, 0, salt_bits=0, backend=backend)
        salted = SchemeConfig.elisha(n, k, salt_bits=cfg["salt_bits"], backend=backend)
    except (SchemeError, CodebookError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["salt_bits"] <= 0:
        raise ConfigError("preimage demo compares against a salted run: salt_bits must be > 0")
    table = preimage_attack(book, unsalted)
    before = measure_disruption(book, unsalted, cfg["trials"], rng, table=table)
    notice = preimage_attack(book, salted)
    assert isinstance(notice, Infeasible)
    after = measure_disruption(book, salted, cfg["trials"], rng)
    pd = pd_elisha(salted.l_bits, k, m).p_d
    return {
        "unsalted": {
            "table_entries": len(table),
            "table_collisions": table.collisions,
            "success_rate": before.success_rate,
            "trials": before.trials,
        },
        "salted": {
            "infeasible": notice.reason,
            "cost_log2_per_codeword": notice.cost_log2_per_codeword,
            "cost_log2_total": notice.cost_log2_total,
            "best_effort_success_rate": after.success_rate,
            "reliable_rate": after.reliable_rate,
            "aliasing_rate": after.aliasing_rate,
            "predicted_reliable_rate": 1.0 - pd,
            "trials": after.trials,
        },
    }


def demo_repetition(cfg: dict) -> dict:
    rng = np.random.default_rng(cfg["seed"])
    n, k, r, trials = cfg["n_bits"], cfg["k"], cfg["repeats"], cfg["trials"]
    try:
        scheme = SchemeConfig.kerasures(n, k)
    except SchemeError as exc:
        raise ConfigError(str(exc)) from exc
    if r < 1 or trials < 1:
        raise ConfigError("repeats and trials must be >= 1")
    full_single = 0
    full_repeated = 0
    for _ in range(trials):
        word = random_bits(n, rng)
        sent = repetition_transmit(word, r, scheme, rng)
        full_single += combine_repeats(sent[:1], n).complete
        full_repeated += combine_repeats(sent, n).complete
    exact = repetition_recovery_exact(n, k, r)
    return {
        "n_bits": n,
        "k": k,
        "repeats": r,
        "trials": trials,
        "single_recovery_rate": full_single / trials,
        "single_recovery_exact": float(repetition_recovery_exact(n, k, 1)),
        "repeated_recovery_rate": full_repeated / trials,
        "repeated_recovery_ci": binomial_ci(full_repeated, trials),
        "repeated_recovery_exact": float(exact),
        "repeated_recovery_exact_fraction": str(exact),
    }


def _exhaustive_decode(book, scheme: SchemeConfig) -> float:
    n, k = scheme.n_bits, scheme.k
    ok = total = 0
    for word in book.words:
        for e in _masks(n, k):
            if scheme.variant is Variant.KERRORS:
                y = ObfuscatedBroadcast(xor_bits(word, e), Hint(k=k), Variant.KERRORS)
            else:
                y = ObfuscatedBroadcast(erase_bits(word, Mask(e)), Hint(mask=Mask(e)), Variant.KERASURES)
            out = estimate(y, book, scheme)
            ok += out.result is DecodeResult.DECODED and out.word == word
            total += 1
    return ok / total


def demo_mindist(cfg: dict) -> dict:
    rng = np.random.default_rng(cfg["seed"])
    n, k, m = cfg["n_bits"], cfg["k"], cfg["m_bits"]
    if n > 16:
        raise ConfigError("mindist demo enumerates every mask: keep n_bits <= 16")
    name = cfg["scheme"].lower()
    if name not in ("kerrors", "kerasures"):
        raise ConfigError(f"mindist demo needs kerrors or kerasures, got {name!r}")
    scheme = scheme_from(cfg)
    # errors need d > 2k for unique decoding, erasures need d > k
    if scheme.variant is Variant.KERRORS:
        strong, weak = 2 * k + 1, k + 1
    else:
        strong, weak = k + 1, max(k, 1)
    results = {}
    for label, d in (("unique_decoding", strong), ("weak", weak), ("random", 0)):
        structure = Structure.random() if d == 0 else Structure.min_distance(d)
        try:
            book = build_codebook(n, m, structure, rng)
        except CodebookError as exc:
            raise InfeasibleRun(str(exc)) from exc
        results[label] = {
            "structure": str(structure),
            "min_distance": book.min_distance(),
            "success_rate": _exhaustive_decode(book, scheme),
        }
    return {"scheme": scheme.as_dict(), "m_bits": m, "books": results}


DEMOS = {"preimage": demo_preimage, "repetition": demo_repetition, "mindist": demo_mindist}


def cmd_attack_demo(args) -> int:
    cfg = _load(args, ATTACK_KEYS[args.mode])
    result = DEMOS[args.mode](cfg)
    doc = {
        "tool": f"sparrowlab {__version__}",
        "command": f"attack-demo {args.mode}",
        "seed": cfg["seed"],
        "resolved_config": cfg,
        "result": result,
    }
    write_atomic(args.out, _json(doc))
    return EXIT_OK


# --- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparrowlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sparrowlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, trials=True):
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--seed", type=int)
        if trials:
            sp.add_argument("--trials", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    fig = sub.add_parser("figure", help="analytic figure data as CSV")
    fig.add_argument("name", choices=["pc-ker", "m-pb", "pc-pb", "m-pc"])
    fig.add_argument("--out")
    fig.set_defaults(func=cmd_figure)

    sim = sub.add_parser("simulate", help="one covert session, JSON report")
    common(sim, trials=False)
    sim.set_defaults(func=cmd_simulate)

    demo = sub.add_parser("attack-demo", help="receiver-side attacks and their countermeasures")
    demo.add_argument("mode", choices=sorted(DEMOS))
    common(demo)
    demo.set_defaults(func=cmd_attack_demo)

    sweep = sub.add_parser("sweep", help="simulate over one parameter, CSV")
    common(sweep)
    sweep.add_argument("--param", help="simulate key to vary")
    sweep.add_argument("--values", help="comma-separated values")
    sweep.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "sweep":
        extra = list(args.set or [])
        if args.param:
            extra.append(f"sweep_param={args.param}")
        if args.values:
            extra.append(f"sweep_values={args.values}")
        args.set = extra
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"sparrowlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleRun, AttackPreconditionError) as exc:
        print(f"sparrowlab: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
