"""Config-driven sweeps: channels -> beamforming -> probing -> quantization -> metrics."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import functools
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import (ChannelSet, LinkBudget, RisGeometry, build_correlation_matrix,
                      db_to_linear, dbm_to_watts, rng_for, sample_channels, watts_to_dbm)
from .errors import ConfigError, DegenerateBlockError
from .metrics import eve_alignment, ker, kgr, nmse
from .nist import nist_suite
from .quantizer import KeyMaterial, extract_features, expand_static, quantize
from .sca import ScaSettings, solve_pris
from .sdr import BisectionSettings, solve_aris
from .system import (ArisBudget, PilotConfig, aris_receive, min_snr, pris_receive,
                     worst_ser_db)

SCHEMA = 1
MODES = ("pris", "aris")
SWEEP_AXES = ("none", "n_users", "n_elements", "p_ava_dbm")
KER_TARGET = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "both"
    n_elements: int = 16
    n_users: int = 4
    p_ava_dbm: float = 36.0
    ser_th_db: float = 15.0
    levels: tuple = (2, 4, 8)
    nu: float = 0.2
    trials: int = 200
    seed: int = 0
    sweep_axis: str = "none"
    sweep_values: tuple = ()
    probes_per_trial: int = 1  # static-expansion rounds per channel draw
    d_ar_m: float = 50.0
    d_kr_m: float = 70.0
    d_er_m: float = 70.0
    carrier_hz: float = 1e9
    bandwidth_hz: float = 1e6
    noise_figure_db: float = 5.0
    pilot_length: int = 200
    w_max_sq_db: float = 40.0
    sigma_f2_w: float = -1.0  # negative: equal to the receiver noise power
    gr_candidates: int = 1000
    sca_max_iterations: int = 50
    max_failure_rate: float = 0.2
    workers: int = 1
    nist_streams: int = 105
    nist_stream_bits: int = 2000
    nist_levels: int = 2
    nist_node: int = 0
    nist_rounds: int = 64  # static-expansion rounds per trial when building key streams

    def __post_init__(self):
        fix = lambda k, v: object.__setattr__(self, k, v)
        fix("levels", tuple(int(x) for x in np.atleast_1d(self.levels)))
        fix("sweep_values", tuple(float(x) for x in np.atleast_1d(self.sweep_values)))
        if self.mode not in ("pris", "aris", "both"):
            raise ConfigError(f"mode must be pris, aris or both, got {self.mode!r}")
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep_axis must be one of {SWEEP_AXES}, got {self.sweep_axis!r}")
        if self.sweep_axis != "none" and not self.sweep_values:
            raise ConfigError("sweep_values is empty")
        for k in ("n_elements", "n_users", "trials", "probes_per_trial", "pilot_length",
                  "gr_candidates", "sca_max_iterations", "workers", "nist_streams",
                  "nist_stream_bits", "nist_rounds"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        for L in self.levels + (self.nist_levels,):
            if L < 2 or L & (L - 1):
                raise ConfigError(f"quantization levels must be powers of two, got {L}")
        if not 0.0 <= self.nu < 1.0:
            raise ConfigError("nu must lie in [0, 1)")
        for point in self.points():
            if point["n_users"] < 2:
                raise ConfigError("need at least two UTs")
            if self.pilot_length < point["n_users"]:
                raise ConfigError("pilot_length must be >= n_users")
            RisGeometry.from_carrier(int(point["n_elements"]), self.carrier_hz).positions()

    @property
    def modes(self) -> tuple:
        return MODES if self.mode == "both" else (self.mode,)

    def points(self) -> list[dict]:
        """One dict of (n_elements, n_users, p_ava_dbm) per sweep value."""
        base = {"n_elements": self.n_elements, "n_users": self.n_users,
                "p_ava_dbm": self.p_ava_dbm}
        if self.sweep_axis == "none":
            return [base]
        cast = float if self.sweep_axis == "p_ava_dbm" else int
        return [{**base, self.sweep_axis: cast(v)} for v in self.sweep_values]

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    # text format: flat ``key = value`` lines, lists comma separated
    def dumps(self) -> str:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string("[experiment]\n" + text)
        except configparser.Error as e:
            raise ConfigError(f"unreadable config: {e}") from e
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for k, raw in cp["experiment"].items():
            if k not in types:
                raise ConfigError(f"unknown config key {k!r}")
            t = types[k]
            try:
                if t == "tuple":
                    kw[k] = tuple(x.strip() for x in raw.split(",") if x.strip())
                elif t == "int":
                    kw[k] = int(raw)
                elif t == "float":
                    kw[k] = float(raw)
                else:
                    kw[k] = raw.strip()
            except ValueError as e:
                raise ConfigError(f"bad value for {k}: {raw!r}") from e
        try:
            return cls(**kw)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.loads(text)


# -- power accounting ----------------------------------------------------------

def power_split(mode: str, p_ava_dbm: float) -> tuple[float, float]:
    """``(P_a, P_R^max)`` in watts; ARIS splits the budget evenly, PRIS gives it all to the AP."""
    total = float(dbm_to_watts(p_ava_dbm))
    if mode == "aris":
        return 0.5 * total, 0.5 * total
    return total, 0.0


# -- one trial -----------------------------------------------------------------

@functools.lru_cache(maxsize=16)
def _correlation(n: int, carrier_hz: float) -> np.ndarray:
    return build_correlation_matrix(RisGeometry.from_carrier(n, carrier_hz))


def trial_channels(cfg: ExperimentConfig, n: int, k: int, trial: int) -> ChannelSet:
    """Channel draw of one trial; shared by every power level and mode at this (N, K)."""
    geo = RisGeometry.from_carrier(n, cfg.carrier_hz)
    link = LinkBudget.from_distances(geo, cfg.d_ar_m, [cfg.d_kr_m] * k, cfg.d_er_m,
                                     cfg.bandwidth_hz, cfg.noise_figure_db)
    return sample_channels(_correlation(n, cfg.carrier_hz), k, rng_for(cfg.seed, 1, n, k, trial),
                           link)


@dataclass
class TrialOutcome:
    mode: str
    ok: bool
    status: str
    samples: np.ndarray | None = None  # (K + 1, rounds) noisy, last row Eve
    signal: np.ndarray | None = None  # noiseless parts, same shape
    min_snr: float = math.nan
    worst_ser_db: float = math.nan


def _solve(cfg, mode, ch, p_ava_dbm, trial):
    p_a, p_r = power_split(mode, p_ava_dbm)
    pilot = PilotConfig(p_a, cfg.pilot_length)
    if mode == "pris":
        x, trace = solve_pris(ch, pilot, ScaSettings(cfg.sca_max_iterations, ser_th_db=cfg.ser_th_db))
        return x, trace.status, pilot, None
    sigma_f2 = ch.link.noise_w if cfg.sigma_f2_w < 0 else cfg.sigma_f2_w
    budget = ArisBudget(p_r, math.sqrt(db_to_linear(cfg.w_max_sq_db)), sigma_f2)
    res = solve_aris(ch, pilot, budget,
                     BisectionSettings(gr_candidates=cfg.gr_candidates, seed=trial),
                     cfg.ser_th_db)
    return res.w_opt, res.status, pilot, budget


def _power_key(p_ava_dbm: float) -> int:
    # seed keys must be non-negative; powers are keyed in milli-dB above -1000 dBm
    return int(round((p_ava_dbm + 1000.0) * 1000))


def run_trial(cfg: ExperimentConfig, point: dict, mode: str, trial: int,
              rounds: int | None = None) -> TrialOutcome:
    n, k = int(point["n_elements"]), int(point["n_users"])
    rounds = cfg.probes_per_trial if rounds is None else rounds
    ch = trial_channels(cfg, n, k, trial)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        x, status, pilot, budget = _solve(cfg, mode, ch, point["p_ava_dbm"], trial)
    if x is None:
        return TrialOutcome(mode, False, status)
    pkey = _power_key(point["p_ava_dbm"])
    # round 0 keeps the optimized phase; later rounds add a common random rotation
    phases = np.concatenate([[0.0], rng_for(cfg.seed, 2, n, k, trial, pkey).uniform(
        0, 2 * np.pi, rounds - 1)])
    xs = expand_static(x, rounds, None, phases=phases)
    mode_id = MODES.index(mode)
    sig, noisy = [], []
    for r, xr in enumerate(xs):
        seed = rng_for(cfg.seed, 3, n, k, trial, pkey, mode_id, r)
        s = pris_receive(xr, ch, pilot, seed) if mode == "pris" else \
            aris_receive(xr, ch, pilot, budget, seed)
        sig.append(s.signal)
        noisy.append(s.value)
    return TrialOutcome(mode, True, status, np.array(noisy).T, np.array(sig).T,
                        min_snr(x, ch, pilot, budget), worst_ser_db(x, ch))


# -- sweep ---------------------------------------------------------------------

def columns(levels) -> list[str]:
    cols = ["sweep_axis", "sweep_value", "mode", "n_elements", "n_users", "p_ava_dbm",
            "p_a_dbm", "p_r_max_dbm", "ser_th_db", "trials", "failed", "failure_rate",
            "nmse", "nmse_ci95", "mean_worst_ser_db", "mean_min_snr_db"]
    for L in levels:
        cols += [f"ker_L{L}", f"ker_worst_L{L}", f"kgr_feature_L{L}", f"kgr_probe_L{L}",
                 f"discard_L{L}"]
    return cols + ["eve_nse_ratio", "eve_corr", "wall_time_s"]


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: list = field(default_factory=list)

    def column(self, name: str, mode: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows if r["mode"] == mode], dtype=float)

    def failure_rate(self) -> float:
        n = sum(r["trials"] for r in self.rows)
        return sum(r["failed"] for r in self.rows) / n if n else 0.0


def key_material(outcomes, levels: int, nu: float) -> KeyMaterial | None:
    """Quantize the legitimate samples of successful trials as one block per node."""
    good = [o for o in outcomes if o.ok]
    if not good:
        return None
    y = np.concatenate([o.samples[:-1] for o in good], axis=1)
    try:
        return quantize(extract_features(y), levels, nu)
    except DegenerateBlockError:
        return None


def summarize(cfg: ExperimentConfig, point: dict, mode: str, outcomes, wall: float) -> dict:
    p_a, p_r = power_split(mode, point["p_ava_dbm"])
    good = [o for o in outcomes if o.ok]
    row = {
        "sweep_axis": cfg.sweep_axis,
        "sweep_value": point.get(cfg.sweep_axis, math.nan) if cfg.sweep_axis != "none" else math.nan,
        "mode": mode, "n_elements": int(point["n_elements"]), "n_users": int(point["n_users"]),
        "p_ava_dbm": float(point["p_ava_dbm"]), "p_a_dbm": float(watts_to_dbm(p_a)),
        "p_r_max_dbm": float(watts_to_dbm(p_r)) if p_r > 0 else -math.inf,
        "ser_th_db": cfg.ser_th_db, "trials": len(outcomes),
        "failed": len(outcomes) - len(good),
        "failure_rate": (len(outcomes) - len(good)) / len(outcomes) if outcomes else 0.0,
    }
    inst = [y for o in good for y in o.samples[:-1].T]
    nm = nmse(inst) if inst else None
    row["nmse"] = nm.mean if nm else math.nan
    row["nmse_ci95"] = nm.half_width if nm else math.nan
    row["mean_worst_ser_db"] = float(np.mean([o.worst_ser_db for o in good])) if good else math.nan
    row["mean_min_snr_db"] = float(np.mean([10 * np.log10(o.min_snr) for o in good])) \
        if good else math.nan
    probes = len(good) * cfg.probes_per_trial
    for L in cfg.levels:
        km = key_material(good, L, cfg.nu)
        kr = ker(km) if km is not None else None
        kg = kgr(km, probes) if km is not None else None
        row[f"ker_L{L}"] = kr.ker if kr else math.nan
        row[f"ker_worst_L{L}"] = kr.worst_pair if kr else math.nan
        row[f"kgr_feature_L{L}"] = kg.bits_per_feature if kg else math.nan
        row[f"kgr_probe_L{L}"] = kg.bits_per_probe if kg else math.nan
        row[f"discard_L{L}"] = kg.discard_fraction if kg else math.nan
    if good:
        legit = np.concatenate([o.samples[:-1] for o in good], axis=1).T
        eve = np.concatenate([o.samples[-1] for o in good])
        ev = eve_alignment(legit, eve)
        row["eve_nse_ratio"], row["eve_corr"] = ev.ratio, ev.correlation
    else:
        row["eve_nse_ratio"] = row["eve_corr"] = math.nan
    row["wall_time_s"] = wall
    return row


def _trial_job(args):
    cfg, point, mode, trial, *rounds = args
    return run_trial(cfg, point, mode, trial, *rounds)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("RISGKG_WORKERS", "1")))
    except ValueError:
        return 1


def _map(jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_trial_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_trial_job(j) for j in jobs]


def run_sweep(cfg: ExperimentConfig, workers: int | None = None) -> SweepResult:
    workers = cfg.workers if workers is None else workers
    result = SweepResult(cfg)
    for point in cfg.points():
        for mode in cfg.modes:
            t0 = time.perf_counter()
            outs = _map([(cfg, point, mode, t) for t in range(cfg.trials)], workers)
            result.rows.append(summarize(cfg, point, mode, outs, time.perf_counter() - t0))
    return result


# -- outputs -------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, cols, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"#schema={SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def chart_specs(result: SweepResult) -> dict:
    cfg = result.config
    x = cfg.sweep_axis
    labels = {"n_users": "number of UTs K", "n_elements": "number of RIS elements N",
              "p_ava_dbm": "available power P_ava (dBm)", "none": "point"}
    def spec(title, y, ylabel, series, yscale="log"):
        return {"title": title, "source": "sweep.csv", "x": {"column": "sweep_value",
                "label": labels[x], "scale": "linear"},
                "y": {"label": ylabel, "scale": yscale}, "series": series}
    nm = [{"label": m.upper(), "filter": {"mode": m}, "column": "nmse"} for m in cfg.modes]
    kr = [{"label": f"{m.upper()} L={L}", "filter": {"mode": m}, "column": f"ker_L{L}"}
          for m in cfg.modes for L in cfg.levels]
    kg = [{"label": f"{m.upper()} L={L}", "filter": {"mode": m}, "column": f"kgr_feature_L{L}"}
          for m in cfg.modes for L in cfg.levels]
    return {"nmse.json": spec("NMSE", "nmse", "NMSE", nm),
            "ker.json": spec("Key error rate", "ker", "KER", kr),
            "kgr.json": spec("Key generation rate", "kgr", "bits per feature", kg, "linear")}


def emit_outputs(result: SweepResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    paths = [out / "sweep.csv", out / "config.echo"]
    write_csv(paths[0], columns(cfg.levels), result.rows)
    paths[1].write_text(cfg.dumps())
    for name, spec in chart_specs(result).items():
        p = out / name
        p.write_text(json.dumps(spec, indent=2) + "\n")
        paths.append(p)
    return paths


# -- minimum power to reach the KER target --------------------------------

def min_power_for_ker(powers, kers, target: float = KER_TARGET):
    """Lowest swept power from which KER stays at or below ``target``; ``None`` if never."""
    order = np.argsort(powers)
    p = np.asarray(powers, float)[order]
    k = np.asarray(kers, float)[order]
    ok = np.isfinite(k) & (k <= target)
    if not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    return float(p[0] if bad.size == 0 else p[bad[-1] + 1])


def table1(cfg: ExperimentConfig, out_dir=None, workers: int | None = None):
    if cfg.sweep_axis != "p_ava_dbm":
        raise ConfigError("table1 needs sweep_axis = p_ava_dbm")
    res = run_sweep(cfg, workers)
    table = {}
    for m in cfg.modes:
        p = res.column("p_ava_dbm", m)
        for L in cfg.levels:
            table[m, L] = min_power_for_ker(p, res.column(f"ker_L{L}", m))
    if out_dir is not None:
        emit_outputs(res, out_dir)
        with open(Path(out_dir) / "table1.csv", "w", newline="") as fh:
            fh.write(f"#schema={SCHEMA}\n")
            w = csv.writer(fh)
            w.writerow(["mode"] + [f"L{L}_min_p_ava_dbm" for L in cfg.levels])
            for m in cfg.modes:
                w.writerow([m] + ["-" if table[m, L] is None else repr(table[m, L])
                                  for L in cfg.levels])
    return table, res


# -- NIST campaign -------------------------------------------------------------------

def key_stream(cfg: ExperimentConfig, mode: str, bits_needed: int, workers: int | None = None):
    """Common-mask bits of UT ``nist_node``, one quantization block per trial.

    Each trial is expanded to ``nist_rounds`` probing rounds so that its block
    holds enough features to quantize.

    Returns ``(bits, trials_used)``; fewer bits than requested when ``cfg.trials`` runs out.
    """
    workers = cfg.workers if workers is None else workers
    point = cfg.points()[0]
    chunks, have, t = [], 0, 0
    batch = max(1, workers)
    while have < bits_needed and t < cfg.trials:
        jobs = [(cfg, point, mode, i, cfg.nist_rounds)
                for i in range(t, min(cfg.trials, t + batch))]
        t += len(jobs)
        for o in _map(jobs, workers):
            km = key_material([o], cfg.nist_levels, cfg.nu) if o.ok else None
            if km is None:
                continue
            b = km.common_bits()[cfg.nist_node]
            chunks.append(b)
            have += b.size
    bits = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.uint8)
    return bits[:bits_needed], t


def nist_campaign(cfg: ExperimentConfig, out_dir=None, workers: int | None = None) -> dict:
    """NIST reports per mode; ``partial`` is set when the trial budget ran short."""
    need = cfg.nist_streams * cfg.nist_stream_bits
    reports = {}
    for m in cfg.modes:
        bits, used = key_stream(cfg, m, need, workers)
        n_streams = bits.size // cfg.nist_stream_bits
        if n_streams == 0:
            reports[m] = {"report": None, "partial": True, "trials": used, "bits": int(bits.size)}
            continue
        streams = bits[:n_streams * cfg.nist_stream_bits].reshape(n_streams, -1)
        rep = nist_suite(streams)
        partial = n_streams < cfg.nist_streams
        if partial:
            rep.flags["partial"] = (f"{m.upper()}: only {n_streams} of {cfg.nist_streams} "
                                    f"streams could be filled from {used} trials")
        reports[m] = {"report": rep, "partial": partial, "trials": used, "bits": int(bits.size)}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.echo").write_text(cfg.dumps())
        cols = {m.upper(): r["report"] for m, r in reports.items() if r["report"] is not None}
        for m, r in reports.items():
            if r["report"] is not None:
                r["report"].to_csv(out / f"nist_{m}.csv")
        if cols:
            first = next(iter(cols.values()))
            (out / "nist_table.txt").write_text(first.table(cols))
    return reports
