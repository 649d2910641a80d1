"""Experiment orchestration: configuration, seeded Monte Carlo sweeps, CSV output.

Every trial draws its random quantities from its own generator seeded with
``(seed, point index, trial index)``, in a fixed order (channel, CSI error,
data bits, noise). All precoders at a sweep point therefore see the same
channels, data and noise, and the results do not depend on batching or on
the number of worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from .channel import (ChannelSet, CsiErrorModel, SystemConfig, correlation_matrix,
                      crandn, psd_sqrt)
from .errors import ConfigInvalid, IoError
from .metrics import (ExperimentResult, condition_number, ebno_to_noise_var,
                      effective_channel, flops_model, measure_clll_flops,
                      normalized_sum_rate)
from .precoding import KINDS, build_precoder
from .transceiver import count_bit_errors, qpsk_modulate, receive, transmit

__all__ = [
    "SWEEPS", "CSV_HEADER", "ExperimentConfig", "load_config", "run_experiment",
    "SweepPoint", "sweep_points", "simulate_point", "cond_samples", "write_csv",
    "read_csv", "trial_rng",
]

log = logging.getLogger(__name__)

SWEEPS = ("BER", "SUMRATE", "CONDPDF", "FLOPS", "CSI_SWEEP")
CSV_HEADER = ("precoder", "sweep", "param", "ebno_db", "ber", "bit_errors", "bits",
              "sum_rate_bits", "flops_total", "seed", "trials")
ERRBAR_COLUMN = "ber_stderr"
FLOP_MODEL_KINDS = ("RBD", "S-GMI", "LR-S-GMI-MMSE")
# channel draws with a condition number above this are redrawn
MAX_CHANNEL_COND = 1e10


def _tuple(value, cast):
    if isinstance(value, (str, bytes)) or not hasattr(value, "__iter__"):
        value = [value]
    return tuple(cast(v) for v in value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one sweep.

    The fields double as the key names of the flat config file. The CSI
    error model is given by ``csi_sigma_e2``, ``csi_r`` and
    ``csi_sqrt_kind`` in files and becomes the ``csi`` attribute.
    """

    n_tx: int = 8
    user_rx: tuple = (2, 2, 2, 2)
    xi: Optional[float] = None
    bits_per_symbol: int = 2
    precoders: tuple = ("BD", "RBD", "S-GMI", "LR-S-GMI-MMSE")
    ebno_db: tuple = tuple(range(0, 21, 2))
    trials: int = 10_000
    packet_len: int = 100
    seed: int = 0
    sweep: str = "BER"
    output_path: str = "results.csv"
    csi: Optional[CsiErrorModel] = None
    sigma_e2_grid: tuple = ()
    delta: float = 0.75
    quantizer: str = "coset"
    batch_size: int = 1000
    workers: int = 1
    errbars: bool = False
    flops_axis: str = "K"
    flops_values: tuple = (2, 3, 4, 5, 6, 7)
    flops_fixed: int = 2
    flops_trials: int = 100

    def __post_init__(self):
        try:
            conv = {
                "n_tx": int(self.n_tx),
                "user_rx": _tuple(self.user_rx, int),
                "precoders": _tuple(self.precoders, str),
                "ebno_db": _tuple(self.ebno_db, float),
                "trials": int(self.trials),
                "packet_len": int(self.packet_len),
                "seed": int(self.seed),
                "sweep": str(self.sweep).upper(),
                "sigma_e2_grid": _tuple(self.sigma_e2_grid, float),
                "flops_values": _tuple(self.flops_values, int),
            }
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from exc
        for k, v in conv.items():
            object.__setattr__(self, k, v)
        self._validate()

    def _validate(self) -> None:
        if self.sweep not in SWEEPS:
            raise ConfigInvalid(f"sweep must be one of {SWEEPS}, got {self.sweep!r}")
        if self.trials < 1:
            raise ConfigInvalid("trials must be >= 1")
        if self.packet_len < 1 or self.batch_size < 1 or self.workers < 1:
            raise ConfigInvalid("packet_len, batch_size and workers must be >= 1")
        if not self.precoders:
            raise ConfigInvalid("no precoders given")
        bad = [k for k in self.precoders if k not in KINDS]
        if bad:
            raise ConfigInvalid(f"unknown precoder(s) {bad}; choose from {KINDS}")
        if self.bits_per_symbol != 2:
            raise ConfigInvalid("only QPSK (bits_per_symbol = 2) is supported")
        if self.quantizer not in ("integer", "coset"):
            raise ConfigInvalid(f"unknown quantizer {self.quantizer!r}")
        if not 0.5 < self.delta <= 1:
            raise ConfigInvalid("delta must lie in (0.5, 1]")
        if self.sweep in ("BER", "SUMRATE", "CONDPDF") and not self.ebno_db:
            raise ConfigInvalid(f"{self.sweep} needs a non-empty ebno_db list")
        if self.sweep == "CSI_SWEEP":
            if not self.sigma_e2_grid:
                raise ConfigInvalid("CSI_SWEEP needs sigma_e2_grid")
            if len(self.ebno_db) != 1:
                raise ConfigInvalid("CSI_SWEEP needs exactly one ebno_db value")
            if any(s < 0 for s in self.sigma_e2_grid):
                raise ConfigInvalid("sigma_e2_grid entries must be >= 0")
        if self.sweep == "FLOPS":
            if self.flops_axis not in ("K", "N_i"):
                raise ConfigInvalid("flops_axis must be 'K' or 'N_i'")
            if not self.flops_values or min(self.flops_values) < 1 or self.flops_fixed < 1:
                raise ConfigInvalid("flops_values and flops_fixed must be >= 1")
            bad = [k for k in self.precoders if k not in FLOP_MODEL_KINDS]
            if bad:
                raise ConfigInvalid(f"no FLOP model for {bad}; use {FLOP_MODEL_KINDS}")
        if self.sweep == "CONDPDF" and len(set(self.user_rx)) != 1:
            raise ConfigInvalid("CONDPDF needs equal antenna counts per user")
        if self.sweep != "FLOPS":
            try:
                self.system()
            except ValueError as exc:
                raise ConfigInvalid(str(exc)) from exc
            # the interference channel of user i has generic rank N_R - N_i
            n_rx = sum(self.user_rx)
            if any(self.n_tx <= n_rx - n for n in self.user_rx):
                raise ConfigInvalid(
                    f"n_tx={self.n_tx} must exceed N_R - N_i for every user")

    def system(self, noise_var: float = 1.0) -> SystemConfig:
        return SystemConfig(self.n_tx, self.user_rx, self.xi, noise_var,
                            self.bits_per_symbol)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        data = dict(data)
        csi_keys = {"csi_sigma_e2", "csi_r", "csi_sqrt_kind"}
        csi_args = {k: data.pop(k) for k in list(data) if k in csi_keys}
        names = {f.name for f in dataclasses.fields(cls)} - {"csi"}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigInvalid(f"unknown config key(s): {', '.join(unknown)}")
        if csi_args:
            try:
                data["csi"] = CsiErrorModel(
                    float(csi_args.get("csi_sigma_e2", 0.0)),
                    complex(str(csi_args.get("csi_r", 0)).replace(" ", "")),
                    csi_args.get("csi_sqrt_kind", "hermitian"))
            except ValueError as exc:
                raise ConfigInvalid(str(exc)) from exc
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from exc


def load_config(path: str, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Read a flat YAML mapping of :class:`ExperimentConfig` keys.

    ``overrides`` (typically CLI flags) win over the file. Unreadable files
    raise :class:`IoError`, malformed content :class:`ConfigInvalid`.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{path} must contain a flat key/value mapping")
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigInvalid(f"nested keys are not allowed: {nested}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_mapping(data)


# ---------------------------------------------------------------------------
# Per-trial randomness
# ---------------------------------------------------------------------------

def trial_rng(seed: int, point: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, point, trial])


def _draw_channel(rng: np.random.Generator, shape) -> Tuple[np.ndarray, int]:
    redraws = 0
    while True:
        h = crandn(rng, shape)
        if np.linalg.cond(h) < MAX_CHANNEL_COND:
            return h, redraws
        redraws += 1


@dataclass
class _Batch:
    h: np.ndarray
    err: Optional[np.ndarray]
    d: Optional[np.ndarray]
    noise: Optional[np.ndarray]
    redraws: int


def _draw_batch(cfg: ExperimentConfig, point: int, trials: range,
                with_csi: bool, with_packet: bool) -> _Batch:
    n_rx = sum(cfg.user_rx)
    shape = (n_rx, cfg.n_tx)
    hs, errs, ds, ns, redraws = [], [], [], [], 0
    for t in trials:
        rng = trial_rng(cfg.seed, point, t)
        h, r = _draw_channel(rng, shape)
        hs.append(h)
        redraws += r
        if with_csi:
            errs.append(crandn(rng, shape))
        if with_packet:
            bits = rng.integers(0, 2, size=(cfg.packet_len, 2 * n_rx))
            ds.append(qpsk_modulate(bits).T)
            ns.append(crandn(rng, (n_rx, cfg.packet_len)))
    stack = lambda xs: np.stack(xs) if xs else None
    return _Batch(np.stack(hs), stack(errs), stack(ds), stack(ns), redraws)


# ---------------------------------------------------------------------------
# Sweep points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    index: int
    ebno_db: float
    param: Optional[float]
    csi: Optional[CsiErrorModel]


def sweep_points(cfg: ExperimentConfig) -> List[SweepPoint]:
    if cfg.sweep == "CSI_SWEEP":
        base = cfg.csi or CsiErrorModel()
        return [SweepPoint(i, cfg.ebno_db[0], s, dataclasses.replace(base, sigma_e2=s))
                for i, s in enumerate(cfg.sigma_e2_grid)]
    if cfg.sweep == "FLOPS":
        ebno = cfg.ebno_db[0] if cfg.ebno_db else 20.0
        return [SweepPoint(i, ebno, float(v), None) for i, v in enumerate(cfg.flops_values)]
    param = cfg.csi.sigma_e2 if cfg.csi is not None else None
    return [SweepPoint(i, e, param, cfg.csi) for i, e in enumerate(cfg.ebno_db)]


def simulate_point(cfg: ExperimentConfig, point: SweepPoint,
                   precoders: Sequence[str]) -> List[ExperimentResult]:
    """Monte Carlo BER and sum rate of several precoders at one sweep point.

    The precoder is designed on the estimate ``H R^(1/2) + E`` when CSI
    errors are configured, while transmission uses the true channel
    ``H R^(1/2)``.
    """
    system = cfg.system()
    nv = ebno_to_noise_var(point.ebno_db, system)
    system = system.with_noise(nv)
    with_packet = cfg.sweep in ("BER", "CSI_SWEEP")
    csi = point.csi
    root = None
    if csi is not None and csi.corr_r != 0:
        root = psd_sqrt(correlation_matrix(cfg.n_tx, csi.corr_r), csi.sqrt_kind)
    with_err = csi is not None and csi.sigma_e2 > 0

    errors = {k: 0 for k in precoders}
    rates: Dict[str, List[float]] = {k: [] for k in precoders}
    redraws = 0
    for start in range(0, cfg.trials, cfg.batch_size):
        trials = range(start, min(start + cfg.batch_size, cfg.trials))
        batch = _draw_batch(cfg, point.index, trials, with_err, with_packet)
        redraws += batch.redraws
        h_true = batch.h if root is None else batch.h @ root
        h_design = h_true
        if with_err:
            h_design = h_true + np.sqrt(csi.sigma_e2) * batch.err
        true_cs = ChannelSet(h_true, system.user_rx)
        design_cs = ChannelSet(h_design, system.user_rx)
        for kind in precoders:
            sol = build_precoder(kind, design_cs, system, cfg.delta)
            rates[kind].extend(np.atleast_1d(
                normalized_sum_rate(h_true, sol.assembled, system.xi, nv)).tolist())
            if with_packet:
                rv = transmit(true_cs, sol, batch.d, nv, noise=batch.noise)
                d_hat = receive(rv, sol, cfg.quantizer)
                errors[kind] += count_bit_errors(batch.d, d_hat)
    if redraws:
        log.info("point %d: redrew %d ill-conditioned channel(s)", point.index, redraws)

    bits = cfg.trials * cfg.packet_len * system.n_rx * cfg.bits_per_symbol
    out = []
    for kind in precoders:
        res = ExperimentResult(kind, cfg.sweep, point.ebno_db, point.param,
                               sum_rate_bits=math.fsum(rates[kind]) / cfg.trials,
                               seed=cfg.seed, trials=cfg.trials)
        if with_packet:
            res.bit_errors, res.bits = errors[kind], bits
            res.ber = errors[kind] / bits
        out.append(res)
    return out


def _flops_point(cfg: ExperimentConfig, point: SweepPoint,
                 precoders: Sequence[str]) -> List[ExperimentResult]:
    v = int(point.param)
    if cfg.flops_axis == "K":
        user_rx = (cfg.flops_fixed,) * v
    else:
        user_rx = (v,) * cfg.flops_fixed
    n = sum(user_rx)
    system = SystemConfig(n, user_rx)
    out = []
    for kind in precoders:
        clll = None
        if kind.startswith("LR"):
            clll = measure_clll_flops(system, cfg.flops_trials, [cfg.seed, point.index],
                                      point.ebno_db, cfg.delta)
        total = flops_model(kind, system, clll).total
        out.append(ExperimentResult(kind, "FLOPS", point.ebno_db, float(v),
                                    flops_total=float(total), seed=cfg.seed,
                                    trials=cfg.flops_trials))
    return out


def cond_samples(cfg: ExperimentConfig, ebno_db: float, point: int = 0) -> Dict[str, np.ndarray]:
    """Natural-log spectral condition numbers of the effective channels.

    One sample per trial; trial ``t`` uses the stream ``(seed, point, t)``.
    """
    system = cfg.system()
    system = system.with_noise(ebno_to_noise_var(ebno_db, system))
    out = {k: np.empty(cfg.trials) for k in cfg.precoders}
    for t in range(cfg.trials):
        h, _ = _draw_channel(trial_rng(cfg.seed, point, t), (system.n_rx, system.n_tx))
        cs = ChannelSet(h, system.user_rx)
        for k in cfg.precoders:
            out[k][t] = np.log(condition_number(effective_channel(cs, k, system, cfg.delta)))
    return out


def _cond_point(cfg: ExperimentConfig, point: SweepPoint,
                precoders: Sequence[str]) -> List[ExperimentResult]:
    samples = cond_samples(cfg.replace(precoders=tuple(precoders)), point.ebno_db, point.index)
    return [ExperimentResult(k, "CONDPDF", point.ebno_db, float(x), seed=cfg.seed,
                             trials=cfg.trials)
            for k in precoders for x in samples[k]]


def _run_point(args) -> List[ExperimentResult]:
    cfg, point, precoders = args
    if cfg.sweep == "FLOPS":
        return _flops_point(cfg, point, precoders)
    if cfg.sweep == "CONDPDF":
        return _cond_point(cfg, point, precoders)
    return simulate_point(cfg, point, precoders)


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.10g}"


def _sort_key(r: ExperimentResult):
    param = -math.inf if r.param is None else r.param
    return (r.precoder, param, r.ebno_db)


def write_csv(results: Sequence[ExperimentResult], path: str,
              errbars: bool = False) -> None:
    """Write results sorted by ``(precoder, param, ebno_db)``.

    Floats carry 10 significant digits; unused fields are empty. With
    ``errbars`` a 12th column holds the binomial standard error of the BER.
    """
    if not results:
        raise ValueError("no results to write")
    header = CSV_HEADER + ((ERRBAR_COLUMN,) if errbars else ())
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in sorted(results, key=_sort_key):
                row = [r.precoder, r.sweep, _fmt(r.param), _fmt(r.ebno_db), _fmt(r.ber),
                       _fmt(r.bit_errors), _fmt(r.bits), _fmt(r.sum_rate_bits),
                       _fmt(r.flops_total), _fmt(r.seed), _fmt(r.trials)]
                if errbars:
                    row.append(_fmt(r.ber_stderr))
                w.writerow(row)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_csv(path: str) -> List[ExperimentResult]:
    """Parse a file produced by :func:`write_csv`."""
    def num(s, cast=float):
        return None if s == "" else cast(s)

    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not rows or tuple(rows[0][:len(CSV_HEADER)]) != CSV_HEADER:
        raise IoError(f"{path} does not carry the expected header")
    out = []
    for row in rows[1:]:
        if len(row) < len(CSV_HEADER):
            raise IoError(f"{path}: short row {row}")
        bit_errors, bits = num(row[5], int), num(row[6], int)
        # recover the BER exactly from the integer counts
        ber = bit_errors / bits if bits else num(row[4])
        out.append(ExperimentResult(
            precoder=row[0], sweep=row[1], param=num(row[2]), ebno_db=float(row[3]),
            ber=ber, bit_errors=bit_errors, bits=bits,
            sum_rate_bits=num(row[7]), flops_total=num(row[8]), seed=int(row[9]),
            trials=int(row[10])))
    return out


def _key(precoder: str, sweep: str, param, ebno_db, seed: int, trials: int):
    # condition-number rows store one sample per row in ``param``
    p = None if param is None or sweep == "CONDPDF" else _fmt(param)
    return (precoder, sweep, p, _fmt(ebno_db), seed, trials)


def _row_key(r: ExperimentResult):
    return _key(r.precoder, r.sweep, r.param, r.ebno_db, r.seed, r.trials)


def _failure_marker(path: str) -> str:
    return path + ".failed"


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig, write: bool = True) -> List[ExperimentResult]:
    """Run every sweep point of ``cfg`` and persist the rows.

    Rows already present in ``cfg.output_path`` with the same key are kept
    and not recomputed. The file is rewritten after every point; if the run
    is interrupted the rows gathered so far are written together with a
    ``<output>.failed`` marker file.
    """
    results: List[ExperimentResult] = []
    if write and os.path.exists(cfg.output_path):
        results = read_csv(cfg.output_path)
    done = {_row_key(r) for r in results}
    trials = cfg.flops_trials if cfg.sweep == "FLOPS" else cfg.trials

    jobs = []
    for point in sweep_points(cfg):
        todo = [k for k in cfg.precoders
                if _key(k, cfg.sweep, point.param, point.ebno_db, cfg.seed, trials) not in done]
        if todo:
            jobs.append((cfg, point, todo))
        else:
            log.info("point %d already complete, skipping", point.index)

    marker = _failure_marker(cfg.output_path)
    try:
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(cfg.workers) as pool:
                for rows in pool.map(_run_point, jobs):
                    results.extend(rows)
                    if write:
                        write_csv(results, cfg.output_path, cfg.errbars)
        else:
            for job in jobs:
                results.extend(_run_point(job))
                log.info("finished point %d (%s)", job[1].index, ", ".join(job[2]))
                if write:
                    write_csv(results, cfg.output_path, cfg.errbars)
    except BaseException as exc:
        if write:
            try:
                if results:
                    write_csv(results, cfg.output_path, cfg.errbars)
                with open(marker, "w", encoding="utf-8") as fh:
                    fh.write(f"incomplete: {type(exc).__name__}: {exc}\n")
            except OSError:
                log.error("could not flush partial results to %s", cfg.output_path)
        raise
    if write:
        if results:
            write_csv(results, cfg.output_path, cfg.errbars)
        if os.path.exists(marker):
            os.remove(marker)
    return sorted(results, key=_sort_key)
