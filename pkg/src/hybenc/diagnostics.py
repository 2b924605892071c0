"""Padding-drift probe and length-scaling benchmark.

Both produce plain row dicts (one row per measurement) that emit_report
writes as CSV or JSON, so results can be plotted or diffed directly.
"""

from __future__ import annotations

import json
import math
import os
import time

import numpy as np

from . import tensor as T
from .data import CLS, PAD, SEP
from .encoder import PSM_MODES, EncoderConfig, EncoderParams, encoder_forward
from .errors import ConfigError
from .kernels import reset_flop_counter
from .nn import keyed_rng
from .pooling import MAPParams, map_pool, pool
from .tensor import Tensor, no_grad

DRIFT_HEADER = ["psm_mode", "pad_added", "representation", "mean_cos_dist", "std_cos_dist", "n_samples"]
SCALING_HEADER = ["pattern", "seq_len", "batch", "phase", "wall_ms", "working_set_bytes", "repeats"]
REPRESENTATIONS = ("final_cls", "unmasked_mean", "map_pool")


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cos(u, v), written so identical inputs give exactly 0.0."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    duv = float(np.dot(u, v))
    denom = math.sqrt(float(np.dot(u, u)) * float(np.dot(v, v)))
    if denom == 0.0:
        return 0.0 if duv == 0.0 else 1.0
    return 1.0 - duv / denom


def _random_batch(rng, V: int, B: int, length: int, pad_added: int):
    """Rows of [CLS] content [SEP], then pad_added trailing PADs."""
    Ttot = length + 2 + pad_added
    ids = np.full((B, Ttot), PAD, dtype=np.int64)
    m = np.zeros((B, Ttot), dtype=np.int64)
    ids[:, 0] = CLS
    ids[:, 1 : length + 1] = rng.integers(5, V, size=(B, length))
    ids[:, length + 1] = SEP
    m[:, : length + 2] = 1
    return ids, m


def _representation(H: Tensor, m: np.ndarray, rep: str, map_params: MAPParams) -> np.ndarray:
    if rep == "final_cls":
        return H.data[:, 0, :]
    if rep == "unmasked_mean":
        return pool(H, m, "MaskedMean").data
    return map_pool(H, m, map_params).data


def padding_drift_probe(config: EncoderConfig, pads=(8, 16, 32, 64), psm_modes=PSM_MODES,
                        representations=REPRESENTATIONS, n_samples: int = 8,
                        length: int = 24, seed: int = 0, params: EncoderParams | None = None) -> list[dict]:
    """Measure how much trailing PAD tokens move each pooled representation.

    For every (psm_mode, pad_added, representation) cell: encode the same
    n_samples sequences with and without the extra padding and report the
    mean/std cosine distance between the two representations.
    """
    for mode in psm_modes:
        if mode not in PSM_MODES:
            raise ConfigError(f"unknown psm_mode {mode!r}")
    for rep in representations:
        if rep not in REPRESENTATIONS:
            raise ConfigError(f"unknown representation {rep!r}")
    if params is None:
        params = EncoderParams(config, seed=seed)
    map_params = MAPParams(keyed_rng(seed, "probe_map"), config.D, dtype=config.np_dtype)
    rng = keyed_rng(seed, "probe_batch")
    ids0, m0 = _random_batch(rng, config.V, n_samples, length, pad_added=0)
    rows = []
    with no_grad():
        for mode in psm_modes:
            H0 = encoder_forward(ids0, m0, params, psm_mode=mode)
            base = {rep: _representation(H0, m0, rep, map_params) for rep in representations}
            for pad in pads:
                ids = np.pad(ids0, ((0, 0), (0, pad)), constant_values=PAD)
                m = np.pad(m0, ((0, 0), (0, pad)), constant_values=0)
                H = encoder_forward(ids, m, params, psm_mode=mode)
                for rep in representations:
                    cur = _representation(H, m, rep, map_params)
                    d = [cosine_distance(base[rep][i], cur[i]) for i in range(n_samples)]
                    rows.append({
                        "psm_mode": mode,
                        "pad_added": int(pad),
                        "representation": rep,
                        "mean_cos_dist": float(np.mean(d)),
                        "std_cos_dist": float(np.std(d)),
                        "n_samples": n_samples,
                    })
    return rows


def resize_positions(pos_table: np.ndarray, new_len: int) -> np.ndarray:
    """Stretch a learned position table to new_len rows by 1-D linear
    interpolation along the position axis (per embedding dimension)."""
    old_len = pos_table.shape[0]
    if new_len == old_len:
        return np.array(pos_table, copy=True)
    old_x = np.arange(old_len, dtype=np.float64)
    new_x = np.linspace(0.0, old_len - 1, new_len)
    out = np.empty((new_len, pos_table.shape[1]), dtype=pos_table.dtype)
    for j in range(pos_table.shape[1]):
        out[:, j] = np.interp(new_x, old_x, pos_table[:, j].astype(np.float64))
    return out


def length_scaling_bench(patterns, lengths, batch: int = 1, repeats: int = 20, warmups: int = 5,
                         config_base: EncoderConfig | None = None, seed: int = 0,
                         phases=("forward",)) -> list[dict]:
    """Median forward (and optionally backward) wall time per (pattern, length).

    Every row is a median over at least 20 repeats taken after at least 5
    warmup runs; working_set_bytes is the live-tensor high-water mark of one
    timed run.
    """
    if repeats < 20 or warmups < 5:
        raise ConfigError("scaling rows need >= 20 repeats after >= 5 warmups")
    for ph in phases:
        if ph not in ("forward", "forward+backward"):
            raise ConfigError(f"unknown phase {ph!r}")
    rows = []
    for pattern in patterns:
        cfg = _bench_config(pattern, config_base)
        params = EncoderParams(cfg, seed=seed)
        base_pos = np.array(params.embedding.pos_table.data, copy=True)
        for L in sorted(lengths):
            if L > base_pos.shape[0]:
                params.embedding.pos_table.data = resize_positions(base_pos, L)
            rng = keyed_rng(seed, "bench", pattern, L)
            ids, m = _random_batch(rng, cfg.V, batch, L - 2, pad_added=0)
            for phase in phases:
                rows.append(_time_phase(params, ids, m, pattern, L, batch, phase, repeats, warmups))
        params.embedding.pos_table.data = base_pos
    return rows


def _bench_config(pattern: str, base: EncoderConfig | None) -> EncoderConfig:
    kwargs = dict(D=32, n_h=2, D_ff=64, expand=2, N=8, k=4, V=64, T_max=512,
                  dropout=0.0, dtype="float32")
    if base is not None:
        kwargs = {f: getattr(base, f) for f in EncoderConfig.__dataclass_fields__}
    kwargs["pattern"] = pattern
    kwargs["depth"] = len(pattern)
    return EncoderConfig(**kwargs)


def _time_phase(params, ids, m, pattern, L, batch, phase, repeats, warmups) -> dict:
    def run():
        if phase == "forward":
            with no_grad():
                encoder_forward(ids, m, params)
        else:
            H = encoder_forward(ids, m, params)
            T.backward(T.tensor_sum(H))

    for _ in range(warmups):
        run()
    T.reset_peak_bytes()
    reset_flop_counter()
    run()
    working_set = T.peak_bytes()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run()
        times.append((time.perf_counter() - t0) * 1e3)
    return {
        "pattern": pattern,
        "seq_len": int(L),
        "batch": int(batch),
        "phase": phase,
        "wall_ms": float(np.median(times)),
        "working_set_bytes": int(working_set),
        "repeats": int(repeats),
    }


def loglog_slope(lengths, times) -> float:
    """Least-squares slope of log(time) against log(length)."""
    x = np.log(np.asarray(lengths, dtype=np.float64))
    y = np.log(np.asarray(times, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


def emit_report(rows: list[dict], path: str, fmt: str = "csv") -> None:
    """Write rows atomically as CSV (header from the first row) or JSON."""
    if not rows:
        raise ConfigError("emit_report: no rows")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {fmt!r}")
    tmp = path + ".tmp"
    if fmt == "json":
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(rows, f, indent=2)
            f.write("\n")
    else:
        import csv as _csv

        keys = list(rows[0])
        with open(tmp, "w", newline="", encoding="utf-8") as f:
            writer = _csv.DictWriter(f, fieldnames=keys)
            writer.writeheader()
            writer.writerows(rows)
    os.replace(tmp, path)
