"""Entropy, event-rate, denoising, p-sweep, and timing analyses.

All analyses consume SparseCode collections (or produce them internally
from a dictionary plus signal) and emit plain Python/numpy tables that the
CLI serializes as CSV with commented headers.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .dictionary import Atom, Dictionary
from .pursuit import VARIANTS, PursuitConfig, SparseCode, match, reconstruct
from .signal_io import Signal, add_noise, snr_db, synth_signal

__all__ = [
    "EventStats",
    "index_entropy",
    "coeff_entropy",
    "event_rates",
    "event_stats",
    "denoise_sweep",
    "p_sweep",
    "profile_dictionary",
    "profile_signal",
    "timing_profile",
    "rates_table",
    "write_table",
    "clamp_db",
]

HISTOGRAM_BIN_COUNTS = (16, 32, 64)
TOP_RATES = 25
DB_DISPLAY_LIMIT = 120.0


def clamp_db(value: float) -> float:
    """Clamp a dB value to ±120 so CSV cells stay finite."""
    if np.isnan(value):
        return value
    return float(min(max(value, -DB_DISPLAY_LIMIT), DB_DISPLAY_LIMIT))


def _entropy_bits(counts: np.ndarray) -> float:
    """Plug-in Shannon entropy of a count vector, 0*log0 := 0."""
    total = counts.sum()
    if total <= 0:
        raise ValueError("entropy of an empty event stream is undefined")
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def _all_events(codes: list[SparseCode] | SparseCode):
    if isinstance(codes, SparseCode):
        codes = [codes]
    for code in codes:
        yield from code.events


def _index_counts(codes: list[SparseCode] | SparseCode, m: int) -> np.ndarray:
    counts = np.zeros(m, dtype=np.int64)
    for ev in _all_events(codes):
        if ev.atom_index >= m:
            raise ValueError(f"event references atom {ev.atom_index} >= M={m}")
        counts[ev.atom_index] += 1
    return counts


def index_entropy(codes: list[SparseCode] | SparseCode, m: int) -> float:
    """Shannon entropy (bits) of the selected-atom-index distribution."""
    return _entropy_bits(_index_counts(codes, m))


def coeff_entropy(codes: list[SparseCode] | SparseCode, bins: int) -> float:
    """Entropy (bits) of coefficients histogrammed into equal-width bins.

    Bins span the observed [min, max]; a degenerate range (all values
    equal) is 0 bits by convention.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    coeffs = np.array([ev.coefficient for ev in _all_events(codes)])
    if coeffs.size == 0:
        raise ValueError("entropy of an empty event stream is undefined")
    lo, hi = float(coeffs.min()), float(coeffs.max())
    if lo == hi:
        return 0.0
    counts, _ = np.histogram(coeffs, bins=bins, range=(lo, hi))
    return _entropy_bits(counts)


def event_rates(
    codes: list[SparseCode] | SparseCode, sample_rate: int, m: int
) -> np.ndarray:
    """Per-atom selection events per second of analyzed signal."""
    if isinstance(codes, SparseCode):
        codes = [codes]
    total_samples = sum(code.window_len for code in codes)
    if total_samples == 0 or sample_rate <= 0:
        raise ValueError("cannot compute rates over zero signal duration")
    counts = _index_counts(codes, m)
    return counts / (total_samples / sample_rate)


def rates_table(rates: np.ndarray, top: int = TOP_RATES) -> list[tuple[int, float]]:
    """(atom_index, rate) rows sorted by rate descending, truncated to top."""
    order = np.argsort(-rates, kind="stable")
    return [(int(i), float(rates[i])) for i in order[:top]]


@dataclass
class EventStats:
    """Bundle of the selection-statistics analyses for one code collection."""

    counts: np.ndarray
    rates: np.ndarray
    index_entropy_bits: float
    coeff_histograms: dict[int, np.ndarray]
    coeff_entropy_bits: dict[int, float]


def event_stats(
    codes: list[SparseCode] | SparseCode,
    sample_rate: int,
    m: int,
    bin_counts: tuple[int, ...] = HISTOGRAM_BIN_COUNTS,
) -> EventStats:
    """Counts, rates, index entropy, and coefficient histograms/entropies."""
    counts = _index_counts(codes, m)
    if counts.sum() == 0:
        raise ValueError("entropy of an empty event stream is undefined")
    coeffs = np.array([ev.coefficient for ev in _all_events(codes)])
    lo, hi = float(coeffs.min()), float(coeffs.max())
    histograms: dict[int, np.ndarray] = {}
    entropies: dict[int, float] = {}
    for bins in bin_counts:
        if lo == hi:
            h = np.zeros(bins, dtype=np.int64)
            h[0] = coeffs.size
        else:
            h, _ = np.histogram(coeffs, bins=bins, range=(lo, hi))
        histograms[bins] = h
        entropies[bins] = _entropy_bits(h) if lo != hi else 0.0
    if isinstance(codes, SparseCode):
        total_samples = codes.window_len
    else:
        total_samples = sum(code.window_len for code in codes)
    rates = counts / (total_samples / sample_rate)
    return EventStats(
        counts=counts,
        rates=rates,
        index_entropy_bits=_entropy_bits(counts),
        coeff_histograms=histograms,
        coeff_entropy_bits=entropies,
    )


def denoise_sweep(
    dictionary: Dictionary,
    clean: Signal,
    ratios: list[float],
    cfg: PursuitConfig,
    noise_seed: int = 0,
) -> list[tuple[float, float]]:
    """Reconstruction SNR against the clean signal per noise ratio.

    For each ratio: add Gaussian noise at ratio * std(clean), encode the
    noisy signal, reconstruct, and measure SNR against the CLEAN signal.
    """
    rows: list[tuple[float, float]] = []
    for k, ratio in enumerate(ratios):
        if ratio < 0:
            raise ValueError("noise ratios must be >= 0")
        noisy = add_noise(clean, ratio, seed=(noise_seed, k))
        code = match(dictionary, noisy, cfg)
        approx = reconstruct(code, dictionary)
        rows.append((float(ratio), snr_db(clean.samples, approx)))
    return rows


def p_sweep(
    dictionary: Dictionary,
    x: Signal,
    p_values: list[float],
    variant: str = "emp",
) -> list[tuple[float, float]]:
    """Reconstruction SNR of the signal encoded at each selection probability."""
    rows: list[tuple[float, float]] = []
    for p in p_values:
        cfg = PursuitConfig(variant=variant, p=float(p))
        code = match(dictionary, x, cfg)
        approx = reconstruct(code, dictionary)
        rows.append((float(p), snr_db(x.samples, approx)))
    return rows


def profile_dictionary(
    m: int,
    length: int = 128,
    seed: int = 0,
    sample_rate: int = 16000,
) -> Dictionary:
    """Dictionary of m unit-norm Gaussian atoms of a fixed length, for timing.

    Timing comparisons want atoms long enough that the per-iteration
    correlation refresh (whose cost scales with atom length and live-atom
    count) dominates fixed bookkeeping; 128 samples is speech-scale at
    16 kHz and comfortably past that point.
    """
    rng = np.random.default_rng((seed, 5))
    atoms = []
    for _ in range(m):
        w = rng.standard_normal(length)
        atoms.append(Atom(w / float(np.linalg.norm(w))))
    return Dictionary(
        atoms,
        sample_rate_hint=sample_rate,
        provenance=f"profile_dictionary(m={m}, length={length}, seed={seed})",
    )


def profile_signal(
    dictionary: Dictionary,
    length: int,
    seed: int = 0,
    density: float = 0.0525,
    share_decay: float = 1.0,
    amp_decay: float = 0.95,
    noise_sigma: float = 0.002,
) -> Signal:
    """Structured profiling signal: the dictionary's own atoms plus mild noise.

    Timing comparisons between plain and equiprobable variants are only
    informative when selections concentrate the way they do on natural
    signals, so the signal is built non-uniform along two axes. Atom i's
    share of the density·length events decays geometrically as
    share_decay**i, and its amplitudes lie in the band amp_decay**i ·
    [1, 1.04] (random sign). With amp_decay < 1 the bands are disjoint, so
    greedy selection drains atoms roughly in index order and quota-based
    variants shed atoms steadily over the whole run instead of all at the
    end. The default density supplies each atom ~5% more events than a
    p=0.05 quota needs.
    """
    rng = np.random.default_rng((seed, 11))
    m = len(dictionary.atoms)
    shares = share_decay ** np.arange(m)
    shares /= shares.sum()
    counts = rng.multinomial(int(round(density * length)), shares)
    placements = []
    for i, count in enumerate(counts):
        w = dictionary.atoms[i].waveform
        offs = rng.integers(0, length - len(w) + 1, size=count)
        amps = (
            amp_decay**i
            * rng.uniform(1.0, 1.04, size=count)
            * rng.choice((-1.0, 1.0), size=count)
        )
        placements.extend((i, int(o), float(a)) for o, a in zip(offs, amps))
    return synth_signal(
        dictionary.waveforms,
        placements,
        length,
        noise_sigma=noise_sigma,
        seed=(seed, 12),
        sample_rate=dictionary.sample_rate_hint or 16000,
    )


def timing_profile(
    dictionary: Dictionary,
    x: Signal | np.ndarray,
    window_lengths: list[int],
    p: float = 0.05,
    variants: tuple[str, ...] = VARIANTS,
    repeats: int = 3,
    warmup: int = 1,
    min_cell_time: float = 0.15,
) -> list[tuple[str, int, float]]:
    """Steady-state core time per signal sample per pursuit iteration.

    For each (variant, window length): run match() on the window's worth of
    signal, keep the minimum process CPU time over the repeats, and
    normalize by (window length x event count x loop count). CPU time
    rather than wall time keeps the numbers meaningful on shared machines
    where the process gets descheduled. Small windows finish in
    milliseconds, where clock granularity and cache-state luck dominate, so
    each timed measurement loops the match enough times to last at least
    min_cell_time seconds (the same autoranging timeit uses). Warmup runs
    are discarded, and repeats are interleaved round-robin across all cells
    so a burst of machine noise cannot poison every repeat of one cell
    while sparing the cell it is compared against.
    """
    samples = np.asarray(x.samples if isinstance(x, Signal) else x, dtype=np.float64)
    if len(samples) < max(window_lengths):
        raise ValueError("profiling signal shorter than the largest window")
    cfgs = {v: PursuitConfig(variant=v, p=p) for v in variants}
    cells = [(v, int(n)) for v in variants for n in window_lengths]
    best = {cell: np.inf for cell in cells}
    events = {cell: 1 for cell in cells}
    loops = {cell: 1 for cell in cells}
    for i in range(max(warmup, 1)):
        for v, n in cells:
            t0 = time.process_time()
            code = match(dictionary, samples[:n], cfgs[v])
            dt = time.process_time() - t0
            if i == 0:
                events[(v, n)] = max(len(code.events), 1)
                loops[(v, n)] = max(1, math.ceil(min_cell_time / max(dt, 1e-9)))
    for _ in range(repeats):
        for v, n in cells:
            t0 = time.process_time()
            for _ in range(loops[(v, n)]):
                match(dictionary, samples[:n], cfgs[v])
            dt = (time.process_time() - t0) / loops[(v, n)]
            best[(v, n)] = min(best[(v, n)], dt)
    return [(v, n, best[(v, n)] / (n * events[(v, n)])) for v, n in cells]


def write_table(path, columns: list[str], rows, header: dict | None = None) -> None:
    """CSV with '# key=value' comment lines, then a column header and rows."""
    import csv

    with open(path, "w", newline="") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)
