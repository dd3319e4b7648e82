"""Block-alternating dictionary learning.

dlearn() draws training blocks, sparse-codes each one with the configured
pursuit, then moves every selected atom along the gradient of the block's
squared-residual objective:

    phi_i  <-  extnorm( phi_i + (eta / var(r)) * g_i ),
    g_i = sum over the atom's events of a_j * r[tau_j : tau_j + L_i]

All of an atom's events in a block are accumulated into one increment and
one extnorm call, so the update is order-independent. Atoms with no events
in a block are left untouched, which is why non-equiprobable pursuits can
leave part of the dictionary at its random initialization while the
equiprobable ones adapt every atom every block.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .dictionary import Atom, Dictionary, _random_atom, extnorm, randdict, save_dict
from .errors import ZeroAtomError
from .pursuit import VARIANTS, PursuitConfig, SparseCode, match
from .signal_io import BlockSource, next_block

__all__ = [
    "LearnConfig",
    "BlockRecord",
    "LearnTrace",
    "atom_gradient",
    "apply_update",
    "dlearn",
    "write_trace",
]

RESIDUAL_VAR_FLOOR = 1e-12


@dataclass
class LearnConfig:
    """Dictionary size, pursuit settings, steplength, and block budget."""

    m: int = 32
    p: float = 0.05
    eta: float = 1e-6
    variant: str = "emp"
    n_blocks: int | None = None
    time_budget_s: float | None = None
    seed: int = 0
    iteration_budget: int | None = None
    max_atom_len: int | None = None  # default: block_len // 4 at run time
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must be in (0, 1)")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.n_blocks is not None and self.n_blocks < 0:
            raise ValueError("n_blocks must be >= 0")
        if self.time_budget_s is not None and self.time_budget_s <= 0:
            raise ValueError("time_budget_s must be > 0")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def pursuit(self) -> PursuitConfig:
        return PursuitConfig(
            variant=self.variant, p=self.p, iteration_budget=self.iteration_budget
        )


@dataclass
class BlockRecord:
    """One trace row: what a single training block did."""

    block: int
    signal_seconds: float
    snr_db: float
    residual_var: float
    event_counts: np.ndarray
    atom_lengths: list[int]


@dataclass
class LearnTrace:
    """Per-block training history, one record per processed block."""

    records: list[BlockRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def atom_gradient(code: SparseCode, atom_index: int, atom_len: int) -> np.ndarray:
    """Gradient of -0.5*||residual||^2 w.r.t. one atom's samples, fixed code.

    Sum over the atom's events of coefficient times the residual segment
    starting at the event offset. Segments running past the residual end
    (possible after tail growth) are zero-extended.
    """
    if code.residual is None:
        raise ValueError("code carries no residual; re-encode before updating")
    g = np.zeros(atom_len)
    r = code.residual
    n = len(r)
    for ev in code.events:
        if ev.atom_index != atom_index:
            continue
        seg = r[ev.offset : min(ev.offset + atom_len, n)]
        g[: len(seg)] += ev.coefficient * seg
    return g


def apply_update(
    dictionary: Dictionary,
    code: SparseCode,
    eta: float,
    max_atom_len: int | None = None,
    rng: np.random.Generator | None = None,
) -> Dictionary:
    """One gradient step on every atom the code selected.

    Each touched atom becomes extnorm(phi + eta * g / var(residual)); the
    variance estimate is floored at 1e-12. An atom driven to exactly zero
    is replaced with a fresh random atom when an rng is supplied, else the
    degeneracy propagates.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if code.residual is None:
        raise ValueError("code carries no residual; re-encode before updating")
    var = max(float(np.var(code.residual)), RESIDUAL_VAR_FLOOR)
    counts = np.zeros(len(dictionary.atoms), dtype=np.int64)
    for ev in code.events:
        counts[ev.atom_index] += 1
    new_atoms: list[Atom] = []
    for i, atom in enumerate(dictionary.atoms):
        if counts[i] == 0:
            new_atoms.append(atom)
            continue
        g = atom_gradient(code, i, len(atom.waveform))
        stepped = Atom(atom.waveform + (eta / var) * g, pad_len=atom.pad_len)
        try:
            new_atoms.append(extnorm(stepped, max_len=max_atom_len))
        except ZeroAtomError:
            if rng is None:
                raise
            new_atoms.append(_random_atom(rng))
    return Dictionary(
        atoms=new_atoms,
        version=dictionary.version,
        sample_rate_hint=dictionary.sample_rate_hint,
        provenance=dictionary.provenance,
    )


def dlearn(
    source: BlockSource,
    cfg: LearnConfig,
    checkpoint_dir: str | None = None,
    start_dictionary: Dictionary | None = None,
) -> tuple[Dictionary, LearnTrace]:
    """Alternate pursuit and atom updates over the block stream.

    Deterministic given (cfg.seed, source.rng_seed). Stops at the block
    budget, the wall-clock budget, or source exhaustion, whichever comes
    first. With a zero budget the random initial dictionary is returned.
    """
    sr = source.source.sample_rate
    if start_dictionary is not None:
        dictionary = start_dictionary
    else:
        dictionary = randdict(cfg.m, seed=cfg.seed, sample_rate_hint=sr)
    trace = LearnTrace()
    max_atom_len = (
        cfg.max_atom_len if cfg.max_atom_len is not None else source.block_len // 4
    )
    rerand_rng = np.random.default_rng((cfg.seed, 0x5EED))
    pcfg = cfg.pursuit()

    t_start = time.monotonic()
    step = 0
    prev_residual: np.ndarray | None = None
    while True:
        if cfg.n_blocks is not None and step >= cfg.n_blocks:
            break
        if (
            cfg.time_budget_s is not None
            and time.monotonic() - t_start >= cfg.time_budget_s
        ):
            break
        block = next_block(source, step, prev_residual)
        if block is None:
            if step == 0 and (cfg.n_blocks is None or cfg.n_blocks > 0):
                raise ValueError("block source is empty")
            break
        code = match(dictionary, block, pcfg)
        dictionary = apply_update(
            dictionary, code, cfg.eta, max_atom_len=max_atom_len, rng=rerand_rng
        )
        prev_residual = code.residual if source.carry_residual else None

        x2 = float(np.dot(block.samples, block.samples))
        r2 = float(np.dot(code.residual, code.residual))
        if x2 == 0.0:
            snr = float("nan")
        elif r2 == 0.0:
            snr = np.inf
        else:
            snr = 10.0 * np.log10(x2 / r2)
        counts = np.zeros(cfg.m, dtype=np.int64)
        for ev in code.events:
            counts[ev.atom_index] += 1
        trace.records.append(
            BlockRecord(
                block=step,
                signal_seconds=(step + 1) * source.block_len / sr,
                snr_db=float(snr),
                residual_var=float(np.var(code.residual)),
                event_counts=counts,
                atom_lengths=[len(a.waveform) for a in dictionary.atoms],
            )
        )
        step += 1
        if (
            checkpoint_dir is not None
            and cfg.checkpoint_every > 0
            and step % cfg.checkpoint_every == 0
        ):
            save_dict(
                dictionary, os.path.join(checkpoint_dir, f"dict_block{step:06d}.json")
            )
    return dictionary, trace


def write_trace(trace: LearnTrace, path, header: dict | None = None) -> None:
    """Write the trace as CSV, one row per block, ±120 dB SNR clamp."""
    with open(path, "w", newline="") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(
            [
                "block",
                "signal_seconds",
                "snr_db",
                "residual_var",
                "min_atom_len",
                "max_atom_len",
                "event_counts",
            ]
        )
        for rec in trace.records:
            snr = min(max(rec.snr_db, -120.0), 120.0)
            writer.writerow(
                [
                    rec.block,
                    f"{rec.signal_seconds:.6f}",
                    f"{snr:.2f}",
                    f"{rec.residual_var:.6e}",
                    min(rec.atom_lengths),
                    max(rec.atom_lengths),
                    " ".join(str(c) for c in rec.event_counts),
                ]
            )
