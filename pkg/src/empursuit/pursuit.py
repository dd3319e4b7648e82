"""Greedy shift-invariant pursuit engine.

One loop realizes four pursuits. Each iteration picks the (atom, offset)
whose correlation with the residual has the largest magnitude, re-solves
coefficients over a local neighborhood, and subtracts the combined
contribution:

  variant  selection constraint          neighborhood
  mp       any atom                      the new event only
  omp      any atom                      new event + prior events with
                                         overlapping support
  emp      atoms below their quota       the new event only
  eomp     atoms below their quota       as omp

Equiprobable variants (emp/eomp) cap each atom at Q = floor(p*N/M)
selections per window and stop when every atom is at quota, so the
empirical index distribution is exactly uniform. mp/omp default to an
iteration budget of M*Q so all four variants are equally sparse.

Correlations are kept in an incrementally maintained table: after a
residual update only offsets whose support intersects the changed region
are recomputed, and a block-maxima index makes the argmax cheap. Atoms at
quota are dropped from maintenance and search, which is what makes the
equiprobable variants cheaper than their unconstrained peers.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg as _sla

from .dictionary import Dictionary, dict_digest
from .errors import DataFormatError
from .signal_io import Signal

__all__ = [
    "VARIANTS",
    "PursuitConfig",
    "QuotaState",
    "SparseEvent",
    "SparseCode",
    "StepInfo",
    "CorrelationTable",
    "correlate_all",
    "select",
    "neighborhood",
    "solve_neighborhood",
    "update_residual",
    "match",
    "reconstruct",
    "save_code",
    "load_code",
]

VARIANTS = ("mp", "omp", "emp", "eomp")
_EQUIPROBABLE = frozenset(("emp", "eomp"))
_LOCAL_LSQ = frozenset(("omp", "eomp"))

# Selections below this fraction of the initial residual norm terminate the
# pursuit instead of filling quotas with noise-level events.
SELECTION_FLOOR_RATIO = 1e-12
# Ridge scale for rank-deficient neighborhood Gram matrices.
RIDGE_RATIO = 1e-10


@dataclass
class PursuitConfig:
    """Variant, average selection probability, and optional iteration cap."""

    variant: str = "emp"
    p: float = 0.05
    iteration_budget: int | None = None
    tie_break: str = "index-offset"

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must be in (0, 1)")
        if self.iteration_budget is not None and self.iteration_budget < 0:
            raise ValueError("iteration_budget must be >= 0")
        if self.tie_break != "index-offset":
            raise ValueError("only the 'index-offset' tie-break rule is implemented")

    @property
    def equiprobable(self) -> bool:
        return self.variant in _EQUIPROBABLE

    def quota(self, window_len: int, m: int) -> int:
        """Per-atom selection quota Q = floor(p * N / M)."""
        return int(math.floor(self.p * window_len / m))


@dataclass
class QuotaState:
    """Per-atom selection counters against a common quota."""

    counts: np.ndarray
    quota: int

    @classmethod
    def fresh(cls, m: int, quota: int) -> "QuotaState":
        return cls(np.zeros(m, dtype=np.int64), quota)

    def admissible(self) -> np.ndarray:
        return self.counts < self.quota

    def exhausted(self) -> bool:
        return bool(np.all(self.counts >= self.quota))


@dataclass
class SparseEvent:
    """One pursuit selection: atom index, integer offset, coefficient."""

    atom_index: int
    offset: int
    coefficient: float
    flagged: bool = False  # set when a ridge-stabilized solve touched it


@dataclass
class SparseCode:
    """Event list plus final residual for one window."""

    events: list[SparseEvent]
    residual: np.ndarray | None
    window_len: int
    variant: str = "mp"
    p: float | None = None
    sample_rate: int | None = None
    dict_digest: str | None = None


@dataclass
class StepInfo:
    """Per-iteration telemetry passed to a match() observer callback."""

    k: int
    atom_index: int
    offset: int
    corr: float
    chi: np.ndarray
    neighborhood: list[SparseEvent]
    r2_before: float
    r2_after: float
    residual: np.ndarray


def _corr_rows(residual: np.ndarray, lo: int, hi: int, W: np.ndarray) -> np.ndarray:
    """Correlations of each row of W with residual at offsets lo..hi.

    Computed as chunked matmuls against contiguous sliding-window copies;
    the chunk cap keeps the window buffer small for long atoms.
    """
    L = W.shape[1]
    out = np.empty((W.shape[0], hi - lo + 1))
    chunk = max(1, min(1 << 16, (1 << 22) // L))
    for s in range(lo, hi + 1, chunk):
        e = min(s + chunk - 1, hi)
        base = residual[s : e + L]
        stride = base.strides[0]
        seg = np.ascontiguousarray(
            np.lib.stride_tricks.as_strided(
                base, shape=(e - s + 1, L), strides=(stride, stride)
            )
        )
        out[:, s - lo : e - lo + 1] = (seg @ W.T).T
    return out


class _AtomGroup:
    """Correlation rows for all atoms of one length, stacked for vector ops.

    Rows 0..live_n-1 are the still-active atoms; deactivation swaps a row
    to the end and shrinks live_n, so refreshes always slice a contiguous
    prefix instead of gathering scattered rows.
    """

    def __init__(self, length: int, atoms: list[int], W: np.ndarray, block: int, n: int):
        self.length = length
        self.W = W
        self.row_len = n - length + 1
        self.R = np.empty((len(atoms), self.row_len))
        nblocks = (self.row_len + block - 1) // block
        self.B = np.empty((len(atoms), nblocks))
        self.atoms = np.array(atoms)
        self.live_n = len(atoms)


class CorrelationTable:
    """Sliding correlations of every atom with the residual.

    rows[i][t] = <residual[t : t + L_i], waveform_i>. Atoms are grouped by
    length so a residual change refreshes each group with one matmul. A
    per-row block-maxima index over |c| supports cheap argmax with
    deterministic first-occurrence tie-breaking (lowest atom index, then
    lowest offset).
    """

    def __init__(
        self,
        residual: np.ndarray,
        waveforms: Sequence[np.ndarray],
        block: int = 256,
    ):
        self.residual = residual
        self.waveforms = list(waveforms)
        self.lengths = [len(w) for w in self.waveforms]
        self.n = len(residual)
        self.block = block
        m = len(self.waveforms)
        self.active = np.ones(m, dtype=bool)
        self.best_val = np.full(m, -np.inf)
        self.rows: list[np.ndarray] = [np.empty(0)] * m
        self.bmax: list[np.ndarray] = [np.empty(0)] * m
        by_len: dict[int, list[int]] = {}
        for i, L in enumerate(self.lengths):
            if L > self.n:
                raise ValueError("atom longer than the analysis window")
            by_len.setdefault(L, []).append(i)
        self._groups: list[_AtomGroup] = []
        self._home: dict[int, tuple[_AtomGroup, int]] = {}
        for L, idxs in sorted(by_len.items()):
            W = np.stack([self.waveforms[i] for i in idxs])
            g = _AtomGroup(L, idxs, W, block, self.n)
            g.R[:] = _corr_rows(residual, 0, self.n - L, W)
            g.B[:] = self._block_maxima(np.abs(g.R))
            self._groups.append(g)
            for r, i in enumerate(idxs):
                self._home[i] = (g, r)
                self.rows[i] = g.R[r]
                self.bmax[i] = g.B[r]
            self.best_val[idxs] = g.B.max(axis=1)

    def _block_maxima(self, absrows: np.ndarray) -> np.ndarray:
        """Max of |c| per block of `self.block` columns, short tail included."""
        block = self.block
        width = absrows.shape[1]
        full = width // block
        nblocks = (width + block - 1) // block
        out = np.empty((absrows.shape[0], nblocks))
        if full:
            out[:, :full] = (
                absrows[:, : full * block]
                .reshape(absrows.shape[0], full, block)
                .max(axis=2)
            )
        if nblocks > full:
            out[:, full] = absrows[:, full * block :].max(axis=1)
        return out

    def refresh(self, t0: int, t1: int) -> None:
        """Recompute correlations whose support intersects residual[t0:t1)."""
        r = self.residual
        block = self.block
        for g in self._groups:
            ln = g.live_n
            if ln == 0:
                continue
            L = g.length
            lo = max(0, t0 - L + 1)
            hi = min(self.n - L, t1 - 1)
            if lo > hi:
                continue
            g.R[:ln, lo : hi + 1] = _corr_rows(r, lo, hi, g.W[:ln])
            b0 = lo // block
            b1 = hi // block
            s0 = b0 * block
            s1 = min((b1 + 1) * block, g.row_len)
            g.B[:ln, b0 : b1 + 1] = self._block_maxima(np.abs(g.R[:ln, s0:s1]))
            self.best_val[g.atoms[:ln]] = g.B[:ln].max(axis=1)

    def deactivate(self, atom_index: int) -> None:
        """Drop an atom's row from maintenance and search (quota reached).

        The row swaps places with the last live row so live rows stay a
        contiguous prefix; the displaced atom's views are re-pointed.
        """
        self.active[atom_index] = False
        self.best_val[atom_index] = -np.inf
        g, row = self._home[atom_index]
        last = g.live_n - 1
        if row != last:
            other = int(g.atoms[last])
            g.R[[row, last]] = g.R[[last, row]]
            g.B[[row, last]] = g.B[[last, row]]
            g.W[[row, last]] = g.W[[last, row]]
            g.atoms[[row, last]] = g.atoms[[last, row]]
            self._home[other] = (g, row)
            self._home[atom_index] = (g, last)
            self.rows[other] = g.R[row]
            self.bmax[other] = g.B[row]
            self.rows[atom_index] = g.R[last]
            self.bmax[atom_index] = g.B[last]
        g.live_n = last

    def value(self, atom_index: int, offset: int) -> float:
        return float(self.rows[atom_index][offset])

    def best(self, mask: np.ndarray | None = None) -> tuple[float, int, int] | None:
        """Largest |c| over admissible atoms; (value, atom, offset) or None.

        Deactivated atoms hold -inf in best_val, so only the caller's mask
        needs applying here.
        """
        vals = self.best_val
        if mask is not None:
            vals = np.where(mask, vals, -np.inf)
        i = int(np.argmax(vals))
        if vals[i] == -np.inf:
            return None
        bm = self.bmax[i]
        b = int(np.argmax(bm))
        row = self.rows[i]
        seg = np.abs(row[b * self.block : (b + 1) * self.block])
        off = b * self.block + int(np.argmax(seg))
        return float(vals[i]), i, off


def correlate_all(
    residual: np.ndarray,
    dictionary: Dictionary | Sequence[np.ndarray],
    block: int = 256,
) -> CorrelationTable:
    """Build the full correlation table of every atom at every valid offset."""
    waveforms = (
        dictionary.waveforms
        if isinstance(dictionary, Dictionary)
        else [np.asarray(w, dtype=np.float64) for w in dictionary]
    )
    residual = np.asarray(residual, dtype=np.float64)
    if len(residual) < max(len(w) for w in waveforms):
        raise ValueError("residual shorter than the longest atom")
    return CorrelationTable(residual, waveforms, block=block)


def select(
    table: CorrelationTable,
    quota: QuotaState | None,
    variant: str,
    floor: float = 0.0,
) -> tuple[int, int] | None:
    """Pick the admissible (atom, offset) with max |correlation|, or None.

    Equiprobable variants exclude atoms at quota; every variant gives up
    when the best magnitude falls below the numeric floor.
    """
    mask = quota.admissible() if variant in _EQUIPROBABLE and quota else None
    found = table.best(mask)
    if found is None:
        return None
    val, i, off = found
    if val < floor:
        return None
    return i, off


def _support_end(ev: SparseEvent, lengths: Sequence[int]) -> int:
    return ev.offset + lengths[ev.atom_index]


def neighborhood(
    events: Sequence[SparseEvent],
    new_event: SparseEvent,
    variant: str,
    atom_lengths: Sequence[int],
) -> list[SparseEvent]:
    """Events to re-solve jointly this iteration, new event last.

    mp/emp: the new event alone. omp/eomp: also every prior event whose
    sample support intersects the new event's support.
    """
    if variant not in _LOCAL_LSQ:
        return [new_event]
    start = new_event.offset
    end = _support_end(new_event, atom_lengths)
    psi = [
        ev
        for ev in events
        if ev.offset < end and _support_end(ev, atom_lengths) > start
    ]
    psi.append(new_event)
    return psi


def _psi_matrix(
    psi: Sequence[SparseEvent], waveforms: Sequence[np.ndarray]
) -> tuple[np.ndarray, int, int]:
    """Stack the neighborhood's shifted waveforms over their union interval."""
    u0 = min(ev.offset for ev in psi)
    u1 = max(ev.offset + len(waveforms[ev.atom_index]) for ev in psi)
    A = np.zeros((len(psi), u1 - u0))
    for j, ev in enumerate(psi):
        w = waveforms[ev.atom_index]
        A[j, ev.offset - u0 : ev.offset - u0 + len(w)] = w
    return A, u0, u1


def solve_neighborhood(
    psi: Sequence[SparseEvent],
    residual: np.ndarray,
    dictionary: Dictionary | Sequence[np.ndarray],
) -> tuple[np.ndarray, bool]:
    """Least-squares coefficient increments for the neighborhood columns.

    Returns (chi, ridged). A rank-deficient Gram matrix (e.g. the same
    atom and offset selected twice) is solved with a small ridge term and
    reported via the flag.
    """
    if not psi:
        raise ValueError("neighborhood is empty")
    waveforms = (
        dictionary.waveforms if isinstance(dictionary, Dictionary) else dictionary
    )
    if len(psi) == 1:
        ev = psi[0]
        w = waveforms[ev.atom_index]
        seg = residual[ev.offset : ev.offset + len(w)]
        return np.array([np.dot(seg, w)]), False
    A, u0, u1 = _psi_matrix(psi, waveforms)
    G = A @ A.T
    b = A @ residual[u0:u1]
    try:
        c = np.linalg.cholesky(G)
        return _sla.cho_solve((c, True), b), False
    except np.linalg.LinAlgError:
        lam = RIDGE_RATIO * np.trace(G) / len(psi)
        chi = np.linalg.solve(G + lam * np.eye(len(psi)), b)
        return chi, True


def update_residual(
    residual: np.ndarray,
    psi: Sequence[SparseEvent],
    chi: np.ndarray,
    dictionary: Dictionary | Sequence[np.ndarray],
) -> tuple[int, int]:
    """Subtract the neighborhood's combined contribution, in place.

    Returns the changed interval [t0, t1) so correlation caches can be
    invalidated locally. The interval is contiguous because every
    neighborhood event overlaps the newest one.
    """
    waveforms = (
        dictionary.waveforms if isinstance(dictionary, Dictionary) else dictionary
    )
    t0 = len(residual)
    t1 = 0
    for ev, c in zip(psi, chi):
        if c == 0.0:
            continue
        w = waveforms[ev.atom_index]
        residual[ev.offset : ev.offset + len(w)] -= c * w
        t0 = min(t0, ev.offset)
        t1 = max(t1, ev.offset + len(w))
    if t1 <= t0:
        return 0, 0
    return t0, t1


def match(
    dictionary: Dictionary,
    x: Signal | np.ndarray,
    config: PursuitConfig,
    on_step: Callable[[StepInfo], None] | None = None,
    block: int = 256,
) -> SparseCode:
    """Run the configured pursuit over one window and return its sparse code.

    The input is reproduced exactly as reconstruct(code) + code.residual.
    Selections of an already-used (atom, offset) accumulate onto the same
    coordinates but count once each toward quota.
    """
    sample_rate = x.sample_rate if isinstance(x, Signal) else None
    samples = np.asarray(x.samples if isinstance(x, Signal) else x, dtype=np.float64)
    n = len(samples)
    waveforms = dictionary.waveforms
    lengths = [len(w) for w in waveforms]
    m = len(waveforms)
    if n < max(lengths):
        raise ValueError(
            f"window of {n} samples is shorter than the longest atom ({max(lengths)})"
        )

    code = SparseCode(
        events=[],
        residual=samples.copy(),
        window_len=n,
        variant=config.variant,
        p=config.p,
        sample_rate=sample_rate,
        dict_digest=dict_digest(dictionary),
    )
    norm0 = float(np.linalg.norm(samples))
    if norm0 == 0.0:
        return code

    q = config.quota(n, m)
    if config.equiprobable and q < 1:
        raise ValueError(
            f"equiprobable quota floor(p*N/M) = {q} < 1; "
            "raise p or use a longer window"
        )
    quota = QuotaState.fresh(m, q)
    budget = config.iteration_budget
    if budget is None and not config.equiprobable:
        budget = m * q  # sparsity parity with the equiprobable variants

    residual = code.residual
    floor = SELECTION_FLOOR_RATIO * norm0
    table = correlate_all(residual, dictionary, block=block)
    local = config.variant in _LOCAL_LSQ
    # Event starts kept sorted for the overlap query; values are
    # (offset, position in code.events).
    starts: list[tuple[int, int]] = []
    max_len = max(lengths)

    k = 0
    while budget is None or k < budget:
        picked = select(table, quota, config.variant, floor)
        if picked is None:
            break
        i, off = picked
        c0 = table.value(i, off)
        new_event = SparseEvent(i, off, 0.0)

        if local and starts:
            end = off + lengths[i]
            j0 = bisect.bisect_left(starts, (off - max_len + 1, -1))
            j1 = bisect.bisect_left(starts, (end, -1))
            idxs = sorted(
                pos
                for s, pos in starts[j0:j1]
                if s + lengths[code.events[pos].atom_index] > off
            )
            psi = [code.events[pos] for pos in idxs]
            psi.append(new_event)
        else:
            psi = [new_event]

        if len(psi) == 1:
            # Unit-norm atom: the increment is the cached correlation itself.
            chi = np.array([c0])
            ridged = False
        else:
            chi, ridged = solve_neighborhood(psi, residual, waveforms)
        if ridged:
            new_event.flagged = True
        for ev, c in zip(psi, chi):
            ev.coefficient += float(c)

        r2_before = float(np.dot(residual, residual)) if on_step else 0.0
        t0, t1 = update_residual(residual, psi, chi, waveforms)
        if t1 > t0:
            table.refresh(t0, t1)

        if local:
            bisect.insort(starts, (off, len(code.events)))
        code.events.append(new_event)
        quota.counts[i] += 1
        if config.equiprobable and quota.counts[i] >= q:
            table.deactivate(i)
        k += 1

        if on_step is not None:
            on_step(
                StepInfo(
                    k=k,
                    atom_index=i,
                    offset=off,
                    corr=float(abs(c0)),
                    chi=np.asarray(chi, dtype=np.float64),
                    neighborhood=psi,
                    r2_before=r2_before,
                    r2_after=float(np.dot(residual, residual)),
                    residual=residual,
                )
            )
    return code


def reconstruct(code: SparseCode, dictionary: Dictionary) -> np.ndarray:
    """Sum of every event's scaled, shifted atom waveform."""
    waveforms = dictionary.waveforms
    out = np.zeros(code.window_len)
    for ev in code.events:
        if ev.atom_index >= len(waveforms):
            raise ValueError(f"event references atom {ev.atom_index} beyond dictionary")
        w = waveforms[ev.atom_index]
        if ev.offset < 0 or ev.offset + len(w) > code.window_len:
            raise ValueError(
                f"event at offset {ev.offset} does not fit the window; "
                "code is stale for this dictionary"
            )
        out[ev.offset : ev.offset + len(w)] += ev.coefficient * w
    return out


def save_code(code: SparseCode, path, residual_path=None) -> None:
    """Write a sparse code as line-oriented text records with a header."""
    with open(path, "w") as fh:
        fh.write("#format=empursuit-code\n")
        fh.write("#format_version=1\n")
        fh.write(f"#window_len={code.window_len}\n")
        fh.write(f"#variant={code.variant}\n")
        fh.write(f"#p={code.p if code.p is not None else ''}\n")
        fh.write(f"#sample_rate={code.sample_rate if code.sample_rate else ''}\n")
        fh.write(f"#dict_digest={code.dict_digest or ''}\n")
        for ev in code.events:
            fh.write(f"{ev.atom_index} {ev.offset} {ev.coefficient!r}\n")
    if residual_path is not None:
        if code.residual is None:
            raise ValueError("code has no residual to save")
        code.residual.astype("<f8").tofile(residual_path)


def load_code(path, residual_path=None) -> SparseCode:
    """Read a sparse code written by save_code."""
    header: dict[str, str] = {}
    events: list[SparseEvent] = []
    try:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, value = line[1:].partition("=")
                    header[key] = value
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise DataFormatError(f"bad code record {line!r} in {path!r}")
                events.append(
                    SparseEvent(int(parts[0]), int(parts[1]), float(parts[2]))
                )
    except FileNotFoundError:
        raise
    except (ValueError, OSError) as exc:
        raise DataFormatError(f"cannot parse code file {path!r}: {exc}") from exc
    if header.get("format") != "empursuit-code":
        raise DataFormatError(f"{path!r} is not a sparse-code file")
    if header.get("format_version") != "1":
        raise DataFormatError(
            f"unsupported code format version {header.get('format_version')!r}"
        )
    try:
        window_len = int(header["window_len"])
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"missing window_len in {path!r}") from exc
    residual = None
    if residual_path is not None:
        residual = np.fromfile(residual_path, dtype="<f8")
        if len(residual) != window_len:
            raise DataFormatError("residual file length does not match window_len")
    return SparseCode(
        events=events,
        residual=residual,
        window_len=window_len,
        variant=header.get("variant", "mp"),
        p=float(header["p"]) if header.get("p") else None,
        sample_rate=int(header["sample_rate"]) if header.get("sample_rate") else None,
        dict_digest=header.get("dict_digest") or None,
    )
