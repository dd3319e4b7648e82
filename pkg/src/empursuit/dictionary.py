"""Atoms and dictionaries: random initialization, tail growth, normalization, files.

An atom is a unit-norm waveform with zero tails that grow in fixed steps
when boundary energy becomes non-negligible, letting atom length adapt
during learning.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, ZeroAtomError

__all__ = [
    "Atom",
    "Dictionary",
    "randdict",
    "extnorm",
    "save_dict",
    "load_dict",
    "dict_digest",
    "TAIL_LEN",
    "TAIL_RMS_RATIO",
    "INIT_BODY_LEN",
]

TAIL_LEN = 10
TAIL_RMS_RATIO = 0.1
INIT_BODY_LEN = 50

_FORMAT_NAME = "empursuit-dict"
_FORMAT_VERSION = 1


@dataclass(eq=False)
class Atom:
    """One shift-invariant waveform; unit ℓ2 norm after any extnorm call."""

    waveform: np.ndarray
    pad_len: int = TAIL_LEN

    def __post_init__(self) -> None:
        self.waveform = np.asarray(self.waveform, dtype=np.float64)
        if self.waveform.ndim != 1 or self.waveform.size < 1:
            raise ValueError("atom waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.waveform)):
            raise ValueError("atom waveform contains non-finite values")

    def __len__(self) -> int:
        return len(self.waveform)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Atom):
            return NotImplemented
        return self.pad_len == other.pad_len and np.array_equal(
            self.waveform, other.waveform
        )


@dataclass(eq=False)
class Dictionary:
    """Ordered set of atoms; indices are stable identities."""

    atoms: list[Atom]
    version: int = _FORMAT_VERSION
    sample_rate_hint: int | None = None
    provenance: str = ""

    def __post_init__(self) -> None:
        if len(self.atoms) < 1:
            raise ValueError("dictionary needs at least one atom")

    def __len__(self) -> int:
        return len(self.atoms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dictionary):
            return NotImplemented
        return (
            self.version == other.version
            and self.sample_rate_hint == other.sample_rate_hint
            and self.provenance == other.provenance
            and len(self.atoms) == len(other.atoms)
            and all(a == b for a, b in zip(self.atoms, other.atoms))
        )

    @property
    def waveforms(self) -> list[np.ndarray]:
        return [a.waveform for a in self.atoms]

    @property
    def max_len(self) -> int:
        return max(len(a) for a in self.atoms)


def _random_atom(rng: np.random.Generator) -> Atom:
    body = rng.standard_normal(INIT_BODY_LEN)
    w = np.concatenate([np.zeros(TAIL_LEN), body, np.zeros(TAIL_LEN)])
    w /= np.linalg.norm(w)
    return Atom(w)


def randdict(
    m: int,
    seed: int = 0,
    sample_rate_hint: int | None = None,
) -> Dictionary:
    """Random dictionary of m unit-norm atoms.

    Each atom has 50 zero-mean Gaussian samples flanked by two 10-sample
    zero tails, so atoms start 70 samples long.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    atoms = [_random_atom(rng) for _ in range(m)]
    return Dictionary(
        atoms,
        sample_rate_hint=sample_rate_hint,
        provenance=f"randdict(m={m}, seed={seed})",
    )


def extnorm(atom: Atom, max_len: int | None = None) -> Atom:
    """Grow loud tails by pad_len zeros per side, then unit-normalize.

    A side grows when the RMS of its outermost pad_len samples exceeds
    TAIL_RMS_RATIO times the whole-atom RMS, unless growth would exceed
    max_len. Raises ZeroAtomError for an all-zero waveform.
    """
    w = atom.waveform
    norm = float(np.linalg.norm(w))
    if norm == 0.0:
        raise ZeroAtomError("all-zero atom cannot be normalized")

    pad = atom.pad_len
    atom_rms = norm / np.sqrt(len(w))
    threshold = TAIL_RMS_RATIO * atom_rms
    grow_left = len(w) > pad and _rms(w[:pad]) > threshold
    grow_right = len(w) > pad and _rms(w[-pad:]) > threshold

    length = len(w)
    if grow_left and (max_len is None or length + pad <= max_len):
        w = np.concatenate([np.zeros(pad), w])
        length += pad
    if grow_right and (max_len is None or length + pad <= max_len):
        w = np.concatenate([w, np.zeros(pad)])
        length += pad
    return Atom(w / np.linalg.norm(w), pad_len=pad)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def dict_digest(d: Dictionary) -> str:
    """Content hash of the dictionary (format version, M, atom samples)."""
    h = hashlib.sha256()
    h.update(f"{_FORMAT_NAME}:{d.version}:{len(d.atoms)}".encode())
    for atom in d.atoms:
        h.update(np.ascontiguousarray(atom.waveform, dtype="<f8").tobytes())
    return h.hexdigest()


def save_dict(d: Dictionary, path) -> None:
    """Write a dictionary as self-describing JSON; floats round-trip exactly."""
    doc = {
        "format": _FORMAT_NAME,
        "format_version": d.version,
        "m": len(d.atoms),
        "sample_rate_hint": d.sample_rate_hint,
        "pad_len": d.atoms[0].pad_len,
        "provenance": d.provenance,
        "atoms": [a.waveform.tolist() for a in d.atoms],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_dict(path) -> Dictionary:
    """Read a dictionary written by save_dict; structured errors on bad files."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"malformed dictionary file {path!r}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != _FORMAT_NAME:
        raise DataFormatError(f"{path!r} is not a dictionary file")
    if doc.get("format_version") != _FORMAT_VERSION:
        raise DataFormatError(
            f"unsupported dictionary format version {doc.get('format_version')!r}"
        )
    try:
        pad_len = int(doc["pad_len"])
        atoms = [
            Atom(np.asarray(w, dtype=np.float64), pad_len=pad_len)
            for w in doc["atoms"]
        ]
        d = Dictionary(
            atoms,
            version=int(doc["format_version"]),
            sample_rate_hint=doc.get("sample_rate_hint"),
            provenance=doc.get("provenance", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"bad dictionary contents in {path!r}: {exc}") from exc
    if int(doc["m"]) != len(d.atoms):
        raise DataFormatError(f"atom count mismatch in {path!r}")
    return d
