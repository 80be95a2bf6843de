"""Protocol steps 1-8: source choice, biased bases, transit, measurement, sifting.

Two execution paths produce the same records bit for bit:

* :func:`run_trial` walks one pair through the typed scalar API of
  :mod:`entqkd.quantum_core` and :mod:`entqkd.adversary`.
* :func:`run_session` evaluates the same kernels on numpy arrays, chunk by
  chunk, and stores the result column-wise in a :class:`RecordTable`.

All randomness comes from :mod:`entqkd.streams`, keyed by
``(config.seed, trial_index, slot)``.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import streams
from .adversary import EVE_BASIS, EVE_CODES, AttackPolicy, EveAction, EveTag, eve_intercept
from .quantum_core import (
    BASIS_CODES,
    SOURCE_CODES,
    Amplitudes,
    BasisTag,
    SourceChoice,
    _normalize_kernel,
    _overlap_kernel,
    _project_first_kernel,
    basis_components,
    basis_for,
    make_pair_state,
    measure_pair_first,
    measure_qubit,
)


class SubsetLabel(Enum):
    E1 = "e1"
    E1P = "e1p"
    E2 = "e2"
    E2P = "e2p"
    E3 = "e3"
    E3P = "e3p"


SUBSETS = tuple(SubsetLabel)
SUBSET_CODES = {label: code for code, label in enumerate(SUBSETS)}
DIAGONAL_SUBSETS = (SubsetLabel.E2, SubsetLabel.E2P, SubsetLabel.E3, SubsetLabel.E3P)

CSV_COLUMNS = ("index", "source", "alice_basis", "alice_bit", "eve_action", "bob_basis", "bob_bit", "subset")

DEFAULT_SAMPLES = (1000,) * 6


@dataclass(frozen=True)
class SessionConfig:
    n_pairs: int = 1_000_000
    epsilon: float = 0.2
    alpha_sq: float = 0.8
    attack: AttackPolicy = field(default_factory=AttackPolicy)
    m_samples: tuple[int, ...] = DEFAULT_SAMPLES
    e_max: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.n_pairs, bool) or int(self.n_pairs) != self.n_pairs or self.n_pairs < 1:
            raise ValueError(f"n_pairs: must be a positive integer, got {self.n_pairs!r}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(
                f"epsilon: must satisfy 0 < epsilon <= 1, got {self.epsilon!r} "
                "(epsilon = 0 leaves the diagonal subsets empty and the key insecure)"
            )
        if not 0.0 <= self.alpha_sq <= 1.0:
            raise ValueError(f"alpha_sq: must lie in [0, 1], got {self.alpha_sq!r}")
        if not isinstance(self.attack, AttackPolicy):
            raise ValueError("attack: expected an AttackPolicy")
        if len(self.m_samples) != 6 or any(int(m) != m or m < 1 for m in self.m_samples):
            raise ValueError(f"m_samples: need six positive integers, got {self.m_samples!r}")
        if not 0.0 < self.e_max < 1.0:
            raise ValueError(f"e_max: must satisfy 0 < e_max < 1, got {self.e_max!r}")
        object.__setattr__(self, "m_samples", tuple(int(m) for m in self.m_samples))
        object.__setattr__(self, "seed", streams.normalize_seed(self.seed))

    @property
    def amplitudes(self) -> Amplitudes:
        return Amplitudes.from_alpha_sq(self.alpha_sq)

    def samples_by_subset(self) -> dict[SubsetLabel, int]:
        return dict(zip(SUBSETS, self.m_samples))


@dataclass(frozen=True)
class PairRecord:
    index: int
    source: SourceChoice
    alice_basis: BasisTag
    alice_bit: int
    eve_action: EveAction
    bob_basis: BasisTag
    bob_bit: int
    subset: Optional[SubsetLabel]


def alice_choose(epsilon: float, u_source: float, u_basis: float) -> tuple[SourceChoice, BasisTag]:
    """Source is PLAIN/PRIMED with probability 1/2; basis DIAG with probability epsilon."""
    source = SourceChoice.PLAIN if u_source < 0.5 else SourceChoice.PRIMED
    basis = BasisTag.RECT if u_basis < 1.0 - epsilon else BasisTag.DIAG
    return source, basis


def bob_choose(epsilon: float, u: float) -> BasisTag:
    if u < 1.0 - epsilon:
        return BasisTag.RECT
    if u < 1.0 - epsilon / 2:
        return BasisTag.PLUS_THETA
    return BasisTag.MINUS_THETA


_EXPECTED_BOB = {
    (SourceChoice.PLAIN, 0): BasisTag.PLUS_THETA,
    (SourceChoice.PLAIN, 1): BasisTag.MINUS_THETA,
    (SourceChoice.PRIMED, 0): BasisTag.MINUS_THETA,
    (SourceChoice.PRIMED, 1): BasisTag.PLUS_THETA,
}

_DIAG_LABEL = {
    (SourceChoice.PLAIN, BasisTag.PLUS_THETA): SubsetLabel.E2,
    (SourceChoice.PLAIN, BasisTag.MINUS_THETA): SubsetLabel.E3,
    (SourceChoice.PRIMED, BasisTag.MINUS_THETA): SubsetLabel.E2P,
    (SourceChoice.PRIMED, BasisTag.PLUS_THETA): SubsetLabel.E3P,
}


def expected_bob_basis(source: SourceChoice, alice_diag_bit: int) -> BasisTag:
    """Basis in which Bob's photon is an eigenstate after Alice's diagonal outcome."""
    return _EXPECTED_BOB[(source, int(alice_diag_bit))]


def sift_label(
    source: SourceChoice, alice_basis: BasisTag, alice_bit: int, bob_basis: BasisTag
) -> Optional[SubsetLabel]:
    # Bob's bit is deliberately not an input.
    if alice_basis is BasisTag.RECT:
        if bob_basis is BasisTag.RECT:
            return SubsetLabel.E1 if source is SourceChoice.PLAIN else SubsetLabel.E1P
        return None
    if bob_basis is expected_bob_basis(source, alice_bit):
        return _DIAG_LABEL[(source, bob_basis)]
    return None


def sift(record: PairRecord) -> Optional[SubsetLabel]:
    return sift_label(record.source, record.alice_basis, record.alice_bit, record.bob_basis)


def run_trial(config: SessionConfig, trial_index: int, draws: Optional[Sequence[float]] = None) -> PairRecord:
    """Simulate one pair with the scalar API.

    ``draws`` overrides the per-slot uniforms (layout in :mod:`entqkd.streams`);
    by default they are derived from ``(config.seed, trial_index)``.
    """
    u = list(draws) if draws is not None else streams.trial_uniforms(config.seed, trial_index)
    amps = config.amplitudes
    source, alice_basis = alice_choose(config.epsilon, u[streams.SLOT_SOURCE], u[streams.SLOT_ALICE_BASIS])
    pair = make_pair_state(amps, source)
    alice_bit, photon = measure_pair_first(pair, basis_for(alice_basis, amps), u[streams.SLOT_ALICE_MEASURE])
    photon, action = eve_intercept(
        photon, config.attack, amps, u[streams.SLOT_EVE_CHOICE], u[streams.SLOT_EVE_MEASURE]
    )
    bob_basis = bob_choose(config.epsilon, u[streams.SLOT_BOB_BASIS])
    bob_bit, _ = measure_qubit(photon, basis_for(bob_basis, amps), u[streams.SLOT_BOB_MEASURE])
    return PairRecord(
        index=trial_index,
        source=source,
        alice_basis=alice_basis,
        alice_bit=alice_bit,
        eve_action=action,
        bob_basis=bob_basis,
        bob_bit=bob_bit,
        subset=sift_label(source, alice_basis, alice_bit, bob_basis),
    )


_SOURCES = tuple(SourceChoice)
_BASES = tuple(BasisTag)
_EVE_TAGS = tuple(EveTag)


@dataclass
class RecordTable:
    """Column store of pair records, one numpy array per field.

    Enumerations are stored as small integer codes following the declaration
    order of :class:`SourceChoice`, :class:`BasisTag`, :class:`EveTag` and
    :class:`SubsetLabel`. ``eve_bit`` and ``subset`` use -1 for "absent".
    """

    index: np.ndarray
    source: np.ndarray
    alice_basis: np.ndarray
    alice_bit: np.ndarray
    eve_action: np.ndarray
    eve_bit: np.ndarray
    bob_basis: np.ndarray
    bob_bit: np.ndarray
    subset: np.ndarray

    COLUMNS = ("index", "source", "alice_basis", "alice_bit", "eve_action", "eve_bit", "bob_basis", "bob_bit", "subset")

    def __len__(self) -> int:
        return len(self.index)

    @classmethod
    def concat(cls, tables: Sequence["RecordTable"]) -> "RecordTable":
        return cls(**{c: np.concatenate([getattr(t, c) for t in tables]) for c in cls.COLUMNS})

    @classmethod
    def from_records(cls, records: Iterable[PairRecord]) -> "RecordTable":
        rows = [
            (
                r.index,
                SOURCE_CODES[r.source],
                BASIS_CODES[r.alice_basis],
                r.alice_bit,
                EVE_CODES[r.eve_action.tag],
                -1 if r.eve_action.observed_bit is None else r.eve_action.observed_bit,
                BASIS_CODES[r.bob_basis],
                r.bob_bit,
                -1 if r.subset is None else SUBSET_CODES[r.subset],
            )
            for r in records
        ]
        cols = list(zip(*rows)) if rows else [()] * len(cls.COLUMNS)
        return cls(
            **{
                name: np.array(col, dtype=np.int64 if name == "index" else np.int8)
                for name, col in zip(cls.COLUMNS, cols)
            }
        )

    def record(self, i: int) -> PairRecord:
        eve_tag = _EVE_TAGS[self.eve_action[i]]
        eve_bit = int(self.eve_bit[i])
        subset = int(self.subset[i])
        return PairRecord(
            index=int(self.index[i]),
            source=_SOURCES[self.source[i]],
            alice_basis=_BASES[self.alice_basis[i]],
            alice_bit=int(self.alice_bit[i]),
            eve_action=EveAction(eve_tag, None if eve_bit < 0 else eve_bit),
            bob_basis=_BASES[self.bob_basis[i]],
            bob_bit=int(self.bob_bit[i]),
            subset=None if subset < 0 else SUBSETS[subset],
        )

    def records(self) -> Iterator[PairRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def sifted_mask(self) -> np.ndarray:
        return self.subset >= 0

    def mismatch_mask(self) -> np.ndarray:
        return self.alice_bit != self.bob_bit

    def write_csv(self, fh) -> None:
        src = np.array([s.value for s in _SOURCES])[self.source]
        ab = np.array([b.value for b in _BASES])[self.alice_basis]
        eve = np.array([e.value for e in _EVE_TAGS])[self.eve_action]
        bb = np.array([b.value for b in _BASES])[self.bob_basis]
        sub = np.array([s.value for s in SUBSETS] + [""])[self.subset]  # -1 picks ""
        fh.write(",".join(CSV_COLUMNS) + "\n")
        fh.writelines(
            f"{i},{s},{a},{x},{e},{b},{y},{t}\n"
            for i, s, a, x, e, b, y, t in zip(
                self.index.tolist(), src.tolist(), ab.tolist(), self.alice_bit.tolist(),
                eve.tolist(), bb.tolist(), self.bob_bit.tolist(), sub.tolist(),
            )
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, fh) -> "RecordTable":
        """Parse the dump format. Eve's observed bits are not part of it and read back as -1."""
        src = {s.value: i for i, s in enumerate(_SOURCES)}
        bases = {b.value: i for i, b in enumerate(_BASES)}
        eve = {e.value: i for i, e in enumerate(_EVE_TAGS)}
        subsets = {s.value: i for i, s in enumerate(SUBSETS)}
        subsets[""] = -1
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected record header {reader.fieldnames!r}")
        rows = [
            (
                int(r["index"]), src[r["source"]], bases[r["alice_basis"]], int(r["alice_bit"]),
                eve[r["eve_action"]], -1, bases[r["bob_basis"]], int(r["bob_bit"]), subsets[r["subset"]],
            )
            for r in reader
        ]
        cols = list(zip(*rows)) if rows else [()] * len(cls.COLUMNS)
        return cls(
            **{
                name: np.array(col, dtype=np.int64 if name == "index" else np.int8)
                for name, col in zip(cls.COLUMNS, cols)
            }
        )


def _basis_arrays(codes: np.ndarray, alpha: float, beta: float):
    """Per-trial eigenstate coordinates for an array of basis codes."""
    conds = [codes == BASIS_CODES[tag] for tag in _BASES]
    comps = [basis_components(tag, alpha, beta) for tag in _BASES]
    return tuple(np.select(conds, [c[k] for c in comps]) for k in range(4))


def simulate_chunk(config: SessionConfig, indices: np.ndarray) -> RecordTable:
    """Vectorized counterpart of :func:`run_trial` over ``indices``."""
    seed = config.seed
    eps = config.epsilon
    amps = config.amplitudes
    alpha, beta = amps.alpha, amps.beta
    n = len(indices)

    def draw(slot):
        return streams.uniforms(seed, indices, slot)

    # Alice: source and basis
    primed = ~(draw(streams.SLOT_SOURCE) < 0.5)
    alice_code = np.where(
        draw(streams.SLOT_ALICE_BASIS) < 1.0 - eps, BASIS_CODES[BasisTag.RECT], BASIS_CODES[BasisTag.DIAG]
    ).astype(np.int8)
    hh = np.where(primed, beta, alpha)
    vv = np.where(primed, alpha, beta)
    hv = np.zeros(n)
    vh = np.zeros(n)

    # Alice measures photon A; photon B collapses
    e0h, e0v, e1h, e1v = _basis_arrays(alice_code, alpha, beta)
    r0h, r0v, w0 = _project_first_kernel(hh, hv, vh, vv, e0h, e0v)
    alice_bit = ~(draw(streams.SLOT_ALICE_MEASURE) < w0)
    r1h, r1v, w1 = _project_first_kernel(hh, hv, vh, vv, e1h, e1v)
    alice_bit &= w1 != 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        bh, bv = _normalize_kernel(
            np.where(alice_bit, r1h, r0h), np.where(alice_bit, r1v, r0v), np.where(alice_bit, w1, w0)
        )

    # Eve
    t1, t2, t3 = config.attack.thresholds()
    u_choice = draw(streams.SLOT_EVE_CHOICE)
    eve_code = np.select(
        [u_choice < t1, u_choice < t2, u_choice < t3],
        [EVE_CODES[EveTag.MEASURED_RECT], EVE_CODES[EveTag.MEASURED_PLUS], EVE_CODES[EveTag.MEASURED_MINUS]],
        EVE_CODES[EveTag.PASSIVE],
    ).astype(np.int8)
    eve_bit = np.full(n, -1, dtype=np.int8)
    measured = eve_code != EVE_CODES[EveTag.PASSIVE]
    if measured.any():
        eve_basis = np.full(n, BASIS_CODES[BasisTag.RECT], dtype=np.int8)
        for tag, btag in EVE_BASIS.items():
            eve_basis[eve_code == EVE_CODES[tag]] = BASIS_CODES[btag]
        f0h, f0v, f1h, f1v = _basis_arrays(eve_basis, alpha, beta)
        ebit = ~(draw(streams.SLOT_EVE_MEASURE) < _overlap_kernel(bh, bv, f0h, f0v))
        eve_bit[measured] = ebit[measured]
        bh = np.where(measured, np.where(ebit, f1h, f0h), bh)
        bv = np.where(measured, np.where(ebit, f1v, f0v), bv)

    # Bob
    u_bob = draw(streams.SLOT_BOB_BASIS)
    bob_code = np.select(
        [u_bob < 1.0 - eps, u_bob < 1.0 - eps / 2],
        [BASIS_CODES[BasisTag.RECT], BASIS_CODES[BasisTag.PLUS_THETA]],
        BASIS_CODES[BasisTag.MINUS_THETA],
    ).astype(np.int8)
    g0h, g0v, _, _ = _basis_arrays(bob_code, alpha, beta)
    bob_bit = ~(draw(streams.SLOT_BOB_MEASURE) < _overlap_kernel(bh, bv, g0h, g0v))

    source = primed.astype(np.int8)
    alice_bit = alice_bit.astype(np.int8)
    subset = _sift_arrays(source, alice_code, alice_bit, bob_code)
    return RecordTable(
        index=np.asarray(indices, dtype=np.int64),
        source=source,
        alice_basis=alice_code,
        alice_bit=alice_bit,
        eve_action=eve_code,
        eve_bit=eve_bit,
        bob_basis=bob_code,
        bob_bit=bob_bit.astype(np.int8),
        subset=subset,
    )


def _sift_arrays(source, alice_code, alice_bit, bob_code) -> np.ndarray:
    subset = np.full(len(source), -1, dtype=np.int8)
    rect = BASIS_CODES[BasisTag.RECT]
    both_rect = (alice_code == rect) & (bob_code == rect)
    subset[both_rect] = np.where(source[both_rect] == 0, SUBSET_CODES[SubsetLabel.E1], SUBSET_CODES[SubsetLabel.E1P])
    diag = alice_code == BASIS_CODES[BasisTag.DIAG]
    for (src, bit), expected in _EXPECTED_BOB.items():
        hit = diag & (source == SOURCE_CODES[src]) & (alice_bit == bit) & (bob_code == BASIS_CODES[expected])
        subset[hit] = SUBSET_CODES[_DIAG_LABEL[(src, expected)]]
    return subset


@dataclass
class SessionResult:
    config: SessionConfig
    table: RecordTable
    tallies: dict[SubsetLabel, int]

    @property
    def sifted_count(self) -> int:
        return sum(self.tallies.values())

    @property
    def sifted_fraction(self) -> float:
        return self.sifted_count / len(self.table)


def tally(table: RecordTable) -> dict[SubsetLabel, int]:
    counts = np.bincount(table.subset[table.subset >= 0].astype(np.int64), minlength=len(SUBSETS))
    return {label: int(counts[SUBSET_CODES[label]]) for label in SUBSETS}


def run_session(config: SessionConfig, chunk_size: int = 1 << 18, workers: int = 1) -> SessionResult:
    """Simulate all ``config.n_pairs`` trials.

    Output does not depend on ``chunk_size`` or ``workers``: every trial draws
    from its own counter-based substream and chunks are merged by index.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    bounds = [(lo, min(lo + chunk_size, config.n_pairs)) for lo in range(0, config.n_pairs, chunk_size)]

    def job(b):
        return simulate_chunk(config, np.arange(b[0], b[1], dtype=np.int64))

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, bounds))
    else:
        chunks = [job(b) for b in bounds]
    table = RecordTable.concat(chunks)
    return SessionResult(config, table, tally(table))


def session_from_records(config: SessionConfig, records: Iterable[PairRecord]) -> SessionResult:
    table = RecordTable.from_records(records)
    return SessionResult(config, table, tally(table))

