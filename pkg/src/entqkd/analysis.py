"""Per-subset error estimation and the closed-form predictions it is checked against."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Union

import numpy as np

from .adversary import AttackPolicy
from .protocol_session import (
    SUBSET_CODES,
    SUBSETS,
    PairRecord,
    RecordTable,
    SessionResult,
    SubsetLabel,
)
from .quantum_core import Amplitudes


class InsufficientSamples(ValueError):
    def __init__(self, subset: SubsetLabel, available: int, required: int):
        self.subset = subset
        self.available = available
        self.required = required
        super().__init__(
            f"INSUFFICIENT_SAMPLES({subset.name}): {available} sifted records, {required} needed; "
            "increase epsilon or n_pairs"
        )


class Infeasible(ValueError):
    pass


class Decision(Enum):
    ACCEPT = "accept"
    ABORT = "abort"


@dataclass(frozen=True)
class SubsetEstimate:
    population: int
    m: int
    r: int

    @property
    def e(self) -> float:
        return self.r / self.m


@dataclass
class ErrorReport:
    subsets: dict[SubsetLabel, SubsetEstimate]
    average_error: float
    pooled_mismatch: float
    refined_decision: Decision
    naive_decision: Decision
    e_max: float
    epsilon: float
    remaining_key_length: int
    test_indices: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0, dtype=np.int64))

    def rate(self, label: SubsetLabel) -> float:
        return self.subsets[label].e

    def rates(self) -> dict[SubsetLabel, float]:
        return {label: est.e for label, est in self.subsets.items()}

    def to_dict(self) -> dict:
        """JSON-ready view; field names are part of the report format."""
        return {
            "epsilon": self.epsilon,
            "e_max": self.e_max,
            "subsets": {
                label.value: {"population": est.population, "m": est.m, "r": est.r, "e": est.e}
                for label, est in self.subsets.items()
            },
            "average_error": self.average_error,
            "pooled_mismatch": self.pooled_mismatch,
            "refined_decision": self.refined_decision.value,
            "naive_decision": self.naive_decision.value,
            "remaining_key_length": self.remaining_key_length,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


@dataclass(frozen=True)
class PredictedRates:
    e1: float
    e1p: float
    e2: float
    e2p: float
    e3: float
    e3p: float
    average: float | None = None

    def rate(self, label: SubsetLabel) -> float:
        return getattr(self, label.value)

    def as_dict(self) -> dict[SubsetLabel, float]:
        return {label: self.rate(label) for label in SUBSETS}


def _as_table(records: Union[RecordTable, SessionResult, Iterable[PairRecord]]) -> RecordTable:
    if isinstance(records, SessionResult):
        return records.table
    if isinstance(records, RecordTable):
        return records
    return RecordTable.from_records(records)


def weighted_average(rates: Mapping[SubsetLabel, float], epsilon: float) -> float:
    """Average error over sifted data, each subset weighted by its expected population."""
    rect = (1.0 - epsilon) ** 2
    diag = epsilon * epsilon / 4
    num = rect * (rates[SubsetLabel.E1] + rates[SubsetLabel.E1P]) + diag * (
        rates[SubsetLabel.E2] + rates[SubsetLabel.E3] + rates[SubsetLabel.E2P] + rates[SubsetLabel.E3P]
    )
    return num / (2.0 * (rect + epsilon * epsilon / 2))


def estimate_errors(
    records: Union[RecordTable, SessionResult, Iterable[PairRecord]],
    m_samples: Union[Mapping[SubsetLabel, int], tuple[int, ...]],
    e_max: float,
    rng: np.random.Generator,
    epsilon: float,
) -> ErrorReport:
    """Publicly compare ``m_i`` random sifted bits per subset and decide.

    Sampled records are drawn without replacement and removed from the key.
    The refined decision accepts only if every subset estimate is below
    ``e_max``; the naive one compares the weighted average instead.
    """
    table = _as_table(records)
    if not isinstance(m_samples, Mapping):
        m_samples = dict(zip(SUBSETS, m_samples))
    mismatch = table.mismatch_mask()
    subsets: dict[SubsetLabel, SubsetEstimate] = {}
    picked = []
    for label in SUBSETS:
        members = np.flatnonzero(table.subset == SUBSET_CODES[label])
        m = int(m_samples[label])
        if len(members) < m:
            raise InsufficientSamples(label, len(members), m)
        chosen = np.sort(rng.choice(members, size=m, replace=False))
        picked.append(chosen)
        subsets[label] = SubsetEstimate(len(members), m, int(mismatch[chosen].sum()))

    rates = {label: est.e for label, est in subsets.items()}
    average = weighted_average(rates, epsilon)
    sifted = table.sifted_mask()
    n_sifted = int(sifted.sum())
    pooled = float(mismatch[sifted].sum()) / n_sifted if n_sifted else 0.0
    test_rows = np.sort(np.concatenate(picked))
    refined = Decision.ACCEPT if all(e < e_max for e in rates.values()) else Decision.ABORT
    naive = Decision.ACCEPT if average < e_max else Decision.ABORT
    return ErrorReport(
        subsets=subsets,
        average_error=average,
        pooled_mismatch=pooled,
        refined_decision=refined,
        naive_decision=naive,
        e_max=e_max,
        epsilon=epsilon,
        remaining_key_length=n_sifted - len(test_rows),
        test_indices=test_rows,
    )


def key_rows(table: RecordTable, report: ErrorReport) -> np.ndarray:
    """Row positions of sifted records left for the key after test sampling."""
    keep = table.sifted_mask()
    keep[report.test_indices] = False
    return np.flatnonzero(keep)


def predict_rates(amps: Amplitudes, policy: AttackPolicy) -> PredictedRates:
    a2b2 = amps.alpha_sq * amps.beta_sq
    skew = (amps.alpha_sq - amps.beta_sq) ** 2
    p1, p2, p3 = policy.as_tuple()
    e1 = 2 * a2b2 * (p2 + p3)
    e2 = 2 * a2b2 * p1 + 8 * a2b2 * skew * p3
    e3 = 2 * a2b2 * p1 + 8 * a2b2 * skew * p2
    return PredictedRates(e1=e1, e1p=e1, e2=e2, e2p=e3, e3=e3, e3p=e2)


def predict_average(amps: Amplitudes, policy: AttackPolicy, epsilon: float) -> float:
    _check_epsilon(epsilon)
    return weighted_average(predict_rates(amps, policy).as_dict(), epsilon)


def predict_all(amps: Amplitudes, policy: AttackPolicy, epsilon: float) -> PredictedRates:
    rates = predict_rates(amps, policy)
    return PredictedRates(**{k.value: v for k, v in rates.as_dict().items()}, average=predict_average(amps, policy, epsilon))


def epsilon_bound(n_pairs: int, m_required: int) -> float:
    """``2 sqrt(2 m / N)``, without the feasibility check."""
    return 2.0 * math.sqrt(2.0 * m_required / n_pairs)


def min_epsilon(n_pairs: int, m_required: int) -> float:
    """Smallest epsilon whose expected diagonal-subset population N eps^2 / 8 reaches ``m_required``."""
    if n_pairs < 1 or m_required < 1:
        raise ValueError("n_pairs and m_required must be >= 1")
    bound = epsilon_bound(n_pairs, m_required)
    if bound > 1.0:
        raise Infeasible(f"INFEASIBLE: need epsilon >= {bound:.6g} > 1 for N={n_pairs}, m={m_required}")
    return bound


def sifted_fraction(epsilon: float) -> float:
    _check_epsilon(epsilon)
    return (1.0 - epsilon) ** 2 + epsilon * epsilon / 2


def concentration_efficiency_bound(amps: Amplitudes) -> float:
    """Efficiency ceiling of concentrating to EPR pairs first: ``2 min(alpha^2, beta^2)``."""
    return 2.0 * min(amps.alpha_sq, amps.beta_sq)


def binomial_z(observed: float, expected: float, n: int) -> float:
    """z-score of a binomial proportion; 0 or inf when the expected variance is zero."""
    var = expected * (1.0 - expected) / n
    if var <= 0.0:
        return 0.0 if observed == expected else math.inf
    return (observed - expected) / math.sqrt(var)


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must satisfy 0 < epsilon <= 1, got {epsilon}")
