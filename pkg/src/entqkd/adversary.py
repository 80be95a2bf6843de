"""Biased intercept-resend eavesdropper.

Eve picks RECT, PLUS_THETA or MINUS_THETA with probabilities ``p1, p2, p3``
for each in-flight photon, measures it, and forwards the eigenstate she
observed. With the remaining probability she leaves the photon alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .quantum_core import Amplitudes, BasisTag, QubitState, basis_for, measure_qubit


class EveTag(Enum):
    MEASURED_RECT = "measured_rect"
    MEASURED_PLUS = "measured_plus"
    MEASURED_MINUS = "measured_minus"
    PASSIVE = "passive"


EVE_CODES = {tag: code for code, tag in enumerate(EveTag)}

EVE_BASIS = {
    EveTag.MEASURED_RECT: BasisTag.RECT,
    EveTag.MEASURED_PLUS: BasisTag.PLUS_THETA,
    EveTag.MEASURED_MINUS: BasisTag.MINUS_THETA,
}


@dataclass(frozen=True)
class AttackPolicy:
    p1: float = 0.0
    p2: float = 0.0
    p3: float = 0.0

    def __post_init__(self):
        for name in ("p1", "p2", "p3"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"attack.{name} must lie in [0, 1], got {p}")
        if self.p1 + self.p2 + self.p3 > 1.0 + 1e-12:
            raise ValueError(f"attack probabilities sum to {self.p1 + self.p2 + self.p3} > 1")

    @property
    def passive(self) -> float:
        return max(0.0, 1.0 - self.p1 - self.p2 - self.p3)

    def thresholds(self) -> tuple[float, float, float]:
        """Cumulative cut points used to pick Eve's action from one uniform."""
        t1 = self.p1
        t2 = t1 + self.p2
        return t1, t2, t2 + self.p3

    def mirrored(self) -> "AttackPolicy":
        return AttackPolicy(self.p1, self.p3, self.p2)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.p1, self.p2, self.p3)


NO_ATTACK = AttackPolicy()


@dataclass(frozen=True)
class EveAction:
    tag: EveTag
    observed_bit: Optional[int] = None

    def __post_init__(self):
        if (self.tag is EveTag.PASSIVE) != (self.observed_bit is None):
            raise ValueError("observed_bit must be set exactly when Eve measured")


def choose_action(policy: AttackPolicy, u: float) -> EveTag:
    t1, t2, t3 = policy.thresholds()
    if u < t1:
        return EveTag.MEASURED_RECT
    if u < t2:
        return EveTag.MEASURED_PLUS
    if u < t3:
        return EveTag.MEASURED_MINUS
    return EveTag.PASSIVE


def eve_intercept(
    photon: QubitState,
    policy: AttackPolicy,
    amps: Amplitudes,
    u_choice: float,
    u_measure: float,
) -> tuple[QubitState, EveAction]:
    """Apply one intercept-resend step to ``photon``.

    ``u_choice`` selects the action, ``u_measure`` drives the Born-rule draw
    when Eve measures.
    """
    tag = choose_action(policy, u_choice)
    if tag is EveTag.PASSIVE:
        return photon, EveAction(tag)
    bit, resent = measure_qubit(photon, basis_for(EVE_BASIS[tag], amps), u_measure)
    return resent, EveAction(tag, bit)
