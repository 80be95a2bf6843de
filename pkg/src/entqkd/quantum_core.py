"""Real-amplitude one- and two-qubit statevector math.

States live in the {H, V} polarization basis. Pair states are ordered
{HH, HV, VH, VV} with qubit A (Alice) first. All amplitudes are real, so
nothing here touches complex arithmetic.

The private ``_kernel`` helpers only use ``+``, ``*``, ``/`` and ``sqrt`` and
therefore accept Python floats and numpy arrays alike. The batch engine in
:mod:`entqkd.protocol_session` calls them on arrays and gets results that are
bit-identical to the scalar API below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

NORM_TOL = 1e-12


class BasisTag(Enum):
    RECT = "rect"
    DIAG = "diag"
    PLUS_THETA = "plus_theta"
    MINUS_THETA = "minus_theta"


class SourceChoice(Enum):
    PLAIN = "plain"
    PRIMED = "primed"


BASIS_CODES = {tag: code for code, tag in enumerate(BasisTag)}
SOURCE_CODES = {SourceChoice.PLAIN: 0, SourceChoice.PRIMED: 1}


@dataclass(frozen=True)
class Amplitudes:
    """Schmidt pair of the source state ``alpha|HH> + beta|VV>``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError(f"amplitudes must lie in [0, 1], got ({self.alpha}, {self.beta})")
        norm = self.alpha * self.alpha + self.beta * self.beta
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"alpha^2 + beta^2 = {norm!r}, expected 1")

    @classmethod
    def from_alpha_sq(cls, alpha_sq: float) -> "Amplitudes":
        if not 0.0 <= alpha_sq <= 1.0:
            raise ValueError(f"alpha_sq must lie in [0, 1], got {alpha_sq}")
        return cls(math.sqrt(alpha_sq), math.sqrt(1.0 - alpha_sq))

    @property
    def alpha_sq(self) -> float:
        return self.alpha * self.alpha

    @property
    def beta_sq(self) -> float:
        return self.beta * self.beta

    def swapped(self) -> "Amplitudes":
        return Amplitudes(self.beta, self.alpha)


@dataclass(frozen=True)
class QubitState:
    c_h: float
    c_v: float

    def __post_init__(self):
        norm = self.c_h * self.c_h + self.c_v * self.c_v
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"qubit state not normalized: |psi|^2 = {norm!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.c_h, self.c_v])


H = QubitState(1.0, 0.0)
V = QubitState(0.0, 1.0)


@dataclass(frozen=True)
class PairState:
    hh: float
    hv: float
    vh: float
    vv: float

    def __post_init__(self):
        norm = self.hh * self.hh + self.hv * self.hv + self.vh * self.vh + self.vv * self.vv
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"pair state not normalized: |psi|^2 = {norm!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.hh, self.hv, self.vh, self.vv])


@dataclass(frozen=True)
class MeasBasis:
    tag: BasisTag
    bit0_state: QubitState
    bit1_state: QubitState

    def eigenstate(self, bit: int) -> QubitState:
        return self.bit1_state if bit else self.bit0_state


def basis_components(tag: BasisTag, alpha, beta):
    """Eigenstate coordinates ``(b0h, b0v, b1h, b1v)`` for a basis.

    ``alpha`` and ``beta`` may be floats or arrays. RECT and DIAG ignore them.
    """
    if tag is BasisTag.RECT:
        return 1.0, 0.0, 0.0, 1.0
    if tag is BasisTag.DIAG:
        s = math.sqrt(0.5)
        return s, s, s, -s
    if tag is BasisTag.PLUS_THETA:
        return alpha, beta, beta, -alpha
    if tag is BasisTag.MINUS_THETA:
        return beta, alpha, alpha, -beta
    raise ValueError(f"unknown basis tag {tag!r}")


def basis_for(tag: BasisTag, amps: Amplitudes) -> MeasBasis:
    b0h, b0v, b1h, b1v = basis_components(tag, amps.alpha, amps.beta)
    return MeasBasis(tag, QubitState(b0h, b0v), QubitState(b1h, b1v))


def make_pair_state(amps: Amplitudes, source: SourceChoice) -> PairState:
    """Source state; PRIMED applies sigma_x on both photons, i.e. swaps alpha and beta."""
    if source is SourceChoice.PLAIN:
        return PairState(amps.alpha, 0.0, 0.0, amps.beta)
    return PairState(amps.beta, 0.0, 0.0, amps.alpha)


def _overlap_kernel(ah, av, bh, bv):
    dot = ah * bh + av * bv
    return dot * dot


def _project_first_kernel(hh, hv, vh, vv, eh, ev):
    """Unnormalized qubit-B state after projecting qubit A on ``(eh, ev)``, and its weight."""
    rh = eh * hh + ev * vh
    rv = eh * hv + ev * vv
    return rh, rv, rh * rh + rv * rv


def _normalize_kernel(rh, rv, weight):
    norm = np.sqrt(weight)
    return rh / norm, rv / norm


def overlap_prob(a: QubitState, b: QubitState) -> float:
    """Born probability |<a|b>|^2."""
    return min(1.0, _overlap_kernel(a.c_h, a.c_v, b.c_h, b.c_v))


def measure_qubit(state: QubitState, basis: MeasBasis, u: float) -> tuple[int, QubitState]:
    """Projective measurement driven by one uniform ``u`` in [0, 1).

    Outcome 0 happens iff ``u < |<bit0|state>|^2``; the collapsed state is the
    eigenstate that was hit.
    """
    p0 = _overlap_kernel(state.c_h, state.c_v, basis.bit0_state.c_h, basis.bit0_state.c_v)
    bit = 0 if u < p0 else 1
    return bit, basis.eigenstate(bit)


def measure_pair_first(pair: PairState, basis: MeasBasis, u: float) -> tuple[int, QubitState]:
    """Measure qubit A of ``pair``; return the bit and qubit B's normalized state."""
    e0, e1 = basis.bit0_state, basis.bit1_state
    r0h, r0v, p0 = _project_first_kernel(pair.hh, pair.hv, pair.vh, pair.vv, e0.c_h, e0.c_v)
    bit = 0 if u < p0 else 1
    if bit == 0:
        rh, rv, w = r0h, r0v, p0
    else:
        rh, rv, w = _project_first_kernel(pair.hh, pair.hv, pair.vh, pair.vv, e1.c_h, e1.c_v)
        if w == 0.0:
            # p0 rounded just below 1 while the bit-1 branch is empty
            bit, rh, rv, w = 0, r0h, r0v, p0
    ch, cv = _normalize_kernel(rh, rv, w)
    return bit, QubitState(float(ch), float(cv))
