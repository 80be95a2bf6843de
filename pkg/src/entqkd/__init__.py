"""Simulator and analysis toolkit for entanglement QKD with biased basis choice."""

from .adversary import AttackPolicy, EveAction, EveTag, eve_intercept
from .analysis import (
    Decision,
    ErrorReport,
    Infeasible,
    InsufficientSamples,
    PredictedRates,
    concentration_efficiency_bound,
    estimate_errors,
    min_epsilon,
    predict_average,
    predict_rates,
    sifted_fraction,
)
from .postprocessing import FinalKey, KeyTooShort, LengthMismatch, SiftedKey, privacy_amplify, reconcile
from .protocol_session import (
    PairRecord,
    RecordTable,
    SessionConfig,
    SessionResult,
    SubsetLabel,
    run_session,
    run_trial,
    sift,
)
from .quantum_core import (
    Amplitudes,
    BasisTag,
    MeasBasis,
    PairState,
    QubitState,
    SourceChoice,
    basis_for,
    make_pair_state,
    measure_pair_first,
    measure_qubit,
    overlap_prob,
)

__all__ = [
    "Amplitudes",
    "AttackPolicy",
    "BasisTag",
    "Decision",
    "ErrorReport",
    "EveAction",
    "EveTag",
    "FinalKey",
    "Infeasible",
    "InsufficientSamples",
    "KeyTooShort",
    "LengthMismatch",
    "MeasBasis",
    "PairRecord",
    "PairState",
    "PredictedRates",
    "QubitState",
    "RecordTable",
    "SessionConfig",
    "SessionResult",
    "SiftedKey",
    "SourceChoice",
    "SubsetLabel",
    "basis_for",
    "concentration_efficiency_bound",
    "estimate_errors",
    "eve_intercept",
    "make_pair_state",
    "measure_pair_first",
    "measure_qubit",
    "min_epsilon",
    "overlap_prob",
    "predict_average",
    "predict_rates",
    "privacy_amplify",
    "reconcile",
    "run_session",
    "run_trial",
    "sift",
    "sifted_fraction",
]

__version__ = "0.1.0"
