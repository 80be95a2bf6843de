"""Independent reference computations used by the tests.

Nothing here calls the package's measurement code: states are plain numpy
vectors, projections use explicit Kronecker-product projectors, and error
rates come from enumerating every branch of Eve's intercept-resend step.
"""

import numpy as np

S = np.sqrt(0.5)


def basis_vectors(tag, alpha, beta):
    return {
        "rect": (np.array([1.0, 0.0]), np.array([0.0, 1.0])),
        "diag": (np.array([S, S]), np.array([S, -S])),
        "plus_theta": (np.array([alpha, beta]), np.array([beta, -alpha])),
        "minus_theta": (np.array([beta, alpha]), np.array([alpha, -beta])),
    }[tag]


def pair_vector(alpha, beta, primed):
    a, b = (beta, alpha) if primed else (alpha, beta)
    return np.array([a, 0.0, 0.0, b])


def project_first(pair, eigen):
    """Project qubit A onto ``eigen``; return (probability, normalized B state or None)."""
    proj = np.kron(np.outer(eigen, eigen), np.eye(2))
    post = proj @ pair
    prob = float(post @ post)
    if prob == 0.0:
        return 0.0, None
    post = post / np.sqrt(prob)
    # B state: contract A with the eigenvector
    b = np.array([eigen @ post[[0, 2]], eigen @ post[[1, 3]]])
    return prob, b


def born(state, eigen):
    return float(np.dot(state, eigen) ** 2)


# (source primed?, alice bit, bob basis, expected bob bit) for the diagonal subsets
DIAG_CASES = {
    "e2": (False, 0, "plus_theta"),
    "e3": (False, 1, "minus_theta"),
    "e2p": (True, 0, "minus_theta"),
    "e3p": (True, 1, "plus_theta"),
}


def _mismatch_given_b(b_state, expected_bit, bob_basis, alpha, beta, policy):
    """P(Bob's bit != expected_bit) after Eve acts on B, summed over Eve's branches."""
    p1, p2, p3 = policy
    bob = basis_vectors(bob_basis, alpha, beta)
    wrong = bob[1 - expected_bit]
    total = (1 - p1 - p2 - p3) * born(b_state, wrong)
    for p, eve_tag in ((p1, "rect"), (p2, "plus_theta"), (p3, "minus_theta")):
        if p == 0:
            continue
        for eigen in basis_vectors(eve_tag, alpha, beta):
            total += p * born(b_state, eigen) * born(eigen, wrong)
    return total


def enumerate_rates(alpha_sq, policy):
    """Exact conditional mismatch probability for each subset."""
    alpha, beta = np.sqrt(alpha_sq), np.sqrt(1 - alpha_sq)
    rates = {}
    for label, primed in (("e1", False), ("e1p", True)):
        pair = pair_vector(alpha, beta, primed)
        err = 0.0
        for bit, eigen in enumerate(basis_vectors("rect", alpha, beta)):
            prob, b = project_first(pair, eigen)
            if prob > 0:
                err += prob * _mismatch_given_b(b, bit, "rect", alpha, beta, policy)
        rates[label] = err
    for label, (primed, bit, bob_basis) in DIAG_CASES.items():
        pair = pair_vector(alpha, beta, primed)
        _, b = project_first(pair, basis_vectors("diag", alpha, beta)[bit])
        rates[label] = _mismatch_given_b(b, bit, bob_basis, alpha, beta, policy)
    return rates


def pooled_error(alpha_sq, policy, epsilon):
    """Mismatch probability of a uniformly drawn sifted record, by enumeration."""
    rates = enumerate_rates(alpha_sq, policy)
    # populations per trial: rect subsets (1-eps)^2 / 2 each; diagonal ones eps^2 / 8 each
    weights = {"e1": (1 - epsilon) ** 2 / 2, "e1p": (1 - epsilon) ** 2 / 2}
    weights.update({k: epsilon**2 / 8 for k in DIAG_CASES})
    total = sum(weights.values())
    return sum(weights[k] * rates[k] for k in weights) / total


def sifted_probability_by_enumeration(epsilon):
    """Sum of selection probabilities over every (source, A basis, A bit, B basis) that sifts."""
    # A DIAG outcome is 1/2 for either source (checked separately in the core tests).
    rect = (1 - epsilon) * (1 - epsilon)
    diag = 0.0
    for _source in (0, 1):
        for _bit in (0, 1):
            diag += 0.5 * epsilon * 0.5 * (epsilon / 2)
    return rect + diag


def binomial_band(n, p, k=4.0):
    sigma = np.sqrt(n * p * (1 - p))
    return n * p - k * sigma, n * p + k * sigma
