"""Independent moment-form derivations of the four message updates.

These recompute each update through the product-then-marginalize route
(explicit intermediate covariance decompositions, dense numpy inverses)
instead of the information-form recursions used by the implementation, so
the two code paths share no algebra or solver.
"""

import numpy as np

from cgfb import CanonicalGaussian, GhmmParams


def product_moments(*factors: CanonicalGaussian) -> tuple[np.ndarray, np.ndarray]:
    lam = sum(g.info_matrix for g in factors)
    eta = sum(g.info_vector for g in factors)
    cov = np.linalg.inv(lam)
    return cov @ eta, cov


def forward_oracle(params: GhmmParams, fwd: CanonicalGaussian,
                   up: CanonicalGaussian) -> tuple[np.ndarray, np.ndarray]:
    """Propagated moments of the forward product belief, back in info form."""
    mu, P = product_moments(fwd, up)
    mean = params.A @ mu
    cov = params.Q + params.A @ P @ params.A.T
    lam = np.linalg.inv(cov)
    return 0.5 * (lam + lam.T), lam @ mean


def backward_oracle(params: GhmmParams, bwd: CanonicalGaussian,
                    up: CanonicalGaussian) -> tuple[np.ndarray, np.ndarray]:
    """Three-factor covariance decomposition of the backward integral."""
    Qinv = np.linalg.inv(params.Q)
    lam_b, eta_b = bwd.info_matrix, bwd.info_vector
    lam_u, eta_u = up.info_matrix, up.info_vector
    sigma1 = np.linalg.inv(Qinv + lam_b + lam_u)
    sigma2 = Qinv @ sigma1 @ lam_b
    sigma3 = Qinv @ sigma1 @ lam_u
    mu_b = np.linalg.solve(lam_b, eta_b)
    mu_u = np.linalg.solve(lam_u, eta_u)
    lam = params.A.T @ (sigma2 + sigma3) @ params.A
    eta = params.A.T @ (sigma2 @ mu_b + sigma3 @ mu_u)
    return 0.5 * (lam + lam.T), eta


def downward_oracle(params: GhmmParams, fwd: CanonicalGaussian,
                    bwd: CanonicalGaussian) -> tuple[np.ndarray, np.ndarray]:
    """Observation-space moments of the forward-backward belief."""
    mu, P = product_moments(fwd, bwd)
    mean = params.C @ mu
    cov = params.R + params.C @ P @ params.C.T
    lam = np.linalg.inv(cov)
    return 0.5 * (lam + lam.T), lam @ mean


def upward_oracle(params: GhmmParams, mu_hat: np.ndarray, P_hat: np.ndarray,
                  down: CanonicalGaussian) -> tuple[np.ndarray, np.ndarray]:
    """Three-factor decomposition of the observation-ratio integral."""
    Rinv = np.linalg.inv(params.R)
    Pinv = np.linalg.inv(P_hat)
    lam_d, eta_d = down.info_matrix, down.info_vector
    sigma1 = np.linalg.inv(Rinv + Pinv - lam_d)
    sigma2 = Rinv @ sigma1 @ Pinv
    sigma3 = -Rinv @ sigma1 @ lam_d
    mu_d = np.linalg.solve(lam_d, eta_d)
    lam = params.C.T @ (sigma2 + sigma3) @ params.C
    eta = params.C.T @ (sigma2 @ mu_hat + sigma3 @ mu_d)
    return 0.5 * (lam + lam.T), eta


def rel_dev(actual: np.ndarray, reference: np.ndarray) -> float:
    """Max absolute deviation normalized by the reference's magnitude."""
    scale = max(float(np.abs(reference).max()), 1e-12)
    return float(np.abs(np.asarray(actual) - np.asarray(reference)).max()) / scale
