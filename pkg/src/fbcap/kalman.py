"""Encoder and decoder Kalman filters and the stationary Riccati equation.

The encoder estimates the channel state from past inputs and outputs; its
error covariance obeys

    Psi_i       = H Sigma_i H^T + V
    K_{p,i}     = (F Sigma_i H^T + L) Psi_i^{-1}
    Sigma_{i+1} = F Sigma_i F^T + W - K_{p,i} Psi_i K_{p,i}^T

The decoder only sees outputs. Under the linear policy
x_i = Gamma_i SigmaHat_i^+ (shat_i - shathat_i) + m_i its error covariance
SigmaHat_i follows a second Riccati recursion, computed by
:func:`decoder_step`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fbcap import matops
from fbcap.detect import detectable_pbh
from fbcap.errors import (
    NotDetectable,
    OrthogonalityViolated,
    RiccatiDivergence,
    SingularInnovation,
    SingularOutputCovariance,
)

INNOVATION_MIN_EIG = 1e-10
DECODER_PINV_RTOL = 1e-9


@dataclass(frozen=True)
class EncoderStep:
    Sigma_next: np.ndarray
    Kp: np.ndarray
    Psi: np.ndarray


@dataclass(frozen=True)
class RiccatiSolution:
    Sigma: np.ndarray
    Kp: np.ndarray
    Psi: np.ndarray
    iterations: int
    residual: float
    closed_loop_radius: float


@dataclass(frozen=True)
class DecoderStep:
    SigmaHat_next: np.ndarray
    Ky: np.ndarray
    PsiY: np.ndarray


def _checked_inverse(S, exc, what):
    S = matops.sym(S)
    if S.shape[0] and matops.min_eig_sym(S) <= INNOVATION_MIN_EIG:
        raise exc("%s is numerically singular" % what)
    return np.linalg.inv(S)


def encoder_step(model, Sigma) -> EncoderStep:
    """One exact update of the encoder error covariance."""
    F, H = model.F, model.H
    Sigma = np.asarray(Sigma, dtype=float)
    Psi = matops.sym(H @ Sigma @ H.T + model.V)
    Kp = (F @ Sigma @ H.T + model.L) @ _checked_inverse(Psi, SingularInnovation, "Psi")
    nxt = matops.sym(F @ Sigma @ F.T + model.W - Kp @ Psi @ Kp.T)
    return EncoderStep(nxt, Kp, Psi)


def default_riccati_start(model) -> np.ndarray:
    rho = matops.spectral_radius(model.F)
    c = 10.0 * (1.0 + np.linalg.norm(model.W)) / (max(0.0, 1.0 - rho) ** 2 + 0.01)
    return c * np.eye(model.n)


def solve_dare(model, Sigma_init=None, tol=1e-11, max_iter=100_000) -> RiccatiSolution:
    """Maximal solution of the filtering Riccati equation by fixed-point iteration.

    The default start is a large multiple of the identity; the iterates
    reach the stabilizing solution whenever (F, H) is detectable.
    """
    if not detectable_pbh(model.F, model.H).detectable:
        raise NotDetectable("(F, H) is not detectable")
    S = default_riccati_start(model) if Sigma_init is None else np.array(Sigma_init, dtype=float)
    change = np.inf
    for k in range(1, max_iter + 1):
        nxt = encoder_step(model, S).Sigma_next
        change = float(np.linalg.norm(nxt - S))
        S = nxt
        if not np.isfinite(change) or np.abs(S).max(initial=0.0) > 1e12:
            raise RiccatiDivergence("Riccati iterates diverged after %d steps" % k)
        if change < tol:
            break
    else:
        raise RiccatiDivergence(
            "no convergence in %d iterations (last change %.3g)" % (max_iter, change)
        )
    last = encoder_step(model, S)
    rho = matops.spectral_radius(model.F - last.Kp @ model.H)
    return RiccatiSolution(S, last.Kp, last.Psi, k, change, rho)


def riccati_residual(model, Sigma) -> float:
    return float(np.linalg.norm(Sigma - encoder_step(model, Sigma).Sigma_next))


def decoder_step_gain(model, Kp, Psi, gain, M, SigmaHat) -> DecoderStep:
    """Decoder update for the policy x = gain (shat - shathat) + m, m ~ N(0, M).

    ``gain`` plays the role of Gamma SigmaHat^+; keeping it separate lets the
    caller freeze the control law while SigmaHat evolves.
    """
    F, G, H, J = model.F, model.G, model.H, model.J
    A = F + G @ gain
    C = H + J @ gain
    PsiY = matops.sym(C @ SigmaHat @ C.T + J @ M @ J.T + Psi)
    KyPsiY = A @ SigmaHat @ C.T + G @ M @ J.T + Kp @ Psi
    Ky = KyPsiY @ _checked_inverse(PsiY, SingularOutputCovariance, "PsiY")
    nxt = A @ SigmaHat @ A.T + G @ M @ G.T + Kp @ Psi @ Kp.T - Ky @ PsiY @ Ky.T
    return DecoderStep(matops.sym(nxt), Ky, PsiY)


def decoder_step(model, enc, Gamma, M, SigmaHat) -> DecoderStep:
    """Decoder Riccati update driven by the encoder's (Kp, Psi) from ``enc``.

    Gamma must vanish on the null space of SigmaHat, i.e.
    Gamma (I - SigmaHat SigmaHat^+) = 0.
    """
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    SigmaHat = np.asarray(SigmaHat, dtype=float)
    Sp = matops.pinv(SigmaHat, DECODER_PINV_RTOL)
    leak = Gamma @ (np.eye(model.n) - SigmaHat @ Sp)
    if np.abs(leak).max(initial=0.0) > 1e-8 * max(1.0, np.abs(Gamma).max(initial=0.0)):
        raise OrthogonalityViolated("Gamma has a component outside range(SigmaHat)")
    return decoder_step_gain(model, enc.Kp, enc.Psi, Gamma @ Sp, np.asarray(M, dtype=float), SigmaHat)
