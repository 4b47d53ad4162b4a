"""Monte Carlo simulation of a channel driven by a linear feedback policy.

The input is x_i = K (shat_i - shathat_i) + m_i with a fixed gain
K = Gamma SigmaHat^+ and m_i ~ N(0, M).  Both filters run online: the encoder
tracks the state from inputs and outputs, the decoder tracks the encoder's
estimate from outputs alone.

Randomness comes from one counter-based Philox stream per trial, spawned
from a single seed, with Gaussians drawn by Box-Muller.  Trials are advanced
together as a batch, so results are bit-identical for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fbcap import matops
from fbcap.errors import DimensionMismatch, OutOfRange, UserInputError
from fbcap.kalman import decoder_step, decoder_step_gain, encoder_step

MAX_LAG = 10
PSD_TOL = 1e-9


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    trials: int
    Gamma: np.ndarray
    M: np.ndarray
    SigmaHat: np.ndarray  # the policy's SigmaHat, used in Gamma SigmaHat^+
    seed: int = 0

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise OutOfRange("horizon must be a positive integer")
        if int(self.trials) != self.trials or self.trials < 1:
            raise OutOfRange("trials must be a positive integer")
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        if M.size and matops.min_eig_sym(M) < -PSD_TOL:
            raise UserInputError("M must be positive semidefinite")

    @classmethod
    def from_solution(cls, sol, horizon, trials, seed=0) -> "SimConfig":
        return cls(int(horizon), int(trials), sol.Gamma, sol.M, sol.SigmaHat, int(seed))


@dataclass(frozen=True)
class SimResult:
    empirical_power: float
    empirical_power_se: float  # standard error over trials
    analytic_power: float  # trace of the deterministic input covariance, averaged
    analytic_rate_nats: float
    empirical_rate_nats: float
    empirical_innovation_cov: np.ndarray  # decoder innovations y - H shathat
    encoder_innovation_cov: np.ndarray
    whiteness_maxlag_corr: float
    horizon: int
    trials: int


def box_muller(u1, u2):
    """Two independent standard normals from two uniforms on (0, 1]."""
    r = np.sqrt(-2.0 * np.log(u1))
    return r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)


def _normals(gen: np.random.Generator, shape) -> np.ndarray:
    count = int(np.prod(shape))
    half = (count + 1) // 2
    u = 1.0 - gen.random((2, half))  # (0, 1]
    z = np.concatenate(box_muller(u[0], u[1]))[:count]
    return z.reshape(shape)


def trial_streams(seed: int, trials: int):
    children = np.random.SeedSequence(int(seed)).spawn(int(trials))
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def _check_policy(model, Gamma, M):
    n, m, _ = model.dims
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if Gamma.size == 0:
        Gamma = Gamma.reshape(m, n)
    if M.size == 0:
        M = M.reshape(m, m)
    if Gamma.shape != (m, n):
        raise DimensionMismatch("Gamma has shape %s, expected %s" % (Gamma.shape, (m, n)))
    if M.shape != (m, m):
        raise DimensionMismatch("M has shape %s, expected %s" % (M.shape, (m, m)))
    return Gamma, M


def analytic_rate_trajectory(model, Gamma, M, horizon, SigmaHat=None, SigmaHat_init=None):
    """Per-step rates 1/2 (log det PsiY_i - log det Psi_i) along the covariance recursions.

    With ``SigmaHat`` given the control gain is frozen at Gamma SigmaHat^+;
    otherwise Gamma SigmaHat_i^+ is used along the decoder recursion, which
    requires Gamma to vanish on the null space of every SigmaHat_i.  The
    decoder starts at ``SigmaHat_init`` (default zero), the encoder at Sigma1.
    """
    Gamma, M = _check_policy(model, Gamma, M)
    n = model.n
    Sh = np.zeros((n, n)) if SigmaHat_init is None else np.array(SigmaHat_init, dtype=float)
    gain = None if SigmaHat is None else Gamma @ matops.pinv(SigmaHat)
    Sigma = np.array(model.Sigma1)
    rates = []
    for _ in range(int(horizon)):
        enc = encoder_step(model, Sigma)
        if gain is None:
            dec = decoder_step(model, enc, Gamma, M, Sh)
        else:
            dec = decoder_step_gain(model, enc.Kp, enc.Psi, gain, M, Sh)
        rates.append(0.5 * (matops.logdet_pd(dec.PsiY) - matops.logdet_pd(enc.Psi)))
        Sigma, Sh = enc.Sigma_next, dec.SigmaHat_next
    return rates


def _max_lag_corr(e, max_lag=MAX_LAG):
    """Largest |normalized autocorrelation| over lags 1..max_lag, pooled over trials.

    ``e`` has shape (trials, horizon, p) and is assumed whitened per step.
    """
    _, H, p = e.shape
    scale = np.sqrt(np.einsum("thi,thi->i", e, e) / e.shape[0] / H)
    z = e / np.where(scale > 0, scale, 1.0)
    worst = 0.0
    for k in range(1, min(max_lag, H - 1) + 1):
        c = np.einsum("thi,thj->ij", z[:, :-k], z[:, k:]) / (z.shape[0] * (H - k))
        worst = max(worst, float(np.abs(c).max(initial=0.0)))
    return worst


def simulate_policy(model, config: SimConfig) -> SimResult:
    """Run ``config.trials`` independent realizations of length ``config.horizon``."""
    Gamma, M = _check_policy(model, config.Gamma, config.M)
    n, m, p = model.dims
    T, N = int(config.trials), int(config.horizon)
    gain = Gamma @ matops.pinv(config.SigmaHat)
    Rn = matops.pivoted_cholesky(model.joint_noise())  # (n+p, r)
    Rm = matops.pivoted_cholesky(M) if m else np.zeros((0, 0))
    Rs = matops.pivoted_cholesky(model.Sigma1)
    rn, rm, rs = Rn.shape[1], Rm.shape[1], Rs.shape[1]

    # deterministic filter gains along the run
    Sigma = np.array(model.Sigma1)
    Sh = np.zeros((n, n))
    Kps, Kys, Psi_isqrt = [], [], []
    rates, powers = [], []
    for _ in range(N):
        enc = encoder_step(model, Sigma)
        dec = decoder_step_gain(model, enc.Kp, enc.Psi, gain, M, Sh)
        Kps.append(enc.Kp)
        Kys.append(dec.Ky)
        w, V = matops.eigh(enc.Psi)
        Psi_isqrt.append((V / np.sqrt(w)) @ V.T)
        rates.append(0.5 * (matops.logdet_pd(dec.PsiY) - matops.logdet_pd(enc.Psi)))
        powers.append(float(np.trace(gain @ Sh @ gain.T + M)))
        Sigma, Sh = enc.Sigma_next, dec.SigmaHat_next

    streams = trial_streams(config.seed, T)
    draws = [_normals(g, (rs + N * (rn + rm),)) for g in streams]
    Z = np.stack(draws)  # (T, rs + N (rn + rm))
    s = Z[:, :rs] @ Rs.T
    noise = Z[:, rs:].reshape(T, N, rn + rm)

    F, G, H, J = model.F, model.G, model.H, model.J
    shat = np.zeros((T, n))
    shh = np.zeros((T, n))
    xx = np.zeros((T, N))
    enc_e = np.zeros((T, N, p))
    dec_e = np.zeros((T, N, p))
    for i in range(N):
        wv = noise[:, i, :rn] @ Rn.T
        w, v = wv[:, :n], wv[:, n:]
        x = (shat - shh) @ gain.T
        if rm:
            x = x + noise[:, i, rn:] @ Rm.T
        y = s @ H.T + x @ J.T + v
        e = y - shat @ H.T - x @ J.T
        innov = y - shh @ H.T
        xx[:, i] = np.einsum("tj,tj->t", x, x)
        enc_e[:, i] = e
        dec_e[:, i] = innov
        s = s @ F.T + x @ G.T + w
        shat = shat @ F.T + x @ G.T + e @ Kps[i].T
        shh = shh @ F.T + innov @ Kys[i].T

    per_trial = xx.mean(axis=1)
    enc_cov = np.einsum("thi,thj->ij", enc_e, enc_e) / (T * N)
    dec_cov = np.einsum("thi,thj->ij", dec_e, dec_e) / (T * N)
    white = np.einsum("hij,thj->thi", np.array(Psi_isqrt), enc_e)
    emp_rate = 0.0
    if p:
        emp_rate = 0.5 * (matops.logdet_pd(dec_cov) - matops.logdet_pd(enc_cov))
    return SimResult(
        empirical_power=float(per_trial.mean()),
        empirical_power_se=float(per_trial.std(ddof=1) / np.sqrt(T)) if T > 1 else float("nan"),
        analytic_power=float(np.mean(powers)),
        analytic_rate_nats=float(np.mean(rates)),
        empirical_rate_nats=float(emp_rate),
        empirical_innovation_cov=matops.sym(dec_cov),
        encoder_innovation_cov=matops.sym(enc_cov),
        whiteness_maxlag_corr=_max_lag_corr(white),
        horizon=N,
        trials=T,
    )
