"""State-space channel models.

A channel is

    s_{i+1} = F s_i + G x_i + w_i
    y_i     = H s_i + J x_i + v_i

with (w_i, v_i) ~ N(0, [[W, L], [L^T, V]]) white and s_1 ~ N(0, Sigma1).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fbcap import matops
from fbcap.errors import (
    DimensionMismatch,
    InvalidDelay,
    JointNoiseNotPSD,
    NotDetectable,
    Sigma1NotPSD,
    UserInputError,
)

log = logging.getLogger(__name__)

PSD_TOL = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ChannelModel:
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    J: np.ndarray
    W: np.ndarray
    L: np.ndarray
    V: np.ndarray
    Sigma1: np.ndarray
    name: str = ""

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[1]

    @property
    def p(self) -> int:
        return self.H.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.n, self.m, self.p

    def joint_noise(self) -> np.ndarray:
        return np.block([[self.W, self.L], [self.L.T, self.V]])

    def to_dict(self) -> dict:
        d = {k: getattr(self, k).tolist() for k in ("F", "G", "H", "J", "W", "L", "V", "Sigma1")}
        if self.name:
            d["name"] = self.name
        return d

    def replace(self, **changes) -> "ChannelModel":
        fields = {k: getattr(self, k) for k in ("F", "G", "H", "J", "W", "L", "V", "Sigma1", "name")}
        fields.update(changes)
        sigma1 = fields.pop("Sigma1")
        name = fields.pop("name")
        return build_model(**fields, Sigma1=sigma1, name=name)


@dataclass(frozen=True)
class Ar1Params:
    """AR(1) noise z_i = beta z_{i-1} + w_i with w_i ~ N(0, noise_var)."""

    beta: float
    input_gain: float = 1.0
    noise_var: float = 1.0

    def __post_init__(self):
        if not self.noise_var > 0:
            raise UserInputError("noise_var must be positive, got %r" % self.noise_var)


def _as_matrix(name, a, shape):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        a = a.reshape(shape)
    if a.shape != shape:
        raise DimensionMismatch("%s has shape %s, expected %s" % (name, a.shape, shape))
    if not np.all(np.isfinite(a)):
        raise UserInputError("%s has non-finite entries" % name)
    return a


def build_model(F, G, H, J, W, L, V, Sigma1=None, name: str = "") -> ChannelModel:
    """Validate matrices and assemble a :class:`ChannelModel`.

    Dimensions are taken from F (n), G (m) and H (p); ``L=None`` means
    uncorrelated noises. When ``Sigma1`` is
    omitted it defaults to the stationary Riccati solution, so the encoder
    filter starts in steady state. If the pair (F, H) is not detectable no
    stationary solution exists; the default then falls back to zeros and a
    warning is logged.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise DimensionMismatch("F must be square, got shape %s" % (F.shape,))
    n = F.shape[0]
    G = np.atleast_2d(np.asarray(G, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if G.shape[0] != n:
        raise DimensionMismatch("G has %d rows, expected n=%d" % (G.shape[0], n))
    if H.shape[1] != n:
        raise DimensionMismatch("H has %d columns, expected n=%d" % (H.shape[1], n))
    m, p = G.shape[1], H.shape[0]
    F = _as_matrix("F", F, (n, n))
    J = _as_matrix("J", J, (p, m))
    W = _as_matrix("W", W, (n, n))
    V = _as_matrix("V", V, (p, p))
    L = np.zeros((n, p)) if L is None else _as_matrix("L", L, (n, p))
    for nm, X in (("W", W), ("V", V)):
        if not np.allclose(X, X.T, rtol=0, atol=1e-12 * max(1.0, np.abs(X).max())):
            raise UserInputError("%s must be symmetric" % nm)
    W, V = matops.sym(W), matops.sym(V)
    joint = np.block([[W, L], [L.T, V]])
    lam = matops.min_eig_sym(joint)
    if lam < -PSD_TOL:
        raise JointNoiseNotPSD("joint noise covariance has eigenvalue %.3g" % lam)

    if Sigma1 is not None:
        Sigma1 = _as_matrix("Sigma1", Sigma1, (n, n))
        Sigma1 = matops.sym(Sigma1)
        lam = matops.min_eig_sym(Sigma1)
        if lam < -PSD_TOL:
            raise Sigma1NotPSD("Sigma1 has eigenvalue %.3g" % lam)
        return ChannelModel(*map(_frozen, (F, G, H, J, W, L, V, Sigma1)), name=name)

    provisional = ChannelModel(*map(_frozen, (F, G, H, J, W, L, V, np.zeros((n, n)))), name=name)
    from fbcap.kalman import solve_dare

    try:
        sigma = solve_dare(provisional).Sigma
    except NotDetectable:
        log.warning("(F, H) is not detectable; Sigma1 defaults to zeros")
        return provisional
    return ChannelModel(*map(_frozen, (F, G, H, J, W, L, V, sigma)), name=name)


def make_awgn_channel(snr: float = 1.0, name: str = "awgn") -> ChannelModel:
    """Scalar y = x + v with Var(v) = 1/snr (H = 0, one dummy state)."""
    if not snr > 0:
        raise UserInputError("snr must be positive")
    return build_model(F=0, G=0, H=0, J=1, W=0, L=0, V=1.0 / snr, name=name)


def make_ar1_channel(params: Ar1Params) -> ChannelModel:
    """y_i = J x_i + z_i with AR(1) noise, state s_i = z_{i-1}.

    The same innovation w_i drives the state and the output, hence
    W = V = L = noise_var.
    """
    b, q = float(params.beta), float(params.noise_var)
    return build_model(
        F=b, G=0.0, H=b, J=params.input_gain, W=q, L=q, V=q, name="ar1(beta=%g)" % b
    )


def make_delayed(model: ChannelModel, d: int) -> ChannelModel:
    """Realize d-step delayed feedback by augmenting the state with input registers.

    The new state is (s_i, x_{i-1}, ..., x_{i-d+1}). The original channel
    sees the oldest register as its input, so feedback of y^{i-1} on the
    augmented model is feedback of y^{i-d} relative to the input that
    actually enters the original channel.
    """
    if int(d) != d or d < 1:
        raise InvalidDelay("delay must be an integer >= 1, got %r" % (d,))
    d = int(d)
    if d == 1:
        return model
    n, m, p = model.dims
    k = d - 1
    N = n + m * k
    last = slice(n + m * (k - 1), N)
    F = np.zeros((N, N))
    F[:n, :n] = model.F
    F[:n, last] = model.G
    for j in range(1, k):
        F[n + m * j:n + m * (j + 1), n + m * (j - 1):n + m * j] = np.eye(m)
    G = np.zeros((N, m))
    G[n:n + m] = np.eye(m)
    H = np.zeros((p, N))
    H[:, :n] = model.H
    H[:, last] = model.J
    W = np.zeros((N, N))
    W[:n, :n] = model.W
    L = np.zeros((N, p))
    L[:n] = model.L
    name = "%s+delay%d" % (model.name, d) if model.name else "delay%d" % d
    return build_model(F, G, H, np.zeros((p, m)), W, L, model.V, name=name)


def validate_assumption1(model: ChannelModel) -> dict:
    """Report whether (F, H) is detectable and Sigma1 dominates the stationary Sigma."""
    from fbcap.detect import detectable_pbh
    from fbcap.kalman import solve_dare

    detectable = detectable_pbh(model.F, model.H).detectable
    if not detectable:
        return {"detectable": False, "sigma1_dominates": False}
    sigma = solve_dare(model).Sigma
    dominates = matops.min_eig_sym(model.Sigma1 - sigma) >= -PSD_TOL
    return {"detectable": True, "sigma1_dominates": bool(dominates)}


# -- JSON model files -------------------------------------------------------

_REQUIRED = ("F", "G", "H", "J", "W", "V")


def model_from_dict(doc: dict) -> ChannelModel:
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise UserInputError("model file is missing field(s): %s" % ", ".join(missing))
    n = np.atleast_2d(np.asarray(doc["F"], dtype=float)).shape[0]
    H = np.atleast_2d(np.asarray(doc["H"], dtype=float))
    L = doc.get("L")
    if L is None:
        L = np.zeros((n, H.shape[0]))
    return build_model(
        doc["F"], doc["G"], H, doc["J"], doc["W"], L, doc["V"],
        Sigma1=doc.get("Sigma1"), name=str(doc.get("name", "")),
    )


def load_model(path) -> ChannelModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UserInputError("cannot read model file %s: %s" % (path, exc)) from None
    if not isinstance(doc, dict):
        raise UserInputError("model file must hold a JSON object")
    return model_from_dict(doc)


def save_model(model: ChannelModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")
