"""Detectability of a matrix pair (A, B).

Two independent tests are provided: the PBH rank test on the unstable
eigenvalues of A, and LMI feasibility of

    [[P,      P A      ],
     [A^T P,  P + B^T B]]  > 0,   P > 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from fbcap import matops
from fbcap.sdp import MaxDetProblem, check_feasibility

PBH_TOL = 1e-9
LMI_MARGIN = 1e-7
RANK_RTOL = 1e-9


@dataclass(frozen=True)
class DetectReport:
    detectable: bool
    method: str  # "pbh" or "lmi"
    witness_P: Optional[np.ndarray] = None
    offending_eigenvalue: Optional[complex] = None
    margin: Optional[float] = None


def detectable_pbh(A, B, tol=PBH_TOL) -> DetectReport:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(-1, n)
    scale = max(1.0, np.abs(A).max(initial=0.0), np.abs(B).max(initial=0.0))
    for lam in matops.eigvals(A):
        if abs(lam) < 1.0 - tol:
            continue
        stacked = np.vstack([A - lam * np.eye(n), B.astype(complex)])
        s = np.linalg.svd(stacked, compute_uv=False)
        if s.size < n or s[n - 1] <= RANK_RTOL * scale:
            return DetectReport(False, "pbh", offending_eigenvalue=complex(lam))
    return DetectReport(True, "pbh")


def lmi_problem(A, B):
    """The detectability LMI as a maxdet problem in P, normalized by trace(P) <= n."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(-1, n)
    prob = MaxDetProblem()
    P = prob.variable("P", n, n, symmetric=True)
    block = prob.bmat([[P, P @ A], [A.T @ P, P + B.T @ B]])
    prob.add_lmi(block, name="detectability")
    prob.add_ineq(P.trace() - n)
    return prob


def detectable_lmi(A, B, margin=LMI_MARGIN) -> DetectReport:
    res = check_feasibility(lmi_problem(A, B))
    P = res.point["P"] if res.point is not None else None
    ok = res.margin > margin
    return DetectReport(bool(ok), "lmi", witness_P=P if ok else None, margin=res.margin)


def closed_loop_pair(model, Gamma, SigmaHat):
    """(F + G Gamma SigmaHat^+, H + J Gamma SigmaHat^+)."""
    gain = np.atleast_2d(Gamma) @ matops.pinv(SigmaHat)
    return model.F + model.G @ gain, model.H + model.J @ gain
