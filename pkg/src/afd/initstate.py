"""Initial states for output-nulling representations on the future window.

Two schemes are offered.  ``least_squares_x0`` fits the state that makes the
residual smallest on ``[0, T_plus]`` and ignores the past input;
``past_input_x0`` runs the model through the past input instead, which uses
the fact that the model and its output-nulling rep share the state vector.
The least-squares fit cannot tell apart models that differ by a scalar
gain, so diagnosis defaults to the past-input scheme.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .sysalg import markov_parameters, simulate

__all__ = ["InitialStateProblem", "RankDeficientWarning", "build_MN",
           "least_squares_x0", "past_input_x0"]


class RankDeficientWarning(UserWarning):
    """The least-squares initial state is not unique."""


@dataclass(frozen=True, eq=False)
class InitialStateProblem:
    """``v = M x0 + N w`` stacked over ``k = 0..T_plus``."""

    M: np.ndarray
    N: np.ndarray
    T_plus: int
    r: int

    def residual(self, x0, w):
        v = self.M @ np.asarray(x0, dtype=float) + self.N @ np.asarray(w, dtype=float).ravel()
        return v.reshape(self.T_plus + 1, self.r)


def build_MN(rep, T_plus):
    """Stacked observability matrix ``M`` and Toeplitz matrix ``N`` of the
    (scaled) rep over ``[0, T_plus]``.  ``w`` is stacked sample by sample,
    ``col(w(0), ..., w(T_plus))``."""
    ss = rep.system()
    n_rows = T_plus + 1
    M = np.zeros((n_rows * ss.p, ss.n))
    CAk = ss.C
    for k in range(n_rows):
        M[k * ss.p:(k + 1) * ss.p] = CAk
        CAk = CAk @ ss.A
    h = markov_parameters(ss, n_rows)
    N = np.zeros((n_rows * ss.p, n_rows * ss.m))
    for k in range(n_rows):
        for j in range(k + 1):
            N[k * ss.p:(k + 1) * ss.p, j * ss.m:(j + 1) * ss.m] = h[k - j]
    return InitialStateProblem(M, N, T_plus, ss.p)


def least_squares_x0(prob, w, cutoff=1e-10):
    """``argmin_x0 ||M x0 + N w||`` via an SVD pseudoinverse.

    Equals ``-(M^T M)^-1 M^T N w`` when ``M`` has full column rank; otherwise
    the minimum-norm minimizer is returned with a RankDeficientWarning.
    """
    M = prob.M
    if M.shape[1] == 0:
        return np.zeros(0)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > cutoff * s[0] if s.size and s[0] > 0 else np.zeros(s.shape, bool)
    if not keep.all():
        warnings.warn(f"M has rank {int(keep.sum())} < {M.shape[1]}; "
                      "initial state is not unique", RankDeficientWarning, stacklevel=2)
    rhs = prob.N @ np.asarray(w, dtype=float).ravel()
    return -(Vt[keep].T @ ((U[:, keep].T @ rhs) / s[keep]))


def past_input_x0(ss, u_past):
    """State at ``k = 0`` after driving ``ss`` from rest with ``u_past``."""
    _, x = simulate(ss, u_past, return_state=True)
    return x
