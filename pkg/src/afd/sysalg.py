"""Discrete-time LTI system algebra on finite windows.

The experiment is split into a past (excitation) window ``[-T_minus, 0)`` and
a future (measurement) window ``[0, T_plus]``.  Everything here works with
plain numpy arrays; signals are ``(N, channels)`` arrays, 1-D arrays are
accepted for single-channel signals.

Notation
--------
ss          : StateSpaceModel (A, B, C, D)
rep         : OutputNullingRep, a residual generator driven by w = col(u, y)
T_minus     : number of past samples
T_plus      : last future sample index, the future window has T_plus + 1 samples
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

__all__ = [
    "StateSpaceModel",
    "OutputNullingRep",
    "GramianPair",
    "InterconnectionBank",
    "NormalizationError",
    "build_output_nulling",
    "series",
    "parallel",
    "stack",
    "scale_output",
    "simulate",
    "impulse_response",
    "markov_parameters",
    "reachability_matrix",
    "reach_gramian",
    "obs_gramian",
    "gramians",
    "hankel_matrix",
    "hankel_norm",
    "toeplitz_matrix",
    "l2_induced_norm",
    "system_norm",
    "normalize",
    "normalize_system",
    "build_bank",
    "frequency_response",
]

STABILITY_MARGIN = 1.0


class NormalizationError(ValueError):
    """Raised when a system with zero norm is asked to be normalized."""


def _as_2d(M, rows=None, cols=None):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        M = np.zeros((rows or 0, cols or 0))
    return M


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Discrete-time state-space realization

        x(k+1) = A x(k) + B u(k)
        y(k)   = C x(k) + D u(k)

    A static gain has a 0x0 ``A``.  Construction checks dimensions and that
    the spectral radius of ``A`` is below one.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        D = _as_2d(self.D)
        A = np.asarray(self.A, dtype=float)
        n = 0 if A.size == 0 else A.shape[0]
        A = A.reshape(n, n)
        B = np.asarray(self.B, dtype=float).reshape(n, D.shape[1])
        C = np.asarray(self.C, dtype=float).reshape(D.shape[0], n)
        for name, M in zip("ABCD", (A, B, C, D)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        if n and spectral_radius(A) >= STABILITY_MARGIN:
            raise ValueError(
                f"unstable model: spectral radius {spectral_radius(A):.6g} >= 1")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def __neg__(self):
        return StateSpaceModel(self.A, self.B, -self.C, -self.D)

    def __repr__(self):
        return f"StateSpaceModel(n={self.n}, m={self.m}, p={self.p})"


def spectral_radius(A):
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


@dataclass(frozen=True, eq=False)
class OutputNullingRep:
    """Residual generator driven by ``w = col(u, y)``

        x(k+1) = Acal x(k) + Bcal w(k)
        v(k)   = scale (Ccal x(k) + Dcal w(k))

    ``m`` and ``p`` give the column split of ``Bcal``/``Dcal``.  ``scale`` is
    the output scaling matrix, identity until the rep is normalized.
    """

    Acal: np.ndarray
    Bcal: np.ndarray
    Ccal: np.ndarray
    Dcal: np.ndarray
    m: int
    p: int
    scale: np.ndarray = None
    norm_kind: str = "unscaled"

    def __post_init__(self):
        if self.scale is None:
            object.__setattr__(self, "scale", np.eye(self.Dcal.shape[0]))
        if self.Bcal.shape[1] != self.m + self.p:
            raise ValueError("Bcal columns must split as (m, p)")

    @property
    def r(self):
        """Number of residual channels."""
        return self.Ccal.shape[0]

    def system(self, scaled=True):
        """The rep as a StateSpaceModel from ``w`` to ``v``."""
        S = self.scale if scaled else np.eye(self.r)
        return StateSpaceModel(self.Acal, self.Bcal, S @ self.Ccal, S @ self.Dcal)

    def residual(self, u, y, x0=None):
        """Residual ``v`` for the trajectory ``(u, y)`` from state ``x0``."""
        w = np.hstack([_signal(u, self.m), _signal(y, self.p)])
        return simulate(self.system(), w, x0)


@dataclass(frozen=True, eq=False)
class GramianPair:
    """Finite-window reachability data ``P``, ``Rmat`` and per-block ``Q``."""

    P: np.ndarray
    Q: list
    Rmat: np.ndarray


@dataclass(frozen=True, eq=False)
class InterconnectionBank:
    """Stacked-output bank of cross-model residual generators.

    Output block ``l`` of ``F`` is ``r_l * (G_j^on [I; G_i])`` with
    ``(i, j) = block_index[l]`` and ``r_l = scales[l]``.  The bank state is
    ``col(x_0, ..., x_n)``, the stacked states of all candidate models.
    """

    F: StateSpaceModel
    block_index: list
    scales: np.ndarray
    raw_norms: np.ndarray
    flagged: list
    kind: str
    T_minus: int
    T_plus: int
    state_slices: list = field(default_factory=list)

    @property
    def n_blocks(self):
        return len(self.block_index)

    def block_rows(self, l):
        """Output rows of block ``l`` (every block has the same width)."""
        width = self.F.p // self.n_blocks
        return slice(l * width, (l + 1) * width)

    def gramians(self):
        return gramians(self.F, self.T_minus, self.T_plus,
                        [self.block_rows(l) for l in range(self.n_blocks)])


def _signal(u, channels):
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[1] != channels:
        raise ValueError(f"signal has {u.shape[1]} channels, expected {channels}")
    return u


# --------------------------------------------------------------------------
# Interconnections
# --------------------------------------------------------------------------

def build_output_nulling(ss):
    """Output-nulling rep with the same state vector as ``ss``.

    ``v = y - C x - D u`` with the state driven by ``u`` only, so that
    ``(u, y)`` produced by ``ss`` from state ``x`` gives ``v = 0`` when the
    rep is started from that same ``x``.
    """
    Bcal = np.hstack([ss.B, np.zeros((ss.n, ss.p))])
    Dcal = np.hstack([-ss.D, np.eye(ss.p)])
    return OutputNullingRep(ss.A, Bcal, -ss.C, Dcal, m=ss.m, p=ss.p)


def series(g1, g2):
    """Cascade ``u -> g1 -> g2``; the result maps u to the output of g2."""
    if g1.p != g2.m:
        raise ValueError(f"series: g1 has {g1.p} outputs, g2 takes {g2.m} inputs")
    A = np.block([[g1.A, np.zeros((g1.n, g2.n))],
                  [g2.B @ g1.C, g2.A]])
    B = np.vstack([g1.B, g2.B @ g1.D])
    C = np.hstack([g2.D @ g1.C, g2.C])
    D = g2.D @ g1.D
    return StateSpaceModel(A, B, C, D)


def stack(*systems):
    """Shared input, stacked outputs and block-diagonal states."""
    m = systems[0].m
    if any(s.m != m for s in systems):
        raise ValueError("stack: all systems must have the same input dimension")
    n_tot = sum(s.n for s in systems)
    A = np.zeros((n_tot, n_tot))
    C = np.zeros((sum(s.p for s in systems), n_tot))
    i = j = 0
    for s in systems:
        A[i:i + s.n, i:i + s.n] = s.A
        C[j:j + s.p, i:i + s.n] = s.C
        i += s.n
        j += s.p
    B = np.vstack([s.B for s in systems]) if n_tot else np.zeros((0, m))
    D = np.vstack([s.D for s in systems])
    return StateSpaceModel(A, B, C, D)


def parallel(g1, g2):
    """Sum of outputs for a shared input: ``y = g1 u + g2 u``."""
    if (g1.m, g1.p) != (g2.m, g2.p):
        raise ValueError("parallel: input/output dimensions differ")
    S = stack(g1, g2)
    return StateSpaceModel(S.A, S.B, np.hstack([g1.C, g2.C]), g1.D + g2.D)


def scale_output(ss, r):
    S = np.atleast_2d(r) if np.ndim(r) else r * np.eye(ss.p)
    return StateSpaceModel(ss.A, ss.B, S @ ss.C, S @ ss.D)


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------

def simulate(ss, u, x0=None, return_state=False):
    """Exact state recursion from ``x0`` (zero if omitted).

    Returns the output ``y`` with shape ``(N, p)``; with ``return_state`` the
    state after the last sample is returned as well.
    """
    u = _signal(u, ss.m)
    x = np.zeros(ss.n) if x0 is None else np.asarray(x0, dtype=float).reshape(ss.n)
    y = np.empty((u.shape[0], ss.p))
    for k in range(u.shape[0]):
        y[k] = ss.C @ x + ss.D @ u[k]
        x = ss.A @ x + ss.B @ u[k]
    if return_state:
        return y, x
    return y


def markov_parameters(ss, count):
    """``[D, CB, CAB, ...]`` as an array of shape ``(count, p, m)``."""
    h = np.empty((count, ss.p, ss.m))
    h[0] = ss.D
    AkB = ss.B
    for k in range(1, count):
        h[k] = ss.C @ AkB
        AkB = ss.A @ AkB
    return h


def impulse_response(ss, count):
    return markov_parameters(ss, count)


# --------------------------------------------------------------------------
# Finite-window Gramians and norms
# --------------------------------------------------------------------------

def reachability_matrix(ss, T_minus):
    """``[B, AB, ..., A^(T_minus-1) B]``; block ``k`` multiplies ``u(-1-k)``."""
    blocks = []
    AkB = ss.B
    for _ in range(T_minus):
        blocks.append(AkB)
        AkB = ss.A @ AkB
    return np.hstack(blocks) if blocks else np.zeros((ss.n, 0))


def reach_gramian(ss, T_minus):
    """``P = sum_{k=0}^{T_minus-1} A^k B B^T (A^T)^k``."""
    P = np.zeros((ss.n, ss.n))
    AkB = ss.B
    for _ in range(T_minus):
        P += AkB @ AkB.T
        AkB = ss.A @ AkB
    return P


def obs_gramian(ss, T_plus, rows=slice(None)):
    """Observability Gramian of output rows ``rows`` over ``[0, T_plus]``."""
    Q = np.zeros((ss.n, ss.n))
    CAk = ss.C[rows]
    for _ in range(T_plus + 1):
        Q += CAk.T @ CAk
        CAk = CAk @ ss.A
    return Q


def gramians(ss, T_minus, T_plus, blocks=None):
    blocks = [slice(None)] if blocks is None else blocks
    return GramianPair(P=reach_gramian(ss, T_minus),
                       Q=[obs_gramian(ss, T_plus, b) for b in blocks],
                       Rmat=reachability_matrix(ss, T_minus))


def hankel_matrix(ss, T_minus, T_plus):
    """Block Hankel matrix mapping ``col(u(-1), ..., u(-T_minus))`` to
    ``col(y(0), ..., y(T_plus))``; block ``(k, j)`` is ``C A^(k+j) B``."""
    h = markov_parameters(ss, T_minus + T_plus + 1)
    H = np.empty(((T_plus + 1) * ss.p, T_minus * ss.m))
    for k in range(T_plus + 1):
        for j in range(T_minus):
            H[k * ss.p:(k + 1) * ss.p, j * ss.m:(j + 1) * ss.m] = h[k + j + 1]
    return H


def _sqrt_psd(P, rtol=1e-12):
    """Factor ``L`` with ``P ~= L L^T`` from a symmetric eigendecomposition.

    Eigenvalues below ``rtol * lambda_max`` are rounding noise of a singular
    Gramian and are dropped, so exact cancellations (``G - G``) stay exact.
    """
    w, V = np.linalg.eigh((P + P.T) / 2)
    keep = w > rtol * max(w[-1], 0.0) if w.size else w.astype(bool)
    return V[:, keep] * np.sqrt(w[keep])


def hankel_norm(ss, T_minus, T_plus):
    """Finite-horizon Hankel norm ``sqrt(lambda_max(P Q))``.

    Evaluated in square-root form: with ``P = Lp Lp^T`` and ``Q = Lq Lq^T``
    the eigenvalues of ``P Q`` are the squared singular values of
    ``Lq^T Lp``.  Forming ``P Q`` directly would lose half the digits when
    the norm is small relative to ``||P|| ||Q||``.
    """
    if ss.n == 0:
        return 0.0
    Lp = _sqrt_psd(reach_gramian(ss, T_minus))
    Lq = _sqrt_psd(obs_gramian(ss, T_plus))
    if Lp.size == 0 or Lq.size == 0:
        return 0.0
    return float(np.linalg.norm(Lq.T @ Lp, 2))


def toeplitz_matrix(ss, T_plus):
    """Lower block-Toeplitz convolution matrix on ``[0, T_plus]`` from zero
    initial state: diagonal blocks ``D``, block ``(k, j)`` is
    ``C A^(k-1-j) B`` for ``k > j``."""
    N = T_plus + 1
    h = markov_parameters(ss, N)
    T = np.zeros((N * ss.p, N * ss.m))
    for k in range(N):
        for j in range(k + 1):
            T[k * ss.p:(k + 1) * ss.p, j * ss.m:(j + 1) * ss.m] = h[k - j]
    return T


def l2_induced_norm(ss, T_plus):
    """Largest gain of the system on ``[0, T_plus]`` from zero state."""
    return float(np.linalg.norm(toeplitz_matrix(ss, T_plus), 2))


def system_norm(ss, kind, T_minus, T_plus):
    if kind == "hankel":
        return hankel_norm(ss, T_minus, T_plus)
    if kind == "l2_induced":
        return l2_induced_norm(ss, T_plus)
    raise ValueError(f"unknown norm kind {kind!r}")


def normalize_system(ss, kind, T_minus, T_plus, rtol=1e-8):
    """Scale the output of ``ss`` by a scalar ``r`` so its norm becomes one.

    The norm is homogeneous in ``r``, so ``1/||ss||`` is the answer; a
    bisection over ``[1e-9, 1e9] / ||ss||`` on the recomputed norm confirms
    it.  Returns ``(scaled_ss, r)``.
    """
    base = system_norm(ss, kind, T_minus, T_plus)
    if not base > 0:
        raise NormalizationError(f"{kind} norm is zero, cannot normalize")
    r0 = 1.0 / base

    def excess(log_r):
        r = np.exp(log_r)
        return system_norm(scale_output(ss, r), kind, T_minus, T_plus) - 1.0

    lo, hi = np.log(1e-9 * r0), np.log(1e9 * r0)
    if abs(excess(np.log(r0))) <= 1e-10:
        r = r0
    else:
        r = float(np.exp(optimize.bisect(excess, lo, hi, xtol=rtol, rtol=rtol)))
    scaled = scale_output(ss, r)
    achieved = system_norm(scaled, kind, T_minus, T_plus)
    if abs(achieved - 1.0) > 1e-6:
        raise NormalizationError(f"normalization reached {kind} norm {achieved}")
    return scaled, r


def normalize(rep, kind, T_minus, T_plus):
    """Normalized copy of ``rep`` with ``scale = r I``.

    The state equation is untouched, so ``v = 0`` exactly when the scaled
    residual is zero.
    """
    _, r = normalize_system(rep.system(scaled=False), kind, T_minus, T_plus)
    return OutputNullingRep(rep.Acal, rep.Bcal, rep.Ccal, rep.Dcal, rep.m, rep.p,
                            scale=r * np.eye(rep.r), norm_kind=kind)


# --------------------------------------------------------------------------
# Interconnection banks
# --------------------------------------------------------------------------

def cross_residual(gi, gj):
    """``F_j^(i) = G_j^on [I; G_i]``: feed the data of ``gi`` to ``gj``'s
    residual generator.  State is ``col(x_i, x_j)``."""
    io = stack(StateSpaceModel(np.zeros((0, 0)), np.zeros((0, gi.m)),
                               np.zeros((gi.m, 0)), np.eye(gi.m)), gi)
    return series(io, build_output_nulling(gj).system())


def build_bank(models, T_minus, T_plus, i=None, zero_tol=1e-10):
    """Hankel-normalized bank of cross residual generators.

    With ``i`` given the bank holds ``F_j^(i)`` for every ``j != i``;
    otherwise it holds all of them, ordered by ``i`` then ``j`` so that the
    blocks of model ``i`` are ``n*i .. n*(i+1)-1``.

    Blocks whose Hankel norm is negligible relative to the two models'
    norms cannot be normalized; they are kept unscaled and listed in
    ``flagged``.
    """
    n_models = len(models)
    if n_models < 2:
        raise ValueError("a bank needs at least two models")
    rows = [i] if i is not None else range(n_models)
    pairs = [(a, b) for a in rows for b in range(n_models) if b != a]

    offsets = np.cumsum([0] + [g.n for g in models])
    n_tot = int(offsets[-1])
    m = models[0].m
    A = np.zeros((n_tot, n_tot))
    B = np.zeros((n_tot, m))
    for k, g in enumerate(models):
        sl = slice(offsets[k], offsets[k + 1])
        A[sl, sl] = g.A
        B[sl] = g.B

    model_norms = [hankel_norm(g, T_minus, T_plus) for g in models]
    C_rows, D_rows, scales, raw, flagged = [], [], [], [], []
    for l, (a, b) in enumerate(pairs):
        Cl = np.zeros((models[a].p, n_tot))
        Cl[:, offsets[a]:offsets[a + 1]] = models[a].C
        Cl[:, offsets[b]:offsets[b + 1]] = -models[b].C
        Dl = models[a].D - models[b].D
        block = StateSpaceModel(A, B, Cl, Dl)
        raw_norm = hankel_norm(block, T_minus, T_plus)
        raw.append(raw_norm)
        if raw_norm <= zero_tol * max(model_norms[a] + model_norms[b], 1e-300):
            flagged.append(l)
            r = 1.0
        else:
            _, r = normalize_system(block, "hankel", T_minus, T_plus)
        scales.append(r)
        C_rows.append(r * Cl)
        D_rows.append(r * Dl)

    F = StateSpaceModel(A, B, np.vstack(C_rows), np.vstack(D_rows))
    return InterconnectionBank(
        F=F, block_index=pairs, scales=np.array(scales), raw_norms=np.array(raw),
        flagged=flagged, kind="F_full" if i is None else "F_i",
        T_minus=T_minus, T_plus=T_plus,
        state_slices=[slice(int(offsets[k]), int(offsets[k + 1]))
                      for k in range(n_models)])


def frequency_response(ss, omega):
    """``G(e^{j omega})`` for SISO ``ss`` on the grid ``omega`` (rad/sample)."""
    z = np.exp(1j * np.asarray(omega, dtype=float))
    if ss.n == 0:
        return np.full(z.shape, ss.D[0, 0], dtype=complex)
    I = np.eye(ss.n)
    out = np.empty(z.shape, dtype=complex)
    for k, zk in enumerate(z):
        out[k] = (ss.C @ np.linalg.solve(zk * I - ss.A, ss.B) + ss.D)[0, 0]
    return out
