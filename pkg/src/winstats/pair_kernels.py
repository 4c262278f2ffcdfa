"""Weighted pairwise sums over treated-control and all-pairs comparisons.

Every weighting scheme used here factors as ``omega(X_i, X_j) = w1_i * w0_j``
and ``h(X_i, X_j) = a_i * b_j``, so the O(n^2) double sums collapse to
per-level totals. :func:`brute_force_sums` is the direct O(n^2) oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polr_fit import CategoryProbs, above, below, mu_pair_tables

BRUTE_FORCE_CAP = 2000


@dataclass(frozen=True)
class ArmWeightTables:
    T: np.ndarray  # T[l] = sum of w1 over treated with y = l + 1
    C: np.ndarray  # C[l] = sum of w0 over controls with y = l + 1

    @property
    def T_cum(self):
        return np.cumsum(self.T)

    @property
    def C_cum(self):
        return np.cumsum(self.C)


@dataclass(frozen=True)
class KernelSums:
    win_sum: float
    loss_sum: float
    tie_sum: float
    denom: float
    aug_cross_win: float | None = None
    aug_cross_loss: float | None = None
    aug_all_win: float | None = None
    aug_all_loss: float | None = None
    h_denom: float | None = None

    def as_array(self):
        vals = [self.win_sum, self.loss_sum, self.tie_sum, self.denom,
                self.aug_cross_win, self.aug_cross_loss, self.aug_all_win,
                self.aug_all_loss, self.h_denom]
        return np.array([np.nan if v is None else v for v in vals])


def _check(ds, *vecs):
    n = ds.n
    out = []
    for v in vecs:
        if v is None:
            out.append(None)
            continue
        v = np.asarray(v, dtype=float)
        if v.shape != (n,):
            raise ValueError(f"weight vector has shape {v.shape}, expected ({n},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("weights must be finite")
        out.append(v)
    return out


def arm_tables(ds, w1, w0) -> ArmWeightTables:
    L = ds.n_levels
    t = ds.z == 1
    T = np.bincount(ds.y[t] - 1, weights=w1[t], minlength=L)
    C = np.bincount(ds.y[~t] - 1, weights=w0[~t], minlength=L)
    return ArmWeightTables(T=T, C=C)


def factorized_sums(ds, w1, w0, a=None, b=None, cp: CategoryProbs | None = None) -> KernelSums:
    """All Hajek numerators/denominators in O(nL).

    With ``cp`` supplied, also the augmentation sums over treated-control
    pairs (weights ``w1_i w0_j``) and over all ordered pairs ``j != i``
    (weights ``a_i b_j``).
    """
    w1, w0, a, b = _check(ds, w1, w0, a, b)
    tab = arm_tables(ds, w1, w0)
    win = float(tab.T @ below(tab.C))
    loss = float(tab.T @ above(tab.C))
    tie = float(tab.T @ tab.C)
    denom = float(tab.T.sum() * tab.C.sum())
    if cp is None:
        return KernelSums(win, loss, tie, denom)
    if a is None or b is None:
        raise ValueError("augmentation sums need both a and b")
    t = (ds.z == 1).astype(float)
    cross = mu_pair_tables(cp, t * w1, (1 - t) * w0)
    allp = mu_pair_tables(cp, a, b)
    ab = a * b
    return KernelSums(
        win, loss, tie, denom,
        aug_cross_win=cross.win_total(),
        aug_cross_loss=cross.loss_total(),
        aug_all_win=allp.win_total() - float(ab @ allp.self_win),
        aug_all_loss=allp.loss_total() - float(ab @ allp.self_loss),
        h_denom=float(a.sum() * b.sum() - ab.sum()),
    )


def _mu_matrices(cp):
    L = cp.p1.shape[1]
    lv = np.arange(L)
    gt = (lv[:, None] > lv[None, :]).astype(float)
    mu_win = np.einsum("il,jm,lm->ij", cp.p1, cp.p0, gt)
    mu_loss = np.einsum("il,jm,lm->ij", cp.p1, cp.p0, gt.T)
    return mu_win, mu_loss


def brute_force_sums(ds, w1, w0, a=None, b=None, cp=None, cap: int = BRUTE_FORCE_CAP) -> KernelSums:
    """Same contract as :func:`factorized_sums` via explicit pair enumeration."""
    if ds.n > cap:
        raise ValueError(f"brute force limited to n <= {cap}, got n = {ds.n}")
    w1, w0, a, b = _check(ds, w1, w0, a, b)
    y, z = ds.y, ds.z
    n = ds.n
    win = loss = tie = denom = 0.0
    for i in range(n):
        if z[i] != 1:
            continue
        for j in range(n):
            if z[j] != 0:
                continue
            w = w1[i] * w0[j]
            denom += w
            if y[i] > y[j]:
                win += w
            elif y[i] < y[j]:
                loss += w
            else:
                tie += w
    if cp is None:
        return KernelSums(win, loss, tie, denom)
    mu_win, mu_loss = _mu_matrices(cp)
    pair = np.outer(z * w1, (1 - z) * w0)
    h = np.outer(a, b)
    np.fill_diagonal(h, 0.0)
    return KernelSums(
        win, loss, tie, denom,
        aug_cross_win=float((pair * mu_win).sum()),
        aug_cross_loss=float((pair * mu_loss).sum()),
        aug_all_win=float((h * mu_win).sum()),
        aug_all_loss=float((h * mu_loss).sum()),
        h_denom=float(h.sum()),
    )


def projections_qhat(ds, w1, w0, a=None, b=None, cp=None, scheme=None, sums=None):
    """Per-subject averages ``(n-1)^-1 sum_{j != i} q(O_i, O_j)`` for win and loss.

    The kernel is the symmetrised Hajek kernel (plus the all-pairs
    augmentation term when ``cp`` is given), so ``mean(q1) == tau1``.
    ``scheme`` is informational only; the weights decide the estimator.
    """
    w1, w0, a, b = _check(ds, w1, w0, a, b)
    if sums is None:
        sums = factorized_sums(ds, w1, w0, a, b, cp)
    if sums.denom <= 0:
        raise ZeroDivisionError("no treated-control pairs with positive weight")
    n = ds.n
    yi = ds.y - 1
    t = ds.z == 1
    tab = arm_tables(ds, w1, w0)
    c_below = below(tab.C)[yi]
    c_above = above(tab.C)[yi]
    t_above = above(tab.T)[yi]
    t_below = below(tab.T)[yi]
    own_win = np.where(t, w1 * c_below, w0 * t_above)
    own_loss = np.where(t, w1 * c_above, w0 * t_below)
    if cp is not None:
        tf = t.astype(float)
        R = (tf * w1) @ cp.p1
        Q = ((1 - tf) * w0) @ cp.p0
        mw = np.where(t, w1 * (cp.p1 @ below(Q)), w0 * (cp.p0 @ above(R)))
        ml = np.where(t, w1 * (cp.p1 @ above(Q)), w0 * (cp.p0 @ below(R)))
        own_win = own_win - mw
        own_loss = own_loss - ml
    q1 = n / (2 * sums.denom) * own_win
    qm = n / (2 * sums.denom) * own_loss
    if cp is not None:
        if sums.h_denom <= 0:
            raise ZeroDivisionError("augmentation weights sum to zero")
        tabs = mu_pair_tables(cp, a, b)
        A1 = a @ cp.p1
        B0 = b @ cp.p0
        aw = a * (cp.p1 @ below(B0) - b * tabs.self_win) + b * (cp.p0 @ above(A1) - a * tabs.self_win)
        al = a * (cp.p1 @ above(B0) - b * tabs.self_loss) + b * (cp.p0 @ below(A1) - a * tabs.self_loss)
        q1 = q1 + n / (2 * sums.h_denom) * aw
        qm = qm + n / (2 * sums.h_denom) * al
    return q1, qm


def brute_force_qhat(ds, w1, w0, a=None, b=None, cp=None, cap: int = BRUTE_FORCE_CAP):
    """O(n^2) evaluation of the symmetrised kernel matrix, then row averages."""
    if ds.n > cap:
        raise ValueError(f"brute force limited to n <= {cap}, got n = {ds.n}")
    w1, w0, a, b = _check(ds, w1, w0, a, b)
    n = ds.n
    y, z = ds.y, ds.z.astype(float)
    omega = np.outer(z * w1, (1 - z) * w0)  # omega[i, j] for i treated, j control
    gt = (y[:, None] > y[None, :]).astype(float)
    lt = gt.T
    D = omega.sum()
    if cp is None:
        kw = omega * gt + omega.T * gt.T
        kl = omega * lt + omega.T * lt.T
    else:
        mu_win, mu_loss = _mu_matrices(cp)
        kw = omega * (gt - mu_win) + omega.T * (gt.T - mu_win.T)
        kl = omega * (lt - mu_loss) + omega.T * (lt.T - mu_loss.T)
    qw = n * (n - 1) / (2 * D) * kw
    ql = n * (n - 1) / (2 * D) * kl
    if cp is not None:
        h = np.outer(a, b)
        np.fill_diagonal(h, 0.0)
        H = h.sum()
        qw = qw + n * (n - 1) / (2 * H) * (h * mu_win + h.T * mu_win.T)
        ql = ql + n * (n - 1) / (2 * H) * (h * mu_loss + h.T * mu_loss.T)
    np.fill_diagonal(qw, 0.0)
    np.fill_diagonal(ql, 0.0)
    return qw.sum(axis=1) / (n - 1), ql.sum(axis=1) / (n - 1)


def derivative_aggregate(functional, theta0, dims: int | None = None, rel_step: float = 1e-5):
    """Central finite-difference derivative of ``functional`` at ``theta0``.

    ``functional`` maps a parameter vector to a scalar or a vector of U-averages.
    Returns an array of shape ``(dims,)`` for scalar output, otherwise
    ``(m, dims)``.
    """
    theta0 = np.asarray(theta0, dtype=float).ravel()
    k = theta0.shape[0] if dims is None else int(dims)
    cols = []
    for j in range(k):
        h = rel_step * (1 + abs(theta0[j]))
        tp = theta0.copy()
        tm = theta0.copy()
        tp[j] += h
        tm[j] -= h
        fp = np.asarray(functional(tp), dtype=float)
        fm = np.asarray(functional(tm), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise FloatingPointError(f"non-finite functional value perturbing coordinate {j}")
        cols.append((fp - fm) / (2 * h))
    out = np.stack(cols, axis=-1)
    return out
