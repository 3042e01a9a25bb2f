"""Pure-Python/numpy implementations of the projection kernels.

These mirror ``_ckernels.pyx`` function-for-function and are used whenever the
compiled extension is missing (or ``AGGSOLVE_PURE_PYTHON=1`` is set).
"""
import numpy as np


def project_box(x, lower, upper):
    return np.minimum(np.maximum(np.asarray(x, dtype=float), lower), upper)


def project_ball(x, center, radius):
    x = np.asarray(x, dtype=float)
    diff = x - center
    nrm = np.sqrt(diff @ diff)
    if nrm <= radius:
        return x.copy()
    return center + diff * (radius / nrm)


def soft_threshold(x, thresh):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def _hinge_sums(c, lam):
    """``sum_j max(lam - c_j, 0)`` for every entry of ``lam``."""
    c = np.sort(c)
    prefix = np.concatenate(([0.0], np.cumsum(c)))
    idx = np.searchsorted(c, lam, side="left")
    return idx * lam - prefix[idx]


def project_balanced(x, cap):
    """Project ``x = (g, s)`` onto ``{0 <= g <= cap, s >= 0, sum(s) == sum(g)}``.

    Exact: the KKT system reduces to a scalar piecewise-linear equation in the
    multiplier of the balance constraint, solved over its sorted breakpoints.
    """
    x = np.asarray(x, dtype=float)
    n = x.size // 2
    g0, s0 = x[:n], x[n:]
    cap = np.broadcast_to(np.asarray(cap, dtype=float), (n,))
    bps = np.sort(np.concatenate([s0, -g0, cap - g0]))
    # sum(s) - sum(g) at each breakpoint; nonincreasing
    s_sum = _hinge_sums(-s0, -bps)
    g_sum = _hinge_sums(-g0, bps) - _hinge_sums(cap - g0, bps)
    vals = s_sum - g_sum
    j = int(np.searchsorted(-vals, 0.0, side="left"))
    if j == 0:
        lam = bps[0]
    elif j < bps.size and vals[j] == 0.0:
        lam = bps[j]
    else:
        lo, hi = bps[j - 1], bps[j]
        flo, fhi = vals[j - 1], vals[j]
        lam = lo + (hi - lo) * flo / (flo - fhi)
    out = np.empty_like(x)
    out[:n] = np.minimum(np.maximum(g0 + lam, 0.0), cap)
    out[n:] = np.maximum(s0 - lam, 0.0)
    return out


def dykstra_polyhedron(x, A, b, E, E_pinv, d, tol, max_iter):
    """Dykstra's alternating projections onto ``{A y <= b} ∩ {E y == d}``.

    The affine part is projected in one shot via its pseudo-inverse; each
    halfspace carries its own Dykstra correction. Returns ``(y, iters, err)``
    where ``err`` is the largest constraint violation at exit.
    """
    y = np.array(x, dtype=float)
    n_h = A.shape[0]
    has_eq = E.shape[0] > 0
    corr = np.zeros((n_h + 1, y.size))
    row_sq = np.einsum("ij,ij->i", A, A)
    err = np.inf
    for it in range(1, max_iter + 1):
        y_prev = y.copy()
        for j in range(n_h):
            z = y + corr[j]
            viol = A[j] @ z - b[j]
            if viol > 0.0 and row_sq[j] > 0.0:
                y = z - (viol / row_sq[j]) * A[j]
            else:
                y = z.copy()
            corr[j] = z - y
        if has_eq:
            # affine sets need no correction term
            y = y - E_pinv @ (E @ y - d)
        err = 0.0
        if n_h:
            err = max(err, float(np.max(A @ y - b)))
        if has_eq:
            err = max(err, float(np.max(np.abs(E @ y - d))))
        step = float(np.max(np.abs(y - y_prev))) if y.size else 0.0
        if step <= tol and err <= tol:
            return y, it, max(err, 0.0)
    return y, max_iter, max(err, 0.0)


def run_linear_segment(x, V, H, avg_total, scalars, offs, koffs, Pf, Pofs, Cf, Cofs, Af, Aofs, cvec,
                       Lf, Lofs, set_kind, lo, hi, l1w, Ws, w_idx, alpha, eta, U, use_noise,
                       abort_factor, hier_on, Yofs, HMofs, HLf, HUf, Hl0, Hu0, Hz, S, mus):
    """Reference version of the compiled linear-game segment loop (same in-place contract)."""
    N, m = V.shape
    dims = np.diff(offs)
    kdims = np.diff(koffs)
    if hier_on:
        rows = np.diff(Yofs)
        HL = [HLf[HMofs[i]:HMofs[i] + rows[i] * dims[i]].reshape(rows[i], dims[i]) for i in range(N)]
        HU = [HUf[HMofs[i]:HMofs[i] + rows[i] * dims[i]].reshape(rows[i], dims[i]) for i in range(N)]
    P = [Pf[Pofs[i]:Pofs[i] + dims[i] ** 2].reshape(dims[i], dims[i]) for i in range(N)]
    C = [Cf[Cofs[i]:Cofs[i] + dims[i] * m].reshape(dims[i], m) for i in range(N)]
    A = [Af[Aofs[i]:Aofs[i] + m * dims[i]].reshape(m, dims[i]) for i in range(N)]
    L = [Lf[Lofs[i]:Lofs[i] + dims[i] * kdims[i]].reshape(dims[i], kdims[i]) for i in range(N)]
    for t in range(alpha.shape[0]):
        amax = alpha[t].max()
        avg_total += amax * x
        scalars[0] += amax
        Vhat = Ws[w_idx[t]] @ V
        for i in range(N):
            o, n = offs[i], dims[i]
            xi = x[o:o + n]
            q = P[i] @ xi + C[i] @ (N * Vhat[i]) + cvec[o:o + n]
            if use_noise:
                q = q + L[i] @ U[t, koffs[i]:koffs[i + 1]]
            if hier_on and rows[i]:
                sl = slice(Yofs[i], Yofs[i + 1])
                s = S[t, o:o + n]
                xp = xi + mus[t] * s
                dp = Hz[sl] @ np.maximum(HL[i] @ xp + Hl0[sl], HU[i] @ xp + Hu0[sl])
                d0 = Hz[sl] @ np.maximum(HL[i] @ xi + Hl0[sl], HU[i] @ xi + Hu0[sl])
                q = q + (n / mus[t]) * (dp - d0) * s
            yv = xi - alpha[t, i] * (q + eta[t, i] * xi)
            kind = set_kind[i]
            if kind == 0:
                xn = project_box(yv, lo[o:o + n], hi[o:o + n])
            elif kind == 1:
                xn = project_balanced(yv, hi[o:o + n // 2])
            elif kind == 2:
                xn = soft_threshold(yv, alpha[t, i] * l1w[i])
            else:
                xn = project_ball(yv, lo[o:o + n], hi[o])
            x[o:o + n] = xn
            hn = A[i] @ xn
            Vhat[i] += hn - H[i]
            H[i] = hn
        V[:] = Vhat
        drift = float(np.max(np.abs((V - H).sum(axis=0))))
        scalars[2] = drift
        if not drift <= scalars[1]:
            scalars[1] = drift
        scale = 1.0 + float(np.max(np.linalg.norm(H, axis=1)))
        if not drift <= abort_factor * N * scale:
            return t
    return -1
