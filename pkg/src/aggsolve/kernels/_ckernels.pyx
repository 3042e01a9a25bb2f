# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled projection kernels; see ``_pykernels`` for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from libc.stdlib cimport qsort

cnp.import_array()


cdef cnp.ndarray _as_vec(v, Py_ssize_t n):
    cdef cnp.ndarray a = np.asarray(v, dtype=np.float64)
    if a.ndim == 0:
        return np.full(n, float(a))
    return np.ascontiguousarray(a.ravel())


def project_box(x, lower, upper):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lo = _as_vec(lower, n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hi = _as_vec(upper, n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = xv[i]
        if v < lo[i]:
            v = lo[i]
        if v > hi[i]:
            v = hi[i]
        out[i] = v
    return out


def project_ball(x, center, double radius):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] c = _as_vec(center, n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef Py_ssize_t i
    cdef double nrm = 0.0, scale
    for i in range(n):
        nrm += (xv[i] - c[i]) * (xv[i] - c[i])
    nrm = sqrt(nrm)
    if nrm <= radius:
        for i in range(n):
            out[i] = xv[i]
        return out
    scale = radius / nrm
    for i in range(n):
        out[i] = c[i] + (xv[i] - c[i]) * scale
    return out


def soft_threshold(x, double thresh):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = xv[i]
        if v > thresh:
            out[i] = v - thresh
        elif v < -thresh:
            out[i] = v + thresh
        else:
            out[i] = 0.0
    return out


cdef double _balance(double lam, double* g0, double* s0, double* cap, Py_ssize_t n) nogil:
    cdef double tot = 0.0, s, g
    cdef Py_ssize_t j
    for j in range(n):
        s = s0[j] - lam
        if s > 0.0:
            tot += s
        g = g0[j] + lam
        if g > cap[j]:
            g = cap[j]
        if g > 0.0:
            tot -= g
    return tot


cdef int _cmp_double(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0], y = (<const double*>b)[0]
    return (x > y) - (x < y)


cdef void _sort(double* a, Py_ssize_t n) nogil:
    cdef Py_ssize_t i, j
    cdef double key
    if n > 32:
        qsort(a, n, sizeof(double), _cmp_double)
        return
    for i in range(1, n):
        key = a[i]
        j = i - 1
        while j >= 0 and a[j] > key:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = key


cdef void _proj_balanced(double* xin, double* cap, Py_ssize_t n, double* out, double* bps) nogil:
    """Project ``(g, s)`` (length ``2n``) onto the balanced capacity set; ``bps`` holds ``3n`` doubles."""
    cdef double* g0 = xin
    cdef double* s0 = xin + n
    cdef Py_ssize_t j, lo, hi, mid, m = 3 * n
    cdef double lam, v, vlo, g, s
    for j in range(n):
        bps[j] = s0[j]
        bps[n + j] = -g0[j]
        bps[2 * n + j] = cap[j] - g0[j]
    _sort(bps, m)
    lam = bps[0]
    vlo = _balance(bps[0], g0, s0, cap, n)
    if vlo > 0.0:
        # balance is nonincreasing and <= 0 at the last breakpoint
        lo = 0
        hi = m - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if _balance(bps[mid], g0, s0, cap, n) > 0.0:
                lo = mid
            else:
                hi = mid
        vlo = _balance(bps[lo], g0, s0, cap, n)
        v = _balance(bps[hi], g0, s0, cap, n)
        if v == 0.0:
            lam = bps[hi]
        else:
            lam = bps[lo] + (bps[hi] - bps[lo]) * vlo / (vlo - v)
    for j in range(n):
        g = g0[j] + lam
        if g > cap[j]:
            g = cap[j]
        if g < 0.0:
            g = 0.0
        s = s0[j] - lam
        out[j] = g
        out[n + j] = s if s > 0.0 else 0.0


def project_balanced(x, cap):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0] // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=1] capv = _as_vec(cap, n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] bps = np.empty(3 * n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(2 * n)
    _proj_balanced(&xv[0], &capv[0], n, &out[0], &bps[0])
    return out


def dykstra_polyhedron(x, A, b, E, E_pinv, d, double tol, Py_ssize_t max_iter):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.array(x, dtype=np.float64).ravel()
    cdef double[:, :] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, :] Ev = np.ascontiguousarray(E, dtype=np.float64)
    cdef double[:, :] Pv = np.ascontiguousarray(E_pinv, dtype=np.float64)
    cdef double[:] dv = np.ascontiguousarray(d, dtype=np.float64)
    cdef Py_ssize_t n = y.shape[0], n_h = Av.shape[0], n_e = Ev.shape[0]
    cdef double[:, :] corr = np.zeros((n_h + 1, n))
    cdef double[:] z = np.empty(n)
    cdef double[:] yprev = np.empty(n)
    cdef double[:] res = np.empty(max(n_e, 1))
    cdef double[:] row_sq = np.empty(max(n_h, 1))
    cdef double[:] yv = y
    cdef Py_ssize_t it, j, l, r
    cdef double viol, t, err = 1e300, step, dif
    for j in range(n_h):
        t = 0.0
        for l in range(n):
            t += Av[j, l] * Av[j, l]
        row_sq[j] = t
    for it in range(1, max_iter + 1):
        for l in range(n):
            yprev[l] = yv[l]
        for j in range(n_h):
            viol = -bv[j]
            for l in range(n):
                z[l] = yv[l] + corr[j, l]
                viol += Av[j, l] * z[l]
            if viol > 0.0 and row_sq[j] > 0.0:
                t = viol / row_sq[j]
                for l in range(n):
                    yv[l] = z[l] - t * Av[j, l]
            else:
                for l in range(n):
                    yv[l] = z[l]
            for l in range(n):
                corr[j, l] = z[l] - yv[l]
        if n_e > 0:
            for r in range(n_e):
                t = -dv[r]
                for l in range(n):
                    t += Ev[r, l] * yv[l]
                res[r] = t
            for l in range(n):
                t = 0.0
                for r in range(n_e):
                    t += Pv[l, r] * res[r]
                yv[l] -= t
        err = 0.0
        for j in range(n_h):
            t = -bv[j]
            for l in range(n):
                t += Av[j, l] * yv[l]
            if t > err:
                err = t
        for r in range(n_e):
            t = -dv[r]
            for l in range(n):
                t += Ev[r, l] * yv[l]
            if fabs(t) > err:
                err = fabs(t)
        step = 0.0
        for l in range(n):
            dif = fabs(yv[l] - yprev[l])
            if dif > step:
                step = dif
        if step <= tol and err <= tol:
            return y, it, err
    return y, max_iter, err


def run_linear_segment(double[::1] x, double[:, ::1] V, double[:, ::1] H,
                       double[::1] avg_total, double[::1] scalars,
                       long[::1] offs, long[::1] koffs,
                       double[::1] Pf, long[::1] Pofs, double[::1] Cf, long[::1] Cofs,
                       double[::1] Af, long[::1] Aofs, double[::1] cvec,
                       double[::1] Lf, long[::1] Lofs,
                       int[::1] set_kind, double[::1] lo, double[::1] hi, double[::1] l1w,
                       double[:, :, ::1] Ws, long[::1] w_idx,
                       double[:, ::1] alpha, double[:, ::1] eta, double[:, ::1] U,
                       int use_noise, double abort_factor,
                       int hier_on, long[::1] Yofs, long[::1] HMofs,
                       double[::1] HLf, double[::1] HUf, double[::1] Hl0, double[::1] Hu0,
                       double[::1] Hz, double[:, ::1] S, double[::1] mus):
    """Run ``alpha.shape[0]`` iterations of the distributed scheme for a linear game in place.

    ``scalars`` holds ``[avg_weight, max_drift, last_drift]``. Returns ``-1`` on
    success or the offending local iteration if aggregate conservation breaks.

    With ``hier_on`` each player ``i`` also adds the two-point smoothed gradient of
    ``sum_j z_j max(L_j x + l_j, U_j x + u_j)`` (rows ``Yofs[i]:Yofs[i+1]``) along the
    unit directions ``S[t]`` with radius ``mus[t]``.
    """
    cdef Py_ssize_t n_it = alpha.shape[0], N = V.shape[0], m = V.shape[1]
    cdef Py_ssize_t maxdim = 0, i, j, l, r, t, ni, ki, o, n2
    for i in range(N):
        if offs[i + 1] - offs[i] > maxdim:
            maxdim = offs[i + 1] - offs[i]
    cdef double[::1] Vhat_buf = np.empty(N * m)
    cdef double[::1] y = np.empty(maxdim)
    cdef double[::1] xo = np.empty(maxdim)
    cdef double[::1] bps = np.empty(3 * maxdim + 1)
    cdef double[::1] z = np.empty(m)
    cdef double[::1] colsum = np.empty(m)
    cdef double a, e, amax, acc, drift, scale, nrm, hv, thr, w
    cdef double mu, gcoef, dpl, d0, lp, up, lz, uz, xs
    cdef Py_ssize_t jr, base
    cdef long status = -1
    with nogil:
        for t in range(n_it):
            # time average with alpha_max
            amax = alpha[t, 0]
            for i in range(1, N):
                if alpha[t, i] > amax:
                    amax = alpha[t, i]
            for l in range(offs[N]):
                avg_total[l] += amax * x[l]
            scalars[0] += amax
            # consensus
            w = 0.0
            for i in range(N):
                for r in range(m):
                    acc = 0.0
                    for j in range(N):
                        acc = acc + Ws[w_idx[t], i, j] * V[j, r]
                    Vhat_buf[i * m + r] = acc
            # strategy and average steps
            for i in range(N):
                o = offs[i]
                ni = offs[i + 1] - o
                ki = koffs[i + 1] - koffs[i]
                a = alpha[t, i]
                e = eta[t, i]
                for r in range(m):
                    z[r] = N * Vhat_buf[i * m + r]
                gcoef = 0.0
                if hier_on and Yofs[i + 1] > Yofs[i]:
                    mu = mus[t]
                    dpl = 0.0
                    d0 = 0.0
                    for jr in range(Yofs[i], Yofs[i + 1]):
                        base = HMofs[i] + (jr - Yofs[i]) * ni
                        lp = Hl0[jr]
                        up = Hu0[jr]
                        lz = Hl0[jr]
                        uz = Hu0[jr]
                        for l in range(ni):
                            xs = x[o + l] + mu * S[t, o + l]
                            lp = lp + HLf[base + l] * xs
                            up = up + HUf[base + l] * xs
                            lz = lz + HLf[base + l] * x[o + l]
                            uz = uz + HUf[base + l] * x[o + l]
                        dpl = dpl + Hz[jr] * (lp if lp > up else up)
                        d0 = d0 + Hz[jr] * (lz if lz > uz else uz)
                    gcoef = ni / mu * (dpl - d0)
                for l in range(ni):
                    acc = cvec[o + l]
                    for j in range(ni):
                        acc = acc + Pf[Pofs[i] + l * ni + j] * x[o + j]
                    for r in range(m):
                        acc = acc + Cf[Cofs[i] + l * m + r] * z[r]
                    if use_noise:
                        for j in range(ki):
                            acc = acc + Lf[Lofs[i] + l * ki + j] * U[t, koffs[i] + j]
                    if gcoef != 0.0:
                        acc = acc + gcoef * S[t, o + l]
                    y[l] = x[o + l] - a * (acc + e * x[o + l])
                if set_kind[i] == 0:
                    for l in range(ni):
                        hv = y[l]
                        if hv < lo[o + l]:
                            hv = lo[o + l]
                        if hv > hi[o + l]:
                            hv = hi[o + l]
                        xo[l] = hv
                elif set_kind[i] == 1:
                    n2 = ni // 2
                    _proj_balanced(&y[0], &hi[o], n2, &xo[0], &bps[0])
                elif set_kind[i] == 2:
                    thr = a * l1w[i]
                    for l in range(ni):
                        if y[l] > thr:
                            xo[l] = y[l] - thr
                        elif y[l] < -thr:
                            xo[l] = y[l] + thr
                        else:
                            xo[l] = 0.0
                else:
                    nrm = 0.0
                    for l in range(ni):
                        nrm += (y[l] - lo[o + l]) * (y[l] - lo[o + l])
                    nrm = sqrt(nrm)
                    if nrm <= hi[o]:
                        for l in range(ni):
                            xo[l] = y[l]
                    else:
                        for l in range(ni):
                            xo[l] = lo[o + l] + (y[l] - lo[o + l]) * (hi[o] / nrm)
                for l in range(ni):
                    x[o + l] = xo[l]
                for r in range(m):
                    acc = 0.0
                    for l in range(ni):
                        acc = acc + Af[Aofs[i] + r * ni + l] * xo[l]
                    Vhat_buf[i * m + r] += acc - H[i, r]
                    H[i, r] = acc
            # commit and check conservation
            for r in range(m):
                colsum[r] = 0.0
            scale = 0.0
            for i in range(N):
                nrm = 0.0
                for r in range(m):
                    V[i, r] = Vhat_buf[i * m + r]
                    colsum[r] += V[i, r] - H[i, r]
                    nrm += H[i, r] * H[i, r]
                nrm = sqrt(nrm)
                if nrm > scale:
                    scale = nrm
            drift = 0.0
            for r in range(m):
                # the second test keeps a NaN once seen
                if fabs(colsum[r]) > drift or colsum[r] != colsum[r]:
                    drift = fabs(colsum[r])
            scalars[2] = drift
            if not drift <= scalars[1]:
                scalars[1] = drift
            if not drift <= abort_factor * N * (1.0 + scale):
                status = t
                break
    return status
