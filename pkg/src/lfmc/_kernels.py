"""Compiled per-environment simulation step.

Same equations as :func:`lfmc.robot.step_arrays`, written as scalar loops so
that numba can run a batch of environments without numpy temporaries.  The
numpy version stays the reference; tests check the two agree.
"""

import numba
import numpy as np

_LEG_IDX = np.array([[3, 4], [5, 6]], dtype=np.int64)
_SIGMA = np.array([1.0, -1.0])


@numba.njit(cache=True, inline="always")
def _ground(heights, row, x0, spacing, x):
    n = heights.shape[1]
    u = (x - x0) / spacing
    if u <= 0.0:
        return heights[row, 0]
    if u >= n - 1.0:
        return heights[row, n - 1]
    i = int(u)
    f = u - i
    return heights[row, i] * (1.0 - f) + heights[row, i + 1] * f


@numba.njit(cache=True)
def _cholesky_solve(M, R, L, n, k):
    """Solve M X = R in place (R overwritten with X); M symmetric positive definite."""
    for i in range(n):
        for j in range(i + 1):
            s = M[i, j]
            for p in range(j):
                s -= L[i, p] * L[j, p]
            if i == j:
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    for c in range(k):
        for i in range(n):
            s = R[i, c]
            for p in range(i):
                s -= L[i, p] * R[p, c]
            R[i, c] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = R[i, c]
            for p in range(i + 1, n):
                s -= L[p, i] * R[p, c]
            R[i, c] = s / L[i, i]


@numba.njit(cache=True)
def _x_momentum(qb, vb, ms, base_mass, base_length, thigh_mass, thigh_length, shank_mass, shank_length):
    """Total horizontal linear momentum sum(m * xdot_com) of one robot."""
    th = qb[2]
    w0 = vb[2]
    p = base_mass * ms * vb[0]
    for leg in range(2):
        hi = _LEG_IDX[leg, 0]
        ki = _LEG_IDX[leg, 1]
        hs = _SIGMA[leg] * base_length * 0.5
        a1 = th + qb[hi]
        a2 = a1 + qb[ki]
        w1 = w0 + vb[hi]
        w2 = w1 + vb[ki]
        base_x = vb[0] - hs * np.sin(th) * w0
        p += thigh_mass * ms * (base_x + 0.5 * thigh_length * np.cos(a1) * w1)
        p += shank_mass * ms * (base_x + thigh_length * np.cos(a1) * w1 + 0.5 * shank_length * np.cos(a2) * w2)
    return p


@numba.njit(cache=True)
def step_batch(q, v, tau, mass_scale, friction, heights, x0, spacing, dt,
               base_mass, base_length, base_inertia, thigh_mass, thigh_length, thigh_inertia,
               shank_mass, shank_length, shank_inertia, foot_radius, gravity,
               stiffness, damping, damping_ramp, q_out, v_out, fn_out, ft_out):
    B = q.shape[0]
    M = np.zeros((7, 7))
    L = np.zeros((7, 7))
    R = np.zeros((7, 3))
    h = np.zeros(7)
    Jc = np.zeros((2, 2, 7))          # foot Jacobians (leg, xz, dof)
    J = np.zeros((2, 7))
    cols = np.zeros(5, dtype=np.int64)
    per_row = heights.shape[0] > 1
    m_total = (base_mass + 2.0 * (thigh_mass + shank_mass))
    for b in range(B):
        ms = mass_scale[b]
        mu = friction[b]
        row = b if per_row else 0
        M[:, :] = 0.0
        h[:] = 0.0
        th = q[b, 2]
        c = np.cos(th)
        s = np.sin(th)
        w0 = v[b, 2]
        mb = base_mass * ms
        M[0, 0] += mb
        M[1, 1] += mb
        M[2, 2] += base_inertia * ms
        h[1] += mb * gravity
        for leg in range(2):
            hi = _LEG_IDX[leg, 0]
            ki = _LEG_IDX[leg, 1]
            hs = _SIGMA[leg] * base_length * 0.5
            a1 = th + q[b, hi]
            a2 = a1 + q[b, ki]
            s1 = np.sin(a1)
            c1 = np.cos(a1)
            s2 = np.sin(a2)
            c2 = np.cos(a2)
            w1 = w0 + v[b, hi]
            w2 = w1 + v[b, ki]
            cols[0] = 0
            cols[1] = 1
            cols[2] = 2
            cols[3] = hi
            cols[4] = ki
            for link in range(3):
                if link == 0:
                    pa, pb, m, inertia = 0.5 * thigh_length, 0.0, thigh_mass * ms, thigh_inertia * ms
                elif link == 1:
                    pa, pb, m, inertia = thigh_length, 0.5 * shank_length, shank_mass * ms, shank_inertia * ms
                else:
                    pa, pb, m, inertia = thigh_length, shank_length, 0.0, 0.0
                lx = pa * c1 + pb * c2
                lz = pa * s1 + pb * s2
                J[:, :] = 0.0
                J[0, 0] = 1.0
                J[1, 1] = 1.0
                J[0, 2] = -hs * s + lx
                J[1, 2] = hs * c + lz
                J[0, hi] = lx
                J[1, hi] = lz
                J[0, ki] = pb * c2
                J[1, ki] = pb * s2
                if link == 2:
                    for r in range(2):
                        for d in range(7):
                            Jc[leg, r, d] = J[r, d]
                    continue
                bx = -hs * c * w0 * w0 - pa * s1 * w1 * w1 - pb * s2 * w2 * w2
                bz = -hs * s * w0 * w0 + pa * c1 * w1 * w1 + pb * c2 * w2 * w2
                for ii in range(5):
                    i = cols[ii]
                    h[i] += m * (J[0, i] * bx + J[1, i] * bz + gravity * J[1, i])
                    for jj in range(5):
                        j = cols[jj]
                        M[i, j] += m * (J[0, i] * J[0, j] + J[1, i] * J[1, j])
                # angular part: w has ones on pitch, hip and (for the shank) knee
                nw = 3 if link == 0 else 4
                for ii in range(2, 2 + nw - 1):
                    for jj in range(2, 2 + nw - 1):
                        M[cols[ii], cols[jj]] += inertia
        # contacts
        fn0 = 0.0
        fn1 = 0.0
        for leg in range(2):
            fx = q[b, 0]
            fz = q[b, 1]
            vfx = 0.0
            vfz = 0.0
            # foot position from kinematics
            hi = _LEG_IDX[leg, 0]
            ki = _LEG_IDX[leg, 1]
            hs = _SIGMA[leg] * base_length * 0.5
            a1 = th + q[b, hi]
            a2 = a1 + q[b, ki]
            fx += hs * c + thigh_length * np.sin(a1) + shank_length * np.sin(a2)
            fz += hs * s - thigh_length * np.cos(a1) - shank_length * np.cos(a2)
            for d in range(7):
                vfx += Jc[leg, 0, d] * v[b, d]
                vfz += Jc[leg, 1, d] * v[b, d]
            pen = _ground(heights, row, x0, spacing, fx) + foot_radius - fz
            f = 0.0
            if pen > 0.0:
                ramp = pen / damping_ramp
                if ramp > 1.0:
                    ramp = 1.0
                f = stiffness * pen - damping * ramp * vfz
                if f < 0.0:
                    f = 0.0
            if leg == 0:
                fn0 = f
            else:
                fn1 = f
            fn_out[b, leg] = f
        for d in range(7):
            rhs = -h[d] + Jc[0, 1, d] * fn0 + Jc[1, 1, d] * fn1
            if d >= 3:
                rhs += tau[b, d - 3]
            R[d, 0] = rhs
            R[d, 1] = Jc[0, 0, d]
            R[d, 2] = Jc[1, 0, d]
        _cholesky_solve(M, R, L, 7, 3)
        ft0 = 0.0
        ft1 = 0.0
        act0 = fn0 > 0.0
        act1 = fn1 > 0.0
        if act0 or act1:
            A00 = 0.0
            A01 = 0.0
            A11 = 0.0
            b0 = 0.0
            b1 = 0.0
            for d in range(7):
                A00 += Jc[0, 0, d] * R[d, 1]
                A01 += Jc[0, 0, d] * R[d, 2]
                A11 += Jc[1, 0, d] * R[d, 2]
                b0 += Jc[0, 0, d] * (v[b, d] / dt + R[d, 0])
                b1 += Jc[1, 0, d] * (v[b, d] / dt + R[d, 0])
            if act0 and act1:
                det = A00 * A11 - A01 * A01
                ft0 = -(A11 * b0 - A01 * b1) / det
                ft1 = -(A00 * b1 - A01 * b0) / det
            elif act0:
                ft0 = -b0 / A00
            else:
                ft1 = -b1 / A11
            lim0 = mu * fn0
            lim1 = mu * fn1
            ft0 = min(max(ft0, -lim0), lim0)
            ft1 = min(max(ft1, -lim1), lim1)
        ft_out[b, 0] = ft0
        ft_out[b, 1] = ft1
        for d in range(7):
            acc = R[d, 0] + R[d, 1] * ft0 + R[d, 2] * ft1
            v_out[b, d] = v[b, d] + dt * acc
            q_out[b, d] = q[b, d] + dt * v_out[b, d]
        q_out[b, 1] += 0.5 * dt * dt * gravity
        # restore exact horizontal momentum balance: p1 = p0 + dt * sum(ft)
        p0 = _x_momentum(q[b], v[b], ms, base_mass, base_length, thigh_mass, thigh_length, shank_mass, shank_length)
        p1 = _x_momentum(q_out[b], v_out[b], ms, base_mass, base_length, thigh_mass, thigh_length, shank_mass,
                         shank_length)
        v_out[b, 0] += (p0 + dt * (ft0 + ft1) - p1) / (m_total * ms)
