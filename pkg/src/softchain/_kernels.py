"""Numerical kernels for the chain dynamics.

Everything here operates on flat float64 arrays so the hot loops compile
under numba; the module still imports (slowly) without numba, which keeps
the kernels testable in plain Python.

Spatial quantities use Plucker coordinates about the world origin with
(angular; linear) block order: a motion vector is (omega, v_O), a force
vector (n_O, f).  A revolute joint with world axis ``a`` through world
point ``r`` has motion subspace S = (a, r x a).
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def fk_arm(q, base_r, base_p, pre_z, half,
           ax, apt, body_r, body_p):
    """Forward kinematics of one arm chain.

    Fills the world joint axes/points (2 per segment) and the body frames
    (origin at each disk centroid).  Segment s applies
    Trans(pre_z) * Rx(q[2s]) * Ry(q[2s+1]) * Trans(half).
    """
    ns = pre_z.shape[0]
    r = np.empty((3, 3))
    tmp = np.empty((3, 3))
    p = np.empty(3)
    for i in range(3):
        p[i] = base_p[i]
        for j in range(3):
            r[i, j] = base_r[i, j]
    for s in range(ns):
        # advance along the local z axis to the UJ center
        for i in range(3):
            p[i] = p[i] + r[i, 2] * pre_z[s]
        for i in range(3):
            ax[2 * s, i] = r[i, 0]
            apt[2 * s, i] = p[i]
        c = np.cos(q[2 * s])
        sn = np.sin(q[2 * s])
        # r = r @ Rx(q)
        for i in range(3):
            y = r[i, 1]
            z = r[i, 2]
            tmp[i, 0] = r[i, 0]
            tmp[i, 1] = y * c + z * sn
            tmp[i, 2] = -y * sn + z * c
        for i in range(3):
            for j in range(3):
                r[i, j] = tmp[i, j]
        for i in range(3):
            ax[2 * s + 1, i] = r[i, 1]
            apt[2 * s + 1, i] = p[i]
        c = np.cos(q[2 * s + 1])
        sn = np.sin(q[2 * s + 1])
        # r = r @ Ry(q)
        for i in range(3):
            x = r[i, 0]
            z = r[i, 2]
            tmp[i, 0] = x * c - z * sn
            tmp[i, 1] = r[i, 1]
            tmp[i, 2] = x * sn + z * c
        for i in range(3):
            for j in range(3):
                r[i, j] = tmp[i, j]
        for i in range(3):
            p[i] = p[i] + r[i, 2] * half[s]
        for i in range(3):
            body_p[s, i] = p[i]
            for j in range(3):
                body_r[s, i, j] = r[i, j]


@njit(cache=True)
def body_coms(body_r, body_p, com_z, com_w):
    ns = body_p.shape[0]
    for s in range(ns):
        for i in range(3):
            com_w[s, i] = body_p[s, i] + body_r[s, i, 2] * com_z[s]


@njit(cache=True)
def _spatial_inertia_origin(body_r, com_w, mass, i_t, i_a, io):
    """6x6 spatial inertia of each body about the world origin."""
    ns = com_w.shape[0]
    ic = np.empty((3, 3))
    for s in range(ns):
        m = mass[s]
        # world-frame rotational inertia about the COM: R diag(It,It,Ia) R^T
        for i in range(3):
            for j in range(3):
                ic[i, j] = (body_r[s, i, 0] * body_r[s, j, 0] * i_t[s]
                            + body_r[s, i, 1] * body_r[s, j, 1] * i_t[s]
                            + body_r[s, i, 2] * body_r[s, j, 2] * i_a[s])
        cx, cy, cz = com_w[s, 0], com_w[s, 1], com_w[s, 2]
        # skew(c)
        sk = np.zeros((3, 3))
        sk[0, 1] = -cz
        sk[0, 2] = cy
        sk[1, 0] = cz
        sk[1, 2] = -cx
        sk[2, 0] = -cy
        sk[2, 1] = cx
        # top-left: Ic - m c~ c~ ; top-right: m c~ ; bottom-left: -m c~ ; bottom-right: m I
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for k in range(3):
                    acc += sk[i, k] * sk[k, j]
                io[s, i, j] = ic[i, j] - m * acc
                io[s, i, 3 + j] = m * sk[i, j]
                io[s, 3 + i, j] = -m * sk[i, j]
                io[s, 3 + i, 3 + j] = m if i == j else 0.0


@njit(cache=True)
def crba_arm(ax, apt, body_r, com_w, mass, i_t, i_a, m_out):
    """Joint-space mass matrix via the composite-rigid-body recursion."""
    ns = com_w.shape[0]
    nq = 2 * ns
    io = np.empty((ns, 6, 6))
    _spatial_inertia_origin(body_r, com_w, mass, i_t, i_a, io)
    for s in range(ns - 2, -1, -1):
        for i in range(6):
            for j in range(6):
                io[s, i, j] += io[s + 1, i, j]
    s_all = np.empty((nq, 6))
    tmp = np.empty(3)
    for k in range(nq):
        a = ax[k]
        r = apt[k]
        _cross(r, a, tmp)
        for i in range(3):
            s_all[k, i] = a[i]
            s_all[k, 3 + i] = tmp[i]
    f = np.empty(6)
    for k in range(nq):
        b = k // 2
        for i in range(6):
            acc = 0.0
            for j in range(6):
                acc += io[b, i, j] * s_all[k, j]
            f[i] = acc
        for l in range(k + 1):
            acc = 0.0
            for i in range(6):
                acc += f[i] * s_all[l, i]
            m_out[k, l] = acc
            m_out[l, k] = acc


@njit(cache=True)
def rnea_bias_arm(qd, ax, apt, body_r, com_w, mass, i_t, i_a,
                  base_vel, base_acc, tau_bias):
    """Coriolis/centrifugal + gravity torque via a zero-acceleration RNEA.

    ``base_acc`` must already carry the gravity trick (-g) plus any
    prescribed carriage acceleration; ``base_vel`` the carriage velocity.
    Returns tau such that M(q) qdd + tau = tau_applied.
    """
    ns = com_w.shape[0]
    nq = 2 * ns
    io = np.empty((ns, 6, 6))
    _spatial_inertia_origin(body_r, com_w, mass, i_t, i_a, io)

    vw = np.zeros(3)
    vv = np.empty(3)
    aw = np.zeros(3)
    av = np.empty(3)
    for i in range(3):
        vv[i] = base_vel[i]
        av[i] = base_acc[i]
    s_all = np.empty((nq, 6))
    tmp = np.empty(3)
    tmp2 = np.empty(3)
    f_body = np.empty((ns, 6))
    hv = np.empty(6)
    fa = np.empty(6)
    for s in range(ns):
        for jj in range(2):
            k = 2 * s + jj
            a = ax[k]
            r = apt[k]
            _cross(r, a, tmp)
            for i in range(3):
                s_all[k, i] = a[i]
                s_all[k, 3 + i] = tmp[i]
            qdk = qd[k]
            # v_new = v + S qd
            for i in range(3):
                vw[i] += a[i] * qdk
                vv[i] += tmp[i] * qdk
            # a += v_new x^ (S qd):  (w x Sw; w x Sv + v x Sw) * qd
            _cross(vw, s_all[k, :3], tmp2)
            for i in range(3):
                aw[i] += tmp2[i] * qdk
            _cross(vw, s_all[k, 3:], tmp2)
            for i in range(3):
                av[i] += tmp2[i] * qdk
            _cross(vv, s_all[k, :3], tmp2)
            for i in range(3):
                av[i] += tmp2[i] * qdk
        # f = IO a^ + v x* (IO v^)
        for i in range(6):
            acc = 0.0
            for j in range(3):
                acc += io[s, i, j] * vw[j] + io[s, i, 3 + j] * vv[j]
            hv[i] = acc
        for i in range(6):
            acc = 0.0
            for j in range(3):
                acc += io[s, i, j] * aw[j] + io[s, i, 3 + j] * av[j]
            fa[i] = acc
        # v x* h: (w x h_n + v x h_f ; w x h_f)
        _cross(vw, hv[:3], tmp)
        _cross(vv, hv[3:], tmp2)
        for i in range(3):
            f_body[s, i] = fa[i] + tmp[i] + tmp2[i]
        _cross(vw, hv[3:], tmp)
        for i in range(3):
            f_body[s, 3 + i] = fa[3 + i] + tmp[i]
    # backward suffix accumulation
    g = np.zeros(6)
    for s in range(ns - 1, -1, -1):
        for i in range(6):
            g[i] += f_body[s, i]
        for jj in range(2):
            k = 2 * s + jj
            acc = 0.0
            for i in range(6):
                acc += s_all[k, i] * g[i]
            tau_bias[k] = acc


@njit(cache=True)
def tendon_forces_arm(pressures_pa, area, ax, apt, body_r, body_p,
                      base_r, base_p, lo_body, lo_z, att_r, seg_joint,
                      tau, lengths):
    """Generalized forces from the four-chamber spatial tendons.

    Chamber c of joint j connects matching attachment points (radius
    ``att_r``, directions +x,-x,+y,-y) on consecutive disks; the pneumatic
    force area*p pushes each pair apart along the connecting line.  Only
    the segment's own two joints feel the pair (the forces cancel for all
    upstream joints).  ``lengths`` accumulates the per-chamber tendon path
    for energy checks.
    """
    ns = body_p.shape[0]
    for i in range(tau.shape[0]):
        tau[i] = 0.0
    for i in range(lengths.shape[0]):
        lengths[i] = 0.0
    lo = np.empty(3)
    up = np.empty(3)
    d = np.empty(3)
    f = np.empty(3)
    lever = np.empty(3)
    mom = np.empty(3)
    dirs = np.empty((4, 2))
    dirs[0, 0] = 1.0
    dirs[0, 1] = 0.0
    dirs[1, 0] = -1.0
    dirs[1, 1] = 0.0
    dirs[2, 0] = 0.0
    dirs[2, 1] = 1.0
    dirs[3, 0] = 0.0
    dirs[3, 1] = -1.0
    for s in range(ns):
        j = seg_joint[s]
        rt = att_r[s]
        lb = lo_body[s]
        zoff = lo_z[s]
        for c in range(4):
            px = rt * dirs[c, 0]
            py = rt * dirs[c, 1]
            pidx = 4 * j + c
            pres = pressures_pa[pidx]
            if lb < 0:
                for i in range(3):
                    lo[i] = (base_p[i] + base_r[i, 0] * px
                             + base_r[i, 1] * py + base_r[i, 2] * zoff)
            else:
                for i in range(3):
                    lo[i] = (body_p[lb, i] + body_r[lb, i, 0] * px
                             + body_r[lb, i, 1] * py + body_r[lb, i, 2] * zoff)
            for i in range(3):
                up[i] = (body_p[s, i] + body_r[s, i, 0] * px
                         + body_r[s, i, 1] * py)
            dist = 0.0
            for i in range(3):
                d[i] = up[i] - lo[i]
                dist += d[i] * d[i]
            dist = np.sqrt(dist)
            lengths[pidx] += dist
            if dist < 1e-12 or pres <= 0.0:
                continue
            mag = area * pres / dist
            for i in range(3):
                f[i] = mag * d[i]
            for jj in range(2):
                k = 2 * s + jj
                for i in range(3):
                    lever[i] = up[i] - apt[k, i]
                _cross(lever, f, mom)
                acc = 0.0
                for i in range(3):
                    acc += ax[k, i] * mom[i]
                tau[k] += acc


@njit(cache=True)
def point_jacobian_cols(ax, apt, point, n_cols, jac):
    """Columns a_k x (p - r_k) of a point Jacobian for the first n_cols joints."""
    d = np.empty(3)
    out = np.empty(3)
    for k in range(n_cols):
        for i in range(3):
            d[i] = point[i] - apt[k, i]
        _cross(ax[k], d, out)
        for i in range(3):
            jac[i, k] = out[i]


@njit(cache=True)
def assemble_contacts(a_mat, rhs, dt,
                      cidx, cgeo, n_contacts,
                      ax_l, apt_l, qd_l, ax_r, apt_r, qd_r,
                      box_x, box_v, box_w,
                      n_l, n_r, v_eps,
                      f_out, v_sol, recover):
    """Add implicit penalty-contact terms to the velocity system.

    Contact i couples side A (``cidx[i,0]``/body ``cidx[i,1]``) and side B
    (columns 2/3); sides are 0=left arm, 1=right arm, 2=box, 3=static.
    ``cgeo`` rows hold point(3), normal A->B(3), depth, k, c, mu,
    bias_rel(3) (prescribed relative velocity, B minus A).

    With ``recover`` nonzero the system is left untouched and the contact
    forces implied by the solved velocities ``v_sol`` are written to
    ``f_out`` instead.
    """
    ntot = rhs.shape[0]
    box_off = n_l + n_r
    jrow = np.empty((3, ntot))
    cols = np.empty(ntot, dtype=np.int64)
    cmat = np.empty((3, 3))
    cj = np.empty((3, ntot))
    vrel = np.empty(3)
    tmp = np.empty(3)
    for ci in range(n_contacts):
        sa = cidx[ci, 0]
        ba = cidx[ci, 1]
        sb = cidx[ci, 2]
        bb = cidx[ci, 3]
        p = cgeo[ci, 0:3]
        nrm = cgeo[ci, 3:6]
        depth = cgeo[ci, 6]
        kn = cgeo[ci, 7]
        cn = cgeo[ci, 8]
        mu = cgeo[ci, 9]
        bias = cgeo[ci, 10:13]
        ncols = 0
        for i in range(3):
            vrel[i] = bias[i]
        # collect jacobian columns for both sides; sign +1 for B, -1 for A
        for side in range(2):
            sgn = -1.0 if side == 0 else 1.0
            s_id = sa if side == 0 else sb
            b_id = ba if side == 0 else bb
            if s_id == 0 or s_id == 1:
                axx = ax_l if s_id == 0 else ax_r
                aptt = apt_l if s_id == 0 else apt_r
                qdd = qd_l if s_id == 0 else qd_r
                off = 0 if s_id == 0 else n_l
                nj = 2 * (b_id + 1)
                for k in range(nj):
                    for i in range(3):
                        tmp[i] = p[i] - aptt[k, i]
                    colv0 = axx[k, 1] * tmp[2] - axx[k, 2] * tmp[1]
                    colv1 = axx[k, 2] * tmp[0] - axx[k, 0] * tmp[2]
                    colv2 = axx[k, 0] * tmp[1] - axx[k, 1] * tmp[0]
                    jrow[0, off + k] = sgn * colv0
                    jrow[1, off + k] = sgn * colv1
                    jrow[2, off + k] = sgn * colv2
                    vrel[0] += sgn * colv0 * qdd[k]
                    vrel[1] += sgn * colv1 * qdd[k]
                    vrel[2] += sgn * colv2 * qdd[k]
                    cols[ncols] = off + k
                    ncols += 1
            elif s_id == 2:
                # box: J = [I3, -skew(p - x)]
                for i in range(3):
                    tmp[i] = p[i] - box_x[i]
                for i in range(3):
                    for j in range(3):
                        jrow[i, box_off + j] = sgn if i == j else 0.0
                jrow[0, box_off + 3 + 0] = 0.0
                jrow[0, box_off + 3 + 1] = sgn * tmp[2]
                jrow[0, box_off + 3 + 2] = -sgn * tmp[1]
                jrow[1, box_off + 3 + 0] = -sgn * tmp[2]
                jrow[1, box_off + 3 + 1] = 0.0
                jrow[1, box_off + 3 + 2] = sgn * tmp[0]
                jrow[2, box_off + 3 + 0] = sgn * tmp[1]
                jrow[2, box_off + 3 + 1] = -sgn * tmp[0]
                jrow[2, box_off + 3 + 2] = 0.0
                for j in range(6):
                    cols[ncols] = box_off + j
                    ncols += 1
                vrel[0] += sgn * (box_v[0] + box_w[1] * tmp[2] - box_w[2] * tmp[1])
                vrel[1] += sgn * (box_v[1] + box_w[2] * tmp[0] - box_w[0] * tmp[2])
                vrel[2] += sgn * (box_v[2] + box_w[0] * tmp[1] - box_w[1] * tmp[0])
            # side 3 (static) contributes nothing
        vn = vrel[0] * nrm[0] + vrel[1] * nrm[1] + vrel[2] * nrm[2]
        fn_hat = kn * depth - cn * vn
        if fn_hat <= 0.0:
            if recover != 0:
                for i in range(3):
                    f_out[ci, i] = 0.0
            continue
        st = 0.0
        for i in range(3):
            tmp[i] = vrel[i] - vn * nrm[i]
            st += tmp[i] * tmp[i]
        st = np.sqrt(st)
        denom = st if st > v_eps else v_eps
        cf = mu * fn_hat / denom
        cnn = kn * dt + cn
        for i in range(3):
            for j in range(3):
                eye = 1.0 if i == j else 0.0
                cmat[i, j] = (cnn - cf) * nrm[i] * nrm[j] + cf * eye
        if recover != 0:
            # force implied by the solved velocities
            for i in range(3):
                vrel[i] = bias[i]
            for cc in range(ncols):
                col = cols[cc]
                for i in range(3):
                    vrel[i] += jrow[i, col] * v_sol[col]
            for i in range(3):
                acc = 0.0
                for j in range(3):
                    acc += cmat[i, j] * vrel[j]
                f_out[ci, i] = kn * depth * nrm[i] - acc
            continue
        # A += dt * J^T C J over the active columns
        for cc in range(ncols):
            col = cols[cc]
            for i in range(3):
                acc = 0.0
                for j in range(3):
                    acc += cmat[i, j] * jrow[j, col]
                cj[i, col] = acc
        for r1 in range(ncols):
            c1 = cols[r1]
            for r2 in range(ncols):
                c2 = cols[r2]
                acc = 0.0
                for i in range(3):
                    acc += jrow[i, c1] * cj[i, c2]
                a_mat[c1, c2] += dt * acc
        # rhs += dt * J^T (n k d - C bias)
        for i in range(3):
            acc = 0.0
            for j in range(3):
                acc += cmat[i, j] * bias[j]
            tmp[i] = kn * depth * nrm[i] - acc
        for cc in range(ncols):
            col = cols[cc]
            acc = 0.0
            for i in range(3):
                acc += jrow[i, col] * tmp[i]
            rhs[col] += dt * acc
