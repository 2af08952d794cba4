# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled substep physics.

Scalar, per-environment transcription of ``_physics_py.py``; every
expression keeps the operand order of the numpy version so both backends
produce bit-identical trajectories (compile with -ffp-contract=off).
"""
import numpy as np

from libc.math cimport sqrt, fabs, INFINITY

BACKEND = "compiled"

# layout indices (mirrors layout.py)
DEF S_GRIP = 0
DEF S_GRIP_VEL = 3
DEF S_FINGER = 6
DEF S_FINGER_VEL = 8
DEF S_BOX = 10
DEF S_BOX_VEL = 13
DEF S_BOX_ROT = 16
DEF S_BOX_ROTVEL = 19
DEF S_COMPRESSION = 22
DEF S_STEP = 26
DEF S_WORK = 27
DEF S_WORK_ABS = 28
DEF S_ENERGY0 = 29

DEF P_DT_CONTROL = 0
DEF P_NSUB = 1
DEF P_ACTION_SCALE = 2
DEF P_WS_LO = 3
DEF P_WS_HI = 6
DEF P_FINGER_MAX = 9
DEF P_FINGER_HW = 10
DEF P_FINGER_T = 11
DEF P_FINGER_L = 12
DEF P_PALM_T = 13
DEF P_BOX_H = 14
DEF P_BOX_M = 15
DEF P_GRAV = 16
DEF P_K = 17
DEF P_C = 18
DEF P_C_SEP = 19
DEF P_MARGIN = 20
DEF P_MU = 21
DEF P_K_GRIP = 22
DEF P_C_GRIP = 23
DEF P_PEN_LIM = 24
DEF P_PEN_LIM_F = 25
DEF P_MU_F = 26
DEF P_MU_TOP = 27
DEF P_K_BOX = 28
DEF P_DELTA_MAX = 29
DEF P_RELEASE_EFF = 30
DEF P_TAN_LAUNCH = 31
DEF P_TWIST_R = 32
DEF P_INERTIA = 33

DEF D_CONTACT = 0
DEF D_GRASPED = 1
DEF D_PRESSED = 2
DEF D_AIRBORNE = 3
DEF D_ENERGY_EXCESS = 4
DEF D_PENETRATION = 5
DEF D_RELEASED = 6

DEF MAX_FRICTION = 64


cdef inline double dmin(double a, double b) noexcept nogil:
    return a if a <= b else b


cdef inline double dmax(double a, double b) noexcept nogil:
    return a if a >= b else b


cdef inline double static_contact(double bx, double by, double bz, double h,
                                  const double[:, ::1] statics, int st, double* n) noexcept nogil:
    """Signed distance from static ``st`` to the box; writes the outward unit normal to ``n``."""
    cdef double gap[3]
    cdef double sg[3]
    cdef double pp[3]
    cdef double c[3]
    cdef double below, above, dsep
    cdef int i, ax
    cdef bint sep
    c[0] = bx
    c[1] = by
    c[2] = bz
    for i in range(3):
        below = statics[st, i] - (c[i] + h)
        above = (c[i] - h) - statics[st, i + 3]
        gap[i] = dmax(below, above)
        sg[i] = 1.0 if above >= below else -1.0
        pp[i] = dmax(gap[i], 0.0)
    sep = gap[0] > 0.0 or gap[1] > 0.0 or gap[2] > 0.0
    dsep = sqrt(pp[0] * pp[0] + pp[1] * pp[1] + pp[2] * pp[2])
    if sep:
        for i in range(3):
            n[i] = sg[i] * pp[i] / dsep
        return dsep
    if gap[0] >= gap[1] and gap[0] >= gap[2]:
        ax = 0
    elif gap[1] >= gap[2]:
        ax = 1
    else:
        ax = 2
    for i in range(3):
        n[i] = sg[i] if i == ax else 0.0
    return dmax(dmax(gap[0], gap[1]), gap[2])


cdef inline void friction(double* v, double rx, double ry, double rz, double nx, double ny, double nz,
                          double normal, double mu, double dt, double m) noexcept nogil:
    cdef double rn = rx * nx + ry * ny + rz * nz
    cdef double tx = rx - rn * nx
    cdef double ty = ry - rn * ny
    cdef double tz = rz - rn * nz
    cdef double tn = sqrt(tx * tx + ty * ty + tz * tz)
    cdef double lim = mu * normal * dt / m
    cdef double scale = dmin(1.0, lim / tn) if tn > 0.0 else 0.0
    v[0] = v[0] - tx * scale
    v[1] = v[1] - ty * scale
    v[2] = v[2] - tz * scale


cdef double energy_one(const double* s, const double* p, const double[:, ::1] statics) noexcept nogil:
    cdef double m = p[P_BOX_M]
    cdef double h = p[P_BOX_H]
    cdef double margin = p[P_MARGIN]
    cdef double vx = s[S_BOX_VEL], vy = s[S_BOX_VEL + 1], vz = s[S_BOX_VEL + 2]
    cdef double wz = s[S_BOX_ROTVEL + 2]
    cdef double d = s[S_COMPRESSION]
    cdef double bx = s[S_BOX], by = s[S_BOX + 1], bz = s[S_BOX + 2]
    cdef double e, dist, depth
    cdef double nrm[3]
    cdef int st
    e = 0.5 * m * (vx * vx + vy * vy + vz * vz)
    e = e + 0.5 * p[P_INERTIA] * (wz * wz)
    e = e + m * p[P_GRAV] * bz
    e = e + 0.5 * p[P_K_BOX] * (d * d)
    for st in range(statics.shape[0]):
        dist = static_contact(bx, by, bz, h, statics, st, nrm)
        depth = margin - dist
        e = e + (0.5 * p[P_K] * (depth * depth) if dist < margin else 0.0)
    return e


def box_energy(const double[:, ::1] states, const double[::1] params, const double[:, ::1] statics):
    cdef Py_ssize_t n = states.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = energy_one(&states[i, 0], &params[0], statics)
    return out


cdef void step_one(double* s, const double* a_in, const double* p, const double[:, ::1] statics,
                   double* dg) noexcept nogil:
    cdef int nsub = <int>p[P_NSUB]
    cdef double dtc = p[P_DT_CONTROL]
    cdef double dt = dtc / nsub
    cdef double h = p[P_BOX_H], m = p[P_BOX_M], grav = p[P_GRAV]
    cdef double fhw = p[P_FINGER_HW], ft = p[P_FINGER_T], fl = p[P_FINGER_L], pt = p[P_PALM_T]
    cdef double k = p[P_K], c_app = p[P_C], c_sep = p[P_C_SEP], margin = p[P_MARGIN], mu = p[P_MU]
    cdef double kg = p[P_K_GRIP], cg = p[P_C_GRIP], plim = p[P_PEN_LIM], plimf = p[P_PEN_LIM_F]
    cdef double muf = p[P_MU_F], mut = p[P_MU_TOP]
    cdef double kb = p[P_K_BOX], dmx = p[P_DELTA_MAX], eta = p[P_RELEASE_EFF], tanl = p[P_TAN_LAUNCH]
    cdef double inertia = p[P_INERTIA], twr = p[P_TWIST_R]
    cdef int n_static = statics.shape[0]

    cdef double a[4]
    cdef double g[3]
    cdef double g0[3]
    cdef double tgt[3]
    cdef double gstep[3]
    cdef double gv[3]
    cdef double f[2]
    cdef double f0[2]
    cdef double fstep[2]
    cdef double b[3]
    cdef double v[3]
    cdef double rot[3]
    cdef double w[3]
    cdef double fg[3]
    cdef double fs[3]
    cdef double vpre[3]
    cdef double fgt[3]
    cdef double lo[3]
    cdef double hi[3]
    cdef double o[3]
    cdef double pc[3]
    cdef double cc[3]
    cdef double nn[3]
    cdef int fr_ax[MAX_FRICTION]
    cdef double fr_n[MAX_FRICTION]
    cdef double fr_mu[MAX_FRICTION]
    cdef double sfr_nx[MAX_FRICTION]
    cdef double sfr_ny[MAX_FRICTION]
    cdef double sfr_nz[MAX_FRICTION]
    cdef double sfr_n[MAX_FRICTION]
    cdef int n_fr, n_sfr
    cdef int i, j, part, sub, st, ax
    cdef double ftgt, delta, work, work_abs, e0, e_prev, work_prev, gain, ke, scale
    cdef double tau, press_pen, oz, pen, sign, lim, over, vrel_n, force, cxy_x, cxy_y
    cdef double press_over, new_delta, e_rel, dw, vn, c, twist_n, dist, depth
    cdef double ox, oy, on, ux, uy, tl, nrm, dx, dy, dz, vd, sp
    cdef double wz0, wz, aw, nb, energy, excess, pmin
    cdef bint hit, is_press, is_inner, is_side, contact, any_grip, any_static, pressing, release
    cdef bint inner0, inner1
    cdef bint d_contact = False, d_grasp = False, d_press = False, d_release = False, d_airborne = False
    cdef double d_excess = -INFINITY, d_pen = 0.0

    for i in range(4):
        a[i] = dmin(dmax(a_in[i], -1.0), 1.0)
    for i in range(3):
        g[i] = s[S_GRIP + i]
        g0[i] = g[i]
        tgt[i] = dmin(dmax(g[i] + p[P_ACTION_SCALE] * a[i], p[P_WS_LO + i]), p[P_WS_HI + i])
        gstep[i] = (tgt[i] - g[i]) / nsub
        b[i] = s[S_BOX + i]
        v[i] = s[S_BOX_VEL + i]
        rot[i] = s[S_BOX_ROT + i]
        w[i] = s[S_BOX_ROTVEL + i]
    f[0] = s[S_FINGER]
    f[1] = s[S_FINGER + 1]
    f0[0] = f[0]
    f0[1] = f[1]
    ftgt = (a[3] + 1.0) * 0.5 * p[P_FINGER_MAX]
    fstep[0] = (ftgt - f[0]) / nsub
    fstep[1] = (ftgt - f[1]) / nsub
    delta = s[S_COMPRESSION]
    work = s[S_WORK]
    work_abs = s[S_WORK_ABS]
    e0 = s[S_ENERGY0]
    e_prev = energy_one(s, p, statics)
    work_prev = work

    for sub in range(nsub):
        # 1. kinematic gripper motion
        for i in range(3):
            g[i] = tgt[i] if fabs(tgt[i] - g[i]) <= fabs(gstep[i]) else g[i] + gstep[i]
        for j in range(2):
            f[j] = ftgt if fabs(ftgt - f[j]) <= fabs(fstep[j]) else f[j] + fstep[j]
        for i in range(3):
            gv[i] = gstep[i] / dt

        # 2. gripper parts against the box
        for i in range(3):
            fg[i] = 0.0
        tau = 0.0
        press_pen = 0.0
        n_fr = 0
        inner0 = False
        inner1 = False
        any_grip = False
        for part in range(3):
            if part == 0:
                lo[0] = g[0] - fhw; lo[1] = g[1] + f[0]; lo[2] = g[2]
                hi[0] = g[0] + fhw; hi[1] = g[1] + f[0] + ft; hi[2] = g[2] + fl
            elif part == 1:
                lo[0] = g[0] - fhw; lo[1] = g[1] - f[1] - ft; lo[2] = g[2]
                hi[0] = g[0] + fhw; hi[1] = g[1] - f[1]; hi[2] = g[2] + fl
            else:
                lo[0] = g[0] - fhw; lo[1] = g[1] - f[1] - ft; lo[2] = g[2] + fl
                hi[0] = g[0] + fhw; hi[1] = g[1] + f[0] + ft; hi[2] = g[2] + fl + pt
            for i in range(3):
                o[i] = dmin(hi[i], b[i] + h) - dmax(lo[i], b[i] - h)
            hit = o[0] > 0.0 and o[1] > 0.0 and o[2] > 0.0
            for i in range(3):
                pc[i] = (lo[i] + hi[i]) * 0.5
            oz = dmax(o[2] - delta, 0.0) if pc[2] > b[2] else o[2]
            if o[0] <= o[1] and o[0] <= oz:
                ax = 0
            elif o[1] <= oz:
                ax = 1
            else:
                ax = 2
            pen = o[ax]
            sign = 1.0 if b[ax] >= pc[ax] else -1.0
            is_press = hit and ax == 2 and sign < 0.0
            if part == 0:
                is_inner = hit and ax == 1 and sign < 0.0
            elif part == 1:
                is_inner = hit and ax == 1 and sign > 0.0
            else:
                is_inner = False
            is_side = hit and not is_press and not is_inner
            any_grip = any_grip or hit
            if is_press:
                press_pen = dmax(press_pen, pen)

            lim = plimf if is_inner else plim
            over = dmax(pen - lim, 0.0)
            if part == 0:
                inner0 = is_inner
            elif part == 1:
                inner1 = is_inner
            if part < 2 and is_inner:
                f[part] = f[part] + over
            if is_side:
                g[ax] = g[ax] - sign * over
            contact = is_inner or is_side
            vrel_n = (v[ax] - gv[ax]) * sign
            force = dmax(kg * dmin(pen, lim) - cg * vrel_n, 0.0) if contact else 0.0
            fg[ax] = fg[ax] + sign * force
            cxy_x = (dmax(lo[0], b[0] - h) + dmin(hi[0], b[0] + h)) * 0.5
            cxy_y = (dmax(lo[1], b[1] - h) + dmin(hi[1], b[1] + h)) * 0.5
            if ax == 0:
                tau = tau - (cxy_y - b[1]) * (sign * force)
            elif ax == 1:
                tau = tau + (cxy_x - b[0]) * (sign * force)
            fr_ax[n_fr] = ax
            fr_n[n_fr] = force
            fr_mu[n_fr] = muf
            n_fr += 1

        pressing = press_pen > 0.0
        press_over = dmax(press_pen - dmx, 0.0)
        g[2] = g[2] + press_over
        for i in range(3):
            g[i] = dmin(dmax(g[i], p[P_WS_LO + i]), p[P_WS_HI + i])
        new_delta = dmin(press_pen, dmx)
        fg[2] = fg[2] - kb * new_delta
        fr_ax[n_fr] = 2
        fr_n[n_fr] = kb * new_delta
        fr_mu[n_fr] = mut
        n_fr += 1

        release = delta > 0.0 and not pressing
        e_rel = eta * (0.5 * kb * (delta * delta)) if release else 0.0
        dw = 0.0 if release else 0.5 * kb * (new_delta * new_delta) - 0.5 * kb * (delta * delta)
        work = work + dw
        work_abs = work_abs + fabs(dw)

        # 3. release
        ox = (b[0] - g[0]) / h
        oy = (b[1] - g[1]) / h
        on = sqrt(ox * ox + oy * oy)
        ux = ox / on if on > 1e-12 else 0.0
        uy = oy / on if on > 1e-12 else 0.0
        tl = tanl * dmin(on, 1.0)
        nrm = sqrt(tl * tl + 1.0)
        dx = tl * ux / nrm
        dy = tl * uy / nrm
        dz = 1.0 / nrm
        vd = v[0] * dx + v[1] * dy + v[2] * dz
        sp = -vd + sqrt(vd * vd + 2.0 * e_rel / m)
        if release:
            v[0] = v[0] + sp * dx
            v[1] = v[1] + sp * dy
            v[2] = v[2] + sp * dz
        delta = new_delta

        # 4. static contacts
        for i in range(3):
            fs[i] = 0.0
        n_sfr = 0
        twist_n = 0.0
        any_static = False
        for st in range(n_static):
            dist = static_contact(b[0], b[1], b[2], h, statics, st, nn)
            contact = dist < margin
            depth = margin - dist
            vn = v[0] * nn[0] + v[1] * nn[1] + v[2] * nn[2]
            c = c_app if vn < 0.0 else c_sep
            force = dmax(k * depth - c * vn, 0.0) if contact else 0.0
            fs[0] = fs[0] + force * nn[0]
            fs[1] = fs[1] + force * nn[1]
            fs[2] = fs[2] + force * nn[2]
            twist_n = twist_n + force * fabs(nn[2])
            any_static = any_static or contact
            if n_sfr < MAX_FRICTION:
                sfr_nx[n_sfr] = nn[0]
                sfr_ny[n_sfr] = nn[1]
                sfr_nz[n_sfr] = nn[2]
                sfr_n[n_sfr] = force
                n_sfr += 1

        # 5. integrate forces
        for i in range(3):
            v[i] = v[i] + ((fg[i] + fs[i]) / m) * dt
        v[2] = v[2] - grav * dt

        # 6. gripper friction; its impulse does work over the displacement
        for i in range(3):
            vpre[i] = v[i]
        for j in range(n_fr):
            friction(v, v[0] - gv[0], v[1] - gv[1], v[2] - gv[2],
                     1.0 if fr_ax[j] == 0 else 0.0, 1.0 if fr_ax[j] == 1 else 0.0,
                     1.0 if fr_ax[j] == 2 else 0.0, fr_n[j], fr_mu[j], dt, m)
        for i in range(3):
            fgt[i] = fg[i] + m * (v[i] - vpre[i]) / dt

        # 7. static friction
        for j in range(n_sfr):
            friction(v, v[0], v[1], v[2], sfr_nx[j], sfr_ny[j], sfr_nz[j], sfr_n[j], mu, dt, m)

        # 8. yaw
        wz0 = w[2]
        wz = wz0 + tau * dt / inertia
        dw = 0.5 * inertia * (wz * wz) - 0.5 * inertia * (wz0 * wz0)
        work = work + dw
        work_abs = work_abs + fabs(dw)
        lim = mu * twist_n * twr * dt / inertia
        aw = fabs(wz)
        if aw > 0.0:
            wz = wz - wz * dmin(1.0, lim / aw)
        w[2] = wz

        # 9. positions and gripper-force work
        for i in range(3):
            nb = b[i] + v[i] * dt
            dw = fgt[i] * (nb - b[i])
            work = work + dw
            work_abs = work_abs + fabs(dw)
            b[i] = nb
        for i in range(3):
            rot[i] = rot[i] + w[i] * dt

        # 10. hard projection along the least-penetration axis
        for st in range(n_static):
            for i in range(3):
                o[i] = dmin(statics[st, i + 3], b[i] + h) - dmax(statics[st, i], b[i] - h)
            hit = o[0] > 0.0 and o[1] > 0.0 and o[2] > 0.0
            if o[0] <= o[1] and o[0] <= o[2]:
                ax = 0
            elif o[1] <= o[2]:
                ax = 1
            else:
                ax = 2
            for i in range(3):
                cc[i] = (statics[st, i] + statics[st, i + 3]) * 0.5
            sign = 1.0 if b[ax] >= cc[ax] else -1.0
            if hit:
                b[ax] = b[ax] + sign * o[ax]
                if v[ax] * sign < 0.0:
                    v[ax] = 0.0
        for st in range(n_static):
            for i in range(3):
                o[i] = dmin(statics[st, i + 3], b[i] + h) - dmax(statics[st, i], b[i] - h)
            if o[0] > 0.0 and o[1] > 0.0 and o[2] > 0.0:
                pmin = dmin(dmin(o[0], o[1]), o[2])
                d_pen = dmax(d_pen, pmin)

        # 11. bookkeeping
        for i in range(3):
            s[S_BOX + i] = b[i]
            s[S_BOX_VEL + i] = v[i]
            s[S_BOX_ROTVEL + i] = w[i]
        s[S_COMPRESSION] = delta
        energy = energy_one(s, p, statics)
        # energy-stable contact: remove the spurious gain of entering the penalty layer from KE
        gain = energy - e_prev - (work - work_prev)
        ke = 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
        if gain > 0.0 and ke > 0.0:
            scale = sqrt(dmax(ke - gain, 0.0) / ke)
            for i in range(3):
                v[i] = v[i] * scale
                s[S_BOX_VEL + i] = v[i]
            energy = energy_one(s, p, statics)
        e_prev = energy
        work_prev = work
        excess = (energy - e0 - work) / (e0 + work_abs)
        d_excess = dmax(d_excess, excess)
        d_contact = d_contact or any_grip
        d_grasp = d_grasp or (inner0 and inner1)
        d_press = d_press or pressing
        d_release = d_release or release
        d_airborne = not any_grip and not any_static

    for i in range(3):
        s[S_GRIP + i] = g[i]
        s[S_GRIP_VEL + i] = (g[i] - g0[i]) / dtc
        s[S_BOX_ROT + i] = rot[i]
    for j in range(2):
        s[S_FINGER + j] = f[j]
        s[S_FINGER_VEL + j] = (f[j] - f0[j]) / dtc
    s[S_WORK] = work
    s[S_WORK_ABS] = work_abs
    s[S_STEP] = s[S_STEP] + 1.0
    dg[D_CONTACT] = 1.0 if d_contact else 0.0
    dg[D_GRASPED] = 1.0 if d_grasp else 0.0
    dg[D_PRESSED] = 1.0 if d_press else 0.0
    dg[D_AIRBORNE] = 1.0 if d_airborne else 0.0
    dg[D_ENERGY_EXCESS] = d_excess
    dg[D_PENETRATION] = d_pen
    dg[D_RELEASED] = 1.0 if d_release else 0.0


def step_batch(double[:, ::1] states, const double[:, ::1] actions, const double[::1] params,
               const double[:, ::1] statics, double[:, ::1] diag):
    """Advance every environment by one control step, in place (see ``_physics_py.step_batch``)."""
    cdef Py_ssize_t n = states.shape[0], i
    if actions.shape[0] != n or diag.shape[0] != n:
        raise ValueError("states, actions and diag must have the same number of rows")
    if statics.shape[0] + 1 > MAX_FRICTION:
        raise ValueError("too many static boxes")
    with nogil:
        for i in range(n):
            step_one(&states[i, 0], &actions[i, 0], &params[0], statics, &diag[i, 0])
