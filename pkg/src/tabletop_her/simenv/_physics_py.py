"""Vectorised numpy implementation of the substep physics.

This is the fallback backend and the reference for the compiled kernel in
``_physics.pyx``.  Every arithmetic expression appears in the same order in
both files so the two agree bit-for-bit; only IEEE-exact operations
(+, -, *, /, sqrt, min, max) are used.

Model summary: the box is a rigid cube held off axis-aligned static slabs
(table, wall, ditch floor) by stiff damped penalty springs acting on the
exact signed distance between the two boxes, so slab edges behave as if
rounded and the contact potential is continuous.  Coulomb friction is a
clamped tangential velocity impulse, and a hard projection removes any
residual interpenetration.  The gripper is kinematic: it moves linearly toward its commanded target and is pushed
back when it would penetrate the box beyond a small limit, so the contact
force it can exert is bounded.  Pressing on the box top compresses a soft
spring in the box; when the press contact ends the stored energy (times an
efficiency) is released as a launch impulse tilted away from the gripper.
"""
from __future__ import annotations

import numpy as np

from .layout import (
    D_AIRBORNE, D_CONTACT, D_ENERGY_EXCESS, D_GRASPED, D_PENETRATION, D_PRESSED, D_RELEASED, N_DIAG,
    P_ACTION_SCALE, P_BOX_H, P_BOX_M, P_C, P_C_GRIP, P_C_SEP, P_DELTA_MAX, P_DT_CONTROL, P_FINGER_HW,
    P_FINGER_L, P_FINGER_MAX, P_FINGER_T, P_GRAV, P_INERTIA, P_K, P_K_BOX, P_K_GRIP, P_MARGIN, P_MU,
    P_MU_F, P_MU_TOP, P_NSUB, P_PALM_T, P_PEN_LIM, P_PEN_LIM_F, P_RELEASE_EFF, P_TAN_LAUNCH, P_TWIST_R,
    P_WS_HI, P_WS_LO, S_BOX, S_BOX_ROT, S_BOX_ROTVEL, S_BOX_VEL, S_COMPRESSION, S_ENERGY0,
    S_FINGER, S_FINGER_VEL, S_GRIP, S_GRIP_VEL, S_STEP, S_WORK, S_WORK_ABS,
)

BACKEND = "python"


def _gap(lo_s, hi_s, c, h):
    """Separation along one axis and the side the box is on (+1 above ``hi_s``, -1 below ``lo_s``)."""
    below = lo_s - (c + h)
    above = (c - h) - hi_s
    return np.maximum(below, above), np.where(above >= below, 1.0, -1.0)


def _pick(ax, x, y, z):
    return np.where(ax == 0, x, np.where(ax == 1, y, z))


def _static_contacts(bx, by, bz, h, statics):
    """Signed distance and outward unit normal from each static box to the box.

    Yields ``(dist, nx, ny, nz)``; ``dist`` is the Euclidean separation when
    apart and minus the smallest penetration depth when overlapping.
    """
    for st in range(statics.shape[0]):
        slx, sly, slz, shx, shy, shz = statics[st]
        gx, sx = _gap(slx, shx, bx, h)
        gy, sy = _gap(sly, shy, by, h)
        gz, sz = _gap(slz, shz, bz, h)
        px = np.maximum(gx, 0.0)
        py = np.maximum(gy, 0.0)
        pz = np.maximum(gz, 0.0)
        sep = (gx > 0.0) | (gy > 0.0) | (gz > 0.0)
        dsep = np.sqrt(px * px + py * py + pz * pz)
        ax = np.where((gx >= gy) & (gx >= gz), 0, np.where(gy >= gz, 1, 2))
        dist = np.where(sep, dsep, np.maximum(np.maximum(gx, gy), gz))
        with np.errstate(divide="ignore", invalid="ignore"):
            nx = np.where(sep, sx * px / dsep, np.where(ax == 0, sx, 0.0))
            ny = np.where(sep, sy * py / dsep, np.where(ax == 1, sy, 0.0))
            nz = np.where(sep, sz * pz / dsep, np.where(ax == 2, sz, 0.0))
        yield dist, nx, ny, nz


def box_energy(states, params, statics):
    """Mechanical energy of each box: kinetic + yaw + gravity + press spring + contact springs."""
    p = params
    s = states
    m = p[P_BOX_M]
    h = p[P_BOX_H]
    margin = p[P_MARGIN]
    vx, vy, vz = s[:, S_BOX_VEL], s[:, S_BOX_VEL + 1], s[:, S_BOX_VEL + 2]
    wz = s[:, S_BOX_ROTVEL + 2]
    d = s[:, S_COMPRESSION]
    e = 0.5 * m * (vx * vx + vy * vy + vz * vz)
    e = e + 0.5 * p[P_INERTIA] * (wz * wz)
    e = e + m * p[P_GRAV] * s[:, S_BOX + 2]
    e = e + 0.5 * p[P_K_BOX] * (d * d)
    for dist, _, _, _ in _static_contacts(s[:, S_BOX], s[:, S_BOX + 1], s[:, S_BOX + 2], h, statics):
        depth = margin - dist
        e = e + np.where(dist < margin, 0.5 * p[P_K] * (depth * depth), 0.0)
    return e


def _friction(v, rx, ry, rz, nx, ny, nz, normal, mu, dt, m):
    """Remove up to ``mu * normal * dt / m`` of the relative velocity tangential to ``n``."""
    rn = rx * nx + ry * ny + rz * nz
    tx = rx - rn * nx
    ty = ry - rn * ny
    tz = rz - rn * nz
    tn = np.sqrt(tx * tx + ty * ty + tz * tz)
    lim = mu * normal * dt / m
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(tn > 0.0, np.minimum(1.0, lim / tn), 0.0)
    return [v[0] - tx * scale, v[1] - ty * scale, v[2] - tz * scale]


def _unit(ax, i):
    return np.where(ax == i, 1.0, 0.0)


def step_batch(states, actions, params, statics, diag):
    """Advance every environment by one control step, in place.

    ``states`` is ``(N, STATE_DIM)``, ``actions`` ``(N, 4)`` in [-1, 1],
    ``diag`` ``(N, N_DIAG)`` receives the per-step diagnostics.
    """
    p = params
    s = states
    n = s.shape[0]
    nsub = int(p[P_NSUB])
    dt = p[P_DT_CONTROL] / nsub
    h = p[P_BOX_H]
    m = p[P_BOX_M]
    grav = p[P_GRAV]
    fhw, ft, fl, pt = p[P_FINGER_HW], p[P_FINGER_T], p[P_FINGER_L], p[P_PALM_T]
    k, c_app, c_sep, margin, mu = p[P_K], p[P_C], p[P_C_SEP], p[P_MARGIN], p[P_MU]
    kg, cg, plim, plimf, muf, mut = p[P_K_GRIP], p[P_C_GRIP], p[P_PEN_LIM], p[P_PEN_LIM_F], p[P_MU_F], p[P_MU_TOP]
    kb, dmax, eta, tanl = p[P_K_BOX], p[P_DELTA_MAX], p[P_RELEASE_EFF], p[P_TAN_LAUNCH]
    inertia, twr = p[P_INERTIA], p[P_TWIST_R]

    a = np.minimum(np.maximum(actions, -1.0), 1.0)
    g = [s[:, S_GRIP + i].copy() for i in range(3)]
    g0 = [gi.copy() for gi in g]
    f = [s[:, S_FINGER].copy(), s[:, S_FINGER + 1].copy()]
    f0 = [fi.copy() for fi in f]
    tgt = [np.minimum(np.maximum(g[i] + p[P_ACTION_SCALE] * a[:, i], p[P_WS_LO + i]), p[P_WS_HI + i])
           for i in range(3)]
    gstep = [(tgt[i] - g[i]) / nsub for i in range(3)]
    ftgt = (a[:, 3] + 1.0) * 0.5 * p[P_FINGER_MAX]
    fstep = [(ftgt - f[0]) / nsub, (ftgt - f[1]) / nsub]

    b = [s[:, S_BOX + i].copy() for i in range(3)]
    v = [s[:, S_BOX_VEL + i].copy() for i in range(3)]
    rot = [s[:, S_BOX_ROT + i].copy() for i in range(3)]
    w = [s[:, S_BOX_ROTVEL + i].copy() for i in range(3)]
    delta = s[:, S_COMPRESSION].copy()
    work = s[:, S_WORK].copy()
    work_abs = s[:, S_WORK_ABS].copy()
    e0 = s[:, S_ENERGY0]
    e_prev = box_energy(s, p, statics)
    work_prev = work

    zeros = np.zeros(n)
    d_contact = np.zeros(n, dtype=bool)
    d_grasp = np.zeros(n, dtype=bool)
    d_press = np.zeros(n, dtype=bool)
    d_release = np.zeros(n, dtype=bool)
    d_airborne = np.zeros(n, dtype=bool)
    d_excess = np.full(n, -np.inf)
    d_pen = np.zeros(n)

    for _ in range(nsub):
        # 1. kinematic gripper motion toward its target
        for i in range(3):
            g[i] = np.where(np.abs(tgt[i] - g[i]) <= np.abs(gstep[i]), tgt[i], g[i] + gstep[i])
        for j in range(2):
            f[j] = np.where(np.abs(ftgt - f[j]) <= np.abs(fstep[j]), ftgt, f[j] + fstep[j])
        gv = [gstep[i] / dt for i in range(3)]

        # 2. gripper parts against the box: left finger (+y), right finger (-y), palm
        fg = [zeros.copy(), zeros.copy(), zeros.copy()]
        tau = zeros.copy()
        press_pen = zeros.copy()
        fr_ax, fr_n, fr_mu = [], [], []
        inner = [np.zeros(n, dtype=bool), np.zeros(n, dtype=bool)]
        any_grip = np.zeros(n, dtype=bool)
        for part in range(3):
            if part == 0:
                lo = [g[0] - fhw, g[1] + f[0], g[2]]
                hi = [g[0] + fhw, g[1] + f[0] + ft, g[2] + fl]
            elif part == 1:
                lo = [g[0] - fhw, g[1] - f[1] - ft, g[2]]
                hi = [g[0] + fhw, g[1] - f[1], g[2] + fl]
            else:
                lo = [g[0] - fhw, g[1] - f[1] - ft, g[2] + fl]
                hi = [g[0] + fhw, g[1] + f[0] + ft, g[2] + fl + pt]
            o = [np.minimum(hi[i], b[i] + h) - np.maximum(lo[i], b[i] - h) for i in range(3)]
            hit = (o[0] > 0.0) & (o[1] > 0.0) & (o[2] > 0.0)
            pc = [(lo[i] + hi[i]) * 0.5 for i in range(3)]
            # a part above the box meets the already-compressed top surface
            oz = np.where(pc[2] > b[2], np.maximum(o[2] - delta, 0.0), o[2])
            ax = np.where((o[0] <= o[1]) & (o[0] <= oz), 0, np.where(o[1] <= oz, 1, 2))
            pen = _pick(ax, o[0], o[1], o[2])
            sign = np.where(_pick(ax, b[0], b[1], b[2]) >= _pick(ax, pc[0], pc[1], pc[2]), 1.0, -1.0)
            is_press = hit & (ax == 2) & (sign < 0.0)
            if part == 0:
                is_inner = hit & (ax == 1) & (sign < 0.0)
            elif part == 1:
                is_inner = hit & (ax == 1) & (sign > 0.0)
            else:
                is_inner = np.zeros(n, dtype=bool)
            is_side = hit & ~is_press & ~is_inner
            any_grip = any_grip | hit
            press_pen = np.where(is_press, np.maximum(press_pen, pen), press_pen)

            lim = np.where(is_inner, plimf, plim)
            over = np.maximum(pen - lim, 0.0)
            if part < 2:
                inner[part] = is_inner
                f[part] = np.where(is_inner, f[part] + over, f[part])
            for i in range(3):
                push = is_side & (ax == i)
                g[i] = np.where(push, g[i] - sign * over, g[i])
            contact = is_inner | is_side
            vrel_n = _pick(ax, v[0] - gv[0], v[1] - gv[1], v[2] - gv[2]) * sign
            force = np.where(contact, np.maximum(kg * np.minimum(pen, lim) - cg * vrel_n, 0.0), 0.0)
            for i in range(3):
                fg[i] = np.where(ax == i, fg[i] + sign * force, fg[i])
            # yaw torque from the off-centre contact point
            cxy_x = (np.maximum(lo[0], b[0] - h) + np.minimum(hi[0], b[0] + h)) * 0.5
            cxy_y = (np.maximum(lo[1], b[1] - h) + np.minimum(hi[1], b[1] + h)) * 0.5
            tau = np.where(ax == 0, tau - (cxy_y - b[1]) * (sign * force), tau)
            tau = np.where(ax == 1, tau + (cxy_x - b[0]) * (sign * force), tau)
            fr_ax.append(ax)
            fr_n.append(force)
            fr_mu.append(muf)

        pressing = press_pen > 0.0
        press_over = np.maximum(press_pen - dmax, 0.0)
        g[2] = g[2] + press_over
        for i in range(3):
            g[i] = np.minimum(np.maximum(g[i], p[P_WS_LO + i]), p[P_WS_HI + i])
        new_delta = np.minimum(press_pen, dmax)
        fg[2] = fg[2] - kb * new_delta
        fr_ax.append(np.full(n, 2))
        fr_n.append(kb * new_delta)
        fr_mu.append(mut)

        release = (delta > 0.0) & ~pressing
        e_rel = np.where(release, eta * (0.5 * kb * (delta * delta)), 0.0)
        dw = np.where(release, 0.0, 0.5 * kb * (new_delta * new_delta) - 0.5 * kb * (delta * delta))
        work = work + dw
        work_abs = work_abs + np.abs(dw)
        grasp_now = inner[0] & inner[1]

        # 3. release of stored compression energy along the launch direction
        ox = (b[0] - g[0]) / h
        oy = (b[1] - g[1]) / h
        on = np.sqrt(ox * ox + oy * oy)
        with np.errstate(divide="ignore", invalid="ignore"):
            ux = np.where(on > 1e-12, ox / on, 0.0)
            uy = np.where(on > 1e-12, oy / on, 0.0)
        tl = tanl * np.minimum(on, 1.0)
        nrm = np.sqrt(tl * tl + 1.0)
        dx = tl * ux / nrm
        dy = tl * uy / nrm
        dz = 1.0 / nrm
        vd = v[0] * dx + v[1] * dy + v[2] * dz
        sp = -vd + np.sqrt(vd * vd + 2.0 * e_rel / m)
        v[0] = np.where(release, v[0] + sp * dx, v[0])
        v[1] = np.where(release, v[1] + sp * dy, v[1])
        v[2] = np.where(release, v[2] + sp * dz, v[2])
        delta = new_delta

        # 4. static contacts
        fs = [zeros.copy(), zeros.copy(), zeros.copy()]
        sfr = []
        twist_n = zeros.copy()
        any_static = np.zeros(n, dtype=bool)
        for dist, nx, ny, nz in _static_contacts(b[0], b[1], b[2], h, statics):
            contact = dist < margin
            depth = margin - dist
            vn = v[0] * nx + v[1] * ny + v[2] * nz
            c = np.where(vn < 0.0, c_app, c_sep)
            force = np.where(contact, np.maximum(k * depth - c * vn, 0.0), 0.0)
            fs[0] = fs[0] + force * nx
            fs[1] = fs[1] + force * ny
            fs[2] = fs[2] + force * nz
            twist_n = twist_n + force * np.abs(nz)
            any_static = any_static | contact
            sfr.append((nx, ny, nz, force))

        # 5. integrate forces
        for i in range(3):
            v[i] = v[i] + ((fg[i] + fs[i]) / m) * dt
        v[2] = v[2] - grav * dt

        # 6. gripper friction relative to the gripper; its impulse does work over the displacement
        vpre = list(v)
        for ax, normal, mu_i in zip(fr_ax, fr_n, fr_mu):
            v = _friction(v, v[0] - gv[0], v[1] - gv[1], v[2] - gv[2],
                          _unit(ax, 0), _unit(ax, 1), _unit(ax, 2), normal, mu_i, dt, m)
        fgt = [fg[i] + m * (v[i] - vpre[i]) / dt for i in range(3)]

        # 7. static friction
        for nx, ny, nz, normal in sfr:
            v = _friction(v, v[0], v[1], v[2], nx, ny, nz, normal, mu, dt, m)

        # 8. yaw from off-centre pushes, damped by twisting friction
        wz0 = w[2]
        wz = wz0 + tau * dt / inertia
        dw = 0.5 * inertia * (wz * wz) - 0.5 * inertia * (wz0 * wz0)
        work = work + dw
        work_abs = work_abs + np.abs(dw)
        lim = mu * twist_n * twr * dt / inertia
        aw = np.abs(wz)
        with np.errstate(divide="ignore", invalid="ignore"):
            wz = np.where(aw > 0.0, wz - wz * np.minimum(1.0, lim / aw), wz)
        w[2] = wz

        # 9. positions; gripper forces do work over the displacement
        for i in range(3):
            nb = b[i] + v[i] * dt
            dw = fgt[i] * (nb - b[i])
            work = work + dw
            work_abs = work_abs + np.abs(dw)
            b[i] = nb
        for i in range(3):
            rot[i] = rot[i] + w[i] * dt

        # 10. hard projection out of static geometry along the least-penetration axis
        for st in range(statics.shape[0]):
            slx, sly, slz, shx, shy, shz = statics[st]
            o = [np.minimum(shx, b[0] + h) - np.maximum(slx, b[0] - h),
                 np.minimum(shy, b[1] + h) - np.maximum(sly, b[1] - h),
                 np.minimum(shz, b[2] + h) - np.maximum(slz, b[2] - h)]
            hit = (o[0] > 0.0) & (o[1] > 0.0) & (o[2] > 0.0)
            ax = np.where((o[0] <= o[1]) & (o[0] <= o[2]), 0, np.where(o[1] <= o[2], 1, 2))
            cc = [(slx + shx) * 0.5, (sly + shy) * 0.5, (slz + shz) * 0.5]
            sign = np.where(_pick(ax, b[0], b[1], b[2]) >= _pick(ax, cc[0], cc[1], cc[2]), 1.0, -1.0)
            for i in range(3):
                sel = hit & (ax == i)
                b[i] = np.where(sel, b[i] + sign * o[i], b[i])
                v[i] = np.where(sel & (v[i] * sign < 0.0), 0.0, v[i])
        for st in range(statics.shape[0]):
            slx, sly, slz, shx, shy, shz = statics[st]
            o = [np.minimum(shx, b[0] + h) - np.maximum(slx, b[0] - h),
                 np.minimum(shy, b[1] + h) - np.maximum(sly, b[1] - h),
                 np.minimum(shz, b[2] + h) - np.maximum(slz, b[2] - h)]
            hit = (o[0] > 0.0) & (o[1] > 0.0) & (o[2] > 0.0)
            d_pen = np.where(hit, np.maximum(d_pen, np.minimum(np.minimum(o[0], o[1]), o[2])), d_pen)

        # 11. bookkeeping
        for i in range(3):
            s[:, S_BOX + i] = b[i]
            s[:, S_BOX_VEL + i] = v[i]
            s[:, S_BOX_ROTVEL + i] = w[i]
        s[:, S_COMPRESSION] = delta
        energy = box_energy(s, p, statics)
        # energy-stable contact: explicit integration lets a fast box enter the
        # penalty layer before any force acts; remove that spurious gain from KE
        gain = energy - e_prev - (work - work_prev)
        ke = 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
        fix = (gain > 0.0) & (ke > 0.0)
        if fix.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(fix, np.sqrt(np.maximum(ke - gain, 0.0) / ke), 1.0)
            for i in range(3):
                v[i] = v[i] * scale
                s[:, S_BOX_VEL + i] = v[i]
            energy = np.where(fix, box_energy(s, p, statics), energy)
        e_prev = energy
        work_prev = work
        excess = (energy - e0 - work) / (e0 + work_abs)
        d_excess = np.maximum(d_excess, excess)
        d_contact = d_contact | any_grip
        d_grasp = d_grasp | grasp_now
        d_press = d_press | pressing
        d_release = d_release | release
        d_airborne = ~any_grip & ~any_static

    for i in range(3):
        s[:, S_GRIP + i] = g[i]
        s[:, S_GRIP_VEL + i] = (g[i] - g0[i]) / p[P_DT_CONTROL]
        s[:, S_BOX_ROT + i] = rot[i]
    for j in range(2):
        s[:, S_FINGER + j] = f[j]
        s[:, S_FINGER_VEL + j] = (f[j] - f0[j]) / p[P_DT_CONTROL]
    s[:, S_WORK] = work
    s[:, S_WORK_ABS] = work_abs
    s[:, S_STEP] = s[:, S_STEP] + 1.0
    diag[:, D_CONTACT] = d_contact
    diag[:, D_GRASPED] = d_grasp
    diag[:, D_PRESSED] = d_press
    diag[:, D_AIRBORNE] = d_airborne
    diag[:, D_ENERGY_EXCESS] = d_excess
    diag[:, D_PENETRATION] = d_pen
    diag[:, D_RELEASED] = d_release
    assert diag.shape[1] == N_DIAG
