"""Numba kernels for the three planar agents.

Every kernel advances generalized coordinates ``q`` and velocities ``v`` by
``n_sub`` semi-implicit Euler substeps with the control held constant.
Penalty forces (ground contact, joint limits) are spring-dampers whose
response is solved linearly-implicitly in the new velocity; without that,
a 1e5 N/m spring with 1e3 N*s/m damping is unstable at dt = 0.01 s.
"""

import math

import numpy as np
from numba import njit

# planar_hopper parameter vector layout
H_GRAVITY = 0
H_M0, H_HALF, H_I0 = 1, 2, 3
H_M1, H_L1, H_I1 = 4, 5, 6
H_M2, H_L2, H_I2 = 7, 8, 9
H_GEAR_HIP, H_GEAR_KNEE = 10, 11
H_K_CONTACT, H_C_CONTACT, H_MU, H_C_TANGENT = 12, 13, 14, 15
H_HIP_LO, H_HIP_HI, H_KNEE_LO, H_KNEE_HI = 16, 17, 18, 19
H_K_LIMIT, H_C_LIMIT = 20, 21
H_JOINT_DAMPING = 22
H_FIXED_ROOT = 23
H_N_PARAMS = 24

# coefficient triples (trunk, thigh, shin) locating a body point as
# root + sum_k c_k * d(phi_k), d(phi) = (sin phi, -cos phi)
N_CONTACTS = 4


@njit(cache=True)
def _link_dirs(q):
    phi = np.empty(3)
    phi[0] = q[2]
    phi[1] = q[2] + q[3]
    phi[2] = q[2] + q[3] + q[4]
    d = np.empty((3, 2))
    e = np.empty((3, 2))
    for k in range(3):
        s = math.sin(phi[k])
        c = math.cos(phi[k])
        d[k, 0] = s
        d[k, 1] = -c
        e[k, 0] = c
        e[k, 1] = s
    return d, e


@njit(cache=True)
def _point_jac(c, e):
    jac = np.zeros((2, 5))
    jac[0, 0] = 1.0
    jac[1, 1] = 1.0
    # d(phi_k)/d(theta, q1, q2): phi_0 -> (1,0,0), phi_1 -> (1,1,0), phi_2 -> (1,1,1)
    for k in range(3):
        for j in range(2, 2 + k + 1):
            jac[0, j] += c[k] * e[k, 0]
            jac[1, j] += c[k] * e[k, 1]
    return jac


@njit(cache=True)
def _point_bias(c, d, phidot):
    b = np.zeros(2)
    for k in range(3):
        w2 = phidot[k] * phidot[k]
        b[0] -= c[k] * w2 * d[k, 0]
        b[1] -= c[k] * w2 * d[k, 1]
    return b


@njit(cache=True)
def _link_coeffs(p):
    a, l1, l2 = p[H_HALF], p[H_L1], p[H_L2]
    com = np.array([[0.0, 0.0, 0.0], [a, 0.5 * l1, 0.0], [a, l1, 0.5 * l2]])
    contacts = np.array([[-a, 0.0, 0.0], [a, 0.0, 0.0], [a, l1, 0.0], [a, l1, l2]])
    return com, contacts


@njit(cache=True)
def hopper_points(q, p):
    """World positions of the contact points (trunk top, hip, knee, foot)."""
    d, _ = _link_dirs(q)
    _, contacts = _link_coeffs(p)
    out = np.empty((N_CONTACTS, 2))
    for i in range(N_CONTACTS):
        out[i, 0] = q[0]
        out[i, 1] = q[1]
        for k in range(3):
            out[i, 0] += contacts[i, k] * d[k, 0]
            out[i, 1] += contacts[i, k] * d[k, 1]
    return out


@njit(cache=True)
def hopper_energy(q, v, p):
    d, e = _link_dirs(q)
    com, _ = _link_coeffs(p)
    masses = np.array([p[H_M0], p[H_M1], p[H_M2]])
    inertias = np.array([p[H_I0], p[H_I1], p[H_I2]])
    phidot = np.array([v[2], v[2] + v[3], v[2] + v[3] + v[4]])
    total = 0.0
    for i in range(3):
        jac = _point_jac(com[i], e)
        vel = jac @ v
        y = q[1]
        for k in range(3):
            y += com[i, k] * d[k, 1]
        total += 0.5 * masses[i] * (vel[0] ** 2 + vel[1] ** 2)
        total += 0.5 * inertias[i] * phidot[i] ** 2
        total += masses[i] * p[H_GRAVITY] * y
    return total


@njit(cache=True)
def _solve_penalty(minv, v_free, jn, phi, kk, cc, dt):
    """Implicit one-sided spring-damper forces with an active-set pass."""
    r = jn.shape[0]
    f = np.zeros(r)
    if r == 0:
        return f
    active = np.ones(r, dtype=np.bool_)
    w = jn @ minv @ jn.T
    vel = jn @ v_free
    for _ in range(r + 1):
        idx = np.nonzero(active)[0]
        m = idx.shape[0]
        if m == 0:
            break
        a = np.eye(m)
        b = np.empty(m)
        for ii in range(m):
            i = idx[ii]
            gain = kk[i] * dt + cc[i]
            for jj in range(m):
                a[ii, jj] += dt * gain * w[i, idx[jj]]
            b[ii] = -kk[i] * phi[i] - gain * vel[i]
        sol = np.linalg.solve(a, b)
        changed = False
        f[:] = 0.0
        for ii in range(m):
            if sol[ii] < 0.0:
                active[idx[ii]] = False
                changed = True
            else:
                f[idx[ii]] = sol[ii]
        if not changed:
            break
    return f


@njit(cache=True)
def _hopper_substep(q, v, tau, p, dt):
    g = p[H_GRAVITY]
    d, e = _link_dirs(q)
    com, contacts = _link_coeffs(p)
    masses = np.array([p[H_M0], p[H_M1], p[H_M2]])
    inertias = np.array([p[H_I0], p[H_I1], p[H_I2]])
    phidot = np.array([v[2], v[2] + v[3], v[2] + v[3] + v[4]])

    mass = np.zeros((5, 5))
    force = np.zeros(5)
    for i in range(3):
        jac = _point_jac(com[i], e)
        bias = _point_bias(com[i], d, phidot)
        mass += masses[i] * (jac.T @ jac)
        bias[1] += g
        force -= masses[i] * (jac.T @ bias)
        # angular Jacobian of link i is ones on cols 2..2+i
        for j in range(2, 3 + i):
            for jj in range(2, 3 + i):
                mass[j, jj] += inertias[i]
    force[3] += p[H_GEAR_HIP] * tau[0] - p[H_JOINT_DAMPING] * v[3]
    force[4] += p[H_GEAR_KNEE] * tau[1] - p[H_JOINT_DAMPING] * v[4]
    # implicit joint damping: (M + dt*D) dv = dt*F
    mass[3, 3] += dt * p[H_JOINT_DAMPING]
    mass[4, 4] += dt * p[H_JOINT_DAMPING]

    fixed = p[H_FIXED_ROOT] > 0.5
    if fixed:
        for j in range(3):
            for jj in range(5):
                mass[j, jj] = 0.0
                mass[jj, j] = 0.0
            mass[j, j] = 1.0
            force[j] = 0.0
            v[j] = 0.0
    minv = np.linalg.inv(mass)
    v_free = v + dt * (minv @ force)

    # constraint rows: ground normals for penetrating points, then joint limits
    rows = np.zeros((N_CONTACTS + 2, 5))
    tan_rows = np.zeros((N_CONTACTS, 5))
    phi = np.zeros(N_CONTACTS + 2)
    kk = np.zeros(N_CONTACTS + 2)
    cc = np.zeros(N_CONTACTS + 2)
    n = 0
    nc = 0
    if not fixed:
        for i in range(N_CONTACTS):
            y = q[1]
            for k in range(3):
                y += contacts[i, k] * d[k, 1]
            if y < 0.0:
                jac = _point_jac(contacts[i], e)
                rows[n, :] = jac[1, :]
                tan_rows[nc, :] = jac[0, :]
                phi[n] = y
                kk[n] = p[H_K_CONTACT]
                cc[n] = p[H_C_CONTACT]
                n += 1
                nc += 1
    for j, lo, hi in ((3, p[H_HIP_LO], p[H_HIP_HI]), (4, p[H_KNEE_LO], p[H_KNEE_HI])):
        if q[j] < lo:
            rows[n, j] = 1.0
            phi[n] = q[j] - lo
        elif q[j] > hi:
            rows[n, j] = -1.0
            phi[n] = hi - q[j]
        else:
            continue
        kk[n] = p[H_K_LIMIT]
        cc[n] = p[H_C_LIMIT]
        n += 1

    jn = rows[:n].copy()
    fn = _solve_penalty(minv, v_free, jn, phi[:n], kk[:n], cc[:n], dt)
    v_new = v_free + dt * (minv @ (jn.T @ fn))

    if nc > 0:
        jt = tan_rows[:nc].copy()
        wt = jt @ minv @ jt.T
        ct = p[H_C_TANGENT]
        a = np.eye(nc) + dt * ct * wt
        ft = np.linalg.solve(a, -ct * (jt @ v_new))
        for i in range(nc):
            bound = p[H_MU] * fn[i]
            if ft[i] > bound:
                ft[i] = bound
            elif ft[i] < -bound:
                ft[i] = -bound
        v_new = v_new + dt * (minv @ (jt.T @ ft))

    if fixed:
        for j in range(3):
            v_new[j] = 0.0
    q_new = q + dt * v_new
    return q_new, v_new


@njit(cache=True)
def hopper_step(q, v, tau, p, dt, n_sub):
    q = q.copy()
    v = v.copy()
    for _ in range(n_sub):
        q, v = _hopper_substep(q, v, tau, p, dt)
    return q, v


# pendulum_cart parameter vector layout
C_GRAVITY, C_CART_MASS, C_POLE_MASS, C_HALF_LEN, C_GEAR = 0, 1, 2, 3, 4
C_N_PARAMS = 5


@njit(cache=True)
def _wrap(angle):
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


@njit(cache=True)
def cart_step(q, v, tau, p, dt, n_sub):
    """Cart-pole, pole angle 0 = upright, stored wrapped to [-pi, pi)."""
    x, th = q[0], q[1]
    xd, thd = v[0], v[1]
    g, mc, mp, ln = p[C_GRAVITY], p[C_CART_MASS], p[C_POLE_MASS], p[C_HALF_LEN]
    total = mc + mp
    force = p[C_GEAR] * tau[0]
    for _ in range(n_sub):
        s = math.sin(th)
        c = math.cos(th)
        tmp = (force + mp * ln * thd * thd * s) / total
        thdd = (g * s - c * tmp) / (ln * (4.0 / 3.0 - mp * c * c / total))
        xdd = tmp - mp * ln * thdd * c / total
        xd += dt * xdd
        thd += dt * thdd
        x += dt * xd
        th = _wrap(th + dt * thd)
    return np.array([x, th]), np.array([xd, thd])


# point_mass parameter vector layout
P_MASS, P_GEAR = 0, 1
P_N_PARAMS = 2


@njit(cache=True)
def point_step(q, v, tau, p, dt, n_sub):
    q = q.copy()
    v = v.copy()
    inv_m = 1.0 / p[P_MASS]
    for _ in range(n_sub):
        for i in range(2):
            v[i] += dt * p[P_GEAR] * tau[i] * inv_m
            q[i] += dt * v[i]
    return q, v
