"""Compiled inner loop of the platform simulation.

Everything here works on flat numpy arrays so numba can compile it. The
public, object-level API lives in :mod:`hcmsim.dynamics` and
:mod:`hcmsim.docking`; this module is the single implementation both use.

Platform frame: ``x`` is the pitch axis (north), ``y`` the roll axis (east).
Module face ``k`` has outward normal at angle ``heading + k*pi/2``
(0=N, 1=E, 2=S, 3=W).
"""

import math

import numpy as np
from numba import njit

# parameter vector layout
P_EDGE = 0
P_MASS = 1
P_ARENA = 2
P_G = 3
P_MU_S = 4
P_MU_K = 5
P_REST = 6
P_DT = 7
P_V_STICK = 8
P_CORNER = 9
P_F0 = 10
P_CAPTURE = 11
P_G0 = 12
P_FALLOFF = 13
P_ALIGN = 14
P_REPULSE = 15
P_SNAP_GAP = 16
P_SNAP_LAT = 17
P_SNAP_ANG = 18
P_COMM_RANGE = 19
P_COMM_LAT = 20
P_COMM_ANG = 21
P_SLEW = 22
P_YAW_TERMS = 23
P_MAGNETS = 24
P_FRICTION = 25
P_BODY_COLLIDE = 26
N_PARAMS = 27

LINK_NONE = 0
LINK_ALIGNED = 1
LINK_CROSSED = 2

EV_CAPTURE = 1
EV_BREAK = 2

FLAG_LINKS = 1
FLAG_EVENTS = 2

HALF_PI = 0.5 * math.pi
COS45 = math.cos(math.pi / 4.0)
CONTACT_TOL = 2e-4
POSITION_SLOP = 1e-5
MAX_IMPULSE_ITERS = 12
POLARITY_EPS = 1e-9
# faces further "behind" each other than this are on opposite sides
MIN_GAP_FRACTION = -0.25


@njit(cache=True)
def polarity(angle_a_deg, angle_b_deg):
    """Rotor polarity factor: +1 aligned, -1 reversed, 0 at quadrature."""
    v = math.cos(math.radians(2.0 * (angle_a_deg - angle_b_deg)))
    if abs(v) < 1e-12:
        return 0.0
    return v


@njit(cache=True)
def face_pair_geometry(cax, cay, nax, nay, cbx, cby, nbx, nby):
    """Return (cos_psi, psi, gap, lateral, nx, ny) for two facing faces.

    ``psi`` is the signed rotation that would bring face b anti-parallel to
    face a; gap and lateral offset are measured along the mean normal.
    """
    cos_psi = -(nax * nbx + nay * nby)
    sin_psi = -(nbx * nay - nby * nax)
    psi = math.atan2(sin_psi, cos_psi)
    mx = nax - nbx
    my = nay - nby
    norm = math.hypot(mx, my)
    if norm < 1e-12:
        return cos_psi, psi, 1e9, 1e9, nax, nay
    nx = mx / norm
    ny = my / norm
    dx = cbx - cax
    dy = cby - cay
    gap = dx * nx + dy * ny
    lat = -dx * ny + dy * nx
    return cos_psi, psi, gap, lat, nx, ny


@njit(cache=True)
def face_wrench(params, cax, cay, nax, nay, cbx, cby, nbx, nby, rotor_a, rotor_b):
    """Magnet wrench between two faces of different bodies.

    Returns (fx, fy, px, py, torque, strength): force on body b applied at
    (px, py), a pure alignment torque on body b, and the signed attraction
    factor. Body a receives the exact opposite wrench.
    """
    edge = params[P_EDGE]
    cos_psi, psi, gap, lat, nx, ny = face_pair_geometry(cax, cay, nax, nay, cbx, cby, nbx, nby)
    px = 0.5 * (cax + cbx)
    py = 0.5 * (cay + cby)
    if (cos_psi <= COS45 or gap > params[P_CAPTURE] or gap < MIN_GAP_FRACTION * edge
            or abs(lat) >= edge):
        return 0.0, 0.0, px, py, 0.0, 0.0
    g = gap if gap > 0.0 else 0.0
    g0 = params[P_G0]
    p = params[P_FALLOFF]
    u = g0 / (g0 + g)
    falloff = u ** p
    potential = g0 / (p - 1.0) * u ** (p - 1.0)
    pr = polarity(rotor_a, rotor_b)
    half = 0.5 * edge
    pl = math.cos(math.pi * lat / half)
    dpl = -(math.pi / half) * math.sin(math.pi * lat / half)
    c = math.cos(math.pi * lat / (2.0 * edge))
    overlap = c * c
    doverlap = -(math.pi / (2.0 * edge)) * math.sin(math.pi * lat / edge)
    facing = math.cos(2.0 * psi)
    strength = pr * pl * overlap * facing
    scale = params[P_REPULSE] if strength < 0.0 else 1.0
    f0 = params[P_F0]
    f_normal = -f0 * falloff * strength * scale
    f_lat = f0 * potential * pr * facing * (dpl * overlap + pl * doverlap) * scale
    tx = -ny
    ty = nx
    fx = f_normal * nx + f_lat * tx
    fy = f_normal * ny + f_lat * ty
    torque = params[P_ALIGN] * falloff * overlap * facing * psi
    return fx, fy, px, py, torque, strength * scale


@njit(cache=True)
def module_poses(nmod, mbody, mcell, mrot, bpos, bth, bcom, edge, mx, my, mh):
    for i in range(nmod):
        b = mbody[i]
        c = math.cos(bth[b])
        s = math.sin(bth[b])
        lx = mcell[i, 0] * edge - bcom[b, 0]
        ly = mcell[i, 1] * edge - bcom[b, 1]
        mx[i] = bpos[b, 0] + c * lx - s * ly
        my[i] = bpos[b, 1] + s * lx + c * ly
        mh[i] = bth[b] + mrot[i] * HALF_PI


@njit(cache=True)
def face_frame(x, y, h, k, edge):
    ang = h + k * HALF_PI
    nx = math.cos(ang)
    ny = math.sin(ang)
    return x + 0.5 * edge * nx, y + 0.5 * edge * ny, nx, ny


@njit(cache=True)
def _closest_on_square(px, py, cx, cy, c, s, hc):
    dx = px - cx
    dy = py - cy
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    inside = abs(lx) <= hc and abs(ly) <= hc
    qx = min(max(lx, -hc), hc)
    qy = min(max(ly, -hc), hc)
    return cx + c * qx - s * qy, cy + s * qx + c * qy, inside


@njit(cache=True)
def square_contact(x1, y1, h1, x2, y2, h2, hc, rc):
    """Contact between two rounded squares (core half-size hc, corner radius rc).

    Returns (hit, nx, ny, px, py, pen) with the normal pointing from 1 to 2.
    """
    c1 = math.cos(h1)
    s1 = math.sin(h1)
    c2 = math.cos(h2)
    s2 = math.sin(h2)
    dist = np.empty(8)
    cnx = np.empty(8)
    cny = np.empty(8)
    cpx = np.empty(8)
    cpy = np.empty(8)
    deep = False
    n = 0
    for side in range(2):
        if side == 0:
            ox, oy, oc, os_, sx, sy, sc, ss = x2, y2, c2, s2, x1, y1, c1, s1
        else:
            ox, oy, oc, os_, sx, sy, sc, ss = x1, y1, c1, s1, x2, y2, c2, s2
        for corner in range(4):
            ax = hc if corner == 0 or corner == 3 else -hc
            ay = hc if corner < 2 else -hc
            vx = ox + oc * ax - os_ * ay
            vy = oy + os_ * ax + oc * ay
            wx, wy, inside = _closest_on_square(vx, vy, sx, sy, sc, ss, hc)
            d = math.hypot(vx - wx, vy - wy)
            if inside or d < 1e-12:
                deep = True
                d = 0.0
                nxx = 0.0
                nyy = 0.0
            elif side == 0:
                nxx = (vx - wx) / d
                nyy = (vy - wy) / d
            else:
                nxx = (wx - vx) / d
                nyy = (wy - vy) / d
            dist[n] = d
            cnx[n] = nxx
            cny[n] = nyy
            cpx[n] = 0.5 * (vx + wx)
            cpy[n] = 0.5 * (vy + wy)
            n += 1
    if deep:
        # separating-axis fallback for overlapping cores
        dx = x2 - x1
        dy = y2 - y1
        best = 1e18
        bnx = 1.0
        bny = 0.0
        for a in range(4):
            if a == 0:
                ux, uy = c1, s1
            elif a == 1:
                ux, uy = -s1, c1
            elif a == 2:
                ux, uy = c2, s2
            else:
                ux, uy = -s2, c2
            r1 = hc * (abs(ux * c1 + uy * s1) + abs(-ux * s1 + uy * c1))
            r2 = hc * (abs(ux * c2 + uy * s2) + abs(-ux * s2 + uy * c2))
            proj = dx * ux + dy * uy
            overlap = r1 + r2 + 2.0 * rc - abs(proj)
            if overlap < best:
                best = overlap
                sgn = 1.0 if proj >= 0.0 else -1.0
                bnx = ux * sgn
                bny = uy * sgn
        if best <= 0.0:
            return False, 0.0, 0.0, 0.0, 0.0, 0.0
        return True, bnx, bny, 0.5 * (x1 + x2), 0.5 * (y1 + y2), best
    dmin = 1e18
    for k in range(n):
        if dist[k] < dmin:
            dmin = dist[k]
    if dmin >= 2.0 * rc:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0
    sx = 0.0
    sy = 0.0
    snx = 0.0
    sny = 0.0
    cnt = 0
    for k in range(n):
        if dist[k] <= dmin + CONTACT_TOL:
            sx += cpx[k]
            sy += cpy[k]
            snx += cnx[k]
            sny += cny[k]
            cnt += 1
    norm = math.hypot(snx, sny)
    if norm < 1e-12:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0
    return True, snx / norm, sny / norm, sx / cnt, sy / cnt, 2.0 * rc - dmin


@njit(cache=True)
def gather_contacts(params, nmod, mbody, mx, my, mh, bactive, bradius, bpos,
                    c_bi, c_bj, c_nx, c_ny, c_px, c_py, c_pen):
    """Wall and body-body contacts. Wall contacts use c_bj = -1 and a normal
    pointing out of the arena."""
    edge = params[P_EDGE]
    rc = params[P_CORNER]
    hc = 0.5 * edge - rc
    half_arena = 0.5 * params[P_ARENA]
    nb = bactive.shape[0]
    count = 0
    # walls, aggregated per body and wall
    for b in range(nb):
        if not bactive[b]:
            continue
        for w in range(4):
            if w == 0:
                wnx, wny = 1.0, 0.0
            elif w == 1:
                wnx, wny = 0.0, 1.0
            elif w == 2:
                wnx, wny = -1.0, 0.0
            else:
                wnx, wny = 0.0, -1.0
            reach = bpos[b, 0] * wnx + bpos[b, 1] * wny + bradius[b]
            if reach < half_arena:
                continue
            maxpen = 0.0
            for i in range(nmod):
                if mbody[i] != b:
                    continue
                c = math.cos(mh[i])
                s = math.sin(mh[i])
                for corner in range(4):
                    ax = hc if corner == 0 or corner == 3 else -hc
                    ay = hc if corner < 2 else -hc
                    vx = mx[i] + c * ax - s * ay
                    vy = my[i] + s * ax + c * ay
                    pen = vx * wnx + vy * wny + rc - half_arena
                    if pen > maxpen:
                        maxpen = pen
            if maxpen <= 0.0:
                continue
            sx = 0.0
            sy = 0.0
            cnt = 0
            for i in range(nmod):
                if mbody[i] != b:
                    continue
                c = math.cos(mh[i])
                s = math.sin(mh[i])
                for corner in range(4):
                    ax = hc if corner == 0 or corner == 3 else -hc
                    ay = hc if corner < 2 else -hc
                    vx = mx[i] + c * ax - s * ay
                    vy = my[i] + s * ax + c * ay
                    pen = vx * wnx + vy * wny + rc - half_arena
                    if pen >= maxpen - CONTACT_TOL and pen > 0.0:
                        sx += vx + rc * wnx
                        sy += vy + rc * wny
                        cnt += 1
            c_bi[count] = b
            c_bj[count] = -1
            c_nx[count] = wnx
            c_ny[count] = wny
            c_px[count] = sx / cnt
            c_py[count] = sy / cnt
            c_pen[count] = maxpen
            count += 1
    if params[P_BODY_COLLIDE] == 0.0:
        return count
    reach = edge * 0.75 + 2.0 * rc
    for bi in range(nb):
        if not bactive[bi]:
            continue
        for bj in range(bi + 1, nb):
            if not bactive[bj]:
                continue
            dxb = bpos[bj, 0] - bpos[bi, 0]
            dyb = bpos[bj, 1] - bpos[bi, 1]
            lim = bradius[bi] + bradius[bj]
            if dxb * dxb + dyb * dyb > lim * lim:
                continue
            # aggregate module-pair contacts of this body pair by normal
            first = count
            for i in range(nmod):
                if mbody[i] != bi:
                    continue
                for j in range(nmod):
                    if mbody[j] != bj:
                        continue
                    ddx = mx[j] - mx[i]
                    ddy = my[j] - my[i]
                    if ddx * ddx + ddy * ddy > 4.0 * reach * reach:
                        continue
                    hit, nx, ny, px, py, pen = square_contact(
                        mx[i], my[i], mh[i], mx[j], my[j], mh[j], hc, rc)
                    if not hit:
                        continue
                    merged = False
                    for k in range(first, count):
                        if c_nx[k] * nx + c_ny[k] * ny > 0.98:
                            # keep the deepest, average points within tolerance
                            if pen > c_pen[k] + CONTACT_TOL:
                                c_px[k] = px
                                c_py[k] = py
                                c_pen[k] = pen
                                c_nx[k] = nx
                                c_ny[k] = ny
                            elif pen >= c_pen[k] - CONTACT_TOL:
                                c_px[k] = 0.5 * (c_px[k] + px)
                                c_py[k] = 0.5 * (c_py[k] + py)
                                if pen > c_pen[k]:
                                    c_pen[k] = pen
                            merged = True
                            break
                    if not merged:
                        c_bi[count] = bi
                        c_bj[count] = bj
                        c_nx[count] = nx
                        c_ny[count] = ny
                        c_px[count] = px
                        c_py[count] = py
                        c_pen[count] = pen
                        count += 1
    return count


@njit(cache=True)
def _apply_impulse(b, jx, jy, px, py, bpos, bvel, bw, bmass, binert):
    bvel[b, 0] += jx / bmass[b]
    bvel[b, 1] += jy / bmass[b]
    rx = px - bpos[b, 0]
    ry = py - bpos[b, 1]
    bw[b] += (rx * jy - ry * jx) / binert[b]


@njit(cache=True)
def solve_contacts(params, ncont, c_bi, c_bj, c_nx, c_ny, c_px, c_py,
                   bpos, bvel, bw, bmass, binert):
    """Sequential impulses; each one is individually energy-consistent."""
    e = params[P_REST]
    for _ in range(MAX_IMPULSE_ITERS):
        active = False
        for k in range(ncont):
            bi = c_bi[k]
            bj = c_bj[k]
            nx = c_nx[k]
            ny = c_ny[k]
            px = c_px[k]
            py = c_py[k]
            rix = px - bpos[bi, 0]
            riy = py - bpos[bi, 1]
            vix = bvel[bi, 0] - bw[bi] * riy
            viy = bvel[bi, 1] + bw[bi] * rix
            rni = rix * ny - riy * nx
            if bj < 0:
                vn = -(vix * nx + viy * ny)
                if vn >= -1e-12:
                    continue
                kinv = 1.0 / bmass[bi] + rni * rni / binert[bi]
                j = -(1.0 + e) * vn / kinv
                _apply_impulse(bi, -j * nx, -j * ny, px, py, bpos, bvel, bw, bmass, binert)
                active = True
                continue
            rjx = px - bpos[bj, 0]
            rjy = py - bpos[bj, 1]
            vjx = bvel[bj, 0] - bw[bj] * rjy
            vjy = bvel[bj, 1] + bw[bj] * rjx
            vn = (vjx - vix) * nx + (vjy - viy) * ny
            if vn >= -1e-12:
                continue
            rnj = rjx * ny - rjy * nx
            kinv = (1.0 / bmass[bi] + 1.0 / bmass[bj]
                    + rni * rni / binert[bi] + rnj * rnj / binert[bj])
            j = -(1.0 + e) * vn / kinv
            _apply_impulse(bj, j * nx, j * ny, px, py, bpos, bvel, bw, bmass, binert)
            _apply_impulse(bi, -j * nx, -j * ny, px, py, bpos, bvel, bw, bmass, binert)
            active = True
        if not active:
            break


@njit(cache=True)
def body_radius(nmod, mbody, mcell, bcom, bactive, edge, out):
    nb = bactive.shape[0]
    for b in range(nb):
        out[b] = 0.0
    for i in range(nmod):
        b = mbody[i]
        dx = mcell[i, 0] * edge - bcom[b, 0]
        dy = mcell[i, 1] * edge - bcom[b, 1]
        r = math.hypot(dx, dy) + edge * 0.7072
        if r > out[b]:
            out[b] = r


@njit(cache=True)
def in_plane_accel(params, pitch, roll, yaw_rate, yaw_accel, x, y, vx, vy):
    """Acceleration of a free point in the tilted, rotating platform frame."""
    g = params[P_G]
    ax = g * math.sin(pitch)
    ay = g * math.sin(roll)
    if params[P_YAW_TERMS] != 0.0:
        w2 = yaw_rate * yaw_rate
        ax += w2 * x + yaw_accel * y + 2.0 * yaw_rate * vy
        ay += w2 * y - yaw_accel * x - 2.0 * yaw_rate * vx
    return ax, ay


@njit(cache=True)
def coulomb_velocity(vx, vy, fx, fy, mass, normal, mu_s, mu_k, v_stick, dt):
    """One semi-implicit step of translational Coulomb friction."""
    speed = math.hypot(vx, vy)
    if speed < v_stick and math.hypot(fx, fy) <= mu_s * normal:
        return 0.0, 0.0
    vx += fx / mass * dt
    vy += fy / mass * dt
    dv = mu_k * normal / mass * dt
    speed = math.hypot(vx, vy)
    if speed <= dv:
        return 0.0, 0.0
    k = 1.0 - dv / speed
    return vx * k, vy * k


@njit(cache=True)
def coulomb_spin(w, torque, inertia, normal, reff, mu_s, mu_k, v_stick, dt):
    if abs(w) * reff < v_stick and abs(torque) <= mu_s * normal * reff:
        return 0.0
    w += torque / inertia * dt
    dw = mu_k * normal * reff / inertia * dt
    if abs(w) <= dw:
        return 0.0
    return w - dw if w > 0.0 else w + dw


@njit(cache=True)
def rotor_step(angle, target, max_step):
    """Slew one rotor toward ``target``; the brake clamps it to [0, 90] degrees."""
    d = target - angle
    if abs(d) <= max_step + 1e-9:  # absorb accumulated rounding
        angle = target
    elif d > 0.0:
        angle += max_step
    else:
        angle -= max_step
    if angle < 0.0:
        return 0.0
    if angle > 90.0:
        return 90.0
    return angle


@njit(cache=True)
def step_once(params, pitch, roll, yaw_rate, yaw_accel, nmod, mbody, mcell, mrot,
              rotor, rtarget, mbond, bactive, bpos, bth, bvel, bw, bmass, binert,
              bcom, breff, scratch_f, scratch_m, cont_i, cont_f):
    edge = params[P_EDGE]
    dt = params[P_DT]
    nb = bactive.shape[0]
    mx = scratch_m[0]
    my = scratch_m[1]
    mh = scratch_m[2]
    bradius = scratch_m[3]
    fx = scratch_f[0]
    fy = scratch_f[1]
    tq = scratch_f[2]

    # rotors slew toward their targets
    slew = params[P_SLEW] * dt
    for i in range(nmod):
        for k in range(4):
            rotor[i, k] = rotor_step(rotor[i, k], rtarget[i, k], slew)

    module_poses(nmod, mbody, mcell, mrot, bpos, bth, bcom, edge, mx, my, mh)

    # applied loads
    for b in range(nb):
        fx[b] = 0.0
        fy[b] = 0.0
        tq[b] = 0.0
        if not bactive[b]:
            continue
        ax, ay = in_plane_accel(params, pitch, roll, yaw_rate, yaw_accel,
                                bpos[b, 0], bpos[b, 1], bvel[b, 0], bvel[b, 1])
        fx[b] = bmass[b] * ax
        fy[b] = bmass[b] * ay
        if params[P_YAW_TERMS] != 0.0:
            tq[b] = -yaw_accel * binert[b]

    if params[P_MAGNETS] != 0.0:
        reach = edge + params[P_CAPTURE] + edge
        for i in range(nmod):
            for j in range(i + 1, nmod):
                bi = mbody[i]
                bj = mbody[j]
                if bi == bj:
                    continue
                ddx = mx[j] - mx[i]
                ddy = my[j] - my[i]
                if ddx * ddx + ddy * ddy > reach * reach:
                    continue
                for ka in range(4):
                    cax, cay, nax, nay = face_frame(mx[i], my[i], mh[i], ka, edge)
                    for kb in range(4):
                        cbx, cby, nbx, nby = face_frame(mx[j], my[j], mh[j], kb, edge)
                        if -(nax * nbx + nay * nby) <= COS45:
                            continue
                        wx, wy, px, py, tau, _s = face_wrench(
                            params, cax, cay, nax, nay, cbx, cby, nbx, nby,
                            rotor[i, ka], rotor[j, kb])
                        if wx == 0.0 and wy == 0.0 and tau == 0.0:
                            continue
                        fx[bj] += wx
                        fy[bj] += wy
                        tq[bj] += (px - bpos[bj, 0]) * wy - (py - bpos[bj, 1]) * wx + tau
                        fx[bi] -= wx
                        fy[bi] -= wy
                        tq[bi] += -((px - bpos[bi, 0]) * wy - (py - bpos[bi, 1]) * wx) - tau

    # integrate velocities with friction
    cp = math.cos(pitch) * math.cos(roll)
    for b in range(nb):
        if not bactive[b]:
            continue
        m = bmass[b]
        if params[P_FRICTION] != 0.0:
            normal = m * params[P_G] * cp
            vx, vy = coulomb_velocity(bvel[b, 0], bvel[b, 1], fx[b], fy[b], m, normal,
                                      params[P_MU_S], params[P_MU_K], params[P_V_STICK], dt)
            bvel[b, 0] = vx
            bvel[b, 1] = vy
            bw[b] = coulomb_spin(bw[b], tq[b], binert[b], normal, breff[b],
                                 params[P_MU_S], params[P_MU_K], params[P_V_STICK], dt)
        else:
            bvel[b, 0] += fx[b] / m * dt
            bvel[b, 1] += fy[b] / m * dt
            bw[b] += tq[b] / binert[b] * dt

    # collisions at the current configuration
    body_radius(nmod, mbody, mcell, bcom, bactive, edge, bradius)
    c_bi = cont_i[0]
    c_bj = cont_i[1]
    c_nx = cont_f[0]
    c_ny = cont_f[1]
    c_px = cont_f[2]
    c_py = cont_f[3]
    c_pen = cont_f[4]
    nc = gather_contacts(params, nmod, mbody, mx, my, mh, bactive, bradius, bpos,
                         c_bi, c_bj, c_nx, c_ny, c_px, c_py, c_pen)
    solve_contacts(params, nc, c_bi, c_bj, c_nx, c_ny, c_px, c_py,
                   bpos, bvel, bw, bmass, binert)

    # integrate positions
    for b in range(nb):
        if not bactive[b]:
            continue
        bpos[b, 0] += bvel[b, 0] * dt
        bpos[b, 1] += bvel[b, 1] * dt
        bth[b] += bw[b] * dt

    # remove residual penetration
    for _ in range(3):
        module_poses(nmod, mbody, mcell, mrot, bpos, bth, bcom, edge, mx, my, mh)
        nc = gather_contacts(params, nmod, mbody, mx, my, mh, bactive, bradius, bpos,
                             c_bi, c_bj, c_nx, c_ny, c_px, c_py, c_pen)
        moved = False
        for k in range(nc):
            pen = c_pen[k] - POSITION_SLOP
            if pen <= 0.0:
                continue
            bi = c_bi[k]
            bj = c_bj[k]
            if bj < 0:
                bpos[bi, 0] -= c_nx[k] * pen
                bpos[bi, 1] -= c_ny[k] * pen
            else:
                wi = 1.0 / bmass[bi]
                wj = 1.0 / bmass[bj]
                si = pen * wi / (wi + wj)
                sj = pen * wj / (wi + wj)
                bpos[bi, 0] -= c_nx[k] * si
                bpos[bi, 1] -= c_ny[k] * si
                bpos[bj, 0] += c_nx[k] * sj
                bpos[bj, 1] += c_ny[k] * sj
            moved = True
        if not moved:
            break


@njit(cache=True)
def classify_link(params, cos_psi, psi, gap, lat):
    if cos_psi <= COS45 or gap > params[P_COMM_RANGE] or abs(lat) >= params[P_EDGE]:
        return LINK_NONE
    if gap < MIN_GAP_FRACTION * params[P_EDGE]:
        return LINK_NONE
    if abs(lat) <= params[P_COMM_LAT] and abs(psi) <= params[P_COMM_ANG]:
        return LINK_ALIGNED
    return LINK_CROSSED


@njit(cache=True)
def scan(params, nmod, mbody, mcell, mrot, rotor, rtarget, mbond, bpos, bth, bcom,
         consent, link_status, scratch_m, events, max_events):
    """Recompute IR link statuses and detect capture/break conditions.

    A bond breaks only once a rotor commanded away from rest has reversed
    the pair's polarity; a seam closed with a rotor still at 90 just waits.

    Returns (changed, n_events); ``link_status`` is updated in place.
    """
    edge = params[P_EDGE]
    mx = scratch_m[0]
    my = scratch_m[1]
    mh = scratch_m[2]
    module_poses(nmod, mbody, mcell, mrot, bpos, bth, bcom, edge, mx, my, mh)
    changed = False
    nev = 0
    reach = edge + params[P_COMM_RANGE] + edge
    for i in range(nmod):
        for j in range(i + 1, nmod):
            ddx = mx[j] - mx[i]
            ddy = my[j] - my[i]
            near = ddx * ddx + ddy * ddy <= reach * reach
            for ka in range(4):
                fa = 4 * i + ka
                for kb in range(4):
                    fb = 4 * j + kb
                    status = LINK_NONE
                    if mbond[i, ka] == fb:
                        status = LINK_ALIGNED
                        commanded = rtarget[i, ka] > 45.0 or rtarget[j, kb] > 45.0
                        if commanded and polarity(rotor[i, ka], rotor[j, kb]) <= POLARITY_EPS:
                            if nev < max_events:
                                events[nev, 0] = EV_BREAK
                                events[nev, 1] = i
                                events[nev, 2] = ka
                                events[nev, 3] = j
                                events[nev, 4] = kb
                            nev += 1
                    elif near and mbody[i] != mbody[j]:
                        cax, cay, nax, nay = face_frame(mx[i], my[i], mh[i], ka, edge)
                        cbx, cby, nbx, nby = face_frame(mx[j], my[j], mh[j], kb, edge)
                        cos_psi, psi, gap, lat, _nx, _ny = face_pair_geometry(
                            cax, cay, nax, nay, cbx, cby, nbx, nby)
                        status = classify_link(params, cos_psi, psi, gap, lat)
                        if (status == LINK_ALIGNED and consent[fa, fb]
                                and mbond[i, ka] < 0 and mbond[j, kb] < 0
                                and gap <= params[P_SNAP_GAP]
                                and abs(lat) <= params[P_SNAP_LAT]
                                and abs(psi) <= params[P_SNAP_ANG]):
                            s = (polarity(rotor[i, ka], rotor[j, kb])
                                 * math.cos(math.pi * lat / (0.5 * edge)))
                            if s > 0.0:
                                if nev < max_events:
                                    events[nev, 0] = EV_CAPTURE
                                    events[nev, 1] = i
                                    events[nev, 2] = ka
                                    events[nev, 3] = j
                                    events[nev, 4] = kb
                                nev += 1
                    if link_status[fa, fb] != status:
                        link_status[fa, fb] = status
                        link_status[fb, fa] = status
                        changed = True
    return changed, nev


@njit(cache=True)
def traj_eval(tt, tp, tr, ty, t):
    n = tt.shape[0]
    if n == 1 or t >= tt[n - 1]:
        return tp[n - 1], tr[n - 1], 0.0
    if t <= tt[0]:
        return tp[0], tr[0], 0.0
    k = np.searchsorted(tt, t, side="right") - 1
    span = tt[k + 1] - tt[k]
    f = (t - tt[k]) / span
    pitch = tp[k] + f * (tp[k + 1] - tp[k])
    roll = tr[k] + f * (tr[k + 1] - tr[k])
    rate = (ty[k + 1] - ty[k]) / span
    return pitch, roll, rate


@njit(cache=True)
def run(params, tt, tp, tr, ty, tick0, nmax, stop_on_links,
        nmod, mbody, mcell, mrot, rotor, rtarget, mbond, bactive, bpos, bth, bvel, bw,
        bmass, binert, bcom, breff, consent, link_status,
        scratch_f, scratch_m, cont_i, cont_f, events):
    """Advance up to ``nmax`` ticks following a sampled trajectory.

    Stops early (after completing the tick) when a link status changes
    (if ``stop_on_links``) or a capture/break event is detected.
    Returns (ticks_done, flags, n_events).
    """
    dt = params[P_DT]
    max_events = events.shape[0]
    for n in range(nmax):
        t = (tick0 + n) * dt
        pitch, roll, rate = traj_eval(tt, tp, tr, ty, t)
        if t > 0.0:
            _p, _r, prev_rate = traj_eval(tt, tp, tr, ty, t - dt)
        else:
            prev_rate = 0.0
        accel = (rate - prev_rate) / dt
        step_once(params, pitch, roll, rate, accel, nmod, mbody, mcell, mrot, rotor, rtarget,
                  mbond, bactive, bpos, bth, bvel, bw, bmass, binert, bcom, breff,
                  scratch_f, scratch_m, cont_i, cont_f)
        changed, nev = scan(params, nmod, mbody, mcell, mrot, rotor, rtarget, mbond,
                            bpos, bth, bcom,
                            consent, link_status, scratch_m, events, max_events)
        flags = 0
        if changed and stop_on_links:
            flags |= FLAG_LINKS
        if nev > 0:
            flags |= FLAG_EVENTS
        if flags != 0:
            return n + 1, flags, min(nev, max_events)
    return nmax, 0, 0
