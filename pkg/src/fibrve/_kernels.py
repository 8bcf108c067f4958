"""Numba kernels for the swelling / migration packing loop.

All kernels work on a periodic ``lx x ly`` window and mutate ``centers`` in
place. Random numbers are drawn by the caller (numpy ``Generator``) and passed
in, so the kernels themselves are deterministic.

Restricted regions are packed into a float array, one row per region::

    kind, mode, a, b, c, d, e

kind 0 = disc (cx, cy, radius), kind 1 = capsule (x0, y0, x1, y1, half_width);
mode 0 = forbidden to enter, mode 1 = confined within.
"""

import math

import numpy as np
from numba import njit

_BRUTE = -1


@njit(cache=True)
def _min_image(d, L):
    return d - L * np.floor(d / L + 0.5)


@njit(cache=True)
def _wrap(v, L):
    v = v - L * math.floor(v / L)
    if v >= L:
        v -= L
    if v < 0.0:
        v = 0.0
    return v


@njit(cache=True)
def _build_cells(centers, lx, ly, cell):
    n = centers.shape[0]
    ncx = int(lx / cell)
    ncy = int(ly / cell)
    if ncx < 3 or ncy < 3:
        return _BRUTE, _BRUTE, np.empty(0, np.int64), np.empty(0, np.int64)
    head = -np.ones(ncx * ncy, np.int64)
    nxt = -np.ones(n, np.int64)
    for i in range(n):
        cx = int(centers[i, 0] / lx * ncx) % ncx
        cy = int(centers[i, 1] / ly * ncy) % ncy
        c = cx * ncy + cy
        nxt[i] = head[c]
        head[c] = i
    return ncx, ncy, head, nxt


@njit(cache=True)
def _region_distance(x, y, reg, lx, ly):
    """Signed-free distance from point to the region's core (0 inside)."""
    best = 1e300
    for sx in (-1, 0, 1):
        for sy in (-1, 0, 1):
            px = x + sx * lx
            py = y + sy * ly
            if reg[0] == 0.0:
                d = math.hypot(px - reg[2], py - reg[3]) - reg[4]
            else:
                x0, y0, x1, y1, hw = reg[2], reg[3], reg[4], reg[5], reg[6]
                ux = x1 - x0
                uy = y1 - y0
                ll = ux * ux + uy * uy
                t = 0.0
                if ll > 0.0:
                    t = ((px - x0) * ux + (py - y0) * uy) / ll
                    t = min(1.0, max(0.0, t))
                d = math.hypot(px - x0 - t * ux, py - y0 - t * uy) - hw
            if d < best:
                best = d
    return best


@njit(cache=True)
def admissible(x, y, regions, lx, ly):
    n_conf = 0
    inside_conf = False
    for k in range(regions.shape[0]):
        reg = regions[k]
        d = _region_distance(x, y, reg, lx, ly)
        if reg[1] == 0.0:
            if d < 0.0:
                return False
        else:
            n_conf += 1
            if d <= 0.0:
                inside_conf = True
    return n_conf == 0 or inside_conf


@njit(cache=True)
def _closest_on_region(x, y, reg, lx, ly):
    """Closest point on the region boundary (image nearest to (x, y))."""
    best = 1e300
    bx = x
    by = y
    for sx in (-1, 0, 1):
        for sy in (-1, 0, 1):
            px = x + sx * lx
            py = y + sy * ly
            if reg[0] == 0.0:
                qx, qy, rad = reg[2], reg[3], reg[4]
            else:
                x0, y0, x1, y1, rad = reg[2], reg[3], reg[4], reg[5], reg[6]
                ux = x1 - x0
                uy = y1 - y0
                ll = ux * ux + uy * uy
                t = 0.0
                if ll > 0.0:
                    t = min(1.0, max(0.0, ((px - x0) * ux + (py - y0) * uy) / ll))
                qx = x0 + t * ux
                qy = y0 + t * uy
            dx = px - qx
            dy = py - qy
            dist = math.hypot(dx, dy)
            if abs(dist - rad) < best:
                best = abs(dist - rad)
                if dist > 0.0:
                    bx = qx + dx / dist * rad - sx * lx
                    by = qy + dy / dist * rad - sy * ly
                else:
                    bx = qx + rad - sx * lx
                    by = qy - sy * ly
    return bx, by


@njit(cache=True)
def project(x, y, regions, lx, ly, eps):
    """Move a center to a nearby admissible position (no-op without regions)."""
    if regions.shape[0] == 0:
        return x, y
    for _ in range(8):
        if admissible(x, y, regions, lx, ly):
            return x, y
        moved = False
        for k in range(regions.shape[0]):
            reg = regions[k]
            if reg[1] == 0.0 and _region_distance(x, y, reg, lx, ly) < 0.0:
                bx, by = _closest_on_region(x, y, reg, lx, ly)
                dx = _min_image(bx - x, lx)
                dy = _min_image(by - y, ly)
                dn = math.hypot(dx, dy)
                if dn > 0.0:
                    x = _wrap(bx + dx / dn * eps, lx)
                    y = _wrap(by + dy / dn * eps, ly)
                moved = True
        if not moved:
            # outside every confining region: go to the nearest one
            best = 1e300
            bi = -1
            for k in range(regions.shape[0]):
                if regions[k, 1] == 1.0:
                    d = _region_distance(x, y, regions[k], lx, ly)
                    if d < best:
                        best = d
                        bi = k
            bx, by = _closest_on_region(x, y, regions[bi], lx, ly)
            dx = _min_image(bx - x, lx)
            dy = _min_image(by - y, ly)
            dn = math.hypot(dx, dy)
            if dn > 0.0:
                x = _wrap(bx + dx / dn * eps, lx)
                y = _wrap(by + dy / dn * eps, ly)
    return x, y


@njit(cache=True)
def resolve_overlaps(centers, radii, lx, ly, gap_factor, max_passes, regions, eps):
    """Gauss-Seidel push of pairs closer than ``r_i + r_j + gap_factor*(r_i + r_j)/2``.

    Returns ``(passes, worst_violation)``; worst is 0 after a clean pass.
    """
    n = centers.shape[0]
    rmax = 0.0
    for i in range(n):
        rmax = max(rmax, radii[i])
    cutoff = (2.0 + gap_factor) * rmax
    worst = 0.0
    for it in range(max_passes):
        ncx, ncy, head, nxt = _build_cells(centers, lx, ly, cutoff * 1.25)
        worst = 0.0
        for i in range(n):
            if ncx == _BRUTE:
                j_start = i + 1
                for j in range(j_start, n):
                    worst = max(worst, _push(centers, radii, i, j, lx, ly, gap_factor, regions, eps))
            else:
                cx = int(centers[i, 0] / lx * ncx) % ncx
                cy = int(centers[i, 1] / ly * ncy) % ncy
                for ox in (-1, 0, 1):
                    for oy in (-1, 0, 1):
                        c = ((cx + ox) % ncx) * ncy + (cy + oy) % ncy
                        j = head[c]
                        while j != -1:
                            if j > i:
                                worst = max(worst, _push(centers, radii, i, j, lx, ly, gap_factor, regions, eps))
                            j = nxt[j]
        if worst == 0.0:
            return it + 1, 0.0
    return max_passes, worst


@njit(cache=True)
def _push(centers, radii, i, j, lx, ly, gap_factor, regions, eps):
    dx = _min_image(centers[j, 0] - centers[i, 0], lx)
    dy = _min_image(centers[j, 1] - centers[i, 1], ly)
    d = math.hypot(dx, dy)
    need = (radii[i] + radii[j]) * (1.0 + 0.5 * gap_factor)
    if d >= need:
        return 0.0
    deficit = need + eps - d
    if d > 0.0:
        ux = dx / d
        uy = dy / d
    else:
        ang = 2.399963229728653 * (i + 7 * j)
        ux = math.cos(ang)
        uy = math.sin(ang)
    xi = _wrap(centers[i, 0] - 0.5 * deficit * ux, lx)
    yi = _wrap(centers[i, 1] - 0.5 * deficit * uy, ly)
    xj = _wrap(centers[j, 0] + 0.5 * deficit * ux, lx)
    yj = _wrap(centers[j, 1] + 0.5 * deficit * uy, ly)
    if regions.shape[0] > 0:
        xi, yi = project(xi, yi, regions, lx, ly, eps)
        xj, yj = project(xj, yj, regions, lx, ly, eps)
    centers[i, 0] = xi
    centers[i, 1] = yi
    centers[j, 0] = xj
    centers[j, 1] = yj
    return need - d


@njit(cache=True)
def migrate(centers, radii, lx, ly, gap_factor, step, order, u_angle, u_radius, regions):
    """One sweep of hard-core random moves; a move is rejected if it would
    bring any pair below its admissible gap or leave the allowed regions.

    Returns the number of accepted moves.
    """
    n = centers.shape[0]
    if step <= 0.0 or n == 0:
        return 0
    rmax = 0.0
    for i in range(n):
        rmax = max(rmax, radii[i])
    cutoff = (2.0 + gap_factor) * rmax
    ncx, ncy, head, nxt = _build_cells(centers, lx, ly, cutoff + step + 1e-12)
    accepted = 0
    for k in range(n):
        i = order[k]
        ang = 2.0 * math.pi * u_angle[k]
        rad = step * math.sqrt(u_radius[k])
        x = _wrap(centers[i, 0] + rad * math.cos(ang), lx)
        y = _wrap(centers[i, 1] + rad * math.sin(ang), ly)
        if regions.shape[0] > 0 and not admissible(x, y, regions, lx, ly):
            continue
        ok = True
        if ncx == _BRUTE:
            for j in range(n):
                if j != i and _violates(centers, radii, i, j, x, y, lx, ly, gap_factor):
                    ok = False
                    break
        else:
            cx = int(x / lx * ncx) % ncx
            cy = int(y / ly * ncy) % ncy
            for ox in (-1, 0, 1):
                if not ok:
                    break
                for oy in (-1, 0, 1):
                    c = ((cx + ox) % ncx) * ncy + (cy + oy) % ncy
                    j = head[c]
                    while j != -1:
                        if j != i and _violates(centers, radii, i, j, x, y, lx, ly, gap_factor):
                            ok = False
                            break
                        j = nxt[j]
                    if not ok:
                        break
        if ok:
            centers[i, 0] = x
            centers[i, 1] = y
            accepted += 1
    return accepted


@njit(cache=True)
def _violates(centers, radii, i, j, x, y, lx, ly, gap_factor):
    dx = _min_image(centers[j, 0] - x, lx)
    dy = _min_image(centers[j, 1] - y, ly)
    need = (radii[i] + radii[j]) * (1.0 + 0.5 * gap_factor)
    return dx * dx + dy * dy < need * need
