# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot numeric kernels.

Twin of ``mvdet._kernels._ref``: every formula is evaluated in the same
floating-point order as the NumPy backend (and the extension is built with
-ffp-contract=off), so the two backends agree bit for bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, floor, sin

cnp.import_array()

NAN = float("nan")


def project_points(points, rot, trans, double fx, double fy, double cx,
                   double cy, double eps_depth):
    """See mvdet._kernels._ref.project_points."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pts = \
        np.ascontiguousarray(points, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] r = \
        np.ascontiguousarray(rot, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t = \
        np.ascontiguousarray(trans, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] uv = np.empty((n, 2), dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] front = np.empty(n, dtype=np.uint8)
    cdef double r00 = r[0, 0], r01 = r[0, 1], r02 = r[0, 2]
    cdef double r10 = r[1, 0], r11 = r[1, 1], r12 = r[1, 2]
    cdef double r20 = r[2, 0], r21 = r[2, 1], r22 = r[2, 2]
    cdef double t0 = t[0], t1 = t[1], t2 = t[2]
    cdef double x, y, z, xc, yc, zc, inv
    cdef double nan = NAN
    cdef Py_ssize_t i
    for i in range(n):
        x = pts[i, 0]
        y = pts[i, 1]
        z = pts[i, 2]
        xc = r00 * x + r01 * y + r02 * z + t0
        yc = r10 * x + r11 * y + r12 * z + t1
        zc = r20 * x + r21 * y + r22 * z + t2
        if zc > eps_depth:
            inv = 1.0 / zc
            uv[i, 0] = fx * (xc * inv) + cx
            uv[i, 1] = fy * (yc * inv) + cy
            front[i] = 1
        else:
            uv[i, 0] = nan
            uv[i, 1] = nan
            front[i] = 0
    return uv, front.view(np.bool_)


# Same sign pattern as the reference backend: bottom face CCW from (+x, +y),
# then the top face.
cdef double[8][3] _CORNER_SIGNS = [
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
]


def box_points(anchors):
    """See mvdet._kernels._ref.box_points."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] arr = \
        np.ascontiguousarray(anchors, dtype=np.float64)
    cdef Py_ssize_t n = arr.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((n, 9, 3), dtype=np.float64)
    cdef double x, y, z, hw, hl, hh, c, s, lx, ly, sx, sy, sz
    cdef Py_ssize_t i, k
    for i in range(n):
        x = arr[i, 0]
        y = arr[i, 1]
        z = arr[i, 2]
        hw = 0.5 * arr[i, 3]
        hl = 0.5 * arr[i, 4]
        hh = 0.5 * arr[i, 5]
        c = cos(arr[i, 6])
        s = sin(arr[i, 6])
        out[i, 0, 0] = x
        out[i, 0, 1] = y
        out[i, 0, 2] = z
        for k in range(8):
            sx = _CORNER_SIGNS[k][0]
            sy = _CORNER_SIGNS[k][1]
            sz = _CORNER_SIGNS[k][2]
            lx = hl * sx
            ly = hw * sy
            out[i, k + 1, 0] = x + (lx * c - ly * s)
            out[i, k + 1, 1] = y + (lx * s + ly * c)
            out[i, k + 1, 2] = z + hh * sz
    return out


def bilinear_sample(fmap, pts):
    """See mvdet._kernels._ref.bilinear_sample."""
    cdef cnp.ndarray[cnp.float64_t, ndim=3] f = \
        np.ascontiguousarray(fmap, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] p = \
        np.ascontiguousarray(pts, dtype=np.float64)
    cdef Py_ssize_t h = f.shape[0], w = f.shape[1], nc = f.shape[2]
    cdef Py_ssize_t n = p.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, nc), dtype=np.float64)
    cdef double x, y, tx, ty, x0f, y0f
    cdef Py_ssize_t x0, y0, x1, y1, i, c
    cdef double xmax = <double>(w - 1), ymax = <double>(h - 1)
    for i in range(n):
        x = p[i, 0]
        if x < 0.0:
            x = 0.0
        elif x > xmax:
            x = xmax
        y = p[i, 1]
        if y < 0.0:
            y = 0.0
        elif y > ymax:
            y = ymax
        if w >= 2:
            x0f = floor(x)
            if x0f > <double>(w - 2):
                x0f = <double>(w - 2)
        else:
            x0f = 0.0
        if h >= 2:
            y0f = floor(y)
            if y0f > <double>(h - 2):
                y0f = <double>(h - 2)
        else:
            y0f = 0.0
        x0 = <Py_ssize_t>x0f
        y0 = <Py_ssize_t>y0f
        x1 = x0 + 1
        if x1 > w - 1:
            x1 = w - 1
        y1 = y0 + 1
        if y1 > h - 1:
            y1 = h - 1
        tx = x - x0f
        ty = y - y0f
        for c in range(nc):
            out[i, c] = (1.0 - ty) * ((1.0 - tx) * f[y0, x0, c] + tx * f[y0, x1, c]) \
                + ty * ((1.0 - tx) * f[y1, x0, c] + tx * f[y1, x1, c])
    return out


def iou_matrix(a, b):
    """See mvdet._kernels._ref.iou_matrix."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] aa = \
        np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bb = \
        np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t na = aa.shape[0], nb = bb.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((na, nb), dtype=np.float64)
    cdef double ax0, ax1, ay0, ay1, area_a
    cdef double bx0, bx1, by0, by1, area_b
    cdef double iw, ih, lo, hi, inter, union
    cdef Py_ssize_t i, j
    for i in range(na):
        ax0 = aa[i, 0] - 0.5 * aa[i, 2]
        ax1 = aa[i, 0] + 0.5 * aa[i, 2]
        ay0 = aa[i, 1] - 0.5 * aa[i, 3]
        ay1 = aa[i, 1] + 0.5 * aa[i, 3]
        # areas from the same corner differences as the intersection, so
        # identical boxes come out at exactly 1
        area_a = (ax1 - ax0) * (ay1 - ay0)
        for j in range(nb):
            bx0 = bb[j, 0] - 0.5 * bb[j, 2]
            bx1 = bb[j, 0] + 0.5 * bb[j, 2]
            by0 = bb[j, 1] - 0.5 * bb[j, 3]
            by1 = bb[j, 1] + 0.5 * bb[j, 3]
            hi = ax1 if ax1 < bx1 else bx1
            lo = ax0 if ax0 > bx0 else bx0
            iw = hi - lo
            if iw < 0.0:
                iw = 0.0
            hi = ay1 if ay1 < by1 else by1
            lo = ay0 if ay0 > by0 else by0
            ih = hi - lo
            if ih < 0.0:
                ih = 0.0
            inter = iw * ih
            area_b = (bx1 - bx0) * (by1 - by0)
            union = (area_a + area_b) - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out
