# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Output matches ``_pykernels`` bit for bit."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fmod
from libc.string cimport memchr

cnp.import_array()

cdef int DX[8]
cdef int DY[8]
DX[:] = [1, 1, 0, -1, -1, -1, 0, 1]
DY[:] = [0, 1, 1, 1, 0, -1, -1, -1]

cdef int RX[16]
cdef int RY[16]
RX[:] = [0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3, -3, -3, -2, -1]
RY[:] = [-3, -3, -2, -1, 0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3]


cdef inline Py_ssize_t _clamp(Py_ssize_t i, Py_ssize_t n) nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


cdef extern from *:
    """
    static inline void imk_min_into(unsigned char *__restrict__ dst,
                                    const unsigned char *__restrict__ src, Py_ssize_t n) {
        for (Py_ssize_t i = 0; i < n; ++i) {
            unsigned char a = dst[i], b = src[i];
            dst[i] = b < a ? b : a;
        }
    }
    static inline void imk_axpy(double *__restrict__ dst, const double *__restrict__ src,
                                double c, Py_ssize_t n) {
        for (Py_ssize_t i = 0; i < n; ++i) dst[i] = dst[i] + c * src[i];
    }
    static inline void imk_scale(double *__restrict__ dst, const double *__restrict__ src,
                                 double c, Py_ssize_t n) {
        for (Py_ssize_t i = 0; i < n; ++i) dst[i] = c * src[i];
    }
    """
    void imk_min_into(cnp.uint8_t* dst, const cnp.uint8_t* src, Py_ssize_t n) nogil
    void imk_axpy(cnp.float64_t* dst, const cnp.float64_t* src, double c, Py_ssize_t n) nogil
    void imk_scale(cnp.float64_t* dst, const cnp.float64_t* src, double c, Py_ssize_t n) nogil


def min_filter(img, int radius, int iterations):
    cdef cnp.uint8_t[:, ::1] cur = np.ascontiguousarray(img, dtype=np.uint8).copy()
    cdef Py_ssize_t h = cur.shape[0], w = cur.shape[1]
    cdef cnp.uint8_t[:, ::1] tmp = np.empty((h, w), dtype=np.uint8)
    cdef Py_ssize_t x, y, k, m
    cdef const cnp.uint8_t* src
    cdef cnp.uint8_t* dst
    cdef int it
    for it in range(iterations):
        # rows: shifted whole-row minima; edge replication only repeats the
        # end pixel, which already lies inside the truncated window
        for y in range(h):
            src = &cur[y, 0]
            dst = &tmp[y, 0]
            for x in range(w):
                dst[x] = src[x]
            for k in range(1, radius + 1):
                m = w - k
                if m <= 0:
                    break
                imk_min_into(dst, src + k, m)
                imk_min_into(dst + k, src, m)
        # columns: whole-row minima against clamped neighbour rows
        for y in range(h):
            dst = &cur[y, 0]
            for x in range(w):
                dst[x] = tmp[y, x]
            for k in range(-radius, radius + 1):
                if k != 0:
                    imk_min_into(dst, &tmp[_clamp(y + k, h), 0], w)
    return np.asarray(cur)


def convolve_separable(img, kernel):
    cdef const cnp.float64_t[::1] kw = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t r = (kw.shape[0] - 1) // 2, n = kw.shape[0]
    cdef const cnp.uint8_t[:, ::1] src = np.ascontiguousarray(img, dtype=np.uint8)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    cdef cnp.float64_t[:, ::1] tmp = np.empty((h, w), dtype=np.float64)
    cdef cnp.float64_t[::1] row = np.empty(w + 2 * r, dtype=np.float64)
    cdef cnp.float64_t[::1] acc = np.empty(w, dtype=np.float64)
    out_arr = np.empty((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef Py_ssize_t x, y, k
    cdef double v
    cdef cnp.float64_t* t
    cdef cnp.float64_t* a
    a = &acc[0]
    for y in range(h):
        # edge-replicated copy of the row, then taps accumulated in order
        for x in range(w + 2 * r):
            row[x] = src[y, _clamp(x - r, w)]
        t = &tmp[y, 0]
        imk_scale(t, &row[0], kw[0], w)
        for k in range(1, n):
            imk_axpy(t, &row[k], kw[k], w)
    for y in range(h):
        imk_scale(a, &tmp[_clamp(y - r, h), 0], kw[0], w)
        for k in range(1, n):
            imk_axpy(a, &tmp[_clamp(y - r + k, h), 0], kw[k], w)
        for x in range(w):
            v = floor(a[x] + 0.5)
            if v < 0:
                v = 0
            elif v > 255:
                v = 255
            out[y, x] = <cnp.uint8_t>v
    return out_arr


def rgb_to_gray(rgb):
    cdef const cnp.uint8_t[:, :, ::1] c = np.ascontiguousarray(rgb, dtype=np.uint8)
    cdef Py_ssize_t h = c.shape[0], w = c.shape[1], x, y
    out_arr = np.empty((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    for y in range(h):
        for x in range(w):
            out[y, x] = <cnp.uint8_t>((299 * <int>c[y, x, 0] + 587 * <int>c[y, x, 1]
                                       + 114 * <int>c[y, x, 2] + 500) // 1000)
    return out_arr


def rgb_to_hsv(rgb):
    cdef const cnp.uint8_t[:, :, ::1] c = np.ascontiguousarray(rgb, dtype=np.uint8)
    cdef Py_ssize_t h = c.shape[0], w = c.shape[1], x, y
    harr = np.empty((h, w), dtype=np.float64)
    sarr = np.empty((h, w), dtype=np.float64)
    varr = np.empty((h, w), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] hh = harr
    cdef cnp.float64_t[:, ::1] ss = sarr
    cdef cnp.float64_t[:, ::1] vv = varr
    cdef double r, g, b, mx, mn, d, hue, q
    for y in range(h):
        for x in range(w):
            r = c[y, x, 0]
            g = c[y, x, 1]
            b = c[y, x, 2]
            mx = r
            if g > mx:
                mx = g
            if b > mx:
                mx = b
            mn = r
            if g < mn:
                mn = g
            if b < mn:
                mn = b
            d = mx - mn
            vv[y, x] = mx / 255.0
            ss[y, x] = d / mx if mx > 0 else 0.0
            hue = 0.0
            if d > 0:
                if mx == r:
                    q = fmod((g - b) / d, 6.0)
                    if q < 0:
                        q = q + 6.0
                    hue = 60.0 * q
                elif mx == g:
                    hue = 60.0 * ((b - r) / d + 2.0)
                else:
                    hue = 60.0 * ((r - g) / d + 4.0)
                if hue >= 360.0:
                    hue = hue - 360.0
            hh[y, x] = hue
    return harr, sarr, varr


def hsv_mask(h_, s_, v_, double h_low, double h_high, double s_low, double s_high,
             double v_low, double v_high):
    cdef const cnp.float64_t[:, ::1] hh = np.ascontiguousarray(h_, dtype=np.float64)
    cdef const cnp.float64_t[:, ::1] ss = np.ascontiguousarray(s_, dtype=np.float64)
    cdef const cnp.float64_t[:, ::1] vv = np.ascontiguousarray(v_, dtype=np.float64)
    cdef Py_ssize_t h = hh.shape[0], w = hh.shape[1], x, y
    out_arr = np.empty((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef bint wrap = h_low > h_high, hin
    cdef double hv, sv, vvv
    for y in range(h):
        for x in range(w):
            hv = hh[y, x]
            if wrap:
                hin = hv >= h_low or hv <= h_high
            else:
                hin = hv >= h_low and hv <= h_high
            sv = ss[y, x]
            vvv = vv[y, x]
            if hin and sv >= s_low and sv <= s_high and vvv >= v_low and vvv <= v_high:
                out[y, x] = 0
            else:
                out[y, x] = 255
    return out_arr


def fast_scores(gray, int t, int arc=9):
    cdef const cnp.uint8_t[:, ::1] img = np.ascontiguousarray(gray, dtype=np.uint8)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], x, y
    scores_arr = np.zeros((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] scores = scores_arr
    cdef int diff[16]
    cdef int k, c, run, mag, best, cls, sign, dv
    cdef bint found
    if h < 7 or w < 7:
        return scores_arr
    for y in range(3, h - 3):
        for x in range(3, w - 3):
            c = img[y, x]
            for k in range(16):
                diff[k] = <int>img[y + RY[k], x + RX[k]] - c
            best = 0
            for cls in range(2):
                sign = 1 if cls == 0 else -1
                run = 0
                found = False
                for k in range(16 + arc - 1):
                    dv = sign * diff[k % 16]
                    if dv > t:
                        run += 1
                        if run >= arc:
                            found = True
                    else:
                        run = 0
                if not found:
                    continue
                mag = 0
                for k in range(16):
                    dv = sign * diff[k]
                    if dv > t:
                        mag += dv - t
                if mag > best:
                    best = mag
            scores[y, x] = best
    return scores_arr


def warp_bilinear(src, hinv, int out_h, int out_w):
    cdef const cnp.float64_t[:, ::1] m = np.ascontiguousarray(hinv, dtype=np.float64)
    s3 = np.asarray(src, dtype=np.uint8)
    cdef bint color = s3.ndim == 3
    if not color:
        s3 = s3[:, :, None]
    cdef const cnp.uint8_t[:, :, ::1] s = np.ascontiguousarray(s3)
    cdef Py_ssize_t sh = s.shape[0], sw = s.shape[1], nc = s.shape[2]
    out_arr = np.zeros((out_h, out_w, nc), dtype=np.uint8)
    valid_arr = np.zeros((out_h, out_w), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] out = out_arr
    cdef cnp.uint8_t[:, ::1] valid = valid_arr
    cdef Py_ssize_t x, y, ch, x0, y0, x1, y1
    cdef Py_ssize_t xmax = sw - 2 if sw > 1 else 0
    cdef Py_ssize_t ymax = sh - 2 if sh > 1 else 0
    cdef double xs, ys, den, sx, sy, fx, fy, top, bot, val, a, b
    for y in range(out_h):
        ys = y
        for x in range(out_w):
            xs = x
            den = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
            sx = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / den
            sy = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / den
            if not (sx >= 0 and sy >= 0 and sx <= sw - 1 and sy <= sh - 1 and den > 0):
                continue
            x0 = <Py_ssize_t>floor(sx)
            y0 = <Py_ssize_t>floor(sy)
            if x0 > xmax:
                x0 = xmax
            if y0 > ymax:
                y0 = ymax
            x1 = x0 + 1 if x0 + 1 < sw else sw - 1
            y1 = y0 + 1 if y0 + 1 < sh else sh - 1
            fx = sx - x0
            fy = sy - y0
            valid[y, x] = 255
            for ch in range(nc):
                a = s[y0, x0, ch]
                b = s[y0, x1, ch]
                top = a + fx * (b - a)
                a = s[y1, x0, ch]
                b = s[y1, x1, ch]
                bot = a + fx * (b - a)
                val = floor(top + fy * (bot - top) + 0.5)
                if val < 0:
                    val = 0
                elif val > 255:
                    val = 255
                out[y, x, ch] = <cnp.uint8_t>val
    if not color:
        out_arr = out_arr[:, :, 0]
    return out_arr, valid_arr


cdef inline bint _on(cnp.uint8_t[:, ::1] fg, Py_ssize_t x, Py_ssize_t y,
                     Py_ssize_t w, Py_ssize_t h):
    return 0 <= x < w and 0 <= y < h and fg[y, x] != 0


cdef int _scan(cnp.uint8_t[:, ::1] fg, Py_ssize_t x, Py_ssize_t y, int start,
               Py_ssize_t w, Py_ssize_t h):
    cdef int k, d
    for k in range(8):
        d = (start + k) % 8
        if _on(fg, x + DX[d], y + DY[d], w, h):
            return d
    return -1


def trace_components(binary, int min_extent):
    # 1 = unvisited foreground, 2 = visited; both count as foreground
    fg_arr = (np.asarray(binary) != 0).astype(np.uint8)
    cdef cnp.uint8_t[:, ::1] fg = fg_arr
    cdef Py_ssize_t h = fg.shape[0], w = fg.shape[1]
    stack_arr = np.empty(h * w + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] stack = stack_arr
    cdef Py_ssize_t sp, idx, px, py, nx, ny, x, y, x0c, y0c
    cdef Py_ssize_t minx, maxx, miny, maxy
    cdef int d, d0, nd
    cdef cnp.uint8_t* row
    cdef cnp.uint8_t* hit
    contours = []
    for y in range(h):
        row = &fg[y, 0]
        x = 0
        while x < w:
            hit = <cnp.uint8_t*>memchr(row + x, 1, w - x)
            if hit == NULL:
                break
            x = hit - row
            minx = maxx = x
            miny = maxy = y
            sp = 0
            stack[sp] = y * w + x
            sp += 1
            row[x] = 2
            while sp > 0:
                sp -= 1
                idx = stack[sp]
                py = idx // w
                px = idx - py * w
                if px < minx:
                    minx = px
                if px > maxx:
                    maxx = px
                if py < miny:
                    miny = py
                if py > maxy:
                    maxy = py
                for d in range(8):
                    nx = px + DX[d]
                    ny = py + DY[d]
                    if 0 <= nx < w and 0 <= ny < h and fg[ny, nx] == 1:
                        fg[ny, nx] = 2
                        stack[sp] = ny * w + nx
                        sp += 1
            if maxy - miny + 1 < min_extent and maxx - minx + 1 < min_extent:
                x += 1
                continue
            pts = [(x, y)]
            d0 = _scan(fg, x, y, 5, w, h)
            if d0 >= 0:
                x0c = x
                y0c = y
                d = d0
                while True:
                    x0c += DX[d]
                    y0c += DY[d]
                    nd = _scan(fg, x0c, y0c, (d + 5) % 8, w, h)
                    if x0c == x and y0c == y and nd == d0:
                        break
                    pts.append((x0c, y0c))
                    d = nd
            contours.append(np.asarray(pts, dtype=np.int32))
            x += 1
    return contours
