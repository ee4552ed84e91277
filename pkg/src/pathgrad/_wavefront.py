"""Vectorized tracer used by trace_image.

This kernel traces all (pixel, sample) lanes of an image chunk in lockstep
with numpy and is draw-for-draw equivalent to the scalar engine in
path_engine/make_path: every lane owns the same keyed counter stream, draws
advance only on lanes that would draw in the scalar code, and all formulas
mirror geometry.py / sampling.py / materials.py term for term.  Tests assert
the equivalence against per-path scalar traces.

Parallelism splits the pixel range into per-worker chunks merged in chunk
order, so per-pixel outputs never depend on the worker count and reductions
are bit-stable for a fixed count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import (FRAME_DEGENERATE_EPS, FRAME_HELPER,
                       FRAME_HELPER_FALLBACK, Sphere, T_MIN)
from .materials import MaterialKind, N_CONTROLS, Q_LOBE
from .sampling import SIN_CLAMP, _GOLDEN, _MASK64, _MIX1, _MIX2

_U64 = np.uint64
_GOLD_U = _U64(_GOLDEN)
_MIX1_U = _U64(_MIX1)
_MIX2_U = _U64(_MIX2)

# lane status codes
_IN_FLIGHT = 0
_ESCAPED = 1
_ABSORBED = 2
_EMITTER = 3
_MAX_DEPTH = 4
_BELOW_HORIZON = 5

# vertex tag codes
_TAG_NONE = 0
_TAG_LAMBERT = 1
_TAG_DIFFUSE = 2
_TAG_SPECULAR = 3

_KIND_EMITTER = 0
_KIND_PHONG = 1
_KIND_LAMBERT = 2


def _mix64(z):
    z = (z ^ (z >> _U64(30))) * _MIX1_U
    z = (z ^ (z >> _U64(27))) * _MIX2_U
    return z ^ (z >> _U64(31))


def _stream_keys(seed, pixel, sample):
    h = _mix64(_U64((seed ^ _GOLDEN) & _MASK64) * np.ones_like(pixel))
    h = _mix64(h ^ pixel)
    h = _mix64(h ^ sample)
    return h


@dataclass
class _SceneArrays:
    """Scene flattened to plain arrays (picklable, resolved at fixed theta)."""

    prims: list          # ("quad", corner, eu, ev, n, nn, unit_n, mat) / ("sphere", c, r, mat)
    kind: np.ndarray     # per material
    absorb: np.ndarray
    weight: np.ndarray   # 1 / (1 - absorb), 0 for emitters (never used)
    amb_val: np.ndarray
    diff_val: np.ndarray
    specular_val: np.ndarray
    alpha_val: np.ndarray
    emit_val: np.ndarray     # emission * base_emission
    base_em: np.ndarray
    amb_ctl: np.ndarray      # 0-based control index or -1
    diff_ctl: np.ndarray
    specular_ctl: np.ndarray
    alpha_ctl: np.ndarray
    emit_ctl: np.ndarray
    # camera
    eye: np.ndarray
    fwd: np.ndarray
    right: np.ndarray
    upv: np.ndarray
    half_w: float
    half_h: float
    width: int
    height: int


def _v3(v):
    return np.array([v.x, v.y, v.z], dtype=np.float64)


def _build_arrays(scene, theta):
    prims = []
    for p in scene.primitives:
        if isinstance(p, Sphere):
            prims.append(("sphere", _v3(p.center), float(p.radius), p.material))
        else:
            c, eu, ev = _v3(p.corner), _v3(p.edge_u), _v3(p.edge_v)
            n = np.cross(eu, ev)
            nn = float(n @ n)
            prims.append(("quad", c, eu, ev, n, nn, n / np.sqrt(nn), p.material))

    kind_code = {MaterialKind.EMITTER: _KIND_EMITTER,
                 MaterialKind.PHONG: _KIND_PHONG,
                 MaterialKind.LAMBERT: _KIND_LAMBERT}
    mats = scene.materials

    def vals(f):
        return np.array([f(m) for m in mats], dtype=np.float64)

    def ctls(f):
        return np.array([(f(m).control - 1) if f(m).control is not None else -1
                         for m in mats], dtype=np.int64)

    absorb = vals(lambda m: m.absorb)
    weight = np.where(absorb < 1.0, 1.0 / (1.0 - np.where(absorb < 1.0, absorb, 0.0)), 0.0)
    cam = scene.camera
    return _SceneArrays(
        prims=prims,
        kind=np.array([kind_code[m.kind] for m in mats], dtype=np.int64),
        absorb=absorb,
        weight=weight,
        amb_val=vals(lambda m: m.ambient.resolve(theta)),
        diff_val=vals(lambda m: m.diffuse.resolve(theta)),
        specular_val=vals(lambda m: m.specular.resolve(theta)),
        alpha_val=vals(lambda m: m.exponent.resolve(theta)),
        emit_val=vals(lambda m: m.emission.resolve(theta) * m.base_emission),
        base_em=vals(lambda m: m.base_emission),
        amb_ctl=ctls(lambda m: m.ambient),
        diff_ctl=ctls(lambda m: m.diffuse),
        specular_ctl=ctls(lambda m: m.specular),
        alpha_ctl=ctls(lambda m: m.exponent),
        emit_ctl=ctls(lambda m: m.emission),
        eye=_v3(cam.eye), fwd=_v3(cam.forward), right=_v3(cam.right),
        upv=_v3(cam.upv), half_w=cam.half_w, half_h=cam.half_h,
        width=cam.width, height=cam.height,
    )


def _dot(a, b):
    return a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1] + a[:, 2] * b[:, 2]


def _dotv(a, v):
    """Row-wise dot with a fixed vector, same term order as Vec3.dot."""
    return a[:, 0] * v[0] + a[:, 1] * v[1] + a[:, 2] * v[2]


def _cross(a, b):
    out = np.empty_like(a)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


class _Lanes:
    """Per-lane RNG state; draw() advances counters only where mask is set."""

    def __init__(self, seed, pixels, samples):
        self.key = _stream_keys(seed, pixels.astype(np.uint64),
                                samples.astype(np.uint64))
        self.counter = np.zeros(pixels.shape, dtype=np.uint64)

    def draw(self, mask):
        self.counter = self.counter + mask.astype(np.uint64)
        z = self.key + self.counter * _GOLD_U
        bits = _mix64(z)
        return (bits >> _U64(11)).astype(np.float64) * 2.0**-53


def _sin_m(alpha, u1):
    return np.sqrt(np.clip(1.0 - u1 ** (2.0 / (alpha + 2.0)), 0.0, None))


def _dsin_dalpha(alpha, u1):
    safe_u1 = np.where(u1 > 0.0, u1, 0.5)
    cos_m = safe_u1 ** (1.0 / (alpha + 2.0))
    sin_m = np.sqrt(np.clip(1.0 - cos_m * cos_m, 0.0, None))
    sin_m = np.maximum(sin_m, SIN_CLAMP)
    out = cos_m * cos_m * np.log(cos_m) / ((alpha + 2.0) * sin_m)
    return np.where(u1 > 0.0, out, 0.0)


def _make_frames(normal):
    """Vectorized twin of geometry.make_frame."""
    z = normal
    helper = np.array(FRAME_HELPER, dtype=np.float64)
    c = _cross(z, z + helper[None, :])
    cn = np.sqrt(_dot(c, c))
    degenerate = cn < FRAME_DEGENERATE_EPS
    if np.any(degenerate):
        helper2 = np.array(FRAME_HELPER_FALLBACK, dtype=np.float64)
        c2 = _cross(z[degenerate], z[degenerate] + helper2[None, :])
        c[degenerate] = c2
        cn[degenerate] = np.sqrt(_dot(c2, c2))
    # dead lanes carry zero normals; give them a harmless unit divisor
    y = c / np.where(cn > 0.0, cn, 1.0)[:, None]
    x = _cross(y, z)
    xn = np.sqrt(_dot(x, x))
    x = x / np.where(xn > 0.0, xn, 1.0)[:, None]
    return x, y, z


def _trace_lanes(sa, lanes, pix, max_depth, n_lanes):
    """Build path SoA arrays for every lane; mirrors make_path exactly."""
    W, H = sa.width, sa.height
    all_mask = np.ones(n_lanes, dtype=bool)
    jx = lanes.draw(all_mask)
    jy = lanes.draw(all_mask)
    px = (pix % W).astype(np.float64)
    py = (pix // W).astype(np.float64)
    sx = (px + jx) / W * 2.0 - 1.0
    sy = 1.0 - (py + jy) / H * 2.0
    D = (sa.fwd[None, :]
         + sa.right[None, :] * (sx * sa.half_w)[:, None]
         + sa.upv[None, :] * (sy * sa.half_h)[:, None])
    D = D / np.sqrt(_dot(D, D))[:, None]
    O = np.broadcast_to(sa.eye, (n_lanes, 3)).copy()

    status = np.full(n_lanes, _IN_FLIGHT, dtype=np.int8)
    n_cont = np.zeros(n_lanes, dtype=np.int32)
    n_verts = np.zeros(n_lanes, dtype=np.int32)
    term_emit = np.zeros(n_lanes, dtype=np.float64)  # emission/absorb at emitter terminals
    term_mat = np.full(n_lanes, -1, dtype=np.int64)

    v_mat = np.full((max_depth, n_lanes), -1, dtype=np.int64)
    v_tag = np.full((max_depth, n_lanes), _TAG_NONE, dtype=np.int8)
    v_u1 = np.zeros((max_depth, n_lanes), dtype=np.float64)

    for d in range(max_depth):
        active = status == _IN_FLIGHT
        if not np.any(active):
            break

        best_t = np.full(n_lanes, np.inf)
        best_prim = np.full(n_lanes, -1, dtype=np.int64)
        for i, prim in enumerate(sa.prims):
            if prim[0] == "sphere":
                _, c, r, _m = prim
                oc = O - c[None, :]
                b = _dot(oc, D)
                cq = _dot(oc, oc) - r * r
                disc = b * b - cq
                ok = active & (disc >= 0.0)
                s = np.sqrt(np.where(ok, disc, 0.0))
                t1 = -b - s
                t2 = -b + s
                t = np.where(t1 > T_MIN, t1, t2)
                ok &= t > T_MIN
            else:
                _, corner, eu, ev, nrm, nn, _un, _m = prim
                denom = _dotv(D, nrm)
                ok = active & (denom != 0.0)
                t = _dotv(corner[None, :] - O, nrm) / np.where(ok, denom, 1.0)
                ok &= t > T_MIN
                P = O + t[:, None] * D
                w = P - corner[None, :]
                a = _dotv(_cross(w, np.broadcast_to(ev, w.shape)), nrm) / nn
                bq = _dotv(_cross(np.broadcast_to(eu, w.shape), w), nrm) / nn
                ok &= (a >= 0.0) & (a <= 1.0) & (bq >= 0.0) & (bq <= 1.0)
            upd = ok & (t < best_t)
            best_t[upd] = t[upd]
            best_prim[upd] = i

        miss = active & (best_prim < 0)
        status[miss] = _ESCAPED
        hit = active & ~miss
        if not np.any(hit):
            break

        point = O + best_t[:, None] * D
        normal = np.zeros((n_lanes, 3))
        mat = np.full(n_lanes, -1, dtype=np.int64)
        for i, prim in enumerate(sa.prims):
            sel = hit & (best_prim == i)
            if not np.any(sel):
                continue
            if prim[0] == "sphere":
                _, c, r, m = prim
                normal[sel] = (point[sel] - c[None, :]) / r
            else:
                m = prim[7]
                normal[sel] = prim[6][None, :]
            mat[sel] = m
        flip = hit & (_dot(normal, D) > 0.0)
        normal[flip] = -normal[flip]

        v_mat[d, hit] = mat[hit]
        n_verts[hit] = d + 1

        u_rr = lanes.draw(hit)
        mat_absorb = sa.absorb[np.where(hit, mat, 0)]
        terminal = hit & (u_rr < mat_absorb)
        if np.any(terminal):
            is_em = terminal & (sa.kind[np.where(terminal, mat, 0)] == _KIND_EMITTER)
            status[terminal & ~is_em] = _ABSORBED
            status[is_em] = _EMITTER
            term_mat[terminal] = mat[terminal]
            term_emit[is_em] = (sa.emit_val[mat[is_em]] / sa.absorb[mat[is_em]])

        surviving = hit & ~terminal
        if d + 1 >= max_depth:
            status[surviving] = _MAX_DEPTH
            continue
        if not np.any(surviving):
            continue

        is_phong = surviving & (sa.kind[np.where(surviving, mat, 0)] == _KIND_PHONG)
        u_lobe = lanes.draw(is_phong)
        specular = is_phong & (u_lobe < Q_LOBE)
        u1 = lanes.draw(surviving)
        u2 = lanes.draw(surviving)

        fx, fy, fz = _make_frames(normal)
        alpha = np.where(specular, sa.alpha_val[np.where(specular, mat, 0)], 0.0)
        t_pow = np.where(surviving, u1, 0.25) ** (2.0 / (alpha + 2.0))
        zloc = np.sqrt(t_pow)
        rloc = np.sqrt(1.0 - t_pow)
        phi = 2.0 * np.pi * u2
        a_loc = np.cos(phi) * rloc
        b_loc = np.sin(phi) * rloc
        m_dir = fx * a_loc[:, None] + fy * b_loc[:, None] + fz * zloc[:, None]

        dir_out = m_dir.copy()
        below = np.zeros(n_lanes, dtype=bool)
        if np.any(specular):
            inc = -D
            m_spec = m_dir.copy()
            mdot_in = _dot(m_spec, inc)
            flip_m = specular & (mdot_in < 0.0)
            if np.any(flip_m):
                mn = _dot(m_spec, normal)
                m_spec[flip_m] = (normal[flip_m] * (2.0 * mn[flip_m])[:, None]
                                  - m_spec[flip_m])
                mdot_in = _dot(m_spec, inc)
            out = m_spec * (2.0 * mdot_in)[:, None] - inc
            below = specular & (_dot(out, normal) <= 0.0)
            sel = specular & ~below
            dir_out[sel] = out[sel]

        v_u1[d, surviving] = u1[surviving]
        tag = np.where(specular, _TAG_SPECULAR,
                       np.where(is_phong, _TAG_DIFFUSE, _TAG_LAMBERT))
        v_tag[d, surviving] = tag[surviving].astype(np.int8)

        status[below] = _BELOW_HORIZON
        cont = surviving & ~below
        n_cont[cont] = d + 1
        # keep retired lanes finite so unmasked arithmetic stays warning-free
        O = np.where(cont[:, None], point, O)
        D = np.where(cont[:, None], dir_out, D)

    max_cont = int(n_cont.max()) if n_lanes else 0
    return status, n_cont, n_verts, term_emit, term_mat, v_mat, v_tag, v_u1, max_cont


def _throughput(sa, mat, tag, u1):
    """Per-lane bounce throughput for recorded continuation vertices."""
    diff = sa.diff_val[mat]
    f = np.where(tag == _TAG_LAMBERT, diff,
                 np.where(tag == _TAG_DIFFUSE, diff / (1.0 - Q_LOBE), 0.0))
    spec_sel = tag == _TAG_SPECULAR
    if np.any(spec_sel):
        s = sa.specular_val[mat] * _sin_m(sa.alpha_val[mat], u1) / Q_LOBE
        f = np.where(spec_sel, s, f)
    return f


@dataclass
class _ChunkResult:
    pixel_sum: np.ndarray
    n_verts_total: int
    cost: float
    grad: np.ndarray
    grad_pixel: np.ndarray | None


def _trace_chunk(sa, pixel_indices, spp, seed, targets, want_grad,
                 want_grad_images, max_depth):
    npix = pixel_indices.shape[0]
    n_lanes = npix * spp
    pix = np.repeat(pixel_indices, spp)
    smp = np.tile(np.arange(spp, dtype=np.int64), npix)
    lanes = _Lanes(seed, pix, smp)

    (status, n_cont, n_verts, term_emit, term_mat,
     v_mat, v_tag, v_u1, max_cont) = _trace_lanes(sa, lanes, pix, max_depth, n_lanes)

    # forward sweep, terminal -> camera
    radiance = term_emit.copy()  # nonzero only on emitter-terminated lanes
    sr = np.zeros((max_cont, n_lanes)) if max_cont else None
    f_cache = np.zeros((max_cont, n_lanes)) if max_cont else None
    for d in range(max_cont - 1, -1, -1):
        cmask = n_cont > d
        mat = np.where(cmask, v_mat[d], 0)
        f = _throughput(sa, mat, v_tag[d], v_u1[d])
        w = sa.weight[mat]
        amb = sa.amb_val[mat]
        sr[d] = radiance
        f_cache[d] = f
        radiance = np.where(cmask, amb + f * radiance * w, radiance)

    lane_rad = radiance.reshape(npix, spp)
    pixel_sum = lane_rad.sum(axis=1)

    cost = 0.0
    grad = np.zeros(N_CONTROLS)
    grad_pixel = None
    if want_grad:
        # the cost compares stored images, so quantize means to float32 first;
        # a target rendered at identical settings then has exactly zero residual
        mean32 = (pixel_sum / spp).astype(np.float32).astype(np.float64)
        resid = mean32 - targets
        cost = float(0.5 * (resid @ resid))
        seed_adj = np.repeat(resid / spp, spp)
        g_lane = np.zeros((N_CONTROLS, n_lanes))
        p = seed_adj.copy()
        for d in range(max_cont):
            cmask = n_cont > d
            mat = np.where(cmask, v_mat[d], 0)
            tag = v_tag[d]
            w = sa.weight[mat]
            rad_w = sr[d] * w
            for mi in range(len(sa.kind)):
                sel = cmask & (mat == mi)
                if not np.any(sel):
                    continue
                if sa.amb_ctl[mi] >= 0:
                    g_lane[sa.amb_ctl[mi], sel] += p[sel]
                if sa.diff_ctl[mi] >= 0:
                    lam = sel & (tag == _TAG_LAMBERT)
                    g_lane[sa.diff_ctl[mi], lam] += rad_w[lam] * p[lam]
                    dif = sel & (tag == _TAG_DIFFUSE)
                    g_lane[sa.diff_ctl[mi], dif] += rad_w[dif] * p[dif] / (1.0 - Q_LOBE)
                spe = sel & (tag == _TAG_SPECULAR)
                if np.any(spe):
                    if sa.specular_ctl[mi] >= 0:
                        g_lane[sa.specular_ctl[mi], spe] += (
                            _sin_m(sa.alpha_val[mi], v_u1[d, spe])
                            * rad_w[spe] * p[spe] / Q_LOBE)
                    if sa.alpha_ctl[mi] >= 0:
                        g_lane[sa.alpha_ctl[mi], spe] += (
                            sa.specular_val[mi]
                            * _dsin_dalpha(sa.alpha_val[mi], v_u1[d, spe])
                            * rad_w[spe] * p[spe] / Q_LOBE)
            p = np.where(cmask, f_cache[d] * sa.weight[mat] * p, p)
        em = status == _EMITTER
        if np.any(em):
            for mi in range(len(sa.kind)):
                if sa.emit_ctl[mi] < 0:
                    continue
                sel = em & (term_mat == mi)
                g_lane[sa.emit_ctl[mi], sel] += (sa.base_em[mi] * p[sel]
                                                 / sa.absorb[mi])
        grad_pixel_full = g_lane.reshape(N_CONTROLS, npix, spp).sum(axis=2)
        grad = grad_pixel_full.sum(axis=1)
        if want_grad_images:
            grad_pixel = grad_pixel_full

    return _ChunkResult(pixel_sum=pixel_sum, n_verts_total=int(n_verts.sum()),
                        cost=cost, grad=grad, grad_pixel=grad_pixel)


def _chunk_job(args):
    return _trace_chunk(*args)


@dataclass
class TraceResult:
    pixel_mean: np.ndarray  # (h, w)
    cost: float
    grad: np.ndarray        # (7,)
    mean_depth: float
    grad_images: np.ndarray | None


def trace(scene, theta, spp, seed, target_rows, want_grad, threads, max_depth,
          want_grad_images):
    sa = _build_arrays(scene, theta)
    W, H = sa.width, sa.height
    npix = W * H
    all_pixels = np.arange(npix, dtype=np.int64)
    targets_flat = target_rows.reshape(-1) if target_rows is not None else None

    threads = max(1, int(threads))
    n_chunks = min(threads, npix)
    bounds = [(npix * i) // n_chunks for i in range(n_chunks + 1)]
    jobs = []
    for i in range(n_chunks):
        lo, hi = bounds[i], bounds[i + 1]
        tgt = targets_flat[lo:hi] if targets_flat is not None else None
        jobs.append((sa, all_pixels[lo:hi], spp, seed, tgt, want_grad,
                     want_grad_images, max_depth))

    if n_chunks == 1:
        results = [_trace_chunk(*jobs[0])]
    else:
        ctx_workers = min(n_chunks, os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=ctx_workers) as pool:
            results = list(pool.map(_chunk_job, jobs))

    pixel_sum = np.concatenate([r.pixel_sum for r in results])
    cost = 0.0
    grad = np.zeros(N_CONTROLS)
    for r in results:  # fixed chunk order -> bit-stable reduction
        cost += r.cost
        grad += r.grad
    grad_images = None
    if want_grad and want_grad_images:
        grad_images = np.concatenate([r.grad_pixel for r in results],
                                     axis=1).reshape(N_CONTROLS, H, W)
    total_verts = sum(r.n_verts_total for r in results)
    return TraceResult(pixel_mean=(pixel_sum / spp).reshape(H, W),
                       cost=cost, grad=grad,
                       mean_depth=total_verts / (npix * spp),
                       grad_images=grad_images)
