# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot numeric kernels.

Semantics match ``_reference`` exactly, including the exact-equality
detection of constant inputs that backs the zero-variance conventions.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def group_mean_std(cnp.ndarray[cnp.float64_t, ndim=2] values):
    cdef Py_ssize_t g = values.shape[0]
    cdef Py_ssize_t k = values.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mean = np.empty(k)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] std = np.empty(k)
    cdef double[:, ::1] v = values
    cdef double[::1] mu = mean
    cdef double[::1] sd = std
    cdef Py_ssize_t i, j
    cdef double acc, dev, first
    cdef bint const
    for j in range(k):
        first = v[0, j]
        const = True
        acc = 0.0
        for i in range(g):
            if v[i, j] != first:
                const = False
            acc += v[i, j]
        if const:
            mu[j] = first
            sd[j] = 0.0
            continue
        mu[j] = acc / g
        acc = 0.0
        for i in range(g):
            dev = v[i, j] - mu[j]
            acc += dev * dev
        sd[j] = sqrt(acc / g)
    return mean, std


cdef void _weighted_sums(double[:, ::1] v, double[::1] w, double[::1] out) noexcept:
    cdef Py_ssize_t g = v.shape[0]
    cdef Py_ssize_t k = v.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(g):
        acc = 0.0
        for j in range(k):
            acc += w[j] * v[i, j]
        out[i] = acc


cdef bint _normalize_inplace(double[::1] s) noexcept:
    """Group-normalize in place; returns False (all zeros written) for a
    constant input."""
    cdef Py_ssize_t g = s.shape[0]
    cdef Py_ssize_t i
    cdef double first = s[0]
    cdef bint const = True
    cdef double acc = 0.0, mu, dev, sd
    for i in range(g):
        if s[i] != first:
            const = False
        acc += s[i]
    if const:
        for i in range(g):
            s[i] = 0.0
        return False
    mu = acc / g
    acc = 0.0
    for i in range(g):
        dev = s[i] - mu
        acc += dev * dev
    sd = sqrt(acc / g)
    if sd == 0.0:
        for i in range(g):
            s[i] = 0.0
        return False
    for i in range(g):
        s[i] = (s[i] - mu) / sd
    return True


def grpo_advantages(cnp.ndarray[cnp.float64_t, ndim=2] values,
                    cnp.ndarray[cnp.float64_t, ndim=1] weights):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(values.shape[0])
    _weighted_sums(values, weights, out)
    _normalize_inplace(out)
    return out


def cgdpo_advantages(cnp.ndarray[cnp.float64_t, ndim=2] values,
                     cnp.ndarray[cnp.float64_t, ndim=1] weights):
    cdef Py_ssize_t g = values.shape[0]
    cdef Py_ssize_t k = values.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(g)
    cdef double[:, ::1] v = values
    cdef double[::1] w = weights
    cdef double[::1] o = out
    cdef Py_ssize_t i, j
    cdef double first, acc, mu, dev, sd
    cdef bint const
    for j in range(k):
        first = v[0, j]
        const = True
        acc = 0.0
        for i in range(g):
            if v[i, j] != first:
                const = False
            acc += v[i, j]
        if const:
            continue
        mu = acc / g
        acc = 0.0
        for i in range(g):
            dev = v[i, j] - mu
            acc += dev * dev
        sd = sqrt(acc / g)
        if sd == 0.0:
            continue
        for i in range(g):
            o[i] += w[j] * (v[i, j] - mu) / sd
    return out


def clipped_objective_terms(cnp.ndarray[cnp.float64_t, ndim=1] ratios,
                            double advantage, double clip_eps, double dual_clip):
    cdef Py_ssize_t n = ratios.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef double[::1] r = ratios
    cdef double[::1] o = out
    cdef double lo = 1.0 - clip_eps
    cdef double hi = 1.0 + clip_eps
    cdef double floor_v = dual_clip * advantage
    cdef Py_ssize_t i
    cdef double s, c, a, b
    for i in range(n):
        s = r[i]
        c = s
        if c < lo:
            c = lo
        elif c > hi:
            c = hi
        a = s * advantage
        b = c * advantage
        if b < a:
            a = b
        if advantage < 0.0 and a < floor_v:
            a = floor_v
        o[i] = a
    return out


def clipped_objective_ratio_grad(cnp.ndarray[cnp.float64_t, ndim=1] ratios,
                                 double advantage, double clip_eps, double dual_clip):
    cdef Py_ssize_t n = ratios.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n)
    cdef double[::1] r = ratios
    cdef double[::1] o = out
    cdef double lo = 1.0 - clip_eps
    cdef double hi = 1.0 + clip_eps
    cdef Py_ssize_t i
    if advantage >= 0.0:
        for i in range(n):
            if r[i] < hi:
                o[i] = advantage
    else:
        for i in range(n):
            if lo <= r[i] <= dual_clip:
                o[i] = advantage
    return out


def rollout1_surface(cnp.ndarray[cnp.float64_t, ndim=2] candidates,
                     cnp.ndarray[cnp.float64_t, ndim=2] fixed,
                     cnp.ndarray[cnp.float64_t, ndim=1] weights):
    cdef Py_ssize_t n = candidates.shape[0]
    cdef Py_ssize_t k = candidates.shape[1]
    cdef Py_ssize_t f = fixed.shape[0]
    cdef Py_ssize_t g = f + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] grpo = np.zeros(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cgdpo = np.zeros(n)
    cdef double[:, ::1] c = candidates
    cdef double[:, ::1] fx = fixed
    cdef double[::1] w = weights
    cdef double[::1] go = grpo
    cdef double[::1] co = cgdpo
    cdef Py_ssize_t i, j, d
    cdef double s1, acc, mu, dev, sd, x
    cdef bint const

    # fixed-row aggregates are shared across candidates
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sf_arr = np.empty(f)
    cdef double[::1] sf = sf_arr
    for j in range(f):
        acc = 0.0
        for d in range(k):
            acc += w[d] * fx[j, d]
        sf[j] = acc

    for i in range(n):
        s1 = 0.0
        for d in range(k):
            s1 += w[d] * c[i, d]
        const = True
        acc = s1
        for j in range(f):
            if sf[j] != s1:
                const = False
            acc += sf[j]
        if not const:
            mu = acc / g
            dev = s1 - mu
            acc = dev * dev
            for j in range(f):
                dev = sf[j] - mu
                acc += dev * dev
            sd = sqrt(acc / g)
            if sd != 0.0:
                go[i] = (s1 - mu) / sd

        for d in range(k):
            x = c[i, d]
            const = True
            acc = x
            for j in range(f):
                if fx[j, d] != x:
                    const = False
                acc += fx[j, d]
            if const:
                continue
            mu = acc / g
            dev = x - mu
            acc = dev * dev
            for j in range(f):
                dev = fx[j, d] - mu
                acc += dev * dev
            sd = sqrt(acc / g)
            if sd == 0.0:
                continue
            co[i] += w[d] * (x - mu) / sd
    return grpo, cgdpo
