"""Independent reference computations used by the tests."""

from functools import lru_cache
from math import erf, sqrt

import numpy as np
import sympy as sp

from torquefusion import dynamics as dyn


def double_pendulum_oracle(m1, m2, l1, lc1, lc2, I1, I2, g):
    """Torque function derived symbolically from the double-pendulum Lagrangian.

    Angles are measured from the downward vertical; the second is relative
    to the first link.
    """
    t = sp.symbols("t")
    th1, th2 = sp.Function("th1")(t), sp.Function("th2")(t)
    x1, y1 = lc1 * sp.sin(th1), -lc1 * sp.cos(th1)
    x2 = l1 * sp.sin(th1) + lc2 * sp.sin(th1 + th2)
    y2 = -l1 * sp.cos(th1) - lc2 * sp.cos(th1 + th2)
    d = lambda e: sp.diff(e, t)
    T = (sp.Rational(1, 2) * m1 * (d(x1) ** 2 + d(y1) ** 2) + sp.Rational(1, 2) * I1 * d(th1) ** 2
         + sp.Rational(1, 2) * m2 * (d(x2) ** 2 + d(y2) ** 2) + sp.Rational(1, 2) * I2 * (d(th1) + d(th2)) ** 2)
    V = m1 * g * y1 + m2 * g * y2
    L = T - V
    q = [th1, th2]
    eqs = [sp.diff(sp.diff(L, d(qi)), t) - sp.diff(L, qi) for qi in q]
    a1, a2, v1, v2, p1, p2 = sp.symbols("a1 a2 v1 v2 p1 p2")
    subs = {sp.diff(th1, t, 2): a1, sp.diff(th2, t, 2): a2}
    eqs = [e.subs(subs) for e in eqs]
    subs = {sp.diff(th1, t): v1, sp.diff(th2, t): v2}
    eqs = [e.subs(subs).subs({th1: p1, th2: p2}) for e in eqs]
    f = sp.lambdify((p1, p2, v1, v2, a1, a2), [sp.simplify(e) for e in eqs], "math")

    def torque(q, qd, qdd):
        return np.array(f(q[0], q[1], qd[0], qd[1], qdd[0], qdd[1]), dtype=float)

    return torque


def lagrangian_torque(chain, q, qd, qdd, h=1e-6):
    """M qdd + C + g with C and g from finite differences of M(q) and V(q)."""
    n = len(q)
    E = np.eye(n)
    dM = [(dyn.mass_matrix(chain, q + h * e) - dyn.mass_matrix(chain, q - h * e)) / (2 * h) for e in E]
    Mdot = sum(dM[k] * qd[k] for k in range(n))
    C = Mdot @ qd - 0.5 * np.array([qd @ dM[k] @ qd for k in range(n)])
    g = np.array([(dyn.potential_energy(chain, q + h * e) - dyn.potential_energy(chain, q - h * e)) / (2 * h) for e in E])
    return dyn.mass_matrix(chain, q) @ qdd + C + g


def straight_line_fn(params, x):
    """Force-network forward pass written out step by step for one frame."""
    h = [float(v) for v in x]
    for b in params.blocks:
        W, bias, gain, shift = b.weight, b.bias, b.gain, b.shift
        z = [sum(h[i] * W[i, j] for i in range(len(h))) + bias[j] for j in range(W.shape[1])]
        mu = sum(z) / len(z)
        var = sum((v - mu) ** 2 for v in z) / len(z)
        den = sqrt(var + params.eps)
        y = [gain[j] * (z[j] - mu) / den + shift[j] for j in range(len(z))]
        h = [v * 0.5 * (1.0 + erf(v / sqrt(2.0))) for v in y]
    W, bias = params.out_weight, params.out_bias
    return np.array([sum(h[i] * W[i, j] for i in range(len(h))) + bias[j] for j in range(W.shape[1])])


def brute_force_retrieval(dist, probe_labels, gallery_labels, mask=None, ks=(1, 5, 10)):
    """Rank-k / AP / INP from pairwise rank counting, exact via fractions.

    The rank of gallery item j is 1 + the number of unmasked items that are
    strictly closer, or equally close with a smaller index.
    """
    from fractions import Fraction

    P, G = dist.shape
    mask = np.zeros((P, G), bool) if mask is None else mask
    hits = {k: [] for k in ks}
    aps, inps = [], []
    idx = np.arange(G)
    for i in range(P):
        d = dist[i]
        valid = ~mask[i]
        before = (d[None, :] < d[:, None]) | ((d[None, :] == d[:, None]) & (idx[None, :] < idx[:, None]))
        rank = (before & valid[None, :]).sum(axis=1) + 1
        pos = [int(rank[j]) for j in range(G) if valid[j] and gallery_labels[j] == probe_labels[i]]
        if not pos:
            continue
        pos.sort()
        for k in ks:
            hits[k].append(Fraction(int(pos[0] <= k)))
        aps.append(sum(Fraction(n + 1, r) for n, r in enumerate(pos)) / len(pos))
        inps.append(Fraction(len(pos), pos[-1]))
    mean = lambda xs: float(sum(xs) / len(xs))
    out = {f"rank{k}": mean(hits[k]) for k in ks}
    out["mAP"] = mean(aps)
    out["mINP"] = mean(inps)
    out["valid"] = len(aps)
    return out


def lcs_recursive(a, b):
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def t_density_tail(t, df):
    """Two-sided tail probability by adaptive quadrature of the t density."""
    from scipy.integrate import quad
    from scipy.special import gammaln

    logc = gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * np.log(df * np.pi)
    dens = lambda x: np.exp(logc - (df + 1) / 2 * np.log1p(x * x / df))
    # integrate the centre and double it: 1 - 2 * int_0^|t|
    centre, _ = quad(dens, 0.0, abs(t), epsabs=1e-14, epsrel=1e-13, limit=200)
    return 1.0 - 2.0 * centre


def gradient_check(params, x, upstream, fn_forward, fn_gradient, rng, coords=3, h=1e-5):
    """Largest relative error between analytic and central-difference gradients.

    Every parameter array and the input are probed along one random
    direction and at ``coords`` random single entries. The relative error of
    a pair is |a - b| / max(|a|, |b|, 1e-6).
    """
    loss = lambda p, xx: float(np.sum(fn_forward(p, xx) * upstream))
    grads, dx = fn_gradient(params, x, upstream)
    worst = 0.0

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), 1e-6)

    targets = [(k, g) for k, g in enumerate(grads.arrays())] + [(None, dx)]
    for k, g in targets:
        base = x if k is None else params.arrays()[k]
        probes = [rng.normal(size=base.shape)]
        for _ in range(coords):
            e = np.zeros(base.size)
            e[rng.integers(base.size)] = 1.0
            probes.append(e.reshape(base.shape))
        for v in probes:
            vals = []
            for sign in (1.0, -1.0):
                p2, x2 = params.copy(), x.copy()
                if k is None:
                    x2 += sign * h * v
                else:
                    p2.arrays()[k][...] += sign * h * v
                vals.append(loss(p2, x2))
            fd = (vals[0] - vals[1]) / (2 * h)
            worst = max(worst, rel(float(np.sum(g * v)), fd))
    return worst
