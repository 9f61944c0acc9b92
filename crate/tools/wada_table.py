"""Regenerates the WADA-SNR lookup table (Gamma(0.4) speech in Gaussian noise) by quadrature.

Usage: python3 tools/wada_table.py > table.txt  (needs numpy and scipy)
"""
import numpy as np
from scipy import special, stats
alpha = 0.4
ps = alpha * (alpha + 1.0)
EG = np.euler_gamma

def H(u):
    """E ln|u + Z|, Z ~ N(0,1)."""
    u = np.abs(np.asarray(u, dtype=float))
    out = np.empty_like(u)
    big = u > 40
    ub = u[big]
    out[big] = np.log(ub) - 0.5 / ub**2 - 0.75 / ub**4 - 2.5 / ub**6 - 105/8 / ub**8
    us = u[~big]
    mu = us**2 / 2
    j = np.arange(0, 1500)
    w = stats.poisson.pmf(j[None, :], mu[:, None])
    out[~big] = 0.5 * (np.log(2.0) + (w * special.digamma(0.5 + j)[None, :]).sum(1))
    return out

def A(u):
    """E|u + Z|."""
    u = np.abs(u)
    return np.sqrt(2/np.pi) * np.exp(-u*u/2) + u * special.erf(u/np.sqrt(2))

xg, wg = np.polynomial.legendre.leggauss(48)
def gamma_expect(f):
    # E f(s), s ~ Gamma(alpha,1); substitute t = s^alpha -> density constant in t
    tmax = 80.0 ** alpha
    edges = np.concatenate([[0.0], np.geomspace(1e-9, tmax, 400)])
    a, b = edges[:-1], edges[1:]
    t = (a[:, None] + b[:, None]) / 2 + (b - a)[:, None] / 2 * xg[None, :]
    w = (b - a)[:, None] / 2 * wg[None, :]
    s = t ** (1 / alpha)
    vals = f(s.ravel()).reshape(s.shape) * np.exp(-s)
    return (vals * w).sum() / (alpha * special.gamma(alpha))

def g_of(snr_db):
    sigma = np.sqrt(ps / 10 ** (snr_db / 10))
    ea = sigma * gamma_expect(lambda s: A(s / sigma))
    el = np.log(sigma) + gamma_expect(lambda s: H(s / sigma))
    return np.log(ea) - el

if __name__ == "__main__":
    import sys
    print("H(0)", H(np.array([0.0]))[0], -(EG + np.log(2))/2, file=sys.stderr)
    print("norm check", gamma_expect(lambda s: np.ones_like(s)), gamma_expect(lambda s: s), gamma_expect(lambda s: s*s), file=sys.stderr)
    print("gauss limit", 0.5*np.log(2/np.pi) + (EG + np.log(2))/2, file=sys.stderr)
    print("gamma limit", np.log(alpha) - special.digamma(alpha), file=sys.stderr)
    for d in range(-20, 101):
        print(d, repr(float(g_of(d))), flush=True)
