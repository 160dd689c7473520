"""Difference-of-concave rate surrogates.

A link rate is written r = f - g with

    f = log2(signal + interference + noise),   g = log2(interference + noise),

both concave in the transmit powers.  Linearizing g at an anchor gives a
concave surrogate that equals the rate at the anchor and has the same
gradient there.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .link import Allocation, dl_effective_gain, ul_effective_gain
from .scenario import Scenario

LN2 = np.log(2.0)


@dataclass
class DCLinearization:
    """Per-link constant g(anchor) and sparse gradient ∇g(anchor) over the flat power vector."""
    direction: str                 # "dl" or "ul"
    anchor: np.ndarray             # powers, (B, U, C) or (S, C')
    g0: np.ndarray                 # same shape as anchor, bits
    grad: sp.csr_matrix            # (links, powers), bits per W
    f: object                      # callable: powers -> f per link
    g: object                      # callable: powers -> g per link

    def surrogate(self, p) -> np.ndarray:
        """f(p) - g(anchor) - ∇g(anchor)·(p - anchor), per link."""
        p = np.asarray(p, float)
        lin = (self.grad @ (p - self.anchor).ravel()).reshape(self.anchor.shape)
        return self.f(p) - self.g0 - lin

    def rate(self, p) -> np.ndarray:
        p = np.asarray(p, float)
        return self.f(p) - self.g(p)


def _check_finite(*arrays):
    for x in arrays:
        if not np.all(np.isfinite(x)):
            raise ValueError("channel gains or noise contain non-finite values")


def dc_linearize_downlink(s: Scenario, a: Allocation, anchor=None) -> DCLinearization:
    """Downlink surrogate for every (BS, user, codebook).

    Interference at (b, u, c) comes from the other BSs of b's InP on codebook
    c; powers of other InPs and the own signal have zero g-gradient.
    """
    t = s.topology
    G = dl_effective_gain(s)
    noise = s.channels.noise_dl
    _check_finite(G, noise)
    rho = np.asarray(a.rho_dl, float)
    p0 = np.asarray(a.p_dl if anchor is None else anchor, float)
    if np.any(p0 < 0):
        raise ValueError("anchor powers must be non-negative")
    B, U, C = rho.shape
    inp = t.bs_inp
    same = (inp[:, None] == inp[None, :]) & ~np.eye(B, dtype=bool)

    def interference(p):
        load = (rho * p).sum(axis=1)                          # (B, C) total radiated per codebook
        return np.einsum("bk,kuc,kc->buc", same.astype(float), G, load)

    def f(p):
        return np.log2(rho * G * p + interference(p) + noise)

    def g(p):
        return np.log2(interference(p) + noise)

    I0 = interference(p0)
    rows, cols, vals = [], [], []
    flat = np.arange(B * U * C).reshape(B, U, C)
    for b in range(B):
        for u in range(U):
            for c in range(C):
                den = (I0[b, u, c] + noise[b, u, c]) * LN2
                for b2 in np.where(same[b])[0]:
                    for u2 in range(U):
                        if rho[b2, u2, c]:
                            rows.append(flat[b, u, c])
                            cols.append(flat[b2, u2, c])
                            vals.append(rho[b2, u2, c] * G[b2, u, c] / den)
    grad = sp.csr_matrix((vals, (rows, cols)), shape=(B * U * C, B * U * C))
    return DCLinearization("dl", p0, g(p0), grad, f, g)


def dc_linearize_uplink(s: Scenario, a: Allocation, anchor=None) -> DCLinearization:
    """Uplink surrogate for every (sensor, codebook) at the sensor's BS.

    Interferers are sensors of the other BSs of the same InP on the same
    codebook, with their gain measured at the receiving BS.
    """
    t = s.topology
    G = ul_effective_gain(s)                                  # (B, S, C')
    noise = s.channels.noise_ul
    _check_finite(G, noise)
    rho = np.asarray(a.rho_ul, float)
    p0 = np.asarray(a.p_ul if anchor is None else anchor, float)
    if np.any(p0 < 0):
        raise ValueError("anchor powers must be non-negative")
    S, C = rho.shape
    sb, sinp = t.sensor_bs, t.sensor_inp
    # interferer mask: (receiving sensor s, interfering sensor s2)
    mask = (sinp[:, None] == sinp[None, :]) & (sb[:, None] != sb[None, :])
    Grx = G[sb]                                               # (S, S2, C'): gain of s2 at s's BS

    def interference(p):
        return np.einsum("st,stc,tc->sc", mask.astype(float), Grx, rho * p)

    own = Grx[np.arange(S), np.arange(S)]                     # (S, C')

    def f(p):
        return np.log2(rho * own * p + interference(p) + noise)

    def g(p):
        return np.log2(interference(p) + noise)

    I0 = interference(p0)
    rows, cols, vals = [], [], []
    flat = np.arange(S * C).reshape(S, C)
    for sn in range(S):
        for c in range(C):
            den = (I0[sn, c] + noise[sn, c]) * LN2
            for s2 in np.where(mask[sn])[0]:
                if rho[s2, c]:
                    rows.append(flat[sn, c])
                    cols.append(flat[s2, c])
                    vals.append(rho[s2, c] * Grx[sn, s2, c] / den)
    grad = sp.csr_matrix((vals, (rows, cols)), shape=(S * C, S * C))
    return DCLinearization("ul", p0, g(p0), grad, f, g)
