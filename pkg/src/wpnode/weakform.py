"""Polynomial test functions, weak-form weights and the weak residual loss.

On the reference interval the test functions are ``phi_p(s) = (1 - s^2)^p``.
Data and network evaluations are interpolated piecewise linearly between the
``M`` subdomain nodes, so both weak-form integrals collapse to dot products
with precomputed weight vectors::

    r = sum_i u_i * w_lhs[i] + sum_i f(u_i) * w_rhs[i]

with ``w_lhs[i] = int l_i phi'`` and ``w_rhs[i] = L/2 int l_i phi``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import sparse

from .autodiff import ParamSet, Tensor, constant, mlp_apply
from .errors import ConfigurationError


def phi_derivative_coeffs(p: int, d: int = 0) -> np.ndarray:
    """Ascending monomial coefficients of the ``d``-th derivative of ``(1 - s^2)^p``.

    Uses ``sum_k (-1)^(p-k) C(p,k) (2p-2k)!/(2p-2k-d)! s^(2p-2k-d)``, dropping
    terms whose exponent would be negative.
    """
    if p < 1 or d < 0:
        raise ConfigurationError("need p >= 1 and d >= 0")
    if d > 2 * p:
        return np.zeros(1)
    coeffs = np.zeros(2 * p - d + 1)
    binom = 1.0
    for k in range(p + 1):
        if k > 0:
            binom = binom * (p - k + 1) / k
        e = 2 * (p - k)
        if e - d >= 0:
            falling = 1.0
            for j in range(d):
                falling *= e - j
            coeffs[e - d] += (-1) ** (p - k) * binom * falling
    return coeffs


def horner(coeffs: np.ndarray, s):
    s = np.asarray(s, dtype=np.float64)
    out = np.zeros_like(s)
    for c in coeffs[::-1]:
        out = out * s + c
    return out


def _primitive(coeffs: np.ndarray, shift: int) -> np.ndarray:
    """Coefficients of ``int s^shift * poly(s) ds`` with zero constant."""
    n = coeffs.size
    out = np.zeros(n + shift + 1)
    powers = np.arange(n) + shift + 1
    out[powers] = coeffs / powers
    return out


def antiderivative_eval(kind: str, p: int, d: int, s):
    """``Phi_{p,d}(s) = int phi_p^(d)`` (kind "phi") or ``Psi_{p,d}(s) = int s phi_p^(d)``."""
    shift = {"phi": 0, "Phi": 0, "psi": 1, "Psi": 1}.get(kind)
    if shift is None:
        raise ConfigurationError(f"kind must be 'phi' or 'psi', got {kind!r}")
    return horner(_primitive(phi_derivative_coeffs(p, d), shift), s)


@dataclass(frozen=True)
class TestFunction:
    __test__ = False  # not a pytest class

    order: int
    phi: np.ndarray
    dphi: np.ndarray

    @classmethod
    def of_order(cls, p: int) -> "TestFunction":
        return cls(p, phi_derivative_coeffs(p, 0), phi_derivative_coeffs(p, 1))

    def __call__(self, s):
        return horner(self.phi, s)

    def derivative(self, s):
        return horner(self.dphi, s)


@dataclass(frozen=True)
class SubdomainWeights:
    w_lhs: np.ndarray
    w_rhs: np.ndarray
    p: int
    m: int
    length: float

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "w_lhs", "w_rhs"])
            for i, (a, b) in enumerate(zip(self.w_lhs, self.w_rhs)):
                writer.writerow([i, repr(float(a)), repr(float(b))])


def _hat_moments(p: int, a: np.ndarray, b: np.ndarray, derivative: bool):
    """Per-interval ``int_a^b (b-s)/h q(s) ds`` and ``int_a^b (s-a)/h q(s) ds``.

    ``q`` is ``phi_p`` or its derivative. These are exactly the primitive
    differences ``(b dPhi - dPsi)/h`` and ``(dPsi - a dPhi)/h``, but ``q`` is
    expanded about each interval midpoint ``c`` where
    ``1 - (c + x)^2 = (1 - c^2) - 2 c x - x^2``. With ``|x| <= h/2`` every term
    is bounded by one, so nothing cancels catastrophically for large ``p``.
    """
    c = 0.5 * (a + b)
    r = 0.5 * (b - a)
    base = np.stack([1.0 - c * c, -2.0 * c, -np.ones_like(c)], axis=1)
    taylor = np.ones((c.size, 1))
    for _ in range(p):
        out = np.zeros((c.size, taylor.shape[1] + 2))
        for j in range(3):
            out[:, j : j + taylor.shape[1]] += base[:, j : j + 1] * taylor
        taylor = out
    if derivative:
        taylor = taylor[:, 1:] * np.arange(1, taylor.shape[1])[None, :]
    m = np.arange(taylor.shape[1])
    rp = r[:, None] ** (m[None, :] + 1)
    even = (m % 2 == 0)[None, :]
    sym = np.where(even, rp / (m + 1), 0.0)  # from the constant 1/2 of the hat
    odd = np.where(even, 0.0, rp / (m + 2))  # from the linear x/(2r) part
    left = np.sum(taylor * (sym - odd), axis=1)
    right = np.sum(taylor * (sym + odd), axis=1)
    return left, right


@lru_cache(maxsize=64)
def _weights_cached(nodes: tuple, p: int, length: float, method: str):
    s = np.asarray(nodes)
    a, b = s[:-1], s[1:]
    h = b - a
    phi0 = phi_derivative_coeffs(p, 0)
    phi1 = phi_derivative_coeffs(p, 1)
    if method == "stable":
        l0, r0 = _hat_moments(p, a, b, derivative=False)
        l1, r1 = _hat_moments(p, a, b, derivative=True)
    else:
        big_phi0, big_psi0 = horner(_primitive(phi0, 0), s), horner(_primitive(phi0, 1), s)
        big_phi1, big_psi1 = horner(_primitive(phi1, 0), s), horner(_primitive(phi1, 1), s)
        d_phi0, d_psi0 = np.diff(big_phi0), np.diff(big_psi0)
        d_phi1, d_psi1 = np.diff(big_phi1), np.diff(big_psi1)
        l0, r0 = (b * d_phi0 - d_psi0) / h, (d_psi0 - a * d_phi0) / h
        l1, r1 = (b * d_phi1 - d_psi1) / h, (d_psi1 - a * d_phi1) / h
    # interval j contributes its left-node share to node j and right-node share to j+1
    w_rhs = np.zeros(s.size)
    w_lhs = np.zeros(s.size)
    w_rhs[:-1] += l0
    w_rhs[1:] += r0
    w_lhs[:-1] += l1
    w_lhs[1:] += r1
    return w_lhs, (length / 2.0) * w_rhs


def weak_weights(nodes, p: int = 16, length: float = 2.0, method: str = "stable") -> SubdomainWeights:
    """Closed-form weights for hat-function interpolation against ``phi_p``.

    ``method="antiderivative"`` differences the global primitives
    ``Phi``/``Psi`` directly; ``"stable"`` (default) evaluates the same
    per-interval closed form in local coordinates, which avoids the
    cancellation that the direct route suffers for large ``p`` on fine grids.
    """
    s = np.asarray(nodes, dtype=np.float64)
    if s.ndim != 1 or s.size < 2:
        raise ConfigurationError("need at least two nodes")
    if np.any(np.diff(s) <= 0) or s[0] != -1.0 or s[-1] != 1.0:
        raise ConfigurationError("nodes must increase strictly from -1 to 1")
    if method not in ("stable", "antiderivative"):
        raise ConfigurationError(f"unknown weight method {method!r}")
    w_lhs, w_rhs = _weights_cached(tuple(s.tolist()), int(p), float(length), method)
    return SubdomainWeights(w_lhs.copy(), w_rhs.copy(), int(p), s.size, float(length))


def weak_residual(u_nodes, f_nodes, w: SubdomainWeights):
    """Per-dimension residual ``u^T w_lhs + f^T w_rhs``; shapes (M, D) or (B, M, D)."""
    u = np.asarray(u_nodes, dtype=np.float64)
    f = np.asarray(f_nodes, dtype=np.float64)
    if u.shape != f.shape or u.shape[-2] != w.m:
        raise ConfigurationError(f"node arrays {u.shape}/{f.shape} do not match M={w.m}")
    return np.einsum("...md,m->...d", u, w.w_lhs) + np.einsum("...md,m->...d", f, w.w_rhs)


def _loss_from_f(lhs_term: np.ndarray, f: Tensor, w: SubdomainWeights) -> Tensor:
    rhs_term = (f * w.w_rhs[None, :, None]).sum(axis=1)
    r = constant(lhs_term) + rhs_term
    return r.square().sum(axis=1).mean()


def weak_loss(params: ParamSet, node_states, w: SubdomainWeights) -> Tensor:
    """Mean over subdomains of the squared residual norm.

    ``node_states`` is (B, M, D) of already-scaled states. The result records
    the computation when ``params`` are tracked.
    """
    u = np.asarray(node_states, dtype=np.float64)
    if u.ndim == 2:
        u = u[None]
    if u.shape[1] != w.m:
        raise ConfigurationError(f"subdomains have {u.shape[1]} nodes, weights expect {w.m}")
    f = mlp_apply(params, Tensor(u.reshape(-1, u.shape[-1]))).reshape(*u.shape)
    lhs_term = np.einsum("bmd,m->bd", u, w.w_lhs)
    return _loss_from_f(lhs_term, f, w)


def weak_loss_indexed(params: ParamSet, series: np.ndarray, index: np.ndarray, w: SubdomainWeights) -> Tensor:
    """:func:`weak_loss` for subdomains given as row indices into ``series``.

    Overlapping subdomains share nodes, so the network is evaluated once per
    distinct row and the values are gathered back.
    """
    index = np.asarray(index)
    if index.shape[1] != w.m:
        raise ConfigurationError(f"subdomains have {index.shape[1]} nodes, weights expect {w.m}")
    rows, inverse = np.unique(index, return_inverse=True)
    f_rows = mlp_apply(params, Tensor(series[rows]))
    # f^T w_rhs per subdomain as one sparse (B, rows) product; repeated rows add up
    b, m = index.shape
    gather = sparse.csr_matrix(
        (np.tile(w.w_rhs, b), inverse.ravel(), np.arange(0, b * m + 1, m)), shape=(b, rows.size)
    )
    rhs_term = f_rows.left_multiply(gather)
    lhs_term = np.einsum("bmd,m->bd", series[index], w.w_lhs)
    r = constant(lhs_term) + rhs_term
    return r.square().sum(axis=1).mean()
