"""Graph-viscosity stabilization: perturbed operators, residuals and auditing.

The viscosities are evaluated on precomputed pair tables (unordered adjacent
node pairs for nu, node x boundary-node pairs for nu_boundary), so a full
rebuild per nonlinear iterate is a handful of vectorized passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import (ProblemSpec, assemble_B, assemble_G, assemble_K,
                       assemble_M, dirichlet_boundary_nodes,
                       interpolate_boundary)
from .detector import StabilizationParams, alpha_all, smax
from .mesh import classify_facets


@dataclass
class GraphViscosity:
    """Edge viscosities: symmetric nu per unordered pair, boundary nu, and
    the compensating diagonal nu_aa = sum(nu) + sum(nu_boundary) per row."""

    pair_a: np.ndarray
    pair_b: np.ndarray
    nu: np.ndarray
    bpair_a: np.ndarray      # row node
    bpair_col: np.ndarray    # boundary column index
    nu_boundary: np.ndarray
    diag: np.ndarray

    @property
    def is_zero(self):
        return (not self.nu.any()) and (not self.nu_boundary.any())


class PairTables:
    """Adjacency pair tables with the frozen K/B entries used by nu."""

    def __init__(self, nodes, K, B):
        from .detector import _enumerate_pairs
        pa, pb = _enumerate_pairs(nodes)  # ordered pairs, a != b
        keep = pb > pa
        self.pair_a = pa[keep]
        self.pair_b = pb[keep]
        self.K_ab = np.asarray(K[self.pair_a, self.pair_b]).ravel()
        self.K_ba = np.asarray(K[self.pair_b, self.pair_a]).ravel()

        # (row, boundary column) pairs: a in N(bn) for each boundary node bn,
        # including bn itself
        on_b = nodes.boundary_index[pa] >= 0
        self.bpair_a = np.concatenate([pb[on_b], nodes.boundary_nodes])
        self.bpair_col = np.concatenate(
            [nodes.boundary_index[pa[on_b]],
             nodes.boundary_index[nodes.boundary_nodes]])
        self.B_ab = np.asarray(B[self.bpair_a, self.bpair_col]).ravel()


def build_viscosity(tables: PairTables, alpha, params, scales, n_nodes):
    """nu_ab = max{a_a K_ab, 0, a_b K_ba} and nu_b = max{-a_a B_ab, 0};
    smoothed mode uses the nested smoothed maximum, floored by the raw value
    so the DMP sign conditions hold exactly."""
    xa = alpha[tables.pair_a] * tables.K_ab
    xb = alpha[tables.pair_b] * tables.K_ba
    nu = np.maximum(np.maximum(xa, 0.0), xb)
    xd = -alpha[tables.bpair_a] * tables.B_ab
    nu_b = np.maximum(xd, 0.0)
    if params.mode == "smoothed":
        s = scales.sigma_h
        nu = np.maximum(nu, smax(0.0, smax(xa, xb, s), s))
        nu_b = np.maximum(nu_b, smax(xd, 0.0, s))
    diag = (np.bincount(tables.pair_a, weights=nu, minlength=n_nodes)
            + np.bincount(tables.pair_b, weights=nu, minlength=n_nodes)
            + np.bincount(tables.bpair_a, weights=nu_b, minlength=n_nodes))
    return GraphViscosity(pair_a=tables.pair_a, pair_b=tables.pair_b, nu=nu,
                          bpair_a=tables.bpair_a, bpair_col=tables.bpair_col,
                          nu_boundary=nu_b, diag=diag)


def build_stabilized(K, B, visc: GraphViscosity):
    """(K_tilde, B_tilde): K + graph-Laplacian viscosity, B + boundary nu."""
    n = K.shape[0]
    rows = np.concatenate([visc.pair_a, visc.pair_b, np.arange(n)])
    cols = np.concatenate([visc.pair_b, visc.pair_a, np.arange(n)])
    vals = np.concatenate([-visc.nu, -visc.nu, visc.diag])
    D = sp.coo_matrix((vals, (rows, cols)), shape=K.shape).tocsr()
    nu_b = sp.coo_matrix((visc.nu_boundary, (visc.bpair_a, visc.bpair_col)),
                         shape=B.shape).tocsr()
    return (K + D).tocsr(), (B + nu_b).tocsr()


def lumped_mass_apply(M, m, alpha, Q, w):
    """Selectively lumped mass action: (1 - a^Q)(Mw)_a + a^Q w_a m_a."""
    if np.isinf(Q):
        blend = (alpha >= 1.0).astype(float)
    else:
        blend = alpha**Q
    return (1.0 - blend) * (M @ w) + blend * (w * m)


def cfl_bound(m, Ktilde_diag, theta):
    """Largest positivity-preserving time step, min_a m_a/((1-theta) K_aa)."""
    if theta >= 1.0:
        return np.inf
    pos = Ktilde_diag > 0.0
    if not pos.any():
        return np.inf
    return float(np.min(m[pos] / ((1.0 - theta) * Ktilde_diag[pos])))


def audit_dmp(Ktilde, Btilde, alpha, rel_tol=1e-12):
    """Check the DMP conditions; returns a list of violation records.

    At every row with alpha == 1: off-diagonal K_tilde <= 0 and
    B_tilde >= 0; for all rows: sum_b K_tilde_ab - sum_b B_tilde_ab = 0
    relative to the matrix norm.
    """
    report = []
    scale = max(np.abs(Ktilde).max(), 1e-300)
    tol = rel_tol * scale

    rowsum = np.asarray(Ktilde.sum(axis=1)).ravel() - \
        np.asarray(Btilde.sum(axis=1)).ravel()
    for a in np.flatnonzero(np.abs(rowsum) > tol):
        report.append({"row": int(a), "condition": "row_sum",
                       "magnitude": float(abs(rowsum[a]))})

    flagged = np.flatnonzero(alpha >= 1.0)
    if len(flagged):
        Kc = Ktilde.tocsr()
        Bc = Btilde.tocsr()
        for a in flagged:
            row = Kc.getrow(a)
            for j, v in zip(row.indices, row.data):
                if j != a and v > tol:
                    report.append({"row": int(a), "condition": "K_offdiag",
                                   "magnitude": float(v)})
            row = Bc.getrow(a)
            for j, v in zip(row.indices, row.data):
                if v < -tol:
                    report.append({"row": int(a), "condition": "B_sign",
                                   "magnitude": float(-v)})
    return report


class StabilizedProblem:
    """Assembled problem plus everything needed to evaluate the nonlinear
    stabilized residual and rebuild the perturbed operators per iterate."""

    def __init__(self, mesh, nodes, spec: ProblemSpec,
                 params: StabilizationParams):
        self.mesh = mesh
        self.nodes = nodes
        self.spec = spec
        self.params = params
        self.classification = classify_facets(mesh, spec.beta)
        self.K = assemble_K(mesh, nodes, spec, self.classification)
        self.B = assemble_B(mesh, nodes, spec, self.classification)
        self.M = assemble_M(mesh, nodes)
        self.G = assemble_G(mesh, nodes, spec.g)
        self.beta_norm = spec.beta_max(mesh)
        self.scales = params.derived(mesh.h, self.beta_norm)
        self.tables = PairTables(nodes, self.K, self.B)
        self.dirichlet_mask = dirichlet_boundary_nodes(
            mesh, nodes, spec, self.classification)
        self.trace = None
        if spec.ubar is not None:
            self.trace = interpolate_boundary(nodes, spec.ubar,
                                              self.dirichlet_mask)

    # -- boundary data --------------------------------------------------------

    def set_boundary(self, ubar):
        """Re-interpolate Dirichlet data (for time-dependent conditions)."""
        self.trace = interpolate_boundary(self.nodes, ubar,
                                          self.dirichlet_mask)

    @property
    def ubar_vec(self):
        if self.trace is None:
            return np.zeros(self.nodes.n_boundary)
        return self.trace.values

    # -- nonlinear coefficient evaluation -------------------------------------

    def alpha(self, u):
        return alpha_all(self.nodes, u, self.trace, self.params, self.scales)

    def viscosity(self, u):
        if not self.params.enabled:
            zero = np.zeros
            return GraphViscosity(
                pair_a=self.tables.pair_a, pair_b=self.tables.pair_b,
                nu=zero(len(self.tables.pair_a)),
                bpair_a=self.tables.bpair_a, bpair_col=self.tables.bpair_col,
                nu_boundary=zero(len(self.tables.bpair_a)),
                diag=zero(self.nodes.n_nodes))
        return build_viscosity(self.tables, self.alpha(u), self.params,
                               self.scales, self.nodes.n_nodes)

    def operators(self, u):
        """(K_tilde, B_tilde) at the given state."""
        return build_stabilized(self.K, self.B, self.viscosity(u))

    def rhs(self, Btilde):
        return self.G + Btilde @ self.ubar_vec

    # -- residuals ------------------------------------------------------------

    def _apply_stabilized(self, visc, u):
        """K_tilde u - B_tilde ubar without building sparse matrices."""
        out = self.K @ u - self.B @ self.ubar_vec
        du = visc.nu * (u[visc.pair_a] - u[visc.pair_b])
        n = self.nodes.n_nodes
        out += np.bincount(visc.pair_a, weights=du, minlength=n)
        out -= np.bincount(visc.pair_b, weights=du, minlength=n)
        ub = self.ubar_vec
        bd = visc.nu_boundary * (u[visc.bpair_a] - ub[visc.bpair_col])
        out += np.bincount(visc.bpair_a, weights=bd, minlength=n)
        return out

    def residual_steady(self, u):
        """T(u) = K_tilde(u) u - G - B_tilde(u) ubar."""
        return self._apply_stabilized(self.viscosity(u), u) - self.G

    def residual_transient(self, u_new, u_old, dt, theta):
        """Theta-method residual; nonlinear coefficients at the stage state."""
        u_stage = theta * u_new + (1.0 - theta) * u_old
        visc = self.viscosity(u_stage)
        alpha = self.alpha(u_stage) if self.params.enabled \
            else np.zeros(self.nodes.n_nodes)
        mass = lumped_mass_apply(self.M, self.nodes.m, alpha, self.params.Q,
                                 u_new - u_old)
        return mass / dt + self._apply_stabilized(visc, u_stage) - self.G

    def cfl_bound(self, u_stage, theta):
        Ktilde, _ = self.operators(u_stage)
        return cfl_bound(self.nodes.m, Ktilde.diagonal(), theta)

    def audit(self, u, rel_tol=1e-12):
        Ktilde, Btilde = self.operators(u)
        return audit_dmp(Ktilde, Btilde, self.alpha(u), rel_tol)
