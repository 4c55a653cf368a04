"""Element integrals, projections, and local velocity postprocessing.

Block matrices are computed per geometry class from cached tabulations.
Index conventions: a, b run over gradient-row functions, m, n over
velocity functions, i, j over pressure / facet-polynomial indices, r, c
over spatial components, q over quadrature points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import DenseFactor
from .refelem import SegmentBasis, quadrature


def as_gamma_matrix(gamma):
    """Normalize gamma to a symmetric positive semidefinite 2x2 array."""
    g = np.asarray(gamma, dtype=float)
    if g.ndim == 0:
        g = float(g) * np.eye(2)
    if g.shape != (2, 2):
        raise ValueError("gamma must be a scalar or a 2x2 array")
    if not np.allclose(g, g.T, rtol=0.0, atol=1e-12):
        raise ValueError("gamma must be symmetric")
    evals = np.linalg.eigvalsh(g)
    if evals[0] < -1e-12:
        raise ValueError("gamma must be positive semidefinite")
    return g


@dataclass
class FacetBlocks:
    """Per-local-facet couplings with the cell interior."""

    sign: int
    h: float
    normal: np.ndarray
    tangent: np.ndarray
    that: np.ndarray     # (k+1, n_g)  facet poly vs gradient-row normal trace
    tlam: np.ndarray     # (n_v, k+1)  velocity normal trace vs facet poly
    tvt: np.ndarray      # (n_v, k+1)  velocity tangential trace vs facet poly
    tgt: np.ndarray      # (n_g, n_v)  (G.n)(V.t) facet coupling


@dataclass
class ElementBlocks:
    """Volume and facet block matrices for one geometry class."""

    nu: float
    gamma: np.ndarray
    mg: np.ndarray       # (n_g, n_g)      gradient-row mass
    divg: np.ndarray     # (2, n_v, n_g)   velocity component vs row divergence
    grad: np.ndarray     # (2, n_g, n_v)   row vs velocity jacobian row
    tg: np.ndarray       # (2, n_g, n_v)   boundary (G.n)(V)_r
    mgam: np.ndarray     # (n_v, n_v)      gamma-weighted velocity mass
    bdiv: np.ndarray     # (n_v, n_q)      pressure vs velocity divergence
    tq: np.ndarray       # (n_v, n_q)      boundary pressure vs normal trace
    mq: np.ndarray       # (n_q, n_q)
    mv: np.ndarray       # (n_v, n_v)
    qint: np.ndarray     # (n_q,)          pressure basis integrals
    vint: np.ndarray     # (n_v, 2)        velocity component integrals
    kpp: np.ndarray      # (n_post, n_post) postprocessing stiffness
    pint: np.ndarray     # (n_post,)
    gp_cross: np.ndarray  # (n_g, n_post)  row basis vs postprocessing gradient
    facets: list

    # public aliases matching the solver interface names
    @property
    def m_ll(self):
        return self.mg

    @property
    def d_grad(self):
        return self.grad

    @property
    def t_vol(self):
        return self.tg

    @property
    def t_hat(self):
        return [f.that for f in self.facets]

    @property
    def b_div(self):
        return self.bdiv

    @property
    def m_gamma(self):
        return self.mgam

    @property
    def c_div(self):
        return self.divg


def element_blocks(tab, nu, gamma):
    """All volume and facet blocks for one cell tabulation."""
    gamma = as_gamma_matrix(gamma)
    w = tab.wdet
    mg = np.einsum("acq,bcq,q->ab", tab.g, tab.g, w)
    divg = np.einsum("mrq,bq,q->rmb", tab.v, tab.g_div, w)
    grad = np.einsum("acq,mrcq,q->ram", tab.g, tab.v_grad, w)
    mgam = np.einsum("mrq,rs,nsq,q->mn", tab.v, gamma, tab.v, w)
    bdiv = np.einsum("iq,mq,q->mi", tab.q_vals, tab.v_div, w)
    mq = np.einsum("iq,jq,q->ij", tab.q_vals, tab.q_vals, w)
    mv = np.einsum("mrq,nrq,q->mn", tab.v, tab.v, w)
    qint = np.einsum("iq,q->i", tab.q_vals, w)
    vint = np.einsum("mrq,q->mr", tab.v, w)
    kpp = np.einsum("icq,jcq,q->ij", tab.post_grad, tab.post_grad, w)
    pint = np.einsum("iq,q->i", tab.post, w)
    gp_cross = np.einsum("acq,jcq,q->aj", tab.g, tab.post_grad, w)

    n_g = tab.g.shape[0]
    n_v = tab.v.shape[0]
    n_q = tab.q_vals.shape[0]
    tg = np.zeros((2, n_g, n_v))
    tq = np.zeros((n_v, n_q))
    facets = []
    for ft in tab.facets:
        gn = np.einsum("acq,c->aq", ft.g, ft.outward)
        vn = np.einsum("mcq,c->mq", ft.v, ft.outward)
        vt = np.einsum("mcq,c->mq", ft.v, ft.tangent)
        tg += np.einsum("aq,mrq,q->ram", gn, ft.v, ft.w)
        tq += np.einsum("iq,mq,q->mi", ft.q, vn, ft.w)
        facets.append(FacetBlocks(
            sign=ft.sign, h=ft.h, normal=ft.normal, tangent=ft.tangent,
            that=np.einsum("jq,aq,q->ja", ft.phi, gn, ft.w),
            tlam=np.einsum("jq,mq,q->mj", ft.phi, vn, ft.w),
            tvt=np.einsum("jq,mq,q->mj", ft.phi, vt, ft.w),
            tgt=np.einsum("aq,mq,q->am", gn, vt, ft.w)))
    return ElementBlocks(
        nu=float(nu), gamma=gamma, mg=mg, divg=divg, grad=grad, tg=tg,
        mgam=mgam, bdiv=bdiv, tq=tq, mq=mq, mv=mv, qint=qint, vint=vint,
        kpp=kpp, pint=pint, gp_cross=gp_cross, facets=facets)


# -- projections ----------------------------------------------------------


def project_grad(spaces, c, grad_func):
    """L2 projection of a 2x2 tensor field into the row space; (2, n_g)."""
    tab = spaces.tab(c, fine=True)
    x = spaces.vol_points(c, tab)
    vals = grad_func(x)
    mg = np.einsum("acq,bcq,q->ab", tab.g, tab.g, tab.wdet)
    rhs = np.einsum("qrc,acq,q->ra", vals, tab.g, tab.wdet)
    return np.linalg.solve(mg, rhs.T).T


def project_pressure(spaces, c, func):
    """L2 projection of a scalar field into the pressure space; (n_q,)."""
    tab = spaces.tab(c, fine=True)
    x = spaces.vol_points(c, tab)
    vals = func(x)
    mq = np.einsum("iq,jq,q->ij", tab.q_vals, tab.q_vals, tab.wdet)
    rhs = np.einsum("q,iq,q->i", vals, tab.q_vals, tab.wdet)
    return np.linalg.solve(mq, rhs)


def project_velocity_div(spaces, c, func):
    """Divergence-conforming interpolant of a vector field; modal (n_v,).

    Matches facet normal moments against the facet polynomial basis and
    interior component moments against the row-divergence span, so the
    interpolant commutes with the divergence projection.
    """
    fam = spaces.family
    tab = spaces.tab(c, fine=True)
    kk = fam.n_facet
    alpha = np.zeros(fam.n_v)
    for lf, ft in enumerate(tab.facets):
        x = spaces.facet_points(c, tab, lf)
        un = func(x) @ ft.normal
        alpha[lf * kk:(lf + 1) * kk] = np.einsum("jq,q,q->j", ft.phi, un, ft.w)
    if fam.n_int_scalar:
        x = spaces.vol_points(c, tab)
        mom = np.einsum("qr,iq,q->ri", func(x), tab.int_div, tab.wdet)
        alpha[fam.n_cell_facets * kk:] = mom.ravel()
    return spaces.nodal_transform(c) @ alpha


def project_facet_tangent(mesh, facet, k, func, degree):
    """Facet moments of the tangential trace; coefficients of phi_j t_F."""
    seg = SegmentBasis(k)
    rule = quadrature("segment", degree)
    s = rule.points[:, 0]
    v0, v1 = mesh.facet_vertices[facet]
    p0, p1 = mesh.vertices[v0], mesh.vertices[v1]
    x = p0 + s[:, None] * (p1 - p0)
    ut = func(x) @ mesh.facet_tangents[facet]
    phi = seg.tabulate(s)
    return np.einsum("jq,q,q->j", phi, ut, rule.weights)


# -- velocity postprocessing ----------------------------------------------


def postprocess_factor(blocks):
    """Factor of the gradient-matching system with a mean constraint."""
    n = blocks.kpp.shape[0]
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = blocks.kpp
    aug[:n, n] = blocks.pint
    aug[n, :n] = blocks.pint
    return DenseFactor(aug)


def postprocess_velocity(blocks, factor, l_coef, u_coef):
    """Componentwise higher-degree velocity from the gradient field.

    Each component solves a Neumann-type local problem: its gradient
    matches the corresponding gradient-field row in the L2 sense and its
    cell mean matches the velocity mean.  Returns (2, n_post).
    """
    n = blocks.kpp.shape[0]
    out = np.zeros((2, n))
    means = u_coef @ blocks.vint
    for r in range(2):
        rhs = np.zeros(n + 1)
        rhs[:n] = l_coef[r] @ blocks.gp_cross
        rhs[n] = means[r]
        out[r] = factor.solve(rhs)[:n]
    return out
