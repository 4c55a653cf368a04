"""Hybridized solver and its monolithic cross-check.

The mixed gradient-velocity-pressure system is condensed cell by cell
onto facet unknowns: tangential and normal velocity traces on interior
facets plus one pressure average per cell and a single mean multiplier.
Cell solves are cached per geometry class; only data moments are
evaluated per cell.

`solve_direct` assembles the uncondensed system over broken gradient,
divergence-conforming velocity, broken pressure, and tangential trace
unknowns.  It shares the quadrature data but none of the condensation
path, so agreement between the two is a meaningful consistency check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forms import element_blocks, postprocess_factor, postprocess_velocity
from .linalg import DenseFactor, SparseBuilder, sparse_solve


class LocalSolver:
    """Condensed cell solve for one geometry class.

    Unknown layout: gradient rows (row-major), velocity, mean-free
    pressure, facet multiplier.  Lift columns: tangential facet data per
    local facet, then normal facet data.
    """

    def __init__(self, blocks, family):
        nu = blocks.nu
        n_g, n_v, n_q = family.n_g, family.n_v, family.n_q
        kk = family.n_facet
        nfc = family.n_cell_facets
        n_l = 2 * n_g
        n_p = n_q - 1
        n_lam = nfc * kk
        n = n_l + n_v + n_p + n_lam
        o_u = n_l
        o_p = o_u + n_v
        o_lam = o_p + n_p
        self.sizes = (n_l, n_v, n_p, n_lam)
        self.n = n
        self.offsets = (0, o_u, o_p, o_lam)
        self.blocks = blocks

        mat = np.zeros((n, n))
        gt = blocks.grad - blocks.tg
        for r in range(2):
            rows = slice(r * n_g, (r + 1) * n_g)
            mat[rows, rows] = nu * blocks.mg
            mat[rows, o_u:o_p] = nu * blocks.divg[r].T
            mat[o_u:o_p, rows] = nu * gt[r].T
        mat[o_u:o_p, o_u:o_p] = blocks.mgam
        mat[o_u:o_p, o_p:o_lam] = -blocks.bdiv[:, 1:] + blocks.tq[:, 1:]
        mat[o_p:o_lam, o_u:o_p] = blocks.bdiv[:, 1:].T
        for lf, fb in enumerate(blocks.facets):
            cols = slice(o_lam + lf * kk, o_lam + (lf + 1) * kk)
            mat[o_u:o_p, cols] = -fb.tlam
            mat[cols, o_u:o_p] = fb.tlam.T
        self.factor = DenseFactor(mat)

        ncol = 2 * nfc * kk
        lift_rhs = np.zeros((n, ncol))
        for lf, fb in enumerate(blocks.facets):
            tcols = slice(lf * kk, (lf + 1) * kk)
            ncols = slice(nfc * kk + lf * kk, nfc * kk + (lf + 1) * kk)
            for r in range(2):
                rows = slice(r * n_g, (r + 1) * n_g)
                lift_rhs[rows, tcols] += nu * fb.tangent[r] * fb.that.T
                lift_rhs[rows, ncols] += nu * fb.normal[r] * fb.that.T
            drows = slice(o_lam + lf * kk, o_lam + (lf + 1) * kk)
            lift_rhs[drows, ncols] = fb.sign * fb.h * np.eye(kk)
        self.lift_rhs = lift_rhs
        self.lift = self.factor.solve(lift_rhs)

        # energy-weighted lift: rows of Z @ lift with Z the block Gram
        # diag(nu M_ll, nu M_ll, M_gamma, 0, 0)
        zlift = np.zeros_like(self.lift)
        for r in range(2):
            rows = slice(r * n_g, (r + 1) * n_g)
            zlift[rows] = nu * blocks.mg @ self.lift[rows]
        zlift[o_u:o_p] = blocks.mgam @ self.lift[o_u:o_p]
        self.zlift = zlift
        self.energy = self.lift.T @ zlift
        self.post_factor = postprocess_factor(blocks)

    def source_vector(self, fmom, gmom):
        s = np.zeros(self.n)
        o_u, o_p, o_lam = self.offsets[1:]
        s[o_u:o_p] = fmom
        s[o_p:o_lam] = gmom[1:]
        return s

    def solve_source(self, fmom, gmom):
        return self.factor.solve(self.source_vector(fmom, gmom))


@dataclass
class SolutionFields:
    """Recovered per-cell fields and global facet unknowns."""

    k: int
    cell_kind: str
    l: np.ndarray        # (nc, 2, n_g)
    u: np.ndarray        # (nc, n_v) modal velocity coefficients
    p: np.ndarray        # (nc, n_q)
    lam: np.ndarray      # (nc, nfc*(k+1)) facet multiplier (zeros for direct)
    uhat_t: np.ndarray   # interior facet tangential trace coefficients
    uhat_n: np.ndarray   # interior facet normal trace coefficients
    pbar: np.ndarray     # (nc,) cell pressure averages
    mean_mult: float
    ustar: np.ndarray    # (nc, 2, n_post)
    n_global: int
    n_local: int


def build_local_solvers(spaces, nu, gamma):
    return [LocalSolver(element_blocks(spaces.tab(rep), nu, gamma),
                        spaces.family)
            for rep in spaces.class_rep]


def _facet_columns(spaces):
    """Per cell: global columns of its [tangential, normal] facet dofs.

    Boundary facet dofs carry -1; tangential dofs come first globally,
    normal dofs are offset by the tangential block size.
    """
    mesh = spaces.mesh
    fam = spaces.family
    kk = fam.n_facet
    nfc = fam.n_cell_facets
    mt = spaces.dofmap("Mt0")
    ntt = mt.total
    nc = mesh.num_cells
    cols = np.full((nc, 2 * nfc * kk), -1, dtype=int)
    for c in range(nc):
        for lf in range(nfc):
            fd = mt.facet_dofs[mesh.cell_facets[c, lf]]
            cols[c, lf * kk:(lf + 1) * kk] = fd
            cols[c, nfc * kk + lf * kk:nfc * kk + (lf + 1) * kk] = \
                np.where(fd >= 0, fd + ntt, -1)
    return cols, ntt


def _data_moments(spaces, c, f_func, g_func):
    tab = spaces.tab(c, fine=True)
    x = spaces.vol_points(c, tab)
    fv = f_func(x)
    gv = g_func(x)
    fmom = np.einsum("mrq,qr,q->m", tab.v, fv, tab.wdet)
    gmom = np.einsum("iq,q,q->i", tab.q_vals, gv, tab.wdet)
    return fmom, gmom


def _constant_pressure_value(spaces):
    tab = spaces.tab(0)
    vals = tab.q_vals[0]
    if np.ptp(vals) > 1e-12 * abs(vals[0]):
        raise RuntimeError("first pressure basis function is not constant")
    return float(vals[0])


def solve_hybrid(spaces, nu, gamma, f_func, g_func):
    """Solve via static condensation onto facet traces.

    Global unknowns: tangential trace block, normal trace block, cell
    pressure averages, one multiplier pinning the global pressure mean.
    """
    mesh = spaces.mesh
    fam = spaces.family
    nc = mesh.num_cells
    kk = fam.n_facet
    nfc = fam.n_cell_facets
    solvers = build_local_solvers(spaces, nu, gamma)
    cols, ntt = _facet_columns(spaces)
    q0v = _constant_pressure_value(spaces)

    n_sys = 2 * ntt + nc + 1
    o_pbar = 2 * ntt
    o_mult = n_sys - 1
    builder = SparseBuilder(n_sys, n_sys)
    rhs = np.zeros(n_sys)
    x_src = np.zeros((nc, solvers[0].n))

    for c in range(nc):
        ls = solvers[spaces.cell_class[c]]
        fmom, gmom = _data_moments(spaces, c, f_func, g_func)
        xs = ls.solve_source(fmom, gmom)
        x_src[c] = xs
        o_u, o_p = ls.offsets[1], ls.offsets[2]
        f_loc = fmom @ ls.lift[o_u:o_p] - xs @ ls.zlift
        cc = cols[c]
        keep = cc >= 0
        idx = cc[keep]
        builder.add_block(idx, idx, ls.energy[np.ix_(keep, keep)])
        np.add.at(rhs, idx, f_loc[keep])

        area = spaces.amap(c).det * fam.ref_cell.measure
        builder.add(np.array([o_pbar + c]), np.array([o_mult]),
                    np.array([area]))
        builder.add(np.array([o_mult]), np.array([o_pbar + c]),
                    np.array([area]))
        rhs[o_pbar + c] = -gmom[0] / q0v
        for lf in range(nfc):
            f = mesh.cell_facets[c, lf]
            col0 = cc[nfc * kk + lf * kk]
            if col0 < 0:
                continue
            sgn = float(mesh.cell_facet_signs[c, lf])
            val = -sgn * float(mesh.facet_lengths[f])
            builder.add(np.array([o_pbar + c]), np.array([col0]),
                        np.array([val]))
            builder.add(np.array([col0]), np.array([o_pbar + c]),
                        np.array([val]))

    sol = sparse_solve(builder, rhs)
    uhat_t = sol[:ntt]
    uhat_n = sol[ntt:2 * ntt]
    pbar = sol[o_pbar:o_mult]
    mean_mult = float(sol[o_mult])

    l = np.zeros((nc, 2, fam.n_g))
    u = np.zeros((nc, fam.n_v))
    p = np.zeros((nc, fam.n_q))
    lam = np.zeros((nc, nfc * kk))
    ustar = np.zeros((nc, 2, fam.n_post))
    eta_pad = np.concatenate([sol[:2 * ntt], [0.0]])
    for c in range(nc):
        ls = solvers[spaces.cell_class[c]]
        eta = eta_pad[cols[c]]
        xi = ls.lift @ eta + x_src[c]
        o_u, o_p, o_lam = ls.offsets[1:]
        l[c] = xi[:o_u].reshape(2, fam.n_g)
        u[c] = xi[o_u:o_p]
        p[c, 0] = pbar[c] / q0v
        p[c, 1:] = xi[o_p:o_lam]
        lam[c] = xi[o_lam:]
        ustar[c] = postprocess_velocity(ls.blocks, ls.post_factor, l[c], u[c])

    n_local = nc * solvers[0].n
    return SolutionFields(
        k=spaces.k, cell_kind=mesh.cell_kind, l=l, u=u, p=p, lam=lam,
        uhat_t=uhat_t, uhat_n=uhat_n, pbar=pbar, mean_mult=mean_mult,
        ustar=ustar, n_global=2 * ntt + nc, n_local=n_local)


def solve_direct(spaces, nu, gamma, f_func, g_func):
    """Monolithic solve of the uncondensed system; cross-check oracle.

    Unknowns: broken gradient rows, divergence-conforming velocity in
    nodal form, broken pressure plus a mean multiplier, and tangential
    facet traces on interior facets.
    """
    mesh = spaces.mesh
    fam = spaces.family
    nc = mesh.num_cells
    kk = fam.n_facet
    nfc = fam.n_cell_facets
    n_g, n_v, n_q = fam.n_g, fam.n_v, fam.n_q

    vd = spaces.dofmap("V_div0")
    mt = spaces.dofmap("Mt0")
    n_l = nc * 2 * n_g
    o_u_blk = n_l
    o_p_blk = o_u_blk + vd.total
    o_s = o_p_blk + nc * n_q
    o_t = o_s + 1
    n_sys = o_t + mt.total
    builder = SparseBuilder(n_sys, n_sys)
    rhs = np.zeros(n_sys)
    q0v = _constant_pressure_value(spaces)

    blocks_by_class = [element_blocks(spaces.tab(rep), nu, gamma)
                       for rep in spaces.class_rep]

    for c in range(nc):
        blk = blocks_by_class[spaces.cell_class[c]]
        trans = spaces.nodal_transform(c)
        fmom, gmom = _data_moments(spaces, c, f_func, g_func)
        rows_l = [np.arange(c * 2 * n_g + r * n_g, c * 2 * n_g + (r + 1) * n_g)
                  for r in range(2)]
        udofs = vd.cell_dofs[c]
        ukeep = udofs >= 0
        uidx = o_u_blk + udofs[ukeep]
        pdofs = o_p_blk + c * n_q + np.arange(n_q)

        tgt_sum = np.zeros((2, n_g, n_v))
        for lf, fb in enumerate(blk.facets):
            for r in range(2):
                tgt_sum[r] += fb.tangent[r] * fb.tgt

        for r in range(2):
            builder.add_block(rows_l[r], rows_l[r], nu * blk.mg)
            coup = nu * (-blk.grad[r] + tgt_sum[r]) @ trans
            builder.add_block(rows_l[r], uidx, coup[:, ukeep])
            coup_b = nu * (blk.grad[r] - tgt_sum[r]).T
            coup_b = trans.T @ coup_b
            builder.add_block(uidx, rows_l[r], coup_b[ukeep])
        mg_u = trans.T @ blk.mgam @ trans
        builder.add_block(uidx, uidx, mg_u[np.ix_(ukeep, ukeep)])
        bp = trans.T @ (-blk.bdiv)
        builder.add_block(uidx, pdofs, bp[ukeep])
        builder.add_block(pdofs, uidx, (trans.T @ blk.bdiv)[ukeep].T)
        builder.add_block(pdofs, np.array([o_s]),
                          blk.qint.reshape(-1, 1))
        builder.add_block(np.array([o_s]), pdofs,
                          blk.qint.reshape(1, -1))
        rhs[pdofs] = gmom
        rhs[uidx] = rhs[uidx] + (trans.T @ fmom)[ukeep]

        for lf, fb in enumerate(blk.facets):
            fd = mt.facet_dofs[mesh.cell_facets[c, lf]]
            if fd[0] < 0:
                continue
            tdofs = o_t + fd
            for r in range(2):
                cpl = -nu * fb.tangent[r] * fb.that.T
                builder.add_block(rows_l[r], tdofs, cpl)
                builder.add_block(tdofs, rows_l[r], nu * fb.tangent[r] * fb.that)

    sol = sparse_solve(builder, rhs)

    l = sol[:n_l].reshape(nc, 2, n_g)
    u = np.zeros((nc, n_v))
    nodal_pad = np.concatenate([sol[o_u_blk:o_p_blk], [0.0]])
    for c in range(nc):
        u[c] = spaces.nodal_transform(c) @ nodal_pad[vd.cell_dofs[c]]
    p = sol[o_p_blk:o_s].reshape(nc, n_q)
    uhat_t = sol[o_t:]

    uhat_n = np.zeros(mt.total)
    for f in mesh.interior_facets:
        rank = mesh.interior_index[f]
        dofs = sol[o_u_blk + rank * kk:o_u_blk + (rank + 1) * kk]
        uhat_n[rank * kk:(rank + 1) * kk] = dofs / mesh.facet_lengths[f]

    ustar = np.zeros((nc, 2, fam.n_post))
    for c in range(nc):
        blk = blocks_by_class[spaces.cell_class[c]]
        fac = postprocess_factor(blk)
        ustar[c] = postprocess_velocity(blk, fac, l[c], u[c])

    return SolutionFields(
        k=spaces.k, cell_kind=mesh.cell_kind, l=l, u=u, p=p,
        lam=np.zeros((nc, nfc * kk)), uhat_t=uhat_t, uhat_n=uhat_n,
        pbar=p[:, 0] * q0v, mean_mult=float(sol[o_s]), ustar=ustar,
        n_global=n_sys, n_local=0)


def compare_fields(spaces, fa, fb):
    """L2 distances between two solutions; keys dl, du, dp, dut."""
    nc = spaces.mesh.num_cells
    dl2 = du2 = dp2 = 0.0
    for c in range(nc):
        tab = spaces.tab(c)
        w = tab.wdet
        dl = np.einsum("ra,acq->rcq", fa.l[c] - fb.l[c], tab.g)
        dl2 += float(np.einsum("rcq,rcq,q->", dl, dl, w))
        du = np.einsum("m,mrq->rq", fa.u[c] - fb.u[c], tab.v)
        du2 += float(np.einsum("rq,rq,q->", du, du, w))
        dp = np.einsum("i,iq->q", fa.p[c] - fb.p[c], tab.q_vals)
        dp2 += float(np.dot(dp ** 2, w))
    dt = fa.uhat_t - fb.uhat_t
    kk = spaces.family.n_facet
    dut2 = 0.0
    for f in spaces.mesh.interior_facets:
        rank = spaces.mesh.interior_index[f]
        seg = dt[rank * kk:(rank + 1) * kk]
        dut2 += float(spaces.mesh.facet_lengths[f] * np.dot(seg, seg))
    return {"dl": np.sqrt(dl2), "du": np.sqrt(du2),
            "dp": np.sqrt(dp2), "dut": np.sqrt(dut2)}


def mass_balance_residual(spaces, fields, g_func):
    """Max cell residual of the divergence moments against the source."""
    worst = 0.0
    for c in range(spaces.mesh.num_cells):
        tab = spaces.tab(c, fine=True)
        x = spaces.vol_points(c, tab)
        gmom = np.einsum("iq,q,q->i", tab.q_vals, g_func(x), tab.wdet)
        tab_a = spaces.tab(c)
        bdiv = np.einsum("iq,mq,q->mi", tab_a.q_vals, tab_a.v_div, tab_a.wdet)
        res = fields.u[c] @ bdiv - gmom
        worst = max(worst, float(np.abs(res).max()))
    return worst


def pressure_integral(spaces, fields):
    total = 0.0
    for c in range(spaces.mesh.num_cells):
        tab = spaces.tab(c)
        qint = np.einsum("iq,q->i", tab.q_vals, tab.wdet)
        total += float(fields.p[c] @ qint)
    return total


def evaluate_fields(spaces, fields, points):
    """Point values of velocity, pressure, gradient, postprocessed velocity."""
    from .mesh import locate_cell
    fam = spaces.family
    pts = np.atleast_2d(np.asarray(points, float))
    n = pts.shape[0]
    out_u = np.zeros((n, 2))
    out_p = np.zeros(n)
    out_l = np.zeros((n, 2, 2))
    out_star = np.zeros((n, 2))
    for i, pt in enumerate(pts):
        c = locate_cell(spaces.mesh, pt)
        am = spaces.amap(c)
        ref = am.pull_back(pt[None, :])
        jac, det = am.jacobian, am.det
        vv = np.einsum("rc,ncq->nrq", jac, fam.v.tabulate(ref)) / det
        gv = np.einsum("rc,ncq->nrq", jac, fam.g_row.tabulate(ref)) / det
        qv = fam.q.tabulate(ref)
        sv = fam.post.tabulate(ref)
        out_u[i] = np.einsum("m,mrq->r", fields.u[c], vv)
        out_p[i] = float(fields.p[c] @ qv[:, 0])
        out_l[i] = np.einsum("ra,acq->rc", fields.l[c], gv)
        out_star[i] = np.einsum("ri,iq->r", fields.ustar[c], sv)
    return {"u": out_u, "p": out_p, "l": out_l, "ustar": out_star}


def write_solution_text(path, spaces, fields):
    """Plain-text dump of all coefficient arrays, reproducible ordering."""
    with open(path, "w") as fh:
        fh.write(f"cell_kind {fields.cell_kind} k {fields.k} "
                 f"cells {spaces.mesh.num_cells}\n")
        for name, arr in (("l", fields.l), ("u", fields.u), ("p", fields.p),
                          ("lam", fields.lam), ("ustar", fields.ustar)):
            flat = np.asarray(arr).reshape(arr.shape[0], -1)
            fh.write(f"field {name} shape {arr.shape}\n")
            for c in range(flat.shape[0]):
                fh.write(" ".join(f"{v:.16e}" for v in flat[c]) + "\n")
        for name, arr in (("uhat_t", fields.uhat_t),
                          ("uhat_n", fields.uhat_n),
                          ("pbar", fields.pbar)):
            fh.write(f"field {name} shape {arr.shape}\n")
            fh.write(" ".join(f"{v:.16e}" for v in np.asarray(arr)) + "\n")
