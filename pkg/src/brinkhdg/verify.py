"""Manufactured solutions, error measures, and convergence studies.

The manufactured family on the unit square:

    u = (sin(2 pi x) sin(2 pi y), sin(2 pi x) sin(2 pi y))
    p = sin(m pi x) sin(m pi y) - mean

with parameters (nu, gamma, m).  Data f, g are hand-derived closed
forms; construction validates them against finite differences at random
points and against the algebraic composition of the other callables, so
a sign slip in any derivative cannot survive.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .fespace import Spaces
from .forms import (as_gamma_matrix, project_facet_tangent, project_grad,
                    project_velocity_div)
from .hybrid import compare_fields, solve_direct, solve_hybrid
from .mesh import build_structured_mesh


class BrinkmanCase:
    """One manufactured problem instance; all callables vectorized."""

    def __init__(self, nu, gamma, m, label=None):
        if nu <= 0:
            raise ValueError("nu must be positive")
        self.nu = float(nu)
        self.gamma = as_gamma_matrix(gamma)
        self.m = int(m)
        if self.m < 1:
            raise ValueError("pressure frequency m must be >= 1")
        self.label = label or f"nu={nu:g} m={m}"
        # mean of sin(m pi x) sin(m pi y) over the unit square
        self.pressure_mean = ((1.0 - np.cos(self.m * np.pi)) / (self.m * np.pi)) ** 2
        self.max_frequency = np.pi * max(2.0, float(self.m))
        self.gamma_max = float(np.linalg.eigvalsh(self.gamma)[-1])
        self._validate()

    # -- exact fields -----------------------------------------------------

    def velocity(self, x):
        s = np.sin(2 * np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 1])
        return np.stack([s, s], axis=-1)

    def velocity_gradient(self, x):
        tp = 2 * np.pi
        dx = tp * np.cos(tp * x[:, 0]) * np.sin(tp * x[:, 1])
        dy = tp * np.sin(tp * x[:, 0]) * np.cos(tp * x[:, 1])
        out = np.empty((x.shape[0], 2, 2))
        out[:, 0, 0] = dx
        out[:, 0, 1] = dy
        out[:, 1, 0] = dx
        out[:, 1, 1] = dy
        return out

    def velocity_laplacian(self, x):
        tp = 2 * np.pi
        lap = -2 * tp ** 2 * np.sin(tp * x[:, 0]) * np.sin(tp * x[:, 1])
        return np.stack([lap, lap], axis=-1)

    def pressure(self, x):
        mp = self.m * np.pi
        return np.sin(mp * x[:, 0]) * np.sin(mp * x[:, 1]) - self.pressure_mean

    def pressure_gradient(self, x):
        mp = self.m * np.pi
        gx = mp * np.cos(mp * x[:, 0]) * np.sin(mp * x[:, 1])
        gy = mp * np.sin(mp * x[:, 0]) * np.cos(mp * x[:, 1])
        return np.stack([gx, gy], axis=-1)

    def body_force(self, x):
        tp = 2 * np.pi
        mp = self.m * np.pi
        s = np.sin(tp * x[:, 0]) * np.sin(tp * x[:, 1])
        visc = 8 * np.pi ** 2 * self.nu * s
        u = np.stack([s, s], axis=-1)
        gu = u @ self.gamma.T
        out = np.empty_like(u)
        out[:, 0] = visc + gu[:, 0] + mp * np.cos(mp * x[:, 0]) * np.sin(mp * x[:, 1])
        out[:, 1] = visc + gu[:, 1] + mp * np.sin(mp * x[:, 0]) * np.cos(mp * x[:, 1])
        return out

    def mass_source(self, x):
        tp = 2 * np.pi
        return tp * (np.cos(tp * x[:, 0]) * np.sin(tp * x[:, 1])
                     + np.sin(tp * x[:, 0]) * np.cos(tp * x[:, 1]))

    # -- derived scalars ---------------------------------------------------

    def solution_norm_bound(self, k):
        """sqrt(nu)*|grad u|_{k+1} + sqrt(gamma_max)*|u|_{k+1}, closed form.

        Every mixed derivative of sin(2 pi x) sin(2 pi y) of order j has
        squared L2 norm (2 pi)^(2j)/4 and there are j+1 of them.
        """
        s = sum((j + 1) * (2 * np.pi) ** (2 * j) for j in range(k + 2))
        norm_u = np.sqrt(s / 2.0)
        norm_l = 2 * np.pi * np.sqrt(s)
        return float(np.sqrt(self.nu) * norm_l + np.sqrt(self.gamma_max) * norm_u)

    # -- construction-time validation ---------------------------------------

    def _validate(self):
        rng = np.random.default_rng(81423)
        x = rng.uniform(0.06, 0.94, size=(100, 2))

        def fd_grad(func, comp=None):
            h = 1e-6
            out = np.empty((x.shape[0], 2))
            for d in range(2):
                xp = x.copy()
                xm = x.copy()
                xp[:, d] += h
                xm[:, d] -= h
                fp, fm = func(xp), func(xm)
                if comp is not None:
                    fp, fm = fp[:, comp], fm[:, comp]
                out[:, d] = (fp - fm) / (2 * h)
            return out

        lex = self.velocity_gradient(x)
        for r in range(2):
            fd = fd_grad(self.velocity, comp=r)
            scale = max(1.0, np.abs(lex[:, r]).max())
            if np.abs(lex[:, r] - fd).max() > 1e-6 * scale:
                raise RuntimeError("velocity_gradient disagrees with finite differences")
        fd = fd_grad(self.pressure)
        scale = max(1.0, np.abs(fd).max())
        if np.abs(self.pressure_gradient(x) - fd).max() > 1e-6 * scale:
            raise RuntimeError("pressure_gradient disagrees with finite differences")

        g = self.mass_source(x)
        tr = lex[:, 0, 0] + lex[:, 1, 1]
        if np.abs(g - tr).max() > 1e-12 * max(1.0, np.abs(g).max()):
            raise RuntimeError("mass_source is not the velocity divergence")

        f = self.body_force(x)
        compose = (-self.nu * self.velocity_laplacian(x)
                   + self.velocity(x) @ self.gamma.T
                   + self.pressure_gradient(x))
        if np.abs(f - compose).max() > 1e-12 * max(1.0, np.abs(f).max()):
            raise RuntimeError("body_force inconsistent with the momentum balance")

        h2 = 1e-5
        lap = np.zeros((x.shape[0], 2))
        for d in range(2):
            xp = x.copy()
            xm = x.copy()
            xp[:, d] += h2
            xm[:, d] -= h2
            lap += (self.velocity(xp) - 2 * self.velocity(x)
                    + self.velocity(xm)) / h2 ** 2
        fd_f = (-self.nu * lap + self.velocity(x) @ self.gamma.T
                + self.pressure_gradient(x))
        if np.abs(f - fd_f).max() > 1e-6 * max(1.0, np.abs(f).max()):
            raise RuntimeError("body_force disagrees with the finite-difference build")

        t = np.linspace(0.0, 1.0, 21)
        zero = np.zeros_like(t)
        for bx in (np.stack([t, zero], -1), np.stack([t, zero + 1], -1),
                   np.stack([zero, t], -1), np.stack([zero + 1, t], -1)):
            if np.abs(self.velocity(bx)).max() > 1e-12:
                raise RuntimeError("velocity does not vanish on the boundary")


def make_case(test_id):
    """The three reference settings: (1,1,2), (1,1,20), (1e-4,1,2)."""
    table = {1: (1.0, 1.0, 2), 2: (1.0, 1.0, 20), 3: (1e-4, 1.0, 2)}
    if test_id not in table:
        raise ValueError("test_id must be 1, 2, or 3")
    nu, gamma, m = table[test_id]
    return BrinkmanCase(nu, gamma, m, label=f"test {test_id}")


def manufactured_case(nu, gamma, m, label=None):
    return BrinkmanCase(nu, gamma, m, label=label)


@dataclass
class ErrorReport:
    """Error measures of one solve; L2 unless noted."""

    err_l: float        # grad error
    err_u: float
    err_p: float
    err_ustar: float
    err_eu: float       # discrete velocity error |Pi_V u - u^h|
    err_el: float       # discrete grad error |P_G grad u - L^h|
    err_h1: float       # broken H1 norm of (e_u, e_uhat)
    err_dl_facet: float  # (sum nu h_F |delta_L n|^2_F)^(1/2)
    theta: float        # solution-norm bound scale, informational
    gamma_max: float

    def as_dict(self):
        return dict(err_l=self.err_l, err_u=self.err_u, err_p=self.err_p,
                    err_ustar=self.err_ustar, err_eu=self.err_eu,
                    err_el=self.err_el, err_h1=self.err_h1,
                    err_dl_facet=self.err_dl_facet, theta=self.theta,
                    gamma_max=self.gamma_max)


def error_norms(spaces, fields, case):
    """All error measures for one solution; fine-rule integration."""
    mesh = spaces.mesh
    fam = spaces.family
    k = spaces.k
    kk = fam.n_facet
    nu = case.nu
    gamma = as_gamma_matrix(case.gamma)
    mt = spaces.dofmap("Mt0")

    el2 = eu2 = ep2 = estar2 = eeu2 = eel2 = eh1 = edl2 = 0.0
    proj_t_cache = {}
    for c in range(mesh.num_cells):
        tab = spaces.tab(c, fine=True)
        x = spaces.vol_points(c, tab)
        w = tab.wdet

        lex = case.velocity_gradient(x)
        lv = np.einsum("ra,acq->qrc", fields.l[c], tab.g)
        el2 += float(np.einsum("qrc,q->", (lv - lex) ** 2, w))

        uex = case.velocity(x)
        uv = np.einsum("m,mrq->qr", fields.u[c], tab.v)
        eu2 += float(np.einsum("qr,q->", (uv - uex) ** 2, w))

        pex = case.pressure(x)
        pv = np.einsum("i,iq->q", fields.p[c], tab.q_vals)
        ep2 += float(np.dot((pv - pex) ** 2, w))

        sv = np.einsum("ri,iq->qr", fields.ustar[c], tab.post)
        estar2 += float(np.einsum("qr,q->", (sv - uex) ** 2, w))

        proj_u = project_velocity_div(spaces, c, case.velocity)
        ducoef = proj_u - fields.u[c]
        duv = np.einsum("m,mrq->qr", ducoef, tab.v)
        eeu2 += float(np.einsum("qr,q->", duv ** 2, w))

        proj_l = project_grad(spaces, c, case.velocity_gradient)
        dlcoef = proj_l - fields.l[c]
        dlv = np.einsum("ra,acq->qrc", dlcoef, tab.g)
        eel2 += float(np.einsum("qrc,q->", dlv ** 2, w))

        dgrad = np.einsum("m,mrcq->qrc", ducoef, tab.v_grad)
        eh1 += float(np.einsum("qrc,q->", dgrad ** 2, w))

        for lf, ft in enumerate(tab.facets):
            f = int(mesh.cell_facets[c, lf])
            if f not in proj_t_cache:
                proj_t_cache[f] = project_facet_tangent(
                    mesh, f, k, case.velocity, spaces.fine_degree)
            pcoef = proj_t_cache[f]
            rank = mesh.interior_index[f]
            hcoef = (fields.uhat_t[rank * kk:(rank + 1) * kk]
                     if rank >= 0 else np.zeros(kk))
            ehat = np.einsum("j,jq->q", pcoef - hcoef, ft.phi)
            eut = np.einsum("m,mcq,c->q", ducoef, ft.v, ft.tangent)
            eh1 += float(np.dot(ft.w, (eut - ehat) ** 2)) / ft.h

            xf = spaces.facet_points(c, tab, lf)
            dl_f = case.velocity_gradient(xf) \
                - np.einsum("ra,acq->qrc", proj_l, ft.g)
            dln = np.einsum("qrc,c->qr", dl_f, ft.outward)
            edl2 += nu * ft.h * float(np.einsum("qr,q->", dln ** 2, ft.w))

    theta = case.solution_norm_bound(k) if hasattr(case, "solution_norm_bound") \
        else float("nan")
    gmax = float(np.linalg.eigvalsh(gamma)[-1])
    return ErrorReport(
        err_l=np.sqrt(el2), err_u=np.sqrt(eu2), err_p=np.sqrt(ep2),
        err_ustar=np.sqrt(estar2), err_eu=np.sqrt(eeu2), err_el=np.sqrt(eel2),
        err_h1=np.sqrt(eh1), err_dl_facet=np.sqrt(edl2), theta=theta,
        gamma_max=gmax)


def energy_identity_terms(spaces, fields, case):
    """Both sides of the projected error identity.

    Returns (energy, facet_term, volume_term) with
    energy = nu|e_L|^2 + |e_u|^2_gamma, and the right side
    facet_term = sum <nu (delta_L n) . t, (e_u . t - e_uhat)>  over cell sides,
    volume_term = -(gamma delta_u, e_u).
    The discretization satisfies energy = facet_term + volume_term.
    """
    mesh = spaces.mesh
    fam = spaces.family
    k = spaces.k
    kk = fam.n_facet
    nu = case.nu
    gamma = as_gamma_matrix(case.gamma)

    energy = facet_term = volume_term = 0.0
    for c in range(mesh.num_cells):
        tab = spaces.tab(c, fine=True)
        x = spaces.vol_points(c, tab)
        w = tab.wdet
        proj_u = project_velocity_div(spaces, c, case.velocity)
        proj_l = project_grad(spaces, c, case.velocity_gradient)
        ducoef = proj_u - fields.u[c]
        dlcoef = proj_l - fields.l[c]

        elv = np.einsum("ra,acq->qrc", dlcoef, tab.g)
        euv = np.einsum("m,mrq->qr", ducoef, tab.v)
        energy += nu * float(np.einsum("qrc,q->", elv ** 2, w))
        energy += float(np.einsum("qr,rs,qs,q->", euv, gamma, euv, w))

        delta_u = case.velocity(x) - np.einsum("m,mrq->qr", proj_u, tab.v)
        volume_term -= float(np.einsum("qr,rs,qs,q->", delta_u, gamma, euv, w))

        for lf, ft in enumerate(tab.facets):
            f = int(mesh.cell_facets[c, lf])
            rank = mesh.interior_index[f]
            xf = spaces.facet_points(c, tab, lf)
            dl_f = case.velocity_gradient(xf) \
                - np.einsum("ra,acq->qrc", proj_l, ft.g)
            dlnt = np.einsum("qrc,c,r->q", dl_f, ft.outward, ft.tangent)
            pcoef = project_facet_tangent(mesh, f, k, case.velocity,
                                          spaces.fine_degree)
            hcoef = (fields.uhat_t[rank * kk:(rank + 1) * kk]
                     if rank >= 0 else np.zeros(kk))
            ehat = np.einsum("j,jq->q", pcoef - hcoef, ft.phi)
            eut = np.einsum("m,mcq,c->q", ducoef, ft.v, ft.tangent)
            facet_term += nu * float(np.dot(ft.w, dlnt * (eut - ehat)))
    return energy, facet_term, volume_term


@dataclass
class LevelRow:
    level: int
    n: int
    n_ele: int
    n_global: int
    n_local: int
    report: ErrorReport
    seconds: float
    oracle_discrepancy: float = None


_CSV_COLS = (("err_L", "err_l"), ("err_u", "err_u"), ("err_p", "err_p"),
             ("err_ustar", "err_ustar"), ("err_eu", "err_eu"))


class ConvergenceTable:
    """Per-level errors and pairwise observed orders."""

    def __init__(self, label, cell_kind, k):
        self.label = label
        self.cell_kind = cell_kind
        self.k = k
        self.rows = []

    def add_row(self, row):
        self.rows.append(row)

    def orders(self, attr):
        """log2 error ratios; None for the first level."""
        vals = [getattr(r.report, attr) for r in self.rows]
        out = [None]
        for prev, cur in zip(vals, vals[1:]):
            if prev > 0 and cur > 0:
                out.append(float(np.log2(prev / cur)))
            else:
                out.append(None)
        return out

    def to_csv(self):
        header = "level,n_ele,n_global,n_local," + ",".join(
            f"{name},ord_{name.split('_', 1)[1]}" for name, _ in _CSV_COLS)
        lines = [header]
        ords = {attr: self.orders(attr) for _, attr in _CSV_COLS}
        for i, row in enumerate(self.rows):
            cells = [str(row.level), str(row.n_ele), str(row.n_global),
                     str(row.n_local)]
            for _, attr in _CSV_COLS:
                cells.append(f"{getattr(row.report, attr):.6e}")
                o = ords[attr][i]
                cells.append("" if o is None else f"{o:.2f}")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_markdown(self):
        headers = ["level", "n_ele", "n_global", "n_local"]
        for name, _ in _CSV_COLS:
            headers += [name, "ord"]
        rows = []
        ords = {attr: self.orders(attr) for _, attr in _CSV_COLS}
        for i, row in enumerate(self.rows):
            cells = [str(row.level), str(row.n_ele), str(row.n_global),
                     str(row.n_local)]
            for _, attr in _CSV_COLS:
                cells.append(f"{getattr(row.report, attr):.6e}")
                o = ords[attr][i]
                cells.append("--" if o is None else f"{o:.2f}")
            rows.append(cells)
        widths = [max(len(h), *(len(r[j]) for r in rows)) if rows else len(h)
                  for j, h in enumerate(headers)]
        def fmt(cells):
            return "| " + " | ".join(c.rjust(w) for c, w in zip(cells, widths)) + " |"
        sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        return "\n".join([fmt(headers), sep] + [fmt(r) for r in rows]) + "\n"


def data_quadrature_degree(case, k, n):
    """Fine-rule degree: resolves oscillatory data on coarse levels.

    The point count per direction grows with the number of data wavelengths
    across one cell so 1D Gauss error (kappa/2)^(2n+1)/(2n+1)! stays far
    below the discretization error.
    """
    h = 1.0 / n
    freq = getattr(case, "max_frequency", 2 * np.pi)
    n_req = max(k + 4, int(np.ceil(freq * h / 4.0)) + 9)
    return max(2 * k + 6, 2 * n_req - 1)


def run_convergence(case, cell_kind, k, levels, base_n=None,
                    check_oracle=False, quad_degree=None):
    """Solve on a geometric mesh ladder and collect errors.

    Level 1 uses base_n (8 for quads, 4 for triangles, matching ladders
    starting at 64 and 32 cells); each level halves h.  The oracle check
    runs the uncondensed solve on the coarsest level.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    base = base_n or (8 if cell_kind == "quad" else 4)
    table = ConvergenceTable(case.label, cell_kind, k)
    for lev in range(1, levels + 1):
        n = base * 2 ** (lev - 1)
        mesh = build_structured_mesh(n, cell_kind)
        spaces = Spaces(mesh, k, assembly_degree=quad_degree,
                        fine_degree=data_quadrature_degree(case, k, n))
        t0 = time.perf_counter()
        try:
            fields = solve_hybrid(spaces, case.nu, case.gamma,
                                  case.body_force, case.mass_source)
        except Exception as exc:
            raise RuntimeError(
                f"solve failed at level {lev} ({cell_kind}, n={n}, k={k}): {exc}"
            ) from exc
        seconds = time.perf_counter() - t0
        report = error_norms(spaces, fields, case)
        disc = None
        if check_oracle and lev == 1:
            direct = solve_direct(spaces, case.nu, case.gamma,
                                  case.body_force, case.mass_source)
            diffs = compare_fields(spaces, fields, direct)
            disc = max(diffs.values())
        table.add_row(LevelRow(
            level=lev, n=n, n_ele=mesh.num_cells, n_global=fields.n_global,
            n_local=fields.n_local, report=report, seconds=seconds,
            oracle_discrepancy=disc))
    return table


def stability_ratio(reports):
    """Broken-H1 to discrete-gradient error ratios; nan when degenerate."""
    out = []
    for rep in reports:
        if rep.err_el < 1e-14:
            out.append(float("nan"))
        else:
            out.append(rep.err_h1 / rep.err_el)
    return out
