//! Local and assembled bilinear forms: the projected-jump HDG diffusion
//! operator, divergence coupling, weighted masses, the piecewise-constant
//! pressure jump form, the continuous auxiliary form and the skeleton
//! transfer, plus load functionals.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::{FacetKind, Mesh, Point, Region};
use crate::spaces::{element_quadrature, shifted_legendre_all, BcTable, Constraint, SpaceSet, Vector2};
use crate::sparse::{Csr, TripletBuilder};

/// Material and stabilization parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams {
    pub rho_f: f64,
    pub mu_f: f64,
    pub rho_s: f64,
    pub mu_s: f64,
    pub lambda_s: f64,
    /// Spring coefficient of the structure (zero disables the term).
    pub beta_s: f64,
    /// HDG stabilization parameter.
    pub alpha: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            rho_f: 1.0,
            mu_f: 1.0,
            rho_s: 1.0,
            mu_s: 1.0,
            lambda_s: 1.0,
            beta_s: 0.0,
            alpha: 8.0,
        }
    }
}

impl MaterialParams {
    /// Structure parameters from a density and the two ratios
    /// `mu_s = delta1 * rho_s`, `lambda_s = delta2 * mu_s`; unit fluid.
    pub fn from_ratios(rho_s: f64, delta1: f64, delta2: f64) -> Self {
        Self {
            rho_s,
            mu_s: delta1 * rho_s,
            lambda_s: delta2 * delta1 * rho_s,
            ..Self::default()
        }
    }

    /// Blood-flow parameters of the pressure-pulse channel.
    pub fn blood_vessel() -> Self {
        Self {
            rho_f: 1.0,
            mu_f: 0.035,
            rho_s: 1.1,
            mu_s: 0.575e6,
            lambda_s: 1.7e6,
            beta_s: 4e6,
            alpha: 8.0,
        }
    }

    /// All violated constraints, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut positive = |name: &str, x: f64| {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{name} must be positive (got {x})"));
            }
        };
        positive("rho_f", self.rho_f);
        positive("mu_f", self.mu_f);
        positive("rho_s", self.rho_s);
        positive("mu_s", self.mu_s);
        positive("alpha", self.alpha);
        if !(self.lambda_s > 0.0 && self.lambda_s.is_finite()) {
            v.push(format!("lambda_s must be positive (got {})", self.lambda_s));
        }
        if !(self.beta_s >= 0.0 && self.beta_s.is_finite()) {
            v.push(format!("beta_s must be non-negative (got {})", self.beta_s));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    pub fn density(&self, r: Region) -> f64 {
        match r {
            Region::Fluid => self.rho_f,
            Region::Solid => self.rho_s,
        }
    }
}

/// Pieces of the local HDG diffusion matrix; `total` is their sum.
#[derive(Clone, Debug)]
pub struct HdgParts {
    pub volume: DMatrix<f64>,
    pub consistency: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
    /// `h_K * int_{dK} D(u):D(v)` (velocity rows only), with `h_K` the
    /// element diameter.
    pub boundary_strain: DMatrix<f64>,
}

impl HdgParts {
    pub fn total(&self) -> DMatrix<f64> {
        &self.volume + &self.consistency + &self.penalty
    }
}

fn strain(g: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let off = 0.5 * (g[0][1] + g[1][0]);
    [[g[0][0], off], [off, g[1][1]]]
}

fn ddot(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

/// Local length in the penalty weight `alpha k^2 / h`: the square root of
/// the reference-map Jacobian determinant, `sqrt(2 |K|)`.
pub fn penalty_length(mesh: &Mesh, e: usize) -> f64 {
    (2.0 * mesh.area(e)).sqrt()
}

fn check_element(mesh: &Mesh, e: usize) -> Result<()> {
    if mesh.area(e) <= 1e-14 * mesh.diameter(e).powi(2) {
        return Err(Error::Assembly(format!("element {e} is degenerate")));
    }
    Ok(())
}

/// Local HDG diffusion pieces on element `e`. Local ordering: the element's
/// velocity basis, then the tangential facet functions of its three facets.
pub fn local_hdg_parts(mesh: &Mesh, spaces: &SpaceSet, e: usize, alpha: f64) -> Result<HdgParts> {
    check_element(mesh, e)?;
    let k = spaces.k;
    let basis = &spaces.velocity[e];
    let nb = basis.dim();
    let n = nb + 3 * k;
    let hk = penalty_length(mesh, e);
    let mut volume = DMatrix::zeros(n, n);
    for (p, w) in element_quadrature(mesh, e, &spaces.volume_rule) {
        let (_, grads) = basis.eval(p);
        let d: Vec<_> = grads.iter().map(strain).collect();
        for i in 0..nb {
            for j in 0..=i {
                let v = w * ddot(&d[i], &d[j]);
                volume[(i, j)] += v;
                if i != j {
                    volume[(j, i)] += v;
                }
            }
        }
    }

    let mut consistency = DMatrix::zeros(n, n);
    let mut penalty = DMatrix::zeros(n, n);
    let mut boundary_strain = DMatrix::zeros(n, n);
    let pen = alpha * (k * k) as f64 / hk;
    let diam = mesh.diameter(e);
    let rule = &spaces.facet_rule;
    for l in 0..3 {
        let f = mesh.element_facets[e][l];
        let len = mesh.facet_length(f);
        let nout = mesh.outward_normal(e, l);
        let t = mesh.facet_tangent(f);
        // Legendre moments of the tangential jump, per local DOF.
        let mut moments = DMatrix::<f64>::zeros(k, n);
        for (&s, &w) in rule.points.iter().zip(&rule.weights) {
            let p = mesh.facet_point(f, s);
            let (vals, grads) = basis.eval(p);
            let leg = shifted_legendre_all(k, s);
            let mut jump = vec![0.0; n];
            let mut dnt = vec![0.0; n];
            let d: Vec<_> = grads.iter().map(strain).collect();
            for j in 0..nb {
                jump[j] = vals[j][0] * t[0] + vals[j][1] * t[1];
                let dn = [d[j][0][0] * nout[0] + d[j][0][1] * nout[1], d[j][1][0] * nout[0] + d[j][1][1] * nout[1]];
                dnt[j] = dn[0] * t[0] + dn[1] * t[1];
            }
            for m in 0..k {
                jump[nb + l * k + m] = -leg[m];
            }
            let ws = w * len;
            for i in 0..n {
                if dnt[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let v = ws * dnt[i] * jump[j];
                    consistency[(i, j)] -= v;
                    consistency[(j, i)] -= v;
                }
            }
            for i in 0..nb {
                for j in 0..nb {
                    boundary_strain[(i, j)] += diam * ws * ddot(&d[i], &d[j]);
                }
            }
            for m in 0..k {
                for j in 0..n {
                    moments[(m, j)] += w * jump[j] * leg[m];
                }
            }
        }
        for m in 0..k {
            let row = moments.row(m);
            let scale = pen * len * (2 * m + 1) as f64;
            penalty += scale * row.transpose() * row;
        }
    }
    Ok(HdgParts {
        volume,
        consistency,
        penalty,
        boundary_strain,
    })
}

/// Local HDG diffusion matrix (volume, both consistency terms and the
/// projected-jump penalty with weight `alpha k^2 / h_K`).
pub fn local_hdg_diffusion(mesh: &Mesh, spaces: &SpaceSet, e: usize, alpha: f64) -> Result<DMatrix<f64>> {
    Ok(local_hdg_parts(mesh, spaces, e, alpha)?.total())
}

/// `-(q, div v)` with rows over the local pressure basis and columns over
/// the local velocity basis.
pub fn local_div_coupling(mesh: &Mesh, spaces: &SpaceSet, e: usize) -> DMatrix<f64> {
    let vb = &spaces.velocity[e];
    let pb = &spaces.pressure[e];
    let mut b = DMatrix::zeros(pb.dim(), vb.dim());
    for (p, w) in element_quadrature(mesh, e, &spaces.volume_rule) {
        let (_, grads) = vb.eval(p);
        let q = pb.eval(p);
        for (i, qi) in q.iter().enumerate() {
            for (j, g) in grads.iter().enumerate() {
                b[(i, j)] -= w * qi * (g[0][0] + g[1][1]);
            }
        }
    }
    b
}

/// Unweighted velocity mass `(u, v)_K`.
pub fn local_velocity_mass(mesh: &Mesh, spaces: &SpaceSet, e: usize) -> DMatrix<f64> {
    let vb = &spaces.velocity[e];
    let mut m = DMatrix::zeros(vb.dim(), vb.dim());
    for (p, w) in element_quadrature(mesh, e, &spaces.volume_rule) {
        let v = vb.eval_values(p);
        for i in 0..v.len() {
            for j in 0..v.len() {
                m[(i, j)] += w * (v[i][0] * v[j][0] + v[i][1] * v[j][1]);
            }
        }
    }
    m
}

/// Unweighted pressure mass `(p, q)_K`.
pub fn local_pressure_mass(mesh: &Mesh, spaces: &SpaceSet, e: usize) -> DMatrix<f64> {
    let pb = &spaces.pressure[e];
    let mut m = DMatrix::zeros(pb.dim(), pb.dim());
    for (p, w) in element_quadrature(mesh, e, &spaces.volume_rule) {
        let q = pb.eval(p);
        for i in 0..q.len() {
            for j in 0..q.len() {
                m[(i, j)] += w * q[i] * q[j];
            }
        }
    }
    m
}

/// `(div u, div v)_K`.
pub fn local_divdiv(mesh: &Mesh, spaces: &SpaceSet, e: usize) -> DMatrix<f64> {
    let vb = &spaces.velocity[e];
    let mut m = DMatrix::zeros(vb.dim(), vb.dim());
    for (p, w) in element_quadrature(mesh, e, &spaces.volume_rule) {
        let (_, g) = vb.eval(p);
        let d: Vec<f64> = g.iter().map(|g| g[0][0] + g[1][1]).collect();
        for i in 0..d.len() {
            for j in 0..d.len() {
                m[(i, j)] += w * d[i] * d[j];
            }
        }
    }
    m
}

/// Globally assembled, coefficient-free operators on the compound velocity
/// space and the pressure space.
#[derive(Clone, Debug)]
pub struct Operators {
    pub diffusion_fluid: Csr,
    pub diffusion_solid: Csr,
    /// Penalty part of the solid diffusion (for norm diagnostics).
    pub penalty_fluid: Csr,
    pub penalty_solid: Csr,
    pub strain_fluid: Csr,
    pub strain_solid: Csr,
    pub boundary_strain_fluid: Csr,
    pub boundary_strain_solid: Csr,
    /// `(rho u, v)` with the piecewise density.
    pub mass_rho: Csr,
    /// `(u, v)_s`.
    pub mass_solid: Csr,
    /// `(div u, div v)_s`.
    pub divdiv_solid: Csr,
    /// `-(q, div v)`, `n_p x n_u`.
    pub div: Csr,
    /// `(p, q)` restricted to solid elements.
    pub pressure_mass_solid: Csr,
    /// `(p, q)` over all elements.
    pub pressure_mass: Csr,
}

impl Operators {
    pub fn assemble(mesh: &Mesh, spaces: &SpaceSet, params: &MaterialParams) -> Result<Self> {
        let nu = spaces.n_u();
        let np = spaces.n_p();
        let tb = |r, c| TripletBuilder::new(r, c);
        let (mut af, mut as_, mut pf, mut ps, mut sf, mut ss, mut bf, mut bs) = (
            tb(nu, nu),
            tb(nu, nu),
            tb(nu, nu),
            tb(nu, nu),
            tb(nu, nu),
            tb(nu, nu),
            tb(nu, nu),
            tb(nu, nu),
        );
        let (mut mr, mut ms, mut dd, mut b, mut pms, mut pm) =
            (tb(nu, nu), tb(nu, nu), tb(nu, nu), tb(np, nu), tb(np, np), tb(np, np));
        for e in 0..mesh.num_elements() {
            let vd = spaces.element_velocity_dofs(mesh, e);
            let mut cd = vd.clone();
            cd.extend(spaces.element_hat_dofs(mesh, e));
            let pd = spaces.element_pressure_dofs(e);
            let parts = local_hdg_parts(mesh, spaces, e, params.alpha)?;
            let total = parts.total();
            let region = mesh.elements[e].region;
            let mass = local_velocity_mass(mesh, spaces, e);
            let pmass = local_pressure_mass(mesh, spaces, e);
            mr.push_block(&vd, &vd, &mass, params.density(region));
            b.push_block(&pd, &vd, &local_div_coupling(mesh, spaces, e), 1.0);
            pm.push_block(&pd, &pd, &pmass, 1.0);
            match region {
                Region::Fluid => {
                    af.push_block(&cd, &cd, &total, 1.0);
                    pf.push_block(&cd, &cd, &parts.penalty, 1.0);
                    sf.push_block(&cd, &cd, &parts.volume, 1.0);
                    bf.push_block(&cd, &cd, &parts.boundary_strain, 1.0);
                }
                Region::Solid => {
                    as_.push_block(&cd, &cd, &total, 1.0);
                    ps.push_block(&cd, &cd, &parts.penalty, 1.0);
                    ss.push_block(&cd, &cd, &parts.volume, 1.0);
                    bs.push_block(&cd, &cd, &parts.boundary_strain, 1.0);
                    ms.push_block(&vd, &vd, &mass, 1.0);
                    dd.push_block(&vd, &vd, &local_divdiv(mesh, spaces, e), 1.0);
                    pms.push_block(&pd, &pd, &pmass, 1.0);
                }
            }
        }
        Ok(Self {
            diffusion_fluid: af.build(),
            diffusion_solid: as_.build(),
            penalty_fluid: pf.build(),
            penalty_solid: ps.build(),
            strain_fluid: sf.build(),
            strain_solid: ss.build(),
            boundary_strain_fluid: bf.build(),
            boundary_strain_solid: bs.build(),
            mass_rho: mr.build(),
            mass_solid: ms.build(),
            divdiv_solid: dd.build(),
            div: b.build(),
            pressure_mass_solid: pms.build(),
            pressure_mass: pm.build(),
        })
    }
}

/// Piecewise-constant pressure jump form: `gamma`-weighted mass plus
/// `scale * {rho^-1} / h_F` jump penalties on interior facets and
/// `scale / (rho h_F)` on the listed boundary tags.
pub fn pressure_jump_matrix(
    mesh: &Mesh,
    params: &MaterialParams,
    gamma: &[f64],
    scale: f64,
    boundary_tags: &[&str],
) -> Csr {
    let ne = mesh.num_elements();
    let mut tb = TripletBuilder::new(ne, ne);
    for (e, g) in gamma.iter().enumerate() {
        tb.push(e, e, g * mesh.area(e));
    }
    for (f, facet) in mesh.facets.iter().enumerate() {
        let len = mesh.facet_length(f);
        let h = mesh.facet_h(f);
        match facet.elements {
            (a, Some(b)) => {
                let ra = params.density(mesh.elements[a].region);
                let rb = params.density(mesh.elements[b].region);
                let avg = (ra + rb) / (ra * rb);
                let w = scale * avg * len / h;
                tb.push(a, a, w);
                tb.push(b, b, w);
                tb.push(a, b, -w);
                tb.push(b, a, -w);
            }
            (a, None) => {
                if let FacetKind::Boundary(t) = facet.kind {
                    if boundary_tags.contains(&mesh.boundary_tags[t].as_str()) {
                        let r = params.density(mesh.elements[a].region);
                        tb.push(a, a, scale * len / (r * h));
                    }
                }
            }
        }
    }
    tb.build()
}

/// Component-aligned constraints of the continuous auxiliary space: an
/// essential normal (tangential) condition fixes the vertex component along
/// the facet normal (tangent). Boundary facets must be axis-aligned.
pub fn cg_constraint_mask(mesh: &Mesh, bcs: &BcTable) -> Result<Vec<bool>> {
    bcs.check_covers(mesh)?;
    let mut mask = vec![false; 2 * mesh.num_vertices()];
    for (f, facet) in mesh.facets.iter().enumerate() {
        let FacetKind::Boundary(t) = facet.kind else { continue };
        let bc = bcs.get(&mesh.boundary_tags[t]).expect("checked");
        let n = mesh.facet_normal(f);
        let ncomp = if n[0].abs() > 0.5 { 0 } else { 1 };
        if n[0].abs() > 1e-12 && n[1].abs() > 1e-12 {
            return Err(Error::Assembly(format!("boundary facet {f} is not axis-aligned")));
        }
        for &v in &facet.vertices {
            if bc.normal == Constraint::Essential {
                mask[2 * v + ncomp] = true;
            }
            if bc.tangential == Constraint::Essential {
                mask[2 * v + 1 - ncomp] = true;
            }
        }
    }
    Ok(mask)
}

/// Continuous piecewise-linear vector form
/// `(mass_w u, v) + 2 (visc D(u), D(v))` with per-element weights;
/// constrained DOFs get identity rows and columns.
pub fn auxiliary_cg_matrix(mesh: &Mesh, mass_w: &[f64], visc: &[f64], constrained: &[bool]) -> Csr {
    let nv = mesh.num_vertices();
    let mut tb = TripletBuilder::new(2 * nv, 2 * nv);
    for e in 0..mesh.num_elements() {
        let [a, b, c] = mesh.element_points(e);
        let area = mesh.area(e);
        let det = 2.0 * area;
        // gradients of the barycentric hats
        let g = [
            [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
            [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
            [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
        ];
        let vs = mesh.elements[e].vertices;
        for i in 0..3 {
            for j in 0..3 {
                let mij = if i == j { area / 6.0 } else { area / 12.0 };
                for ci in 0..2 {
                    for cj in 0..2 {
                        let row = 2 * vs[i] + ci;
                        let col = 2 * vs[j] + cj;
                        if constrained[row] || constrained[col] {
                            continue;
                        }
                        let gg = g[i][0] * g[j][0] + g[i][1] * g[j][1];
                        let dd = 0.5 * (if ci == cj { gg } else { 0.0 } + g[i][cj] * g[j][ci]);
                        let mass = if ci == cj { mass_w[e] * mij } else { 0.0 };
                        tb.push(row, col, mass + 2.0 * visc[e] * area * dd);
                    }
                }
            }
        }
    }
    for (i, &c) in constrained.iter().enumerate() {
        if c {
            tb.push(i, i, 1.0);
        }
    }
    tb.build()
}

/// Index of skeleton DOFs (normal moments, then tangential facet moments)
/// within the compound velocity layout.
pub fn skeleton_dofs(spaces: &SpaceSet) -> Vec<usize> {
    (0..spaces.n_normal()).chain(spaces.n_v()..spaces.n_u()).collect()
}

/// Facet-wise moment-matching transfer from the continuous auxiliary space
/// into the skeleton velocity DOFs. Rows of constrained skeleton DOFs and
/// columns of constrained auxiliary DOFs are zero.
pub fn transfer_matrix(mesh: &Mesh, spaces: &SpaceSet, skel_constrained: &[bool], cg_constrained: &[bool]) -> Csr {
    let k = spaces.k;
    let nn = spaces.n_normal();
    let nskel = nn + spaces.n_hat();
    let mut tb = TripletBuilder::new(nskel, 2 * mesh.num_vertices());
    let rule = crate::spaces::LineRule::gauss(k + 2);
    // Moments of the two end hats: int (1 - s) L_m and int s L_m.
    let mut ends = vec![[0.0; 2]; k + 1];
    for (&s, &w) in rule.points.iter().zip(&rule.weights) {
        let l = shifted_legendre_all(k, s);
        for m in 0..=k {
            ends[m][0] += w * (1.0 - s) * l[m];
            ends[m][1] += w * s * l[m];
        }
    }
    for f in 0..mesh.num_facets() {
        let n = mesh.facet_normal(f);
        let t = mesh.facet_tangent(f);
        let vs = mesh.facets[f].vertices;
        for (end, &v) in vs.iter().enumerate() {
            for c in 0..2 {
                let col = 2 * v + c;
                if cg_constrained[col] {
                    continue;
                }
                for m in 0..=k {
                    let row = f * (k + 1) + m;
                    if !skel_constrained[row] {
                        tb.push(row, col, n[c] * ends[m][end]);
                    }
                }
                for m in 0..k {
                    let row = nn + f * k + m;
                    if !skel_constrained[row] {
                        tb.push(row, col, (2 * m + 1) as f64 * t[c] * ends[m][end]);
                    }
                }
            }
        }
    }
    tb.build()
}

/// `(f, v)` over the compound velocity space for a region-wise body force.
pub fn volume_load(mesh: &Mesh, spaces: &SpaceSet, force: impl Fn(Region, Point) -> Vector2) -> Vec<f64> {
    let mut out = vec![0.0; spaces.n_u()];
    for e in 0..mesh.num_elements() {
        let region = mesh.elements[e].region;
        let dofs = spaces.element_velocity_dofs(mesh, e);
        for (p, w) in element_quadrature(mesh, e, &spaces.volume_rule) {
            let f = force(region, p);
            let vals = spaces.velocity[e].eval_values(p);
            for (j, &d) in dofs.iter().enumerate() {
                out[d] += w * (f[0] * vals[j][0] + f[1] * vals[j][1]);
            }
        }
    }
    out
}

/// `<g, (v.n)n + v_hat>` summed over the given facets, with the facet trace
/// of `v` expressed through its normal moments.
pub fn facet_traction_load(
    mesh: &Mesh,
    spaces: &SpaceSet,
    facets: &[usize],
    traction: impl Fn(usize, Point) -> Vector2,
) -> Vec<f64> {
    let k = spaces.k;
    let mut out = vec![0.0; spaces.n_u()];
    let rule = &spaces.facet_rule;
    for &f in facets {
        let len = mesh.facet_length(f);
        let n = mesh.facet_normal(f);
        let t = mesh.facet_tangent(f);
        for (&s, &w) in rule.points.iter().zip(&rule.weights) {
            let g = traction(f, mesh.facet_point(f, s));
            let gn = g[0] * n[0] + g[1] * n[1];
            let gt = g[0] * t[0] + g[1] * t[1];
            let l = shifted_legendre_all(k, s);
            for m in 0..=k {
                out[spaces.normal_dof(f, m)] += (2 * m + 1) as f64 * len * w * gn * l[m];
            }
            for m in 0..k {
                out[spaces.hat_dof(f, m)] += len * w * gt * l[m];
            }
        }
    }
    out
}

/// Inlet pressure pulse `p_max/2 (1 - cos(2 pi t / t_max))` for `t <= t_max`.
pub fn inlet_pressure(t: f64, p_max: f64, t_max: f64) -> f64 {
    if t <= t_max {
        0.5 * p_max * (1.0 - (2.0 * std::f64::consts::PI * t / t_max).cos())
    } else {
        0.0
    }
}

/// Traction `-p_in n_out` on the given boundary facets.
pub fn inlet_load(mesh: &Mesh, spaces: &SpaceSet, facets: &[usize], p_in: f64) -> Vec<f64> {
    facet_traction_load(mesh, spaces, facets, |f, _| {
        let (e, _) = mesh.facets[f].elements;
        let l = mesh.element_facets[e].iter().position(|&x| x == f).expect("adjacent");
        let n = mesh.outward_normal(e, l);
        [-p_in * n[0], -p_in * n[1]]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Element, Geometry};
    use crate::spaces::{LineRule, QuadratureRule};
    use rand::{Rng, SeedableRng};

    fn unit_right_triangle() -> Mesh {
        Mesh::from_elements(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![Element {
                vertices: [0, 1, 2],
                region: Region::Fluid,
            }],
        )
        .unwrap()
    }

    fn compound_local(spaces: &SpaceSet, mesh: &Mesh, e: usize, x: &[f64]) -> Vec<f64> {
        let mut ids = spaces.element_velocity_dofs(mesh, e);
        ids.extend(spaces.element_hat_dofs(mesh, e));
        ids.iter().map(|&i| x[i]).collect()
    }

    #[test]
    fn rigid_motion_has_zero_local_energy() {
        let m = Mesh::structured(&Geometry::unit_square(), 2).unwrap();
        for k in 1..=3 {
            let s = SpaceSet::build(&m, k).unwrap();
            let rigid = |p: Point| [0.3 - 0.7 * p[1], -1.1 + 0.7 * p[0]];
            let x = s.interpolate_compound(&m, rigid);
            for e in 0..m.num_elements() {
                let a = local_hdg_diffusion(&m, &s, e, 8.0).unwrap();
                let xl = nalgebra::DVector::from_vec(compound_local(&s, &m, e, &x));
                let energy = (xl.transpose() * &a * &xl)[(0, 0)];
                assert!(energy.abs() < 1e-12, "k {k}: {energy}");
                assert!((&a - a.transpose()).norm() < 1e-12 * a.norm());
            }
        }
    }

    #[test]
    fn coercivity_with_half_constant() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let m = Mesh::structured(&Geometry::unit_square(), 2).unwrap();
        for k in 1..=2 {
            let s = SpaceSet::build(&m, k).unwrap();
            for e in 0..2 {
                // the two element shapes of the structured mesh
                let parts = local_hdg_parts(&m, &s, e, 8.0).unwrap();
                let a = parts.total();
                let lower = 0.5 * (&parts.volume + &parts.penalty);
                for _ in 0..200 {
                    let x = nalgebra::DVector::from_fn(a.nrows(), |_, _| rng.random_range(-1.0..1.0));
                    let lhs = (x.transpose() * &a * &x)[(0, 0)];
                    let rhs = (x.transpose() * &lower * &x)[(0, 0)];
                    assert!(lhs >= rhs - 1e-12 * rhs.abs(), "k {k}: {lhs} < {rhs}");
                }
            }
        }
    }

    #[test]
    fn volume_block_matches_high_order_oracle() {
        let m = unit_right_triangle();
        let s = SpaceSet::build(&m, 1).unwrap();
        let parts = local_hdg_parts(&m, &s, 0, 8.0).unwrap();
        let rule = QuadratureRule::triangle(10);
        let nb = s.velocity[0].dim();
        let mut oracle = DMatrix::<f64>::zeros(nb, nb);
        for (r, w) in rule.points.iter().zip(&rule.weights) {
            // the element is the reference triangle itself
            let (_, g) = s.velocity[0].eval(*r);
            for i in 0..nb {
                for j in 0..nb {
                    let di = strain(&g[i]);
                    let dj = strain(&g[j]);
                    oracle[(i, j)] += w * ddot(&di, &dj);
                }
            }
        }
        let got = parts.volume.view((0, 0), (nb, nb)).clone_owned();
        assert!((got - &oracle).norm() <= 1e-11 * oracle.norm());
    }

    #[test]
    fn local_blocks_match_degree_ten_oracles() {
        let m = Mesh::structured(&Geometry::manufactured(), 2).unwrap();
        let rule = QuadratureRule::triangle(10);
        let lrule = LineRule::gauss(10);
        for k in 1..=2 {
            let mut s = SpaceSet::build(&m, k).unwrap();
            let e = 5;
            let b = local_div_coupling(&m, &s, e);
            let mass = local_velocity_mass(&m, &s, e);
            let hdg = local_hdg_diffusion(&m, &s, e, 8.0).unwrap();
            s.volume_rule = rule.clone();
            s.facet_rule = lrule.clone();
            let b2 = local_div_coupling(&m, &s, e);
            let mass2 = local_velocity_mass(&m, &s, e);
            let hdg2 = local_hdg_diffusion(&m, &s, e, 8.0).unwrap();
            assert!((&b - &b2).norm() <= 1e-11 * b2.norm());
            assert!((&mass - &mass2).norm() <= 1e-11 * mass2.norm());
            assert!((&hdg - &hdg2).norm() <= 1e-11 * hdg2.norm());
        }
    }

    #[test]
    fn div_coupling_of_unit_divergence_field() {
        // Unit-area right triangle with legs sqrt(2); v = (x, 0) has div 1.
        let r = 2f64.sqrt();
        let m = Mesh::from_elements(
            vec![[0.0, 0.0], [r, 0.0], [0.0, r]],
            vec![Element {
                vertices: [0, 1, 2],
                region: Region::Fluid,
            }],
        )
        .unwrap();
        assert!((m.area(0) - 1.0).abs() < 1e-14);
        let s = SpaceSet::build(&m, 1).unwrap();
        let x = s.interpolate_bdm(&m, |p| [p[0], 0.0]);
        let b = local_div_coupling(&m, &s, 0);
        let xl: Vec<f64> = s.element_velocity_dofs(&m, 0).iter().map(|&i| x[i]).collect();
        let val: f64 = (0..xl.len()).map(|j| b[(0, j)] * xl[j]).sum();
        assert!((val + 1.0).abs() < 1e-13);
        // divergence-free combination gives zero column action
        let x = s.interpolate_bdm(&m, |p| [p[1], -p[0]]);
        let xl: Vec<f64> = s.element_velocity_dofs(&m, 0).iter().map(|&i| x[i]).collect();
        let val: f64 = (0..xl.len()).map(|j| b[(0, j)] * xl[j]).sum();
        assert!(val.abs() < 1e-13);
    }

    #[test]
    fn weighted_mass_values() {
        let r = 2f64.sqrt();
        let m = Mesh::from_elements(
            vec![[0.0, 0.0], [r, 0.0], [0.0, r]],
            vec![Element {
                vertices: [0, 1, 2],
                region: Region::Solid,
            }],
        )
        .unwrap();
        let s = SpaceSet::build(&m, 1).unwrap();
        let x = s.interpolate_bdm(&m, |_| [1.0, 1.0]);
        let xl: Vec<f64> = s.element_velocity_dofs(&m, 0).iter().map(|&i| x[i]).collect();
        let mm = local_velocity_mass(&m, &s, 0);
        let q: f64 = (0..3 * 2).map(|i| (0..6).map(|j| xl[i] * mm[(i, j)] * xl[j]).sum::<f64>()).sum();
        assert!((q - 2.0).abs() < 1e-13);
        // gamma = 2 / (dt lambda) with dt = 0.1, lambda = 10
        let gamma = 2.0 / (0.1 * 10.0);
        let pm = local_pressure_mass(&m, &s, 0);
        assert!((gamma * pm[(0, 0)] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn gamma_block_vanishes_on_fluid() {
        let m = Mesh::structured(&Geometry::manufactured(), 2).unwrap();
        let s = SpaceSet::build(&m, 2).unwrap();
        let ops = Operators::assemble(&m, &s, &MaterialParams::default()).unwrap();
        for e in 0..m.num_elements() {
            if m.elements[e].region == Region::Fluid {
                for &i in &s.element_pressure_dofs(e) {
                    assert!(ops.pressure_mass_solid.row(i).all(|(_, v)| v == 0.0));
                }
            }
        }
    }

    fn equilateral_pair() -> Mesh {
        let h = 3f64.sqrt() / 2.0;
        Mesh::from_elements(
            vec![[0.0, 0.0], [1.0, 0.0], [0.5, h], [0.5, -h]],
            vec![
                Element {
                    vertices: [0, 1, 2],
                    region: Region::Fluid,
                },
                Element {
                    vertices: [0, 3, 1],
                    region: Region::Fluid,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn pressure_jump_two_elements() {
        let m = equilateral_pair();
        let dt = 2.0;
        let n = pressure_jump_matrix(&m, &MaterialParams::default(), &[0.0, 0.0], dt / 2.0, &[]);
        let d = n.to_dense();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]);
        assert!((d - want).norm() < 1e-13);
        assert!(n.mul_vec(&[1.0, 1.0]).iter().all(|v| v.abs() < 1e-14));
        let g = pressure_jump_matrix(&m, &MaterialParams::default(), &[0.0, 3.0], dt / 2.0, &[]);
        assert!((g.get(1, 1) - 2.0 - 3.0 * m.area(1)).abs() < 1e-13);
    }

    #[test]
    fn auxiliary_matrix_single_element_is_p1_mass() {
        let m = unit_right_triangle();
        let a = auxiliary_cg_matrix(&m, &[2.0 / 2.0], &[0.0], &[false; 6]);
        let area = 0.5;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { area / 6.0 } else { area / 12.0 };
                for c in 0..2 {
                    assert!((a.get(2 * i + c, 2 * j + c) - want).abs() < 1e-15);
                    assert_eq!(a.get(2 * i + c, 2 * j + 1 - c), 0.0);
                }
            }
        }
    }

    #[test]
    fn auxiliary_matrix_is_symmetric_positive_definite() {
        let mut m = Mesh::structured(&Geometry::manufactured(), 4).unwrap();
        m.classify_boundary(&crate::mesh::BoundarySpec::by_region()).unwrap();
        let bcs = BcTable::walls(&["fluid_exterior", "solid_exterior"]);
        let mask = cg_constraint_mask(&m, &bcs).unwrap();
        let ne = m.num_elements();
        let a = auxiliary_cg_matrix(&m, &vec![20.0; ne], &vec![0.7; ne], &mask);
        assert_eq!(a.symmetry_defect(), 0.0);
        let eig = a.to_dense().symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn transfer_matches_facet_moments() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let m = Mesh::structured(&Geometry::unit_square(), 1).unwrap();
        for k in 1..=3 {
            let s = SpaceSet::build(&m, k).unwrap();
            let nskel = s.n_normal() + s.n_hat();
            let p = transfer_matrix(&m, &s, &vec![false; nskel], &[false; 8]);
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = p.mul_vec(&x);
            // the CG field on facet f, evaluated by linear interpolation of vertex values
            let cg = |f: usize, s_: f64| {
                let [a, b] = m.facets[f].vertices;
                [
                    (1.0 - s_) * x[2 * a] + s_ * x[2 * b],
                    (1.0 - s_) * x[2 * a + 1] + s_ * x[2 * b + 1],
                ]
            };
            let lr = LineRule::gauss(12);
            for f in 0..m.num_facets() {
                let n = m.facet_normal(f);
                let t = m.facet_tangent(f);
                for mm in 0..=k {
                    let want: f64 = lr
                        .points
                        .iter()
                        .zip(&lr.weights)
                        .map(|(&q, &w)| {
                            let u = cg(f, q);
                            w * (u[0] * n[0] + u[1] * n[1]) * crate::spaces::shifted_legendre(mm, q)
                        })
                        .sum();
                    assert!((y[s.normal_dof(f, mm)] - want).abs() < 1e-12);
                }
                for mm in 0..k {
                    let want: f64 = lr
                        .points
                        .iter()
                        .zip(&lr.weights)
                        .map(|(&q, &w)| {
                            let u = cg(f, q);
                            (2 * mm + 1) as f64 * w * (u[0] * t[0] + u[1] * t[1]) * crate::spaces::shifted_legendre(mm, q)
                        })
                        .sum();
                    assert!((y[s.n_normal() + f * k + mm] - want).abs() < 1e-12);
                }
            }
            assert!(p.mul_vec(&[0.0; 8]).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn transfer_of_linear_field_equals_interpolant_moments() {
        let m = Mesh::structured(&Geometry::unit_square(), 3).unwrap();
        let s = SpaceSet::build(&m, 2).unwrap();
        let field = |p: Point| [0.2 + p[0] - 3.0 * p[1], 1.0 - 0.5 * p[0] + p[1]];
        let x: Vec<f64> = m.vertices.iter().flat_map(|&v| field(v)).collect();
        let nskel = s.n_normal() + s.n_hat();
        let p = transfer_matrix(&m, &s, &vec![false; nskel], &vec![false; x.len()]);
        let y = p.mul_vec(&x);
        let full = s.interpolate_compound(&m, field);
        for (i, &d) in skeleton_dofs(&s).iter().enumerate() {
            assert!((y[i] - full[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn inlet_pressure_values() {
        assert!((inlet_pressure(0.015, 1.333e4, 0.03) - 1.333e4).abs() < 1e-9);
        assert_eq!(inlet_pressure(0.031, 1.333e4, 0.03), 0.0);
        assert_eq!(inlet_pressure(0.0, 1.333e4, 0.03), 0.0);
    }

    #[test]
    fn traction_load_against_element_quadrature() {
        // <g, v> on a facet computed with the element basis trace.
        let m = Mesh::structured(&Geometry::manufactured(), 2).unwrap();
        let s = SpaceSet::build(&m, 2).unwrap();
        let f = m.facets_of_kind(&FacetKind::Interface)[0];
        let g = |_: usize, p: Point| [p[0] * p[0] + 1.0, p[0] - 2.0];
        let load = facet_traction_load(&m, &s, &[f], g);
        let e = m.facets[f].elements.0;
        let dofs = s.element_velocity_dofs(&m, e);
        let n = m.facet_normal(f);
        let lr = LineRule::gauss(10);
        for (j, &d) in dofs.iter().enumerate() {
            let want: f64 = lr
                .points
                .iter()
                .zip(&lr.weights)
                .map(|(&q, &w)| {
                    let p = m.facet_point(f, q);
                    let v = s.velocity[e].eval_values(p)[j];
                    let gv = g(f, p);
                    w * m.facet_length(f) * (gv[0] * n[0] + gv[1] * n[1]) * (v[0] * n[0] + v[1] * n[1])
                })
                .sum();
            assert!((load[d] - want).abs() < 1e-12, "dof {j}");
        }
    }
}
