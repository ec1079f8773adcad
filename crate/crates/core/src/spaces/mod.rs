//! Discrete spaces: the degree-`k` H(div) velocity space, the degree-`k-1`
//! tangential facet space, discontinuous degree-`k-1` pressures and the
//! continuous piecewise-linear auxiliary space.
//!
//! Velocity DOFs are facet-normal moments against shifted Legendre
//! polynomials (taken with the global facet normal, so shared facets give a
//! single-valued normal trace) plus interior moments against a Nedelec
//! first-kind space of degree `k-1`. Each element stores its nodal basis as
//! coefficients over scaled monomials `((x - c)/h)^a ((y - c)/h)^b`.
//!
//! Global layout of a compound velocity vector:
//! `[normal moments | interior moments | tangential facet moments]`.

pub mod quadrature;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::{FacetKind, Mesh, Point, Region};
pub use quadrature::{shifted_legendre, shifted_legendre_all, LineRule, QuadratureRule};

pub type Vector2 = [f64; 2];
/// `grad[c][d] = d v_c / d x_d`.
pub type Grad2 = [[f64; 2]; 2];

/// Exponent pairs of all monomials of total degree `<= deg`, ordered by degree.
pub fn monomial_exponents(deg: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for d in 0..=deg {
        for b in 0..=d {
            out.push((d - b, b));
        }
    }
    out
}

fn powers(x: f64, n: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    for i in 1..=n {
        p.push(p[i - 1] * x);
    }
    p
}

/// Scaled monomial values and gradients (with respect to physical coordinates).
fn monomials(exps: &[(usize, usize)], deg: usize, center: Point, h: f64, p: Point) -> (Vec<f64>, Vec<[f64; 2]>) {
    let xi = (p[0] - center[0]) / h;
    let eta = (p[1] - center[1]) / h;
    let px = powers(xi, deg);
    let py = powers(eta, deg);
    let mut val = Vec::with_capacity(exps.len());
    let mut grad = Vec::with_capacity(exps.len());
    for &(a, b) in exps {
        val.push(px[a] * py[b]);
        let gx = if a > 0 { a as f64 * px[a - 1] * py[b] / h } else { 0.0 };
        let gy = if b > 0 { b as f64 * px[a] * py[b - 1] / h } else { 0.0 };
        grad.push([gx, gy]);
    }
    (val, grad)
}

/// Physical quadrature points and weights on element `e`.
pub fn element_quadrature(mesh: &Mesh, e: usize, rule: &QuadratureRule) -> Vec<(Point, f64)> {
    let [a, b, c] = mesh.element_points(e);
    let jac = 2.0 * mesh.area(e);
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(r, w)| {
            (
                [
                    a[0] + r[0] * (b[0] - a[0]) + r[1] * (c[0] - a[0]),
                    a[1] + r[0] * (b[1] - a[1]) + r[1] * (c[1] - a[1]),
                ],
                w * jac,
            )
        })
        .collect()
}

/// Nodal H(div) basis of one element.
#[derive(Clone, Debug)]
pub struct ElementBasis {
    pub center: Point,
    pub h: f64,
    degree: usize,
    exps: Vec<(usize, usize)>,
    /// Column `j` holds the monomial coefficients of basis function `j`
    /// (first component block, then second).
    coeffs: DMatrix<f64>,
}

impl ElementBasis {
    pub fn dim(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Values and gradients of all basis functions at `p`.
    pub fn eval(&self, p: Point) -> (Vec<Vector2>, Vec<Grad2>) {
        let (mv, mg) = monomials(&self.exps, self.degree, self.center, self.h, p);
        let np = self.exps.len();
        let nb = self.dim();
        let mut vals = vec![[0.0; 2]; nb];
        let mut grads = vec![[[0.0; 2]; 2]; nb];
        for j in 0..nb {
            let col = self.coeffs.column(j);
            let mut v = [0.0; 2];
            let mut g = [[0.0; 2]; 2];
            for a in 0..np {
                let c0 = col[a];
                let c1 = col[np + a];
                v[0] += c0 * mv[a];
                v[1] += c1 * mv[a];
                g[0][0] += c0 * mg[a][0];
                g[0][1] += c0 * mg[a][1];
                g[1][0] += c1 * mg[a][0];
                g[1][1] += c1 * mg[a][1];
            }
            vals[j] = v;
            grads[j] = g;
        }
        (vals, grads)
    }

    pub fn eval_values(&self, p: Point) -> Vec<Vector2> {
        self.eval(p).0
    }
}

/// L2-orthogonal scalar basis of degree `k-1` with `(psi_i, psi_j)_K = |K| delta_ij`
/// and `psi_0 = 1`.
#[derive(Clone, Debug)]
pub struct PressureBasis {
    pub center: Point,
    pub h: f64,
    degree: usize,
    exps: Vec<(usize, usize)>,
    coeffs: DMatrix<f64>,
}

impl PressureBasis {
    pub fn dim(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn eval(&self, p: Point) -> Vec<f64> {
        let (mv, _) = monomials(&self.exps, self.degree, self.center, self.h, p);
        (0..self.dim())
            .map(|j| self.coeffs.column(j).iter().zip(&mv).map(|(c, m)| c * m).sum())
            .collect()
    }
}

/// Which part of a facet trace a boundary condition fixes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    /// Homogeneous essential condition.
    Essential,
    /// Natural condition (traction data enters through loads).
    Natural,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FacetBc {
    pub normal: Constraint,
    pub tangential: Constraint,
}

impl FacetBc {
    pub const WALL: FacetBc = FacetBc {
        normal: Constraint::Essential,
        tangential: Constraint::Essential,
    };
}

/// Boundary-condition row per boundary tag.
#[derive(Clone, Debug, Default)]
pub struct BcTable {
    pub rows: Vec<(String, FacetBc)>,
}

impl BcTable {
    pub fn get(&self, tag: &str) -> Option<FacetBc> {
        self.rows.iter().find(|(t, _)| t == tag).map(|(_, b)| *b)
    }

    /// Essential conditions on every listed tag.
    pub fn walls(tags: &[&str]) -> Self {
        Self {
            rows: tags.iter().map(|t| (t.to_string(), FacetBc::WALL)).collect(),
        }
    }

    /// Pressure-pulse channel conditions.
    pub fn channel() -> Self {
        use Constraint::*;
        let row = |t: &str, n, tg| (t.to_string(), FacetBc { normal: n, tangential: tg });
        Self {
            rows: vec![
                row("inlet", Natural, Essential),
                row("outlet", Natural, Essential),
                row("fluid_bottom", Essential, Natural),
                row("solid_inout", Essential, Essential),
                row("solid_top", Natural, Essential),
            ],
        }
    }

    /// Errors unless every boundary tag of the mesh has a row.
    pub fn check_covers(&self, mesh: &Mesh) -> Result<()> {
        let missing: Vec<&String> = mesh.boundary_tags.iter().filter(|t| self.get(t).is_none()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("no boundary condition for tags {missing:?}")))
        }
    }
}

/// All discrete spaces on one mesh.
#[derive(Clone, Debug)]
pub struct SpaceSet {
    pub k: usize,
    pub n_facets: usize,
    pub n_elements: usize,
    pub n_vertices: usize,
    pub velocity: Vec<ElementBasis>,
    pub pressure: Vec<PressureBasis>,
    pub volume_rule: QuadratureRule,
    pub facet_rule: LineRule,
    /// Rules used for interpolation and error measurement.
    pub fine_volume_rule: QuadratureRule,
    pub fine_facet_rule: LineRule,
}

impl SpaceSet {
    pub fn build(mesh: &Mesh, k: usize) -> Result<Self> {
        if !(1..=4).contains(&k) {
            return Err(Error::Config(format!("polynomial degree k = {k} not in 1..=4")));
        }
        let fine_volume_rule = QuadratureRule::triangle(2 * k + 16);
        let fine_facet_rule = LineRule::gauss(2 * k + 16);
        let mut velocity = Vec::with_capacity(mesh.num_elements());
        let mut pressure = Vec::with_capacity(mesh.num_elements());
        for e in 0..mesh.num_elements() {
            velocity.push(build_velocity_basis(mesh, e, k, &fine_volume_rule, &fine_facet_rule)?);
            pressure.push(build_pressure_basis(mesh, e, k, &fine_volume_rule)?);
        }
        Ok(Self {
            k,
            n_facets: mesh.num_facets(),
            n_elements: mesh.num_elements(),
            n_vertices: mesh.num_vertices(),
            velocity,
            pressure,
            volume_rule: QuadratureRule::triangle(2 * k + 2),
            facet_rule: LineRule::gauss(2 * k + 1),
            fine_volume_rule,
            fine_facet_rule,
        })
    }

    /// Normal moments per facet.
    pub fn normal_per_facet(&self) -> usize {
        self.k + 1
    }

    pub fn interior_per_element(&self) -> usize {
        self.k * self.k - 1
    }

    pub fn pressure_per_element(&self) -> usize {
        self.k * (self.k + 1) / 2
    }

    pub fn n_normal(&self) -> usize {
        self.n_facets * (self.k + 1)
    }

    pub fn n_interior(&self) -> usize {
        self.n_elements * self.interior_per_element()
    }

    /// Dimension of the H(div) space.
    pub fn n_v(&self) -> usize {
        self.n_normal() + self.n_interior()
    }

    /// Dimension of the tangential facet space.
    pub fn n_hat(&self) -> usize {
        self.n_facets * self.k
    }

    /// Dimension of the compound velocity space.
    pub fn n_u(&self) -> usize {
        self.n_v() + self.n_hat()
    }

    pub fn n_p(&self) -> usize {
        self.n_elements * self.pressure_per_element()
    }

    pub fn normal_dof(&self, f: usize, m: usize) -> usize {
        f * (self.k + 1) + m
    }

    pub fn interior_dof(&self, e: usize, i: usize) -> usize {
        self.n_normal() + e * self.interior_per_element() + i
    }

    pub fn hat_dof(&self, f: usize, m: usize) -> usize {
        self.n_v() + f * self.k + m
    }

    pub fn pressure_dof(&self, e: usize, i: usize) -> usize {
        e * self.pressure_per_element() + i
    }

    /// Global indices of the local velocity basis of element `e`.
    pub fn element_velocity_dofs(&self, mesh: &Mesh, e: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.velocity[e].dim());
        for &f in &mesh.element_facets[e] {
            for m in 0..=self.k {
                out.push(self.normal_dof(f, m));
            }
        }
        for i in 0..self.interior_per_element() {
            out.push(self.interior_dof(e, i));
        }
        out
    }

    /// Global indices of the tangential facet DOFs on the three facets of `e`.
    pub fn element_hat_dofs(&self, mesh: &Mesh, e: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(3 * self.k);
        for &f in &mesh.element_facets[e] {
            for m in 0..self.k {
                out.push(self.hat_dof(f, m));
            }
        }
        out
    }

    pub fn element_pressure_dofs(&self, e: usize) -> Vec<usize> {
        (0..self.pressure_per_element()).map(|i| self.pressure_dof(e, i)).collect()
    }

    /// Mask over the compound velocity space marking DOFs fixed by essential
    /// boundary conditions.
    pub fn constrained_mask(&self, mesh: &Mesh, bcs: &BcTable) -> Result<Vec<bool>> {
        bcs.check_covers(mesh)?;
        let mut mask = vec![false; self.n_u()];
        for (f, facet) in mesh.facets.iter().enumerate() {
            if let FacetKind::Boundary(t) = facet.kind {
                let bc = bcs.get(&mesh.boundary_tags[t]).expect("checked above");
                if bc.normal == Constraint::Essential {
                    for m in 0..=self.k {
                        mask[self.normal_dof(f, m)] = true;
                    }
                }
                if bc.tangential == Constraint::Essential {
                    for m in 0..self.k {
                        mask[self.hat_dof(f, m)] = true;
                    }
                }
            }
        }
        Ok(mask)
    }

    /// Mask of compound velocity DOFs that carry a solid displacement: DOFs
    /// on facets touching a solid element and interior DOFs of solid elements.
    pub fn region_mask(&self, mesh: &Mesh, region: Region) -> Vec<bool> {
        let mut mask = vec![false; self.n_u()];
        for f in 0..mesh.num_facets() {
            if mesh.facet_touches(f, region) {
                for m in 0..=self.k {
                    mask[self.normal_dof(f, m)] = true;
                }
                for m in 0..self.k {
                    mask[self.hat_dof(f, m)] = true;
                }
            }
        }
        for e in 0..mesh.num_elements() {
            if mesh.elements[e].region == region {
                for i in 0..self.interior_per_element() {
                    mask[self.interior_dof(e, i)] = true;
                }
            }
        }
        mask
    }

    /// Velocity of a compound vector at point `p` inside element `e`.
    pub fn eval_velocity(&self, mesh: &Mesh, coeffs: &[f64], e: usize, p: Point) -> Vector2 {
        let dofs = self.element_velocity_dofs(mesh, e);
        let vals = self.velocity[e].eval_values(p);
        let mut u = [0.0; 2];
        for (j, &d) in dofs.iter().enumerate() {
            u[0] += coeffs[d] * vals[j][0];
            u[1] += coeffs[d] * vals[j][1];
        }
        u
    }

    /// Velocity gradient of a compound vector at `p` inside element `e`.
    pub fn eval_velocity_grad(&self, mesh: &Mesh, coeffs: &[f64], e: usize, p: Point) -> Grad2 {
        let dofs = self.element_velocity_dofs(mesh, e);
        let (_, grads) = self.velocity[e].eval(p);
        let mut g = [[0.0; 2]; 2];
        for (j, &d) in dofs.iter().enumerate() {
            for (r, gr) in g.iter_mut().enumerate() {
                gr[0] += coeffs[d] * grads[j][r][0];
                gr[1] += coeffs[d] * grads[j][r][1];
            }
        }
        g
    }

    pub fn eval_pressure(&self, coeffs: &[f64], e: usize, p: Point) -> f64 {
        let vals = self.pressure[e].eval(p);
        vals.iter().enumerate().map(|(i, v)| coeffs[self.pressure_dof(e, i)] * v).sum()
    }

    /// Tangential facet function (scalar along the facet tangent) at parameter `s`.
    pub fn eval_hat(&self, coeffs: &[f64], f: usize, s: f64) -> f64 {
        let l = shifted_legendre_all(self.k, s);
        (0..self.k).map(|m| coeffs[self.hat_dof(f, m)] * l[m]).sum()
    }

    /// Canonical interpolant of a vector field into the H(div) space; the
    /// tangential facet part of the returned compound vector is zero.
    pub fn interpolate_bdm(&self, mesh: &Mesh, field: impl Fn(Point) -> Vector2) -> Vec<f64> {
        let mut out = vec![0.0; self.n_u()];
        let lr = &self.fine_facet_rule;
        for f in 0..mesh.num_facets() {
            let n = mesh.facet_normal(f);
            for (&s, &w) in lr.points.iter().zip(&lr.weights) {
                let v = field(mesh.facet_point(f, s));
                let vn = v[0] * n[0] + v[1] * n[1];
                let l = shifted_legendre_all(self.k, s);
                for (m, lm) in l.iter().enumerate() {
                    out[self.normal_dof(f, m)] += w * vn * lm;
                }
            }
        }
        let ni = self.interior_per_element();
        if ni > 0 {
            for e in 0..mesh.num_elements() {
                let area = mesh.area(e);
                let basis = &self.velocity[e];
                let tests = interior_tests(self.k);
                for (p, w) in element_quadrature(mesh, e, &self.fine_volume_rule) {
                    let v = field(p);
                    let (mv, _) = monomials(&tests.1, self.k.saturating_sub(2), basis.center, basis.h, p);
                    for (i, q) in interior_test_values(&tests, &mv, basis.center, basis.h, p).iter().enumerate() {
                        out[self.interior_dof(e, i)] += w * (v[0] * q[0] + v[1] * q[1]) / area;
                    }
                }
            }
        }
        out
    }

    /// `L2` projection of the tangential component of a trace onto the
    /// tangential facet space; fills only the tangential block.
    pub fn project_facet_tangential(&self, mesh: &Mesh, trace: impl Fn(usize, Point) -> Vector2) -> Vec<f64> {
        let mut out = vec![0.0; self.n_u()];
        let lr = &self.fine_facet_rule;
        for f in 0..mesh.num_facets() {
            let t = mesh.facet_tangent(f);
            for (&s, &w) in lr.points.iter().zip(&lr.weights) {
                let v = trace(f, mesh.facet_point(f, s));
                let vt = v[0] * t[0] + v[1] * t[1];
                let l = shifted_legendre_all(self.k, s);
                for m in 0..self.k {
                    out[self.hat_dof(f, m)] += (2 * m + 1) as f64 * w * vt * l[m];
                }
            }
        }
        out
    }

    /// Elementwise `L2` projection onto the discontinuous pressure space.
    pub fn project_pressure(&self, mesh: &Mesh, field: impl Fn(Point) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_p()];
        for e in 0..mesh.num_elements() {
            let area = mesh.area(e);
            for (p, w) in element_quadrature(mesh, e, &self.fine_volume_rule) {
                let v = field(p);
                for (i, psi) in self.pressure[e].eval(p).iter().enumerate() {
                    out[self.pressure_dof(e, i)] += w * v * psi / area;
                }
            }
        }
        out
    }

    /// Compound interpolant: canonical H(div) interpolant plus the tangential
    /// projection of the same field's trace.
    pub fn interpolate_compound(&self, mesh: &Mesh, field: impl Fn(Point) -> Vector2) -> Vec<f64> {
        let mut out = self.interpolate_bdm(mesh, &field);
        let hat = self.project_facet_tangential(mesh, |_, p| field(p));
        for i in self.n_v()..self.n_u() {
            out[i] = hat[i];
        }
        out
    }

    /// Elementwise divergence of the velocity at `p` in element `e`.
    pub fn eval_divergence(&self, mesh: &Mesh, coeffs: &[f64], e: usize, p: Point) -> f64 {
        let g = self.eval_velocity_grad(mesh, coeffs, e, p);
        g[0][0] + g[1][1]
    }
}

/// Interior test space: `[P^{k-2}]^2` plus `x^perp` times homogeneous
/// degree-`k-2` monomials. Returns `(count, exponents of P^{k-2})`.
fn interior_tests(k: usize) -> (usize, Vec<(usize, usize)>) {
    if k < 2 {
        return (0, Vec::new());
    }
    (k * k - 1, monomial_exponents(k - 2))
}

fn interior_test_values(
    tests: &(usize, Vec<(usize, usize)>),
    mv: &[f64],
    center: Point,
    h: f64,
    p: Point,
) -> Vec<Vector2> {
    let (count, exps) = tests;
    if *count == 0 {
        return Vec::new();
    }
    let deg = exps.last().map_or(0, |&(a, b)| a + b);
    let xi = (p[0] - center[0]) / h;
    let eta = (p[1] - center[1]) / h;
    let mut out = Vec::with_capacity(*count);
    for &m in mv {
        out.push([m, 0.0]);
    }
    for &m in mv {
        out.push([0.0, m]);
    }
    for (i, &(a, b)) in exps.iter().enumerate() {
        if a + b == deg {
            out.push([-eta * mv[i], xi * mv[i]]);
        }
    }
    debug_assert_eq!(out.len(), *count);
    out
}

fn build_velocity_basis(mesh: &Mesh, e: usize, k: usize, vrule: &QuadratureRule, frule: &LineRule) -> Result<ElementBasis> {
    let center = mesh.centroid(e);
    let h = mesh.diameter(e);
    let exps = monomial_exponents(k);
    let np = exps.len();
    let nb = 2 * np;
    // D[i][j] = functional i applied to vector monomial j.
    let mut d = DMatrix::<f64>::zeros(nb, nb);
    let mut row = 0;
    for &f in &mesh.element_facets[e] {
        let n = mesh.facet_normal(f);
        for (&s, &w) in frule.points.iter().zip(&frule.weights) {
            let p = mesh.facet_point(f, s);
            let (mv, _) = monomials(&exps, k, center, h, p);
            let l = shifted_legendre_all(k, s);
            for m in 0..=k {
                for a in 0..np {
                    d[(row + m, a)] += w * mv[a] * n[0] * l[m];
                    d[(row + m, np + a)] += w * mv[a] * n[1] * l[m];
                }
            }
        }
        row += k + 1;
    }
    let tests = interior_tests(k);
    if tests.0 > 0 {
        let area = mesh.area(e);
        for (p, w) in element_quadrature(mesh, e, vrule) {
            let (mv, _) = monomials(&exps, k, center, h, p);
            let (tv, _) = monomials(&tests.1, k - 2, center, h, p);
            for (i, q) in interior_test_values(&tests, &tv, center, h, p).iter().enumerate() {
                for a in 0..np {
                    d[(row + i, a)] += w * mv[a] * q[0] / area;
                    d[(row + i, np + a)] += w * mv[a] * q[1] / area;
                }
            }
        }
        row += tests.0;
    }
    debug_assert_eq!(row, nb);
    let coeffs = d
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Geometry(format!("velocity DOFs not unisolvent on element {e}")))?;
    Ok(ElementBasis {
        center,
        h,
        degree: k,
        exps,
        coeffs,
    })
}

fn build_pressure_basis(mesh: &Mesh, e: usize, k: usize, rule: &QuadratureRule) -> Result<PressureBasis> {
    let center = mesh.centroid(e);
    let h = mesh.diameter(e);
    let deg = k - 1;
    let exps = monomial_exponents(deg);
    let n = exps.len();
    let area = mesh.area(e);
    // Gram matrix of scaled monomials, then Gram-Schmidt in that inner product.
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for (p, w) in element_quadrature(mesh, e, rule) {
        let (mv, _) = monomials(&exps, deg, center, h, p);
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] += w * mv[i] * mv[j] / area;
            }
        }
    }
    let mut coeffs = DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        for _ in 0..2 {
            for i in 0..j {
                let ci = coeffs.column(i).clone_owned();
                let cj = coeffs.column(j).clone_owned();
                let proj = (ci.transpose() * &gram * &cj)[(0, 0)];
                let new = cj - ci * proj;
                coeffs.set_column(j, &new);
            }
        }
        let cj = coeffs.column(j).clone_owned();
        let norm2 = (cj.transpose() * &gram * &cj)[(0, 0)];
        if norm2 <= 1e-24 {
            return Err(Error::Geometry(format!("pressure basis degenerate on element {e}")));
        }
        coeffs.set_column(j, &(cj / norm2.sqrt()));
    }
    Ok(PressureBasis {
        center,
        h,
        degree: deg,
        exps,
        coeffs,
    })
}
