//! Interface-fitted triangulations of two stacked rectangles.
//!
//! Every facet carries a global orientation: its vertices are stored in
//! ascending index order, the unit tangent points from the first to the
//! second vertex and the unit normal is the tangent rotated clockwise.
//! Each element records, per local facet, whether that global normal points
//! outward (`+1`) or inward (`-1`).

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Fluid,
    Solid,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FacetKind {
    InteriorFluid,
    InteriorSolid,
    Interface,
    /// Exterior facet; the index points into [`Mesh::boundary_tags`].
    Boundary(usize),
}

#[derive(Clone, Debug)]
pub struct Element {
    pub vertices: [usize; 3],
    pub region: Region,
}

#[derive(Clone, Debug)]
pub struct Facet {
    /// Ascending vertex indices.
    pub vertices: [usize; 2],
    pub kind: FacetKind,
    /// Adjacent elements; the second is `None` on the exterior boundary.
    pub elements: (usize, Option<usize>),
}

/// Axis-aligned rectangle `(x0, x1) x (y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn contains(&self, p: Point) -> bool {
        p[0] > self.x0 && p[0] < self.x1 && p[1] > self.y0 && p[1] < self.y1
    }
}

/// Fluid rectangle plus an optional solid rectangle sharing one full edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub fluid: Rect,
    pub solid: Option<Rect>,
}

impl Geometry {
    pub fn unit_square() -> Self {
        Self {
            fluid: Rect::new(0.0, 1.0, 0.0, 1.0),
            solid: None,
        }
    }

    /// Fluid `(0,1)x(-1,0)` below solid `(0,1)x(0,0.5)`.
    pub fn manufactured() -> Self {
        Self {
            fluid: Rect::new(0.0, 1.0, -1.0, 0.0),
            solid: Some(Rect::new(0.0, 1.0, 0.0, 0.5)),
        }
    }

    /// Channel `(0,6)x(0,0.5)` with a wall `(0,6)x(0.5,0.6)` on top.
    pub fn channel() -> Self {
        Self {
            fluid: Rect::new(0.0, 6.0, 0.0, 0.5),
            solid: Some(Rect::new(0.0, 6.0, 0.5, 0.6)),
        }
    }

    pub fn area(&self) -> f64 {
        self.fluid.area() + self.solid.map_or(0.0, |s| s.area())
    }

    /// Bounding rectangle of the union; errors unless the two rectangles
    /// share one complete edge.
    pub fn union(&self) -> Result<Rect> {
        let f = self.fluid;
        if f.x1 <= f.x0 || f.y1 <= f.y0 {
            return Err(Error::Geometry(format!("degenerate fluid rectangle {f:?}")));
        }
        let Some(s) = self.solid else { return Ok(f) };
        if s.x1 <= s.x0 || s.y1 <= s.y0 {
            return Err(Error::Geometry(format!("degenerate solid rectangle {s:?}")));
        }
        let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        if same(f.x0, s.x0) && same(f.x1, s.x1) {
            if same(f.y1, s.y0) {
                return Ok(Rect::new(f.x0, f.x1, f.y0, s.y1));
            }
            if same(s.y1, f.y0) {
                return Ok(Rect::new(f.x0, f.x1, s.y0, f.y1));
            }
        }
        if same(f.y0, s.y0) && same(f.y1, s.y1) {
            if same(f.x1, s.x0) {
                return Ok(Rect::new(f.x0, s.x1, f.y0, f.y1));
            }
            if same(s.x1, f.x0) {
                return Ok(Rect::new(s.x0, f.x1, f.y0, f.y1));
            }
        }
        Err(Error::Geometry(format!(
            "rectangles {f:?} and {s:?} do not share a complete edge"
        )))
    }
}

/// Geometric data a boundary predicate may inspect.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryFacetInfo {
    pub midpoint: Point,
    pub endpoints: [Point; 2],
    pub region: Region,
}

pub type BoundaryPredicate = Box<dyn Fn(&BoundaryFacetInfo) -> bool + Send + Sync>;

/// Named boundary segments; the predicates must partition the exterior facets.
pub struct BoundarySpec {
    pub segments: Vec<(String, BoundaryPredicate)>,
}

impl BoundarySpec {
    pub fn new() -> Self {
        Self {
            segments: Vec::new(),
        }
    }

    pub fn with(mut self, name: &str, pred: impl Fn(&BoundaryFacetInfo) -> bool + Send + Sync + 'static) -> Self {
        self.segments.push((name.to_string(), Box::new(pred)));
        self
    }

    /// `fluid_exterior` / `solid_exterior`, split by the adjacent region.
    pub fn by_region() -> Self {
        Self::new()
            .with("fluid_exterior", |f| f.region == Region::Fluid)
            .with("solid_exterior", |f| f.region == Region::Solid)
    }

    /// Segments of the pressure-pulse channel.
    pub fn channel() -> Self {
        let eps = 1e-9;
        Self::new()
            .with("inlet", move |f| f.midpoint[0].abs() < eps && f.region == Region::Fluid)
            .with("outlet", move |f| (f.midpoint[0] - 6.0).abs() < eps && f.region == Region::Fluid)
            .with("fluid_bottom", move |f| f.midpoint[1].abs() < eps)
            .with("solid_inout", move |f| {
                f.region == Region::Solid && (f.midpoint[0].abs() < eps || (f.midpoint[0] - 6.0).abs() < eps)
            })
            .with("solid_top", move |f| (f.midpoint[1] - 0.6).abs() < eps)
    }
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub elements: Vec<Element>,
    pub facets: Vec<Facet>,
    /// Local facet `l` of an element is opposite its local vertex `l`.
    pub element_facets: Vec<[usize; 3]>,
    /// `+1` when the global facet normal is the element's outward normal.
    pub element_signs: Vec<[f64; 3]>,
    pub boundary_tags: Vec<String>,
    pub h_max: f64,
}

impl Mesh {
    /// Builds the facet structure of a triangulation. Clockwise triangles are
    /// reoriented; degenerate ones are rejected.
    pub fn from_elements(vertices: Vec<Point>, elements: Vec<Element>) -> Result<Self> {
        let mut elements = elements;
        for (e, el) in elements.iter_mut().enumerate() {
            if el.vertices.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::Geometry(format!("element {e} references a missing vertex")));
            }
            let a = signed_area(&vertices, el.vertices);
            if a.abs() <= 1e-14 {
                return Err(Error::Geometry(format!("element {e} is degenerate")));
            }
            if a < 0.0 {
                el.vertices.swap(1, 2);
            }
        }

        let mut lookup: HashMap<[usize; 2], usize> = HashMap::new();
        let mut facets: Vec<Facet> = Vec::new();
        let mut element_facets = Vec::with_capacity(elements.len());
        for (e, el) in elements.iter().enumerate() {
            let mut local = [0usize; 3];
            for (l, slot) in local.iter_mut().enumerate() {
                let a = el.vertices[(l + 1) % 3];
                let b = el.vertices[(l + 2) % 3];
                let key = [a.min(b), a.max(b)];
                let f = match lookup.get(&key) {
                    Some(&f) => {
                        let facet = &mut facets[f];
                        if facet.elements.1.is_some() {
                            return Err(Error::Geometry(format!("facet {key:?} shared by more than two elements")));
                        }
                        facet.elements.1 = Some(e);
                        f
                    }
                    None => {
                        facets.push(Facet {
                            vertices: key,
                            kind: FacetKind::Boundary(0),
                            elements: (e, None),
                        });
                        lookup.insert(key, facets.len() - 1);
                        facets.len() - 1
                    }
                };
                *slot = f;
            }
            element_facets.push(local);
        }

        for facet in facets.iter_mut() {
            facet.kind = match facet.elements {
                (_, None) => FacetKind::Boundary(0),
                (a, Some(b)) => match (elements[a].region, elements[b].region) {
                    (Region::Fluid, Region::Fluid) => FacetKind::InteriorFluid,
                    (Region::Solid, Region::Solid) => FacetKind::InteriorSolid,
                    _ => FacetKind::Interface,
                },
            };
        }

        let mut mesh = Mesh {
            vertices,
            elements,
            facets,
            element_facets,
            element_signs: Vec::new(),
            boundary_tags: vec!["boundary".to_string()],
            h_max: 0.0,
        };
        mesh.element_signs = (0..mesh.elements.len())
            .map(|e| {
                let mut s = [0.0; 3];
                for (l, sl) in s.iter_mut().enumerate() {
                    let f = mesh.element_facets[e][l];
                    let n = mesh.facet_normal(f);
                    let m = mesh.facet_midpoint(f);
                    let opp = mesh.vertices[mesh.elements[e].vertices[l]];
                    *sl = if n[0] * (m[0] - opp[0]) + n[1] * (m[1] - opp[1]) > 0.0 { 1.0 } else { -1.0 };
                }
                s
            })
            .collect();
        mesh.h_max = (0..mesh.elements.len()).map(|e| mesh.diameter(e)).fold(0.0, f64::max);
        Ok(mesh)
    }

    /// Uniform triangulation with `n` cells per unit length; each square cell
    /// is cut along its lower-left to upper-right diagonal.
    pub fn structured(geometry: &Geometry, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Geometry("subdivision count must be at least 1".into()));
        }
        let bbox = geometry.union()?;
        let cells = |len: f64| -> Result<usize> {
            let c = len * n as f64;
            let r = c.round();
            if r < 1.0 || (c - r).abs() > 1e-8 {
                return Err(Error::Geometry(format!(
                    "extent {len} is not a multiple of the cell size 1/{n}"
                )));
            }
            Ok(r as usize)
        };
        for r in std::iter::once(geometry.fluid).chain(geometry.solid) {
            cells(r.x1 - r.x0)?;
            cells(r.y1 - r.y0)?;
        }
        let nx = cells(bbox.x1 - bbox.x0)?;
        let ny = cells(bbox.y1 - bbox.y0)?;
        let hx = (bbox.x1 - bbox.x0) / nx as f64;
        let hy = (bbox.y1 - bbox.y0) / ny as f64;

        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([bbox.x0 + i as f64 * hx, bbox.y0 + j as f64 * hy]);
            }
        }
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut elements = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let c = [bbox.x0 + (i as f64 + 0.5) * hx, bbox.y0 + (j as f64 + 0.5) * hy];
                let region = if geometry.fluid.contains(c) { Region::Fluid } else { Region::Solid };
                let (v00, v10, v01, v11) = (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
                elements.push(Element { vertices: [v00, v10, v11], region });
                elements.push(Element { vertices: [v00, v11, v01], region });
            }
        }
        Mesh::from_elements(vertices, elements)
    }

    /// Assigns a named tag to every exterior facet.
    pub fn classify_boundary(&mut self, spec: &BoundarySpec) -> Result<()> {
        let mut assignment = Vec::new();
        let mut untagged = Vec::new();
        let mut doubled = Vec::new();
        for (f, facet) in self.facets.iter().enumerate() {
            if facet.elements.1.is_some() {
                continue;
            }
            let [a, b] = facet.vertices;
            let info = BoundaryFacetInfo {
                midpoint: self.facet_midpoint(f),
                endpoints: [self.vertices[a], self.vertices[b]],
                region: self.elements[facet.elements.0].region,
            };
            let hits: Vec<usize> = spec
                .segments
                .iter()
                .enumerate()
                .filter(|(_, (_, pred))| pred(&info))
                .map(|(i, _)| i)
                .collect();
            match hits.len() {
                0 => untagged.push(f),
                1 => assignment.push((f, hits[0])),
                _ => doubled.push((f, hits)),
            }
        }
        if !untagged.is_empty() || !doubled.is_empty() {
            let mut msg = String::new();
            if !untagged.is_empty() {
                let _ = write!(msg, "untagged facets {:?}", untagged);
            }
            for (f, hits) in &doubled {
                let names: Vec<&str> = hits.iter().map(|&i| spec.segments[i].0.as_str()).collect();
                let _ = write!(msg, "; facet {f} matched by {names:?}");
            }
            return Err(Error::Classification(msg));
        }
        self.boundary_tags = spec.segments.iter().map(|(n, _)| n.clone()).collect();
        for (f, t) in assignment {
            self.facets[f].kind = FacetKind::Boundary(t);
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn tag_index(&self, name: &str) -> Option<usize> {
        self.boundary_tags.iter().position(|t| t == name)
    }

    pub fn facet_tag(&self, f: usize) -> Option<&str> {
        match self.facets[f].kind {
            FacetKind::Boundary(t) => Some(self.boundary_tags[t].as_str()),
            _ => None,
        }
    }

    pub fn element_points(&self, e: usize) -> [Point; 3] {
        let v = self.elements[e].vertices;
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]]
    }

    pub fn area(&self, e: usize) -> f64 {
        signed_area(&self.vertices, self.elements[e].vertices)
    }

    pub fn centroid(&self, e: usize) -> Point {
        let p = self.element_points(e);
        [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
    }

    /// Longest edge.
    pub fn diameter(&self, e: usize) -> f64 {
        self.element_facets[e]
            .iter()
            .map(|&f| self.facet_length(f))
            .fold(0.0, f64::max)
    }

    pub fn facet_points(&self, f: usize) -> [Point; 2] {
        let [a, b] = self.facets[f].vertices;
        [self.vertices[a], self.vertices[b]]
    }

    pub fn facet_length(&self, f: usize) -> f64 {
        let [a, b] = self.facet_points(f);
        (b[0] - a[0]).hypot(b[1] - a[1])
    }

    pub fn facet_midpoint(&self, f: usize) -> Point {
        let [a, b] = self.facet_points(f);
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// Unit tangent from the lower- to the higher-indexed vertex.
    pub fn facet_tangent(&self, f: usize) -> Point {
        let [a, b] = self.facet_points(f);
        let l = self.facet_length(f);
        [(b[0] - a[0]) / l, (b[1] - a[1]) / l]
    }

    /// Global unit normal: the tangent rotated clockwise.
    pub fn facet_normal(&self, f: usize) -> Point {
        let t = self.facet_tangent(f);
        [t[1], -t[0]]
    }

    /// Point on facet `f` at parameter `s` in `[0, 1]`.
    pub fn facet_point(&self, f: usize, s: f64) -> Point {
        let [a, b] = self.facet_points(f);
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    }

    pub fn outward_normal(&self, e: usize, local: usize) -> Point {
        let n = self.facet_normal(self.element_facets[e][local]);
        let s = self.element_signs[e][local];
        [s * n[0], s * n[1]]
    }

    /// Characteristic size of a facet: the largest adjacent element diameter.
    pub fn facet_h(&self, f: usize) -> f64 {
        let (a, b) = self.facets[f].elements;
        let ha = self.diameter(a);
        b.map_or(ha, |b| ha.max(self.diameter(b)))
    }

    pub fn facets_of_kind(&self, kind: &FacetKind) -> Vec<usize> {
        (0..self.facets.len()).filter(|&f| &self.facets[f].kind == kind).collect()
    }

    pub fn facets_with_tag(&self, name: &str) -> Vec<usize> {
        match self.tag_index(name) {
            Some(t) => self.facets_of_kind(&FacetKind::Boundary(t)),
            None => Vec::new(),
        }
    }

    /// Whether a facet touches a solid element (belongs to the solid skeleton).
    pub fn facet_touches(&self, f: usize, region: Region) -> bool {
        let (a, b) = self.facets[f].elements;
        self.elements[a].region == region || b.is_some_and(|b| self.elements[b].region == region)
    }

    /// Barycentric coordinates of `p` in element `e`.
    pub fn barycentric(&self, e: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.element_points(e);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// First element (lowest index) containing `p`, with an optional region filter.
    pub fn locate(&self, p: Point, region: Option<Region>) -> Option<usize> {
        let tol = 1e-10;
        (0..self.elements.len()).find(|&e| {
            region.is_none_or(|r| self.elements[e].region == r)
                && self.barycentric(e, p).iter().all(|&l| l >= -tol)
        })
    }

    /// Plain-text dump: a header line of counts, then `x y` per vertex,
    /// `v0 v1 v2 region` per element and `v0 v1 kind` per facet.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {}", self.vertices.len(), self.elements.len(), self.facets.len());
        for v in &self.vertices {
            let _ = writeln!(out, "{:.17e} {:.17e}", v[0], v[1]);
        }
        for el in &self.elements {
            let r = match el.region {
                Region::Fluid => "fluid",
                Region::Solid => "solid",
            };
            let _ = writeln!(out, "{} {} {} {}", el.vertices[0], el.vertices[1], el.vertices[2], r);
        }
        for f in &self.facets {
            let kind = match &f.kind {
                FacetKind::InteriorFluid => "interior_fluid".to_string(),
                FacetKind::InteriorSolid => "interior_solid".to_string(),
                FacetKind::Interface => "interface".to_string(),
                FacetKind::Boundary(t) => self.boundary_tags[*t].clone(),
            };
            let _ = writeln!(out, "{} {} {}", f.vertices[0], f.vertices[1], kind);
        }
        out
    }
}

fn signed_area(vertices: &[Point], v: [usize; 3]) -> f64 {
    let (a, b, c) = (vertices[v[0]], vertices[v[1]], vertices[v[2]]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}
