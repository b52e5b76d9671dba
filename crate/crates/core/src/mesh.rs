//! Conforming triangulations of polygonal planar domains.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Read;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    simplices: Vec<[usize; 3]>,
    boundary: Vec<bool>,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Mesh {
    /// Builds a mesh and checks every structural invariant: valid distinct
    /// indices, counterclockwise orientation, non-degeneracy and conformity.
    pub fn new(vertices: Vec<Point>, simplices: Vec<[usize; 3]>) -> Result<Self> {
        if simplices.is_empty() {
            return Err(Error::Validation("mesh has no simplices".into()));
        }
        let nv = vertices.len();
        for (k, v) in vertices.iter().enumerate() {
            if !(v[0].is_finite() && v[1].is_finite()) {
                return Err(Error::Validation(format!("vertex {k} has non-finite coordinates")));
            }
        }
        let mut used = vec![false; nv];
        for (j, s) in simplices.iter().enumerate() {
            for &k in s {
                if k >= nv {
                    return Err(Error::Validation(format!(
                        "simplex {j} references vertex {k}, but only {nv} vertices exist"
                    )));
                }
                used[k] = true;
            }
            if s[0] == s[1] || s[1] == s[2] || s[0] == s[2] {
                return Err(Error::Validation(format!("simplex {j} repeats a vertex: {s:?}")));
            }
        }
        if let Some(k) = used.iter().position(|u| !u) {
            return Err(Error::Validation(format!("vertex {k} is not used by any simplex")));
        }

        let areas: Vec<f64> = simplices
            .iter()
            .map(|s| signed_area(vertices[s[0]], vertices[s[1]], vertices[s[2]]))
            .collect();
        let mean_abs = areas.iter().map(|a| a.abs()).sum::<f64>() / areas.len() as f64;
        for (j, &a) in areas.iter().enumerate() {
            if a.abs() < 1e-14 * mean_abs {
                return Err(Error::Validation(format!("degenerate simplex {j} (area {a:e})")));
            }
            if a < 0.0 {
                return Err(Error::Validation(format!(
                    "inverted simplex {j}: vertices {:?} are ordered clockwise",
                    simplices[j]
                )));
            }
        }

        let boundary = conformity(&vertices, &simplices)?;
        Ok(Mesh {
            vertices,
            simplices,
            boundary,
        })
    }

    /// Structured triangulation of the unit square with `(n+1)²` vertices;
    /// every cell is cut along its lower-left to upper-right diagonal.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("unit square mesh needs n >= 1"));
        }
        let stride = n + 1;
        let mut vertices = Vec::with_capacity(stride * stride);
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut simplices = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = j * stride + i;
                let v10 = v00 + 1;
                let v01 = v00 + stride;
                let v11 = v01 + 1;
                simplices.push([v00, v10, v11]);
                simplices.push([v00, v11, v01]);
            }
        }
        Mesh::new(vertices, simplices)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn simplices(&self) -> &[[usize; 3]] {
        &self.simplices
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn simplex_count(&self) -> usize {
        self.simplices.len()
    }

    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&k| !self.boundary[k]).collect()
    }

    pub fn corners(&self, j: usize) -> [Point; 3] {
        let s = self.simplices[j];
        [self.vertices[s[0]], self.vertices[s[1]], self.vertices[s[2]]]
    }

    pub fn area(&self, j: usize) -> f64 {
        let [a, b, c] = self.corners(j);
        signed_area(a, b, c)
    }

    pub fn barycenter(&self, j: usize) -> Point {
        let [a, b, c] = self.corners(j);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn diameter(&self, j: usize) -> f64 {
        let [a, b, c] = self.corners(j);
        dist(a, b).max(dist(b, c)).max(dist(c, a))
    }

    /// Maximal simplex diameter `h`.
    pub fn mesh_size(&self) -> f64 {
        (0..self.simplex_count())
            .map(|j| self.diameter(j))
            .fold(0.0, f64::max)
    }

    /// Maximum over simplices of diameter / inradius.
    pub fn nondegeneracy(&self) -> Result<f64> {
        let mean = (0..self.simplex_count()).map(|j| self.area(j)).sum::<f64>()
            / self.simplex_count() as f64;
        let mut worst: f64 = 0.0;
        for j in 0..self.simplex_count() {
            let [a, b, c] = self.corners(j);
            let area = signed_area(a, b, c);
            if area < 1e-14 * mean {
                return Err(Error::Validation(format!("degenerate simplex {j} (area {area:e})")));
            }
            let perimeter = dist(a, b) + dist(b, c) + dist(c, a);
            let inradius = 2.0 * area / perimeter;
            worst = worst.max(self.diameter(j) / inradius);
        }
        Ok(worst)
    }

    /// Uniformly scaled copy.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        let vertices = self.vertices.iter().map(|v| [v[0] * t, v[1] * t]).collect();
        Mesh::new(vertices, self.simplices.clone())
    }

    /// Plain-text serialization: a `mesh v=<nv> s=<ns>` header, one `x y`
    /// line per vertex and one `i j k` line per simplex. Coordinates use the
    /// shortest representation that parses back to the same bits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mesh v={} s={}", self.vertices.len(), self.simplices.len());
        for v in &self.vertices {
            let _ = writeln!(out, "{:?} {:?}", v[0], v[1]);
        }
        for s in &self.simplices {
            let _ = writeln!(out, "{} {} {}", s[0], s[1], s[2]);
        }
        out
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty mesh file".into(),
        })?;
        let (nv, ns) = parse_header(hline, header)?;

        let mut vertices = Vec::with_capacity(nv);
        for k in 0..nv {
            let (line, l) = lines.next().ok_or_else(|| Error::Parse {
                line: hline + k + 1,
                msg: format!("expected {nv} vertex lines, file ended after {k}"),
            })?;
            let fields = split_fields::<f64>(line, l, 2, "vertex")?;
            vertices.push([fields[0], fields[1]]);
        }
        let mut simplices = Vec::with_capacity(ns);
        for j in 0..ns {
            let (line, l) = lines.next().ok_or_else(|| Error::Parse {
                line: hline + nv + j + 1,
                msg: format!("expected {ns} simplex lines, file ended after {j}"),
            })?;
            let f = split_fields::<usize>(line, l, 3, "simplex")?;
            for &k in &f {
                if k >= nv {
                    return Err(Error::Parse {
                        line,
                        msg: format!("simplex {j} references vertex {k} out of range (nv={nv})"),
                    });
                }
            }
            simplices.push([f[0], f[1], f[2]]);
        }
        if let Some((line, _)) = lines.next() {
            return Err(Error::Parse {
                line,
                msg: "trailing content after the last simplex".into(),
            });
        }
        Mesh::new(vertices, simplices)
    }
}

fn parse_header(line: usize, header: &str) -> Result<(usize, usize)> {
    let bad = |msg: &str| Error::Parse {
        line,
        msg: format!("{msg}: `{header}` (expected `mesh v=<nv> s=<ns>`)"),
    };
    let mut parts = header.split_whitespace();
    if parts.next() != Some("mesh") {
        return Err(bad("missing `mesh` header"));
    }
    let mut count = |key: &str| -> Result<usize> {
        parts
            .next()
            .and_then(|p| p.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(&format!("bad `{key}` field")))
    };
    let nv = count("v=")?;
    let ns = count("s=")?;
    if parts.next().is_some() {
        return Err(bad("unexpected header field"));
    }
    Ok((nv, ns))
}

fn split_fields<T: std::str::FromStr>(line: usize, l: &str, n: usize, what: &str) -> Result<Vec<T>> {
    let fields: Vec<&str> = l.split_whitespace().collect();
    if fields.len() != n {
        return Err(Error::Parse {
            line,
            msg: format!("{what} line needs {n} fields, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<T>().map_err(|_| Error::Parse {
                line,
                msg: format!("cannot parse `{f}` in {what} line"),
            })
        })
        .collect()
}

/// Checks the edge structure and returns per-vertex boundary flags.
///
/// Interior edges must be shared by exactly two simplices traversing them in
/// opposite directions; no vertex may sit inside a boundary edge (a hanging
/// node).
fn conformity(vertices: &[Point], simplices: &[[usize; 3]]) -> Result<Vec<bool>> {
    // directed edge -> owning simplex
    let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * simplices.len());
    for (j, s) in simplices.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (s[e], s[(e + 1) % 3]);
            if let Some(other) = directed.insert((a, b), j) {
                return Err(Error::Validation(format!(
                    "non-conforming mesh: simplices {other} and {j} overlap along edge ({a}, {b})"
                )));
            }
        }
    }
    let mut boundary = vec![false; vertices.len()];
    let mut boundary_edges = Vec::new();
    for &(a, b) in directed.keys() {
        if !directed.contains_key(&(b, a)) {
            boundary[a] = true;
            boundary[b] = true;
            boundary_edges.push((a, b));
        }
    }
    boundary_edges.sort_unstable();
    for &(a, b) in &boundary_edges {
        let (pa, pb) = (vertices[a], vertices[b]);
        let len = dist(pa, pb);
        for (k, &pk) in vertices.iter().enumerate() {
            if k == a || k == b {
                continue;
            }
            let cross = signed_area(pa, pb, pk).abs() * 2.0;
            if cross > 1e-12 * len * len {
                continue;
            }
            let t = ((pk[0] - pa[0]) * (pb[0] - pa[0]) + (pk[1] - pa[1]) * (pb[1] - pa[1]))
                / (len * len);
            if t > 1e-12 && t < 1.0 - 1e-12 {
                return Err(Error::Validation(format!(
                    "non-conforming mesh: vertex {k} hangs on edge ({a}, {b})"
                )));
            }
        }
    }
    Ok(boundary)
}
