//! Parametric meshes for building datasets without external models.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geom::{Point3, TriMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Sphere,
    Torus,
    /// Square plate with a sinusoidal height field.
    Relief,
    /// Capped cylinder.
    Cylinder,
}

impl Builtin {
    pub const ALL: [Builtin; 4] = [Builtin::Sphere, Builtin::Torus, Builtin::Relief, Builtin::Cylinder];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Sphere => "sphere",
            Builtin::Torus => "torus",
            Builtin::Relief => "relief",
            Builtin::Cylinder => "cylinder",
        }
    }

    /// Triangle mesh with about `2·resolution²` faces.
    pub fn mesh(self, resolution: usize) -> TriMesh {
        let res = resolution.max(4);
        match self {
            Builtin::Sphere => sphere(1.0, res, 2 * res),
            Builtin::Torus => torus(1.0, 0.35, 2 * res, res),
            Builtin::Relief => relief(res),
            Builtin::Cylinder => cylinder(0.5, 1.5, 2 * res, res),
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Builtin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown builtin shape {s:?} (expected sphere, torus, relief or cylinder)"))
    }
}

fn finish(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> TriMesh {
    TriMesh::new(vertices, faces).expect("generated mesh is valid")
}

/// Quad grid of `rows × cols` vertices, split into triangles; `wrap_cols`
/// joins the last column to the first.
fn grid_faces(rows: usize, cols: usize, wrap_cols: bool, wrap_rows: bool, faces: &mut Vec<[usize; 3]>) {
    let row_cells = if wrap_rows { rows } else { rows - 1 };
    let col_cells = if wrap_cols { cols } else { cols - 1 };
    for i in 0..row_cells {
        for j in 0..col_cells {
            let a = i * cols + j;
            let b = i * cols + (j + 1) % cols;
            let c = ((i + 1) % rows) * cols + (j + 1) % cols;
            let d = ((i + 1) % rows) * cols + j;
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
}

pub fn sphere(radius: f64, stacks: usize, slices: usize) -> TriMesh {
    let mut vertices = vec![[0.0, 0.0, radius]];
    for i in 1..stacks {
        let theta = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let phi = 2.0 * PI * j as f64 / slices as f64;
            vertices.push([
                radius * theta.sin() * phi.cos(),
                radius * theta.sin() * phi.sin(),
                radius * theta.cos(),
            ]);
        }
    }
    vertices.push([0.0, 0.0, -radius]);
    let south = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + i * slices + j % slices;
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(0, j), ring(0, j + 1)]);
        faces.push([south, ring(stacks - 2, j + 1), ring(stacks - 2, j)]);
    }
    let mut band = Vec::new();
    grid_faces(stacks - 1, slices, true, false, &mut band);
    faces.extend(band.into_iter().map(|f| f.map(|v| v + 1)));
    finish(vertices, faces)
}

pub fn torus(major: f64, minor: f64, u_segments: usize, v_segments: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity(u_segments * v_segments);
    for i in 0..u_segments {
        let u = 2.0 * PI * i as f64 / u_segments as f64;
        for j in 0..v_segments {
            let v = 2.0 * PI * j as f64 / v_segments as f64;
            let r = major + minor * v.cos();
            vertices.push([r * u.cos(), r * u.sin(), minor * v.sin()]);
        }
    }
    let mut faces = Vec::new();
    grid_faces(u_segments, v_segments, true, true, &mut faces);
    finish(vertices, faces)
}

pub fn relief(res: usize) -> TriMesh {
    let n = res + 1;
    let mut vertices = Vec::with_capacity(n * n);
    for i in 0..n {
        let x = -1.0 + 2.0 * i as f64 / res as f64;
        for j in 0..n {
            let y = -1.0 + 2.0 * j as f64 / res as f64;
            vertices.push([x, y, 0.2 * (PI * x).sin() * (PI * y).cos()]);
        }
    }
    let mut faces = Vec::new();
    grid_faces(n, n, false, false, &mut faces);
    finish(vertices, faces)
}

pub fn cylinder(radius: f64, height: f64, slices: usize, stacks: usize) -> TriMesh {
    let mut vertices = Vec::new();
    for i in 0..=stacks {
        let z = height * (i as f64 / stacks as f64 - 0.5);
        for j in 0..slices {
            let phi = 2.0 * PI * j as f64 / slices as f64;
            vertices.push([radius * phi.cos(), radius * phi.sin(), z]);
        }
    }
    let mut faces = Vec::new();
    grid_faces(stacks + 1, slices, true, false, &mut faces);
    let bottom = vertices.len();
    vertices.push([0.0, 0.0, -0.5 * height]);
    let top = vertices.len();
    vertices.push([0.0, 0.0, 0.5 * height]);
    let last_ring = stacks * slices;
    for j in 0..slices {
        let k = (j + 1) % slices;
        faces.push([bottom, k, j]);
        faces.push([top, last_ring + j, last_ring + k]);
    }
    finish(vertices, faces)
}
