use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::BoundaryTag;

/// Cylinder radius; the inner arc of the grid is the wall.
pub const R_INNER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nr: usize,
    pub ntheta: usize,
    pub r_outer: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nr: 64,
            ntheta: 64,
            r_outer: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    /// Unit normal pointing from the lower-index cell to the higher-index one.
    pub normal: [f64; 2],
    pub length: f64,
    pub midpoint: [f64; 2],
}

/// Body-fitted quarter annulus `r ∈ [1, r_outer]`, `θ ∈ [90°, 180°]`.
///
/// Cell `(i, j)` has radial index `i` (0 at the wall) and angular index `j`
/// (0 on the `x = 0` outflow line, `ntheta − 1` next to the `y = 0` mirror
/// line); its flat index is `i·ntheta + j`. Radial faces `(i, j)` separate
/// cells `(i−1, j)` and `(i, j)`, angular faces `(i, j)` separate `(i, j−1)`
/// and `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredGrid {
    pub nr: usize,
    pub ntheta: usize,
    pub r_inner: f64,
    pub r_outer: f64,
    nodes: Vec<[f64; 2]>,
    centroids: Vec<[f64; 2]>,
    volumes: Vec<f64>,
    spacing: Vec<f64>,
    radial_faces: Vec<Face>,
    angular_faces: Vec<Face>,
}

fn polar(r: f64, j: usize, ntheta: usize) -> [f64; 2] {
    // exact coordinates on the two straight edges
    if j == 0 {
        return [0.0, r];
    }
    if j == ntheta {
        return [-r, 0.0];
    }
    let theta = FRAC_PI_2 + FRAC_PI_2 * j as f64 / ntheta as f64;
    [r * theta.cos(), r * theta.sin()]
}

fn face_between(a: [f64; 2], b: [f64; 2], toward: [f64; 2]) -> Face {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let length = dx.hypot(dy);
    let mut normal = [dy / length, -dx / length];
    if normal[0] * toward[0] + normal[1] * toward[1] < 0.0 {
        normal = [-normal[0], -normal[1]];
    }
    Face {
        normal,
        length,
        midpoint: [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])],
    }
}

impl StructuredGrid {
    pub fn build(spec: GridSpec) -> Result<Self> {
        let GridSpec {
            nr,
            ntheta,
            r_outer,
        } = spec;
        if nr < 4 || ntheta < 4 {
            return Err(Error::Argument(format!(
                "grid needs at least 4x4 cells, got {nr}x{ntheta}"
            )));
        }
        if !(r_outer.is_finite() && r_outer > R_INNER) {
            return Err(Error::Argument(format!(
                "outer radius must exceed 1, got {r_outer}"
            )));
        }
        let radius = |i: usize| R_INNER + (r_outer - R_INNER) * i as f64 / nr as f64;
        let nid = |i: usize, j: usize| i * (ntheta + 1) + j;
        let mut nodes = Vec::with_capacity((nr + 1) * (ntheta + 1));
        for i in 0..=nr {
            for j in 0..=ntheta {
                nodes.push(polar(radius(i), j, ntheta));
            }
        }

        let mut centroids = Vec::with_capacity(nr * ntheta);
        let mut volumes = Vec::with_capacity(nr * ntheta);
        for i in 0..nr {
            for j in 0..ntheta {
                let poly = [
                    nodes[nid(i, j)],
                    nodes[nid(i + 1, j)],
                    nodes[nid(i + 1, j + 1)],
                    nodes[nid(i, j + 1)],
                ];
                let (mut area2, mut cx, mut cy) = (0.0, 0.0, 0.0);
                for k in 0..4 {
                    let (p, q) = (poly[k], poly[(k + 1) % 4]);
                    let cross = p[0] * q[1] - q[0] * p[1];
                    area2 += cross;
                    cx += (p[0] + q[0]) * cross;
                    cy += (p[1] + q[1]) * cross;
                }
                let area = 0.5 * area2;
                volumes.push(area);
                centroids.push([cx / (6.0 * area), cy / (6.0 * area)]);
            }
        }

        let mut radial_faces = Vec::with_capacity((nr + 1) * ntheta);
        for i in 0..=nr {
            for j in 0..ntheta {
                let (a, b) = (nodes[nid(i, j)], nodes[nid(i, j + 1)]);
                let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                radial_faces.push(face_between(a, b, mid));
            }
        }
        let mut angular_faces = Vec::with_capacity(nr * (ntheta + 1));
        for i in 0..nr {
            for j in 0..=ntheta {
                let (a, b) = (nodes[nid(i, j)], nodes[nid(i + 1, j)]);
                // direction of increasing θ is (-y, x)
                let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                angular_faces.push(face_between(a, b, [-mid[1], mid[0]]));
            }
        }

        let mut grid = Self {
            nr,
            ntheta,
            r_inner: R_INNER,
            r_outer,
            nodes,
            centroids,
            volumes,
            spacing: Vec::new(),
            radial_faces,
            angular_faces,
        };
        grid.spacing = (0..nr * ntheta)
            .map(|c| {
                let (i, j) = grid.cell_ij(c);
                let v = grid.volumes[c];
                let lr = grid.radial_face(i, j).length + grid.radial_face(i + 1, j).length;
                let la = grid.angular_face(i, j).length + grid.angular_face(i, j + 1).length;
                (2.0 * v / lr).min(2.0 * v / la)
            })
            .collect();
        Ok(grid)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            nr: self.nr,
            ntheta: self.ntheta,
            r_outer: self.r_outer,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.nr * self.ntheta
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        i * self.ntheta + j
    }

    #[inline]
    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c / self.ntheta, c % self.ntheta)
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn centroids(&self) -> &[[f64; 2]] {
        &self.centroids
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Minimum distance between opposite faces of each cell.
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    #[inline]
    pub fn radial_face(&self, i: usize, j: usize) -> &Face {
        &self.radial_faces[i * self.ntheta + j]
    }

    #[inline]
    pub fn angular_face(&self, i: usize, j: usize) -> &Face {
        &self.angular_faces[i * (self.ntheta + 1) + j]
    }

    pub fn total_area(&self) -> f64 {
        self.volumes.iter().sum()
    }

    /// Outward `n·L` of the four faces of a cell, summed.
    pub fn closure_defect(&self, c: usize) -> [f64; 2] {
        let (i, j) = self.cell_ij(c);
        let terms = [
            (self.radial_face(i, j), -1.0),
            (self.radial_face(i + 1, j), 1.0),
            (self.angular_face(i, j), -1.0),
            (self.angular_face(i, j + 1), 1.0),
        ];
        let mut s = [0.0; 2];
        for (f, sign) in terms {
            s[0] += sign * f.normal[0] * f.length;
            s[1] += sign * f.normal[1] * f.length;
        }
        s
    }

    /// Every boundary face with its tag and outward (domain) unit normal.
    pub fn boundary_faces(&self) -> Vec<(BoundaryTag, Face)> {
        let flip = |f: &Face| Face {
            normal: [-f.normal[0], -f.normal[1]],
            ..*f
        };
        let mut out = Vec::new();
        for j in 0..self.ntheta {
            out.push((BoundaryTag::Wall, flip(self.radial_face(0, j))));
            out.push((BoundaryTag::Inflow, *self.radial_face(self.nr, j)));
        }
        for i in 0..self.nr {
            out.push((BoundaryTag::Outflow, flip(self.angular_face(i, 0))));
            out.push((BoundaryTag::Symmetry, *self.angular_face(i, self.ntheta)));
        }
        out
    }

    /// Cell indices along the mirror line `y = 0` (the stagnation streamline),
    /// ordered from the wall outward.
    pub fn stagnation_line(&self) -> Vec<usize> {
        (0..self.nr)
            .map(|i| self.cell(i, self.ntheta - 1))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_has_positive_cells() {
        let g = StructuredGrid::build(GridSpec {
            nr: 4,
            ntheta: 4,
            r_outer: 4.0,
        })
        .unwrap();
        assert_eq!(g.num_cells(), 16);
        assert!(g.volumes().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn area_matches_annulus_quadrant() {
        let g = StructuredGrid::build(GridSpec {
            nr: 64,
            ntheta: 64,
            r_outer: 4.0,
        })
        .unwrap();
        let exact = std::f64::consts::FRAC_PI_4 * (16.0 - 1.0);
        assert!((g.total_area() - exact).abs() / exact < 0.005);
    }

    #[test]
    fn cells_are_closed() {
        let g = StructuredGrid::build(GridSpec {
            nr: 16,
            ntheta: 24,
            r_outer: 3.0,
        })
        .unwrap();
        for c in 0..g.num_cells() {
            let d = g.closure_defect(c);
            assert!(
                d[0].abs() <= 1e-12 && d[1].abs() <= 1e-12,
                "cell {c}: {d:?}"
            );
        }
    }

    #[test]
    fn boundary_normals_point_out() {
        let g = StructuredGrid::build(GridSpec {
            nr: 8,
            ntheta: 8,
            r_outer: 4.0,
        })
        .unwrap();
        for (tag, f) in g.boundary_faces() {
            let m = f.midpoint;
            let n = f.normal;
            match tag {
                BoundaryTag::Wall => assert!(n[0] * m[0] + n[1] * m[1] < 0.0),
                BoundaryTag::Inflow => assert!(n[0] * m[0] + n[1] * m[1] > 0.0),
                BoundaryTag::Outflow => assert!(n[0] > 0.99),
                BoundaryTag::Symmetry => assert!(n[1] < -0.99),
            }
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(StructuredGrid::build(GridSpec {
            nr: 3,
            ntheta: 8,
            r_outer: 4.0
        })
        .is_err());
        assert!(StructuredGrid::build(GridSpec {
            nr: 8,
            ntheta: 8,
            r_outer: 1.0
        })
        .is_err());
    }
}
