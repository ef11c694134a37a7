use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Neighbours used for the least-squares gradient at each node.
pub const GRADIENT_NEIGHBOURS: usize = 8;

/// Nodal mean fields with least-squares gradients.
///
/// At a node the interpolant returns the stored value exactly; elsewhere it
/// takes the first-order Taylor expansion about the nearest node.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanField {
    pub points: Vec<[f64; 2]>,
    pub values: [Vec<f64>; 4],
    pub gradients: [Vec<[f64; 2]>; 4],
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Indices of the `k` nearest other nodes of each node.
fn neighbours(points: &[[f64; 2]], k: usize) -> Vec<Vec<usize>> {
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut d: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, &q)| (dist2(p, q), j))
                .collect();
            let k = k.min(d.len());
            if k < d.len() {
                d.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            }
            let mut near: Vec<(f64, usize)> = d[..k].to_vec();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

fn lsq_gradient(points: &[[f64; 2]], values: &[f64], i: usize, near: &[usize]) -> [f64; 2] {
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &j in near {
        let dx = points[j][0] - points[i][0];
        let dy = points[j][1] - points[i][1];
        let dv = values[j] - values[i];
        a11 += dx * dx;
        a12 += dx * dy;
        a22 += dy * dy;
        b1 += dx * dv;
        b2 += dy * dv;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() <= 1e-14 * (a11 * a22).max(f64::MIN_POSITIVE) {
        return [0.0, 0.0];
    }
    [(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det]
}

impl MeanField {
    pub fn new(points: Vec<[f64; 2]>, values: [Vec<f64>; 4]) -> Result<Self> {
        let n = points.len();
        if let Some(v) = values.iter().find(|v| v.len() != n) {
            return Err(Error::Shape {
                expected: n,
                got: v.len(),
            });
        }
        if n < 3 {
            return Err(Error::Argument(
                "a mean field needs at least three nodes".into(),
            ));
        }
        let near = neighbours(&points, GRADIENT_NEIGHBOURS);
        let gradients = [0, 1, 2, 3].map(|v| {
            (0..n)
                .map(|i| lsq_gradient(&points, &values[v], i, &near[i]))
                .collect()
        });
        Ok(Self {
            points,
            values,
            gradients,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nearest(&self, x: [f64; 2]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, &p) in self.points.iter().enumerate() {
            let d = dist2(p, x);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Value and gradient of every variable at `x`.
    pub fn eval(&self, x: [f64; 2]) -> ([f64; 4], [[f64; 2]; 4]) {
        let i = self.nearest(x);
        let p = self.points[i];
        let (dx, dy) = (x[0] - p[0], x[1] - p[1]);
        let mut v = [0.0; 4];
        let mut g = [[0.0; 2]; 4];
        for k in 0..4 {
            g[k] = self.gradients[k][i];
            v[k] = if dx == 0.0 && dy == 0.0 {
                self.values[k][i]
            } else {
                self.values[k][i] + g[k][0] * dx + g[k][1] * dy
            };
        }
        (v, g)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut buf = Vec::with_capacity(12 + 8 * n * 14);
        buf.extend_from_slice(b"MEAN");
        buf.extend_from_slice(&(n as u64).to_le_bytes());
        for i in 0..n {
            let mut row = vec![self.points[i][0], self.points[i][1]];
            for k in 0..4 {
                row.extend([
                    self.values[k][i],
                    self.gradients[k][i][0],
                    self.gradients[k][i][1],
                ]);
            }
            for x in row {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format(path, "truncated header"))?;
        if &magic != b"MEAN" {
            return Err(Error::format(path, "bad magic, expected MEAN"));
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|_| Error::format(path, "truncated header"))?;
        let n = u64::from_le_bytes(b) as usize;
        if r.len() != n * 14 * 8 {
            return Err(Error::format(path, "payload length does not match header"));
        }
        let vals: Vec<f64> = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut points = Vec::with_capacity(n);
        let mut values: [Vec<f64>; 4] = Default::default();
        let mut gradients: [Vec<[f64; 2]>; 4] = Default::default();
        for row in vals.chunks_exact(14) {
            points.push([row[0], row[1]]);
            for k in 0..4 {
                values[k].push(row[2 + 3 * k]);
                gradients[k].push([row[3 + 3 * k], row[4 + 3 * k]]);
            }
        }
        Ok(Self {
            points,
            values,
            gradients,
        })
    }
}
