//! Snapshot POD: per-variable modes from the Gram matrix of the
//! mean-subtracted snapshots.

use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::field::{StateField, Variable};
use crate::io;

pub const BASIS_MAGIC: &[u8; 4] = b"PODB";

/// Snapshots of all four variables on a shared point set, ordered by Mach.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub points: Vec<[f64; 2]>,
    pub params: Vec<f64>,
    /// One `n × D` matrix per variable, in [`Variable::ALL`] order.
    pub data: [Array2<f64>; 4],
}

impl SnapshotSet {
    /// Builds the set from in-memory fields; `names` label the fields in
    /// error messages.
    pub fn from_fields(mut fields: Vec<(String, StateField)>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::Argument("no snapshots given".into()));
        }
        fields.sort_by(|a, b| a.1.mach.total_cmp(&b.1.mach));
        let (first_name, first) = &fields[0];
        for (name, f) in &fields[1..] {
            let same = f.points.len() == first.points.len()
                && f.points.iter().zip(&first.points).all(|(p, q)| {
                    p[0].to_bits() == q[0].to_bits() && p[1].to_bits() == q[1].to_bits()
                });
            if !same {
                return Err(Error::Data(format!(
                    "point coordinates of {name} differ from {first_name}"
                )));
            }
            if f.mach == first.mach {
                return Err(Error::Data(format!(
                    "{name} and {first_name} share Mach {}",
                    f.mach
                )));
            }
        }
        let n = first.len();
        let d = fields.len();
        if n < d {
            return Err(Error::Data(format!(
                "{n} points cannot support {d} snapshots"
            )));
        }
        let mut data = [(); 4].map(|_| Array2::zeros((n, d)));
        for (col, (_, f)) in fields.iter().enumerate() {
            for (row, w) in f.states.iter().enumerate() {
                let a = w.to_array();
                for v in 0..4 {
                    data[v][[row, col]] = a[v];
                }
            }
        }
        Ok(Self {
            points: first.points.clone(),
            params: fields.iter().map(|(_, f)| f.mach).collect(),
            data,
        })
    }

    /// Reads SNAP files in any order.
    pub fn assemble(paths: &[PathBuf]) -> Result<Self> {
        let fields = paths
            .iter()
            .map(|p| Ok((p.display().to_string(), StateField::read_snap(p)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_fields(fields)
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_snapshots(&self) -> usize {
        self.params.len()
    }

    pub fn matrix(&self, var: Variable) -> &Array2<f64> {
        &self.data[var.index()]
    }

    /// Column `d` as a field.
    pub fn field(&self, d: usize) -> StateField {
        let states = (0..self.num_points())
            .map(|r| {
                crate::euler::PrimitiveState::new(
                    self.data[0][[r, d]],
                    self.data[1][[r, d]],
                    self.data[2][[r, d]],
                    self.data[3][[r, d]],
                )
            })
            .collect();
        StateField {
            mach: self.params[d],
            points: self.points.clone(),
            states,
        }
    }

    /// Keeps the listed columns (in the given order, which must be ascending
    /// in Mach for the result to stay canonical).
    pub fn select(&self, cols: &[usize]) -> Self {
        Self {
            points: self.points.clone(),
            params: cols.iter().map(|&c| self.params[c]).collect(),
            data: [0, 1, 2, 3].map(|v| self.data[v].select(Axis(1), cols)),
        }
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the eigenvectors as columns.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[[p, q]] * a[[p, q]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]).then(i.cmp(&j)));
    let vals = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let vecs = v.select(Axis(1), &order);
    (vals, vecs)
}

/// Orthonormal modes, singular values and mean of one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub variable: Variable,
    pub mean: Array1<f64>,
    /// `n × n_BF`, orthonormal columns.
    pub modes: Array2<f64>,
    /// All `D` singular values, non-increasing.
    pub sigma: Array1<f64>,
}

fn normalize_sign(mut col: ndarray::ArrayViewMut1<f64>) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in col.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        col.mapv_inplace(|x| -x);
    }
}

/// Orthogonalises column `k` of `u` against columns `0..k` (two passes of
/// modified Gram–Schmidt) and normalises it. Returns false if it vanished.
fn orthonormalize_column(u: &mut Array2<f64>, k: usize) -> bool {
    let before = u.column(k).dot(&u.column(k)).sqrt();
    for _ in 0..2 {
        for j in 0..k {
            let proj = u.column(j).dot(&u.column(k));
            let cj = u.column(j).to_owned();
            u.column_mut(k).scaled_add(-proj, &cj);
        }
    }
    let norm = u.column(k).dot(&u.column(k)).sqrt();
    if !(norm > 1e-8 * before) || norm == 0.0 {
        return false;
    }
    u.column_mut(k).mapv_inplace(|x| x / norm);
    true
}

/// Decomposes one variable's snapshots, keeping `n_bf` modes.
pub fn compute_pod_matrix(variable: Variable, w: &Array2<f64>, n_bf: usize) -> Result<PodBasis> {
    let (n, d) = w.dim();
    if n_bf == 0 || n_bf > d {
        return Err(Error::Argument(format!(
            "n_BF must lie in 1..={d}, got {n_bf}"
        )));
    }
    let mean = w.mean_axis(Axis(1)).expect("d >= 1");
    let centered = w - &mean.view().insert_axis(Axis(1));
    let gram = centered.t().dot(&centered);
    let (vals, v) = symmetric_eigen(&gram);
    let sigma = vals.mapv(|x| x.max(0.0).sqrt());
    let tol = sigma[0] * d as f64 * 1e-12;

    let mut modes = Array2::<f64>::zeros((n, n_bf));
    let mut unit = 0usize;
    for k in 0..n_bf {
        let mut ok = false;
        if sigma[k] > tol {
            let col = centered.dot(&v.column(k)) / sigma[k];
            modes.column_mut(k).assign(&col);
            ok = orthonormalize_column(&mut modes, k);
        }
        // zero singular value: extend with coordinate directions
        while !ok {
            assert!(unit < n, "cannot extend basis beyond the point count");
            modes.column_mut(k).fill(0.0);
            modes[[unit, k]] = 1.0;
            unit += 1;
            ok = orthonormalize_column(&mut modes, k);
        }
        normalize_sign(modes.column_mut(k));
    }
    Ok(PodBasis {
        variable,
        mean,
        modes,
        sigma,
    })
}

/// Per-variable bases of a snapshot set.
pub fn compute_pod(set: &SnapshotSet, n_bf: usize) -> Result<[PodBasis; 4]> {
    let bases: Vec<PodBasis> = Variable::ALL
        .iter()
        .map(|&v| compute_pod_matrix(v, set.matrix(v), n_bf))
        .collect::<Result<_>>()?;
    Ok(bases.try_into().expect("four variables"))
}

/// Sum of the squared singular values beyond the first `n_bf`.
pub fn truncation_error_bound(sigma: ArrayView1<f64>, n_bf: usize) -> f64 {
    sigma.iter().skip(n_bf).map(|s| s * s).sum()
}

impl PodBasis {
    pub fn num_points(&self) -> usize {
        self.mean.len()
    }

    pub fn n_bf(&self) -> usize {
        self.modes.ncols()
    }

    pub fn num_snapshots(&self) -> usize {
        self.sigma.len()
    }

    pub fn truncation_error_bound(&self, n_bf: usize) -> Result<f64> {
        if n_bf > self.num_snapshots() {
            return Err(Error::Argument(format!(
                "n_BF {n_bf} exceeds the {} snapshots",
                self.num_snapshots()
            )));
        }
        Ok(truncation_error_bound(self.sigma.view(), n_bf))
    }

    /// `Uᵀ(field − mean)`.
    pub fn project(&self, field: ArrayView1<f64>) -> Result<Array1<f64>> {
        if field.len() != self.num_points() {
            return Err(Error::Shape {
                expected: self.num_points(),
                got: field.len(),
            });
        }
        Ok(self.modes.t().dot(&(&field - &self.mean)))
    }

    /// `mean + U c`.
    pub fn reconstruct(&self, coeffs: ArrayView1<f64>) -> Result<Array1<f64>> {
        if coeffs.len() != self.n_bf() {
            return Err(Error::Shape {
                expected: self.n_bf(),
                got: coeffs.len(),
            });
        }
        Ok(&self.mean + &self.modes.dot(&coeffs))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, k, d) = (self.num_points(), self.n_bf(), self.num_snapshots());
        let mut buf = Vec::with_capacity(36 + 8 * (n + d + n * k));
        buf.extend_from_slice(BASIS_MAGIC);
        for h in [self.variable.index(), n, k, d] {
            buf.extend_from_slice(&(h as u64).to_le_bytes());
        }
        let col_major = self.modes.t().iter().copied().collect::<Vec<_>>();
        for x in self
            .mean
            .iter()
            .chain(self.sigma.iter())
            .chain(col_major.iter())
        {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format(path, "truncated header"))?;
        if &magic != BASIS_MAGIC {
            return Err(Error::format(path, "bad magic, expected PODB"));
        }
        let mut header = [0usize; 4];
        let mut b = [0u8; 8];
        for h in header.iter_mut() {
            r.read_exact(&mut b)
                .map_err(|_| Error::format(path, "truncated header"))?;
            *h = u64::from_le_bytes(b) as usize;
        }
        let [var, n, k, d] = header;
        let variable = Variable::from_index(var)
            .ok_or_else(|| Error::format(path, format!("unknown variable id {var}")))?;
        if k > d || n.checked_mul(k).is_none() {
            return Err(Error::format(path, "inconsistent header"));
        }
        let expected = 8 * (n + d + n * k);
        if r.len() != expected {
            return Err(Error::format(
                path,
                format!("expected {expected} payload bytes, found {}", r.len()),
            ));
        }
        let vals: Vec<f64> = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mean = Array1::from(vals[..n].to_vec());
        let sigma = Array1::from(vals[n..n + d].to_vec());
        let modes = Array2::from_shape_vec((k, n), vals[n + d..].to_vec())
            .expect("length checked")
            .reversed_axes()
            .as_standard_layout()
            .to_owned();
        Ok(Self {
            variable,
            mean,
            modes,
            sigma,
        })
    }

    pub fn write(&self, path: &Path, force: bool) -> Result<()> {
        io::write_artifact(path, &self.to_bytes(), force)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_bytes(path)?, path)
    }
}
