//! Steady solution fields and the snapshot file formats.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::euler::{mach_number, pressure, temperature, GasConstants, PrimitiveState};
use crate::io;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"SNAP";

/// The four state variables, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    Rho,
    U,
    V,
    Energy,
}

impl Variable {
    pub const ALL: [Variable; 4] = [Variable::Rho, Variable::U, Variable::V, Variable::Energy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Variable::Rho => "rho",
            Variable::U => "u",
            Variable::V => "v",
            Variable::Energy => "E",
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Primitive state at every point for one Mach number.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub mach: f64,
    pub points: Vec<[f64; 2]>,
    pub states: Vec<PrimitiveState>,
}

/// Pressure, temperature, speed and local Mach number.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedFields {
    pub pressure: Vec<f64>,
    pub temperature: Vec<f64>,
    pub speed: Vec<f64>,
    pub mach: Vec<f64>,
}

impl StateField {
    pub fn new(mach: f64, points: Vec<[f64; 2]>, states: Vec<PrimitiveState>) -> Result<Self> {
        if points.len() != states.len() {
            return Err(Error::Shape {
                expected: points.len(),
                got: states.len(),
            });
        }
        Ok(Self {
            mach,
            points,
            states,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn variable(&self, var: Variable) -> Vec<f64> {
        self.states
            .iter()
            .map(|w| w.to_array()[var.index()])
            .collect()
    }

    /// Derived thermodynamic fields. Non-positive temperatures yield NaN
    /// Mach numbers rather than an error so that raw surrogate output can be
    /// inspected.
    pub fn derived(&self, gas: &GasConstants) -> DerivedFields {
        let mut d = DerivedFields {
            pressure: Vec::with_capacity(self.len()),
            temperature: Vec::with_capacity(self.len()),
            speed: Vec::with_capacity(self.len()),
            mach: Vec::with_capacity(self.len()),
        };
        for w in &self.states {
            d.pressure.push(pressure(w, gas));
            d.temperature.push(temperature(w, gas).unwrap_or(f64::NAN));
            d.speed.push(w.speed());
            d.mach.push(mach_number(w, gas).unwrap_or(f64::NAN));
        }
        d
    }

    pub fn to_snap_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 48 * self.len());
        buf.extend_from_slice(SNAPSHOT_MAGIC);
        buf.extend_from_slice(&self.mach.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (p, w) in self.points.iter().zip(&self.states) {
            for v in [p[0], p[1], w.rho, w.u, w.v, w.energy] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_snap_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format(path, "truncated header"))?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::format(path, "bad magic, expected SNAP"));
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|_| Error::format(path, "truncated header"))?;
        let mach = f64::from_le_bytes(b);
        r.read_exact(&mut b)
            .map_err(|_| Error::format(path, "truncated header"))?;
        let n = u64::from_le_bytes(b) as usize;
        if r.len() != n * 48 {
            return Err(Error::format(
                path,
                format!("expected {} bytes of point data, found {}", n * 48, r.len()),
            ));
        }
        let mut points = Vec::with_capacity(n);
        let mut states = Vec::with_capacity(n);
        let mut vals = [0.0f64; 6];
        for _ in 0..n {
            for v in vals.iter_mut() {
                r.read_exact(&mut b).expect("length checked");
                *v = f64::from_le_bytes(b);
            }
            points.push([vals[0], vals[1]]);
            states.push(PrimitiveState::new(vals[2], vals[3], vals[4], vals[5]));
        }
        Ok(Self {
            mach,
            points,
            states,
        })
    }

    pub fn write_snap(&self, path: &Path, force: bool) -> Result<()> {
        io::write_artifact(path, &self.to_snap_bytes(), force)
    }

    pub fn read_snap(path: &Path) -> Result<Self> {
        let bytes = io::read_bytes(path)?;
        Self::from_snap_bytes(&bytes, path)
    }

    /// CSV mirror with 17 significant digits, which round-trips f64 exactly.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(120 * self.len());
        s.push_str("x,y,rho,u,v,E\n");
        for (p, w) in self.points.iter().zip(&self.states) {
            writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                p[0], p[1], w.rho, w.u, w.v, w.energy
            )
            .unwrap();
        }
        s
    }

    pub fn from_csv(text: &str, mach: f64, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("x,y,rho,u,v,E") {
            return Err(Error::format(path, "missing header x,y,rho,u,v,E"));
        }
        let mut points = Vec::new();
        let mut states = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|t| t.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::format(path, format!("line {}: {e}", k + 2)))?;
            if vals.len() != 6 {
                return Err(Error::format(
                    path,
                    format!("line {}: expected 6 columns", k + 2),
                ));
            }
            points.push([vals[0], vals[1]]);
            states.push(PrimitiveState::new(vals[2], vals[3], vals[4], vals[5]));
        }
        Ok(Self {
            mach,
            points,
            states,
        })
    }

    pub fn write_csv(&self, path: &Path, force: bool) -> Result<()> {
        io::write_artifact(path, self.to_csv().as_bytes(), force)
    }
}

/// Writes `iter,residual` rows.
pub fn residual_csv(residuals: &[f64]) -> String {
    let mut s = String::from("iter,residual\n");
    for (i, r) in residuals.iter().enumerate() {
        writeln!(s, "{i},{r:.16e}").unwrap();
    }
    s
}

pub fn write_residual_csv(path: &Path, residuals: &[f64], force: bool) -> Result<()> {
    io::write_artifact(path, residual_csv(residuals).as_bytes(), force)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> StateField {
        StateField::new(
            12.0,
            vec![[-1.5, 0.25], [0.0, 3.0]],
            vec![
                PrimitiveState::new(1.0, 4000.0, 0.0, 8.5e6),
                PrimitiveState::new(5.6, 123.456789, -0.1, 1.0 / 3.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn snap_round_trip_bitwise() {
        let f = sample();
        let back = StateField::from_snap_bytes(&f.to_snap_bytes(), Path::new("x")).unwrap();
        assert_eq!(back.to_snap_bytes(), f.to_snap_bytes());
    }

    #[test]
    fn truncated_snap_is_format_error() {
        let bytes = sample().to_snap_bytes();
        let err = StateField::from_snap_bytes(&bytes[..bytes.len() - 1], Path::new("t.snap"))
            .unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"SNAQ");
        assert!(StateField::from_snap_bytes(&bad, Path::new("t.snap")).is_err());
    }

    #[test]
    fn csv_mirror_is_exact() {
        let f = sample();
        let back = StateField::from_csv(&f.to_csv(), f.mach, Path::new("x.csv")).unwrap();
        assert_eq!(back, f);
    }
}
