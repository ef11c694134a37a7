//! Steady compressible Euler physics in primitive variables `[ρ, u, v, E]`,
//! with `E` the total energy per unit volume.
//!
//! Everything here is pure. The flux and residual kernels are written over
//! [`Real`] so the same code yields exact state derivatives when fed dual
//! numbers.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Real};
use crate::error::{Error, Result};

/// Freestream density (kg/m³) used for every inflow state.
pub const RHO_INF: f64 = 1.0;
/// Freestream temperature (K).
pub const T_INF: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasConstants {
    /// Ratio of specific heats.
    pub gamma: f64,
    /// Specific gas constant, J/(kg·K).
    pub r_gas: f64,
}

impl Default for GasConstants {
    fn default() -> Self {
        Self {
            gamma: 1.4,
            r_gas: 287.058,
        }
    }
}

impl GasConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) || !(self.r_gas > 0.0) {
            return Err(Error::Argument(format!("invalid gas constants {self:?}")));
        }
        Ok(())
    }

    pub fn freestream_sound_speed(&self) -> f64 {
        (self.gamma * self.r_gas * T_INF).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrimitiveState {
    pub rho: f64,
    pub u: f64,
    pub v: f64,
    pub energy: f64,
}

impl PrimitiveState {
    pub fn new(rho: f64, u: f64, v: f64, energy: f64) -> Self {
        Self { rho, u, v, energy }
    }

    pub fn from_array(w: [f64; 4]) -> Self {
        Self::new(w[0], w[1], w[2], w[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.rho, self.u, self.v, self.energy]
    }

    pub fn speed(&self) -> f64 {
        self.u.hypot(self.v)
    }

    pub fn to_conservative(self) -> ConservativeState {
        ConservativeState {
            rho: self.rho,
            rho_u: self.rho * self.u,
            rho_v: self.rho * self.v,
            energy: self.energy,
        }
    }

    /// Builds the state from density, velocity and pressure.
    pub fn from_pressure(rho: f64, u: f64, v: f64, p: f64, gas: &GasConstants) -> Self {
        Self::new(
            rho,
            u,
            v,
            p / (gas.gamma - 1.0) + 0.5 * rho * (u * u + v * v),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Positive density and pressure.
    pub fn is_physical(&self, gas: &GasConstants) -> bool {
        self.rho > 0.0 && pressure(self, gas) > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConservativeState {
    pub rho: f64,
    pub rho_u: f64,
    pub rho_v: f64,
    pub energy: f64,
}

impl ConservativeState {
    pub fn from_array(q: [f64; 4]) -> Self {
        Self {
            rho: q[0],
            rho_u: q[1],
            rho_v: q[2],
            energy: q[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.rho, self.rho_u, self.rho_v, self.energy]
    }

    pub fn to_primitive(self) -> PrimitiveState {
        PrimitiveState {
            rho: self.rho,
            u: self.rho_u / self.rho,
            v: self.rho_v / self.rho,
            energy: self.energy,
        }
    }
}

/// The PDE parameter: freestream Mach number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeParameter {
    pub mach: f64,
}

impl PdeParameter {
    pub fn new(mach: f64) -> Result<Self> {
        if !(mach.is_finite() && mach > 1.0) {
            return Err(Error::Argument(format!(
                "Mach number must exceed 1, got {mach}"
            )));
        }
        Ok(Self { mach })
    }
}

pub fn pressure(w: &PrimitiveState, gas: &GasConstants) -> f64 {
    pressure_generic(w.rho, w.u, w.v, w.energy, gas.gamma)
}

#[inline]
fn pressure_generic<T: Real>(rho: T, u: T, v: T, e: T, gamma: f64) -> T {
    T::from(gamma - 1.0) * (e - T::from(0.5) * rho * (u * u + v * v))
}

pub fn temperature(w: &PrimitiveState, gas: &GasConstants) -> Result<f64> {
    if w.rho == 0.0 {
        return Err(Error::Domain(
            "temperature undefined for zero density".into(),
        ));
    }
    Ok(pressure(w, gas) / (gas.r_gas * w.rho))
}

pub fn sound_speed(w: &PrimitiveState, gas: &GasConstants) -> Result<f64> {
    let t = temperature(w, gas)?;
    if !(t > 0.0) {
        return Err(Error::Domain(format!("non-positive temperature {t}")));
    }
    Ok((gas.gamma * gas.r_gas * t).sqrt())
}

pub fn mach_number(w: &PrimitiveState, gas: &GasConstants) -> Result<f64> {
    Ok(w.speed() / sound_speed(w, gas)?)
}

/// Inflow state at the given Mach number with the reference density and
/// temperature.
pub fn freestream_state(mach: f64, gas: &GasConstants) -> PrimitiveState {
    let a = gas.freestream_sound_speed();
    let p = RHO_INF * gas.r_gas * T_INF;
    PrimitiveState::from_pressure(RHO_INF, mach * a, 0.0, p, gas)
}

#[inline]
pub fn flux_f1_generic<T: Real>(w: [T; 4], gamma: f64) -> [T; 4] {
    let [rho, u, v, e] = w;
    let p = pressure_generic(rho, u, v, e, gamma);
    [rho * u, rho * u * u + p, rho * v * u, (e + p) * u]
}

#[inline]
pub fn flux_f2_generic<T: Real>(w: [T; 4], gamma: f64) -> [T; 4] {
    let [rho, u, v, e] = w;
    let p = pressure_generic(rho, u, v, e, gamma);
    [rho * v, rho * u * v, rho * v * v + p, (e + p) * v]
}

pub fn flux_f1(w: &PrimitiveState, gas: &GasConstants) -> [f64; 4] {
    flux_f1_generic(w.to_array(), gas.gamma)
}

pub fn flux_f2(w: &PrimitiveState, gas: &GasConstants) -> [f64; 4] {
    flux_f2_generic(w.to_array(), gas.gamma)
}

/// Flux through a face with unit normal `n`: `F1·n_x + F2·n_y`.
#[inline]
pub fn normal_flux(w: &PrimitiveState, n: [f64; 2], gas: &GasConstants) -> [f64; 4] {
    let p = pressure(w, gas);
    let un = w.u * n[0] + w.v * n[1];
    [
        w.rho * un,
        w.rho * w.u * un + p * n[0],
        w.rho * w.v * un + p * n[1],
        (w.energy + p) * un,
    ]
}

/// Analytic `∂F1/∂w` and `∂F2/∂w`, indexed `[flux component][state entry]`.
pub fn flux_jacobians<T: Real>(w: [T; 4], gamma: f64) -> ([[T; 4]; 4], [[T; 4]; 4]) {
    let [rho, u, v, e] = w;
    let g1 = T::from(gamma - 1.0);
    let zero = T::from(0.0);
    let two = T::from(2.0);
    let p = pressure_generic(rho, u, v, e, gamma);
    let p_rho = -g1 * T::from(0.5) * (u * u + v * v);
    let p_u = -g1 * rho * u;
    let p_v = -g1 * rho * v;
    let p_e = g1;
    let h = e + p;
    let one_pe = T::from(1.0) + p_e;

    let a1 = [
        [u, rho, zero, zero],
        [u * u + p_rho, two * rho * u + p_u, p_v, p_e],
        [u * v, rho * v, rho * u, zero],
        [p_rho * u, h + p_u * u, p_v * u, one_pe * u],
    ];
    let a2 = [
        [v, zero, rho, zero],
        [u * v, rho * v, rho * u, zero],
        [v * v + p_rho, p_u, two * rho * v + p_v, p_e],
        [p_rho * v, p_u * v, h + p_v * v, one_pe * v],
    ];
    (a1, a2)
}

/// `∂x F1(w) + ∂y F2(w)` by the chain rule, given the state and its spatial
/// derivatives.
pub fn interior_residual_generic<T: Real>(w: [T; 4], wx: [T; 4], wy: [T; 4], gamma: f64) -> [T; 4] {
    let (a1, a2) = flux_jacobians(w, gamma);
    let mut r = [T::from(0.0); 4];
    for k in 0..4 {
        let mut acc = T::from(0.0);
        for m in 0..4 {
            acc = acc + a1[k][m] * wx[m] + a2[k][m] * wy[m];
        }
        r[k] = acc;
    }
    r
}

pub fn interior_residual(
    w: &PrimitiveState,
    wx: [f64; 4],
    wy: [f64; 4],
    gas: &GasConstants,
) -> [f64; 4] {
    interior_residual_generic(w.to_array(), wx, wy, gas.gamma)
}

/// Residual together with `∂r/∂w` (`[equation][state entry]`), the latter
/// from four dual-number sweeps. `∂r/∂wx` and `∂r/∂wy` are simply the flux
/// Jacobians.
pub fn interior_residual_state_derivative(
    w: [f64; 4],
    wx: [f64; 4],
    wy: [f64; 4],
    gamma: f64,
) -> ([f64; 4], [[f64; 4]; 4]) {
    let r = interior_residual_generic(w, wx, wy, gamma);
    let wxd = wx.map(Dual::constant);
    let wyd = wy.map(Dual::constant);
    let mut d = [[0.0; 4]; 4];
    for n in 0..4 {
        let mut wd = w.map(Dual::constant);
        wd[n].eps = 1.0;
        let rd = interior_residual_generic(wd, wxd, wyd, gamma);
        for k in 0..4 {
            d[k][n] = rd[k].eps;
        }
    }
    (r, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Inflow,
    Wall,
    Outflow,
    /// Mirror plane; constrained like a slip wall.
    Symmetry,
}

impl BoundaryTag {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inflow" => Ok(Self::Inflow),
            "wall" => Ok(Self::Wall),
            "outflow" => Ok(Self::Outflow),
            "symmetry" => Ok(Self::Symmetry),
            other => Err(Error::Argument(format!("unknown boundary tag '{other}'"))),
        }
    }
}

/// Boundary operator. `normal` is the outward unit normal of the domain at
/// `x`; it only matters for wall and symmetry points. Inflow yields four
/// residuals, wall and symmetry one, outflow none.
pub fn boundary_residual(
    _x: [f64; 2],
    normal: [f64; 2],
    w: &PrimitiveState,
    psi: PdeParameter,
    tag: BoundaryTag,
    gas: &GasConstants,
) -> Vec<f64> {
    match tag {
        BoundaryTag::Inflow => {
            let f = freestream_state(psi.mach, gas).to_array();
            w.to_array().iter().zip(f).map(|(a, b)| a - b).collect()
        }
        BoundaryTag::Wall | BoundaryTag::Symmetry => vec![w.u * normal[0] + w.v * normal[1]],
        BoundaryTag::Outflow => Vec::new(),
    }
}

/// Reference scales that make the four state entries O(1):
/// `(ρ∞, a∞, a∞, ρ∞ a∞²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NondimScales {
    pub state: [f64; 4],
    pub pressure: f64,
    pub temperature: f64,
}

impl NondimScales {
    pub fn freestream(gas: &GasConstants) -> Self {
        let a = gas.freestream_sound_speed();
        Self {
            state: [RHO_INF, a, a, RHO_INF * a * a],
            pressure: RHO_INF * a * a,
            temperature: T_INF,
        }
    }
}
