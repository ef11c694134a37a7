use crate::error::{Error, Result};
use crate::euler::{normal_flux, pressure, GasConstants, PrimitiveState};

/// Local Lax–Friedrichs flux through a face with unit normal `n` pointing
/// from the left state to the right one.
pub fn rusanov_flux(
    wl: &PrimitiveState,
    wr: &PrimitiveState,
    n: [f64; 2],
    gas: &GasConstants,
) -> Result<[f64; 4]> {
    let (pl, pr) = (pressure(wl, gas), pressure(wr, gas));
    if !(pl > 0.0 && pr > 0.0 && wl.rho > 0.0 && wr.rho > 0.0) {
        return Err(Error::Domain(format!(
            "non-positive face state (pL={pl}, pR={pr})"
        )));
    }
    Ok(rusanov_flux_unchecked(wl, pl, wr, pr, n, gas))
}

/// Rusanov flux with pressures supplied; the caller guarantees positivity.
#[inline]
pub(crate) fn rusanov_flux_unchecked(
    wl: &PrimitiveState,
    pl: f64,
    wr: &PrimitiveState,
    pr: f64,
    n: [f64; 2],
    gas: &GasConstants,
) -> [f64; 4] {
    let fl = normal_flux(wl, n, gas);
    let fr = normal_flux(wr, n, gas);
    let al = (gas.gamma * pl / wl.rho).sqrt();
    let ar = (gas.gamma * pr / wr.rho).sqrt();
    let unl = (wl.u * n[0] + wl.v * n[1]).abs();
    let unr = (wr.u * n[0] + wr.v * n[1]).abs();
    let s = (unl + al).max(unr + ar);
    let ul = wl.to_conservative().to_array();
    let ur = wr.to_conservative().to_array();
    let mut f = [0.0; 4];
    for k in 0..4 {
        f[k] = 0.5 * (fl[k] + fr[k]) - 0.5 * s * (ur[k] - ul[k]);
    }
    f
}
