use super::SolverConfig;

/// CFL number ramped linearly from `cfl_start` to `cfl_end` over the first
/// `cfl_ramp_iters` iterations, constant afterwards.
pub fn cfl_schedule(iter: usize, cfg: &SolverConfig) -> f64 {
    if cfg.cfl_ramp_iters == 0 || iter >= cfg.cfl_ramp_iters {
        return cfg.cfl_end;
    }
    cfg.cfl_start + (cfg.cfl_end - cfg.cfl_start) * iter as f64 / cfg.cfl_ramp_iters as f64
}

/// Weight of the second-order reconstruction: 0 before `first_order_until`,
/// 1 from `blend_until` on, linear in between.
pub fn blend_schedule(iter: usize, cfg: &SolverConfig) -> f64 {
    if iter < cfg.first_order_until {
        0.0
    } else if iter >= cfg.blend_until {
        1.0
    } else {
        (iter - cfg.first_order_until) as f64 / (cfg.blend_until - cfg.first_order_until) as f64
    }
}
