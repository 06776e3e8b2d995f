//! Gradient flow of the orthogonality penalty
//!
//! ```text
//! dW_d/dt = −2 · W_l W_lᵀ W_d
//! dW_l/dt = −2 · W_d W_dᵀ W_l
//! ```
//!
//! integrated with explicit Euler, plus a certificate that `‖W_dᵀ W_l‖_F²`
//! decays monotonically to zero.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::loss_ortho;

pub const MAX_HALVINGS: usize = 20;

/// Relative slack below which a loss "increase" is attributed to rounding.
const ROUNDING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub ortho_loss: Vec<f64>,
    pub frob_wd: Vec<f64>,
    pub frob_wl: Vec<f64>,
    pub frob_cross: Vec<f64>,
}

impl FlowTrajectory {
    fn record(&mut self, t: f64, wd: &Matrix, wl: &Matrix) -> Result<()> {
        let cross = wd.t_matmul(wl)?;
        let loss = cross.frob_norm_sq();
        self.times.push(t);
        self.ortho_loss.push(loss);
        self.frob_wd.push(wd.frob_norm());
        self.frob_wl.push(wl.frob_norm());
        self.frob_cross.push(loss.sqrt());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,ortho_loss,frob_Wd,frob_Wl,frob_cross\n");
        for i in 0..self.len() {
            for (k, v) in [
                self.times[i],
                self.ortho_loss[i],
                self.frob_wd[i],
                self.frob_wl[i],
                self.frob_cross[i],
            ]
            .into_iter()
            .enumerate()
            {
                if k > 0 {
                    out.push(',');
                }
                fmt_f64(&mut out, v);
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// One simultaneous explicit Euler step; both updates read the pre-step values.
pub fn flow_step(wd: &Matrix, wl: &Matrix, dt: f64) -> Result<(Matrix, Matrix)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let grads = loss_ortho(wd, wl)?;
    let mut next_d = wd.clone();
    next_d.add_scaled(&grads.grad_wd, -dt)?;
    let mut next_l = wl.clone();
    next_l.add_scaled(&grads.grad_wl, -dt)?;
    if !next_d.is_finite() || !next_l.is_finite() {
        return Err(Error::NonFinite(format!("flow step with dt = {dt}")));
    }
    Ok((next_d, next_l))
}

/// `d/dt L = −4‖W_l W_lᵀ W_d‖² − 4‖W_d W_dᵀ W_l‖²` at the given state.
pub fn loss_rate(wd: &Matrix, wl: &Matrix) -> Result<f64> {
    let g = loss_ortho(wd, wl)?;
    // the loss gradients are twice the products in the identity
    Ok(-(g.grad_wd.frob_norm_sq() + g.grad_wl.frob_norm_sq()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub trajectory: FlowTrajectory,
    pub wd: Matrix,
    pub wl: Matrix,
    /// Step size in force at the end (after any halvings).
    pub final_dt: f64,
    pub halvings: usize,
}

/// Runs `steps` accepted Euler steps, logging every `log_every` steps plus
/// the initial and final states. A step that would raise the loss is retried
/// at half the step size, and the reduced step is kept from then on.
pub fn simulate_flow(wd0: &Matrix, wl0: &Matrix, dt: f64, steps: usize, log_every: usize) -> Result<FlowResult> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let log_every = log_every.max(1);
    let mut wd = wd0.clone();
    let mut wl = wl0.clone();
    let mut traj = FlowTrajectory::default();
    traj.record(0.0, &wd, &wl)?;

    let mut dt = dt;
    let mut t = 0.0;
    let mut loss = *traj.ortho_loss.last().expect("recorded");
    let mut halvings_total = 0;
    for step in 1..=steps {
        let mut halvings = 0;
        loop {
            let (nd, nl) = flow_step(&wd, &wl, dt)?;
            let next_loss = nd.t_matmul(&nl)?.frob_norm_sq();
            if next_loss <= loss + loss * ROUNDING_SLACK {
                wd = nd;
                wl = nl;
                loss = next_loss;
                t += dt;
                break;
            }
            halvings += 1;
            halvings_total += 1;
            if halvings > MAX_HALVINGS {
                return Err(Error::FlowDiverged {
                    step,
                    halvings: MAX_HALVINGS,
                });
            }
            dt *= 0.5;
        }
        if step % log_every == 0 || step == steps {
            traj.record(t, &wd, &wl)?;
        }
    }
    Ok(FlowResult {
        trajectory: traj,
        wd,
        wl,
        final_dt: dt,
        halvings: halvings_total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertReport {
    /// Largest `L[i+1] − L[i]` over the trajectory (0 if never increasing).
    pub max_increase: f64,
    /// Index `i + 1` of the largest increase, when it exceeds the tolerance.
    pub violating_index: Option<usize>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_cross_norm: f64,
    /// `max_increase ≤ tol`
    pub monotone: bool,
    /// `final_cross_norm ≤ tol`
    pub converged: bool,
}

impl CertReport {
    pub fn certified(&self) -> bool {
        self.monotone && self.converged
    }
}

pub fn verify_lemma(traj: &FlowTrajectory, tol: f64) -> Result<CertReport> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let mut max_increase: f64 = 0.0;
    let mut worst_at = None;
    for (i, w) in traj.ortho_loss.windows(2).enumerate() {
        let inc = w[1] - w[0];
        if inc > max_increase {
            max_increase = inc;
            worst_at = Some(i + 1);
        }
    }
    let monotone = max_increase <= tol;
    let final_cross_norm = *traj.frob_cross.last().expect("non-empty");
    Ok(CertReport {
        max_increase,
        violating_index: if monotone { None } else { worst_at },
        initial_loss: traj.ortho_loss[0],
        final_loss: *traj.ortho_loss.last().expect("non-empty"),
        final_cross_norm,
        monotone,
        converged: final_cross_norm <= tol,
    })
}

/// One-line summary, handy for logs.
pub fn describe(report: &CertReport) -> String {
    let mut s = String::new();
    write!(
        s,
        "initial L={:.3e} final L={:.3e} cross={:.3e} max_increase={:.3e} monotone={} converged={}",
        report.initial_loss,
        report.final_loss,
        report.final_cross_norm,
        report.max_increase,
        report.monotone,
        report.converged
    )
    .expect("write to String");
    s
}
