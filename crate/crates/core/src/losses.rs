//! Loss terms with analytic gradients, their weighted combination, and a
//! central-difference gradient checker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Margins {
    pub domain: f64,
    pub label: f64,
    pub prototype: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            domain: 1.0,
            label: 1.0,
            prototype: 1.0,
        }
    }
}

impl Margins {
    pub fn validate(&self) -> Result<()> {
        for (name, m) in [
            ("domain", self.domain),
            ("label", self.label),
            ("prototype", self.prototype),
        ] {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} margin must be >= 0, got {m}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_dse: f64,
    pub l_cl: f64,
    pub l_proto: f64,
    pub l_lse: f64,
    pub l_ortho: f64,
    pub l_reg: f64,
    pub l_disc: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn components(&self) -> [(&'static str, f64); 8] {
        [
            ("l_dse", self.l_dse),
            ("l_cl", self.l_cl),
            ("l_proto", self.l_proto),
            ("l_lse", self.l_lse),
            ("l_ortho", self.l_ortho),
            ("l_reg", self.l_reg),
            ("l_disc", self.l_disc),
            ("l_total", self.l_total),
        ]
    }

    /// Error naming the first non-finite component.
    pub fn check_finite(&self) -> Result<()> {
        match self.components().iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::NonFinite(format!("loss component {name} = {v}"))),
            None => Ok(()),
        }
    }
}

fn check_index(what: &'static str, index: usize, size: usize) -> Result<()> {
    if index >= size {
        return Err(Error::IndexOutOfRange { what, index, size });
    }
    Ok(())
}

/// `E[t] + Σ_{j≠t} max(0, m − E[j])` and its gradient in `E`.
///
/// At a kink (`E[j] == m`) the zero subgradient is returned.
pub fn contrastive_energy(energies: &[f64], target: usize, margin: f64) -> Result<(f64, Vec<f64>)> {
    contrastive_energy_floored(energies, target, margin, None)
}

/// [`contrastive_energy`] with the target term replaced by `max(E[t], floor)`
/// when a floor is given. The unfloored loss is unbounded below once the
/// energy head separates the classes.
pub fn contrastive_energy_floored(
    energies: &[f64],
    target: usize,
    margin: f64,
    floor: Option<f64>,
) -> Result<(f64, Vec<f64>)> {
    check_index("target", target, energies.len())?;
    let mut grad = vec![0.0; energies.len()];
    let mut value = energies[target];
    grad[target] = 1.0;
    if let Some(f) = floor {
        if energies[target] <= f {
            value = f;
            grad[target] = 0.0;
        }
    }
    for (j, &e) in energies.iter().enumerate() {
        if j != target && margin - e > 0.0 {
            value += margin - e;
            grad[j] = -1.0;
        }
    }
    Ok((value, grad))
}

/// Distance of the energies from the nearest hinge kink.
pub fn hinge_kink_distance(energies: &[f64], target: usize, margin: f64, floor: Option<f64>) -> f64 {
    let hinge = energies
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target)
        .fold(f64::INFINITY, |m, (_, e)| m.min((margin - e).abs()));
    match floor {
        Some(f) => hinge.min((energies[target] - f).abs()),
        None => hinge,
    }
}

/// Domain-specific energy loss for one sample.
pub fn loss_dse(energies: &[f64], true_domain: usize, margin: f64) -> Result<f64> {
    Ok(contrastive_energy(energies, true_domain, margin)?.0)
}

/// Label-wise contrastive energy loss for one sample.
pub fn loss_cl(energies: &[f64], true_label: usize, margin: f64) -> Result<f64> {
    Ok(contrastive_energy(energies, true_label, margin)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtoLoss {
    pub value: f64,
    pub grad_f0: Vec<f64>,
    /// `[N_C × b]`
    pub grad_prototypes: Matrix,
}

/// Prototype contrastive loss
/// `‖F0 − P_y‖² − 1/(N_C − 1) · Σ_{y'≠y} (‖F0 − P_y'‖² + m)`.
///
/// Unbounded below. With `repulsion_cap = Some(r)` each repelled squared
/// distance is capped at `r` (zero gradient beyond it).
pub fn loss_proto(
    f0: &[f64],
    prototypes: &Matrix,
    true_label: usize,
    margin: f64,
    repulsion_cap: Option<f64>,
) -> Result<ProtoLoss> {
    let nc = prototypes.rows();
    if nc < 2 {
        return Err(Error::SingleClassPrototype);
    }
    check_index("true label", true_label, nc)?;
    if prototypes.cols() != f0.len() {
        return Err(Error::DimensionMismatch {
            op: "prototype loss",
            left: (1, f0.len()),
            right: prototypes.shape(),
        });
    }
    let b = f0.len();
    let inv = 1.0 / (nc - 1) as f64;
    let mut grad_f0 = vec![0.0; b];
    let mut grad_p = Matrix::zeros(nc, b);

    let py = prototypes.row(true_label);
    let mut value = linalg::sq_dist(f0, py);
    for i in 0..b {
        let diff = f0[i] - py[i];
        grad_f0[i] += 2.0 * diff;
        grad_p.row_mut(true_label)[i] -= 2.0 * diff;
    }
    for k in (0..nc).filter(|&k| k != true_label) {
        let pk = prototypes.row(k);
        let dist = linalg::sq_dist(f0, pk);
        let capped = matches!(repulsion_cap, Some(r) if dist > r);
        let used = if capped { repulsion_cap.unwrap() } else { dist };
        value -= inv * (used + margin);
        if !capped {
            for i in 0..b {
                let diff = f0[i] - pk[i];
                grad_f0[i] -= 2.0 * inv * diff;
                grad_p.row_mut(k)[i] += 2.0 * inv * diff;
            }
        }
    }
    Ok(ProtoLoss {
        value,
        grad_f0,
        grad_prototypes: grad_p,
    })
}

/// `loss_cl + loss_proto` for one sample.
pub fn loss_lse(
    label_energies: &[f64],
    f0: &[f64],
    prototypes: &Matrix,
    true_label: usize,
    margins: &Margins,
) -> Result<f64> {
    let cl = loss_cl(label_energies, true_label, margins.label)?;
    let proto = loss_proto(f0, prototypes, true_label, margins.prototype, None)?;
    Ok(cl + proto.value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthoLoss {
    pub value: f64,
    pub grad_wd: Matrix,
    pub grad_wl: Matrix,
}

/// `‖W_dᵀ W_l‖_F²` with gradients `2·W_l W_lᵀ W_d` and `2·W_d W_dᵀ W_l`.
pub fn loss_ortho(wd: &Matrix, wl: &Matrix) -> Result<OrthoLoss> {
    if wd.shape() != wl.shape() {
        return Err(Error::DimensionMismatch {
            op: "orthogonality loss",
            left: wd.shape(),
            right: wl.shape(),
        });
    }
    // W_l W_lᵀ W_d = W_l (W_lᵀ W_d); the d×d cross term is the cheap factor
    let cross = wd.t_matmul(wl)?; // W_dᵀ W_l
    let grad_wd = wl.matmul(&cross.transpose())?.scale(2.0);
    let grad_wl = wd.matmul(&cross)?.scale(2.0);
    Ok(OrthoLoss {
        value: cross.frob_norm_sq(),
        grad_wd,
        grad_wl,
    })
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} has negative or non-finite entries")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// `KL(p_clean ‖ p_adv)` with `0·ln(0/q) = 0`.
pub fn loss_reg(p_clean: &[f64], p_adv: &[f64]) -> Result<f64> {
    if p_clean.len() != p_adv.len() {
        return Err(Error::DimensionMismatch {
            op: "kl divergence",
            left: (1, p_clean.len()),
            right: (1, p_adv.len()),
        });
    }
    check_distribution("clean distribution", p_clean)?;
    check_distribution("adversarial distribution", p_adv)?;
    Ok(kl_divergence(p_clean, p_adv))
}

pub(crate) fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// `KL(p ‖ softmax(z))` evaluated in log space, finite even where the
/// softmax underflows.
pub fn kl_from_logits(p: &[f64], logits: &[f64]) -> f64 {
    let lse = linalg::log_sum_exp(logits);
    p.iter()
        .zip(logits)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, z)| pi * (pi.ln() - (z - lse)))
        .sum::<f64>()
        .max(0.0)
}

/// `∂ KL(p ‖ softmax(z)) / ∂z = softmax(z) − p`, with `p` held fixed.
pub fn kl_grad_logits(p_clean: &[f64], q: &[f64]) -> Vec<f64> {
    q.iter().zip(p_clean).map(|(qi, pi)| qi - pi).collect()
}

/// Softmax cross-entropy and its gradient in the logits.
pub fn loss_disc(logits: &[f64], true_domain: usize) -> Result<(f64, Vec<f64>)> {
    check_index("true domain", true_domain, logits.len())?;
    let value = linalg::log_sum_exp(logits) - logits[true_domain];
    let mut grad = linalg::softmax(logits);
    grad[true_domain] -= 1.0;
    Ok((value, grad))
}

/// Unweighted components going into [`loss_total`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub l_dse: f64,
    pub l_cl: f64,
    pub l_proto: f64,
    pub l_ortho: f64,
    pub l_reg: f64,
    pub l_disc: f64,
}

/// `λ1·l_dse + λ2·(l_cl + l_proto) + l_ortho + l_reg + λ_adv·l_disc`.
pub fn loss_total(parts: &LossParts, lambda1: f64, lambda2: f64, lambda_adv: f64) -> Result<LossBreakdown> {
    for (name, l) in [("lambda1", lambda1), ("lambda2", lambda2), ("lambda_adv", lambda_adv)] {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {l}")));
        }
    }
    let l_lse = parts.l_cl + parts.l_proto;
    Ok(LossBreakdown {
        l_dse: parts.l_dse,
        l_cl: parts.l_cl,
        l_proto: parts.l_proto,
        l_lse,
        l_ortho: parts.l_ortho,
        l_reg: parts.l_reg,
        l_disc: parts.l_disc,
        l_total: lambda1 * parts.l_dse + lambda2 * l_lse + parts.l_ortho + parts.l_reg + lambda_adv * parts.l_disc,
    })
}

/// Relative error `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between the analytic gradient returned by `f` at
/// `x` and central differences over the listed coordinates.
pub fn grad_check_coords<F>(mut f: F, x: &[f64], coords: &[usize], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let (v0, analytic) = f(x)?;
    if !v0.is_finite() {
        return Err(Error::NonFinite("loss at base point".into()));
    }
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe)?.0;
        probe[i] = orig - eps;
        let minus = f(&probe)?.0;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss near coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// [`grad_check_coords`] over every coordinate.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_coords(f, x, &all, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sample_normal, Rng};
    use proptest::prelude::*;

    #[test]
    fn dse_examples() {
        let v = loss_dse(&[0.2, 1.5, 0.4], 0, 1.0).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
        assert_eq!(loss_dse(&[0.0, 1.0, 2.5], 0, 1.0).unwrap(), 0.0);
        assert_eq!(loss_dse(&[0.7], 0, 1.0).unwrap(), 0.7);
        assert!(loss_dse(&[0.1, 0.2], 2, 1.0).is_err());
    }

    #[test]
    fn cl_examples() {
        assert!((loss_cl(&[0.5, 0.1], 0, 1.0).unwrap() - 1.4).abs() < 1e-15);
        assert_eq!(loss_cl(&[0.0, 3.0], 0, 1.0).unwrap(), 0.0);
        assert_eq!(loss_cl(&[-0.25], 0, 1.0).unwrap(), -0.25);
    }

    #[test]
    fn proto_examples() {
        let p = Matrix::from_rows(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let v = loss_proto(&[0.0, 0.0], &p, 0, 1.0, None).unwrap().value;
        assert!((v + 5.0).abs() < 1e-15);

        let same = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let v = loss_proto(&[1.0, 1.0], &same, 2, 0.7, None).unwrap().value;
        assert!((v + 0.7).abs() < 1e-15);

        let single = Matrix::from_rows(&[&[0.0, 0.0]]);
        let err = loss_proto(&[0.0, 0.0], &single, 0, 1.0, None).unwrap_err();
        assert_eq!(err.to_string(), "prototype loss undefined for single class");
    }

    #[test]
    fn proto_cap_limits_repulsion() {
        let p = Matrix::from_rows(&[&[0.0, 0.0], &[10.0, 0.0]]);
        let uncapped = loss_proto(&[0.0, 0.0], &p, 0, 0.0, None).unwrap();
        let capped = loss_proto(&[0.0, 0.0], &p, 0, 0.0, Some(4.0)).unwrap();
        assert_eq!(uncapped.value, -100.0);
        assert_eq!(capped.value, -4.0);
        assert_eq!(capped.grad_prototypes.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn lse_is_sum_of_parts() {
        let e = [0.5, 0.1];
        let p = Matrix::from_rows(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let f0 = [0.0, 0.0];
        let m = Margins::default();
        let want = 1.4 + (-5.0);
        assert!((loss_lse(&e, &f0, &p, 0, &m).unwrap() - want).abs() < 1e-14);
        let independent = loss_cl(&e, 0, 1.0).unwrap() + loss_proto(&f0, &p, 0, 1.0, None).unwrap().value;
        assert_eq!(loss_lse(&e, &f0, &p, 0, &m).unwrap(), independent);
    }

    #[test]
    fn lse_zero_when_both_zero() {
        // CL zero: true energy 0, other above margin. Proto zero: needs
        // ‖F0−P_y‖² = mean(‖F0−P_y'‖² + m) with F0 at distance 1 from P_y and
        // the other prototype at distance 0 with m = 1.
        let e = [0.0, 2.0];
        let p = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let v = loss_lse(&e, &[0.0, 0.0], &p, 0, &Margins::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn ortho_examples() {
        let e1 = Matrix::from_rows(&[&[1.0], &[0.0]]);
        let e2 = Matrix::from_rows(&[&[0.0], &[1.0]]);
        let o = loss_ortho(&e1, &e2).unwrap();
        assert_eq!(o.value, 0.0);
        assert_eq!(o.grad_wd.frob_norm_sq(), 0.0);
        assert_eq!(o.grad_wl.frob_norm_sq(), 0.0);

        assert_eq!(loss_ortho(&Matrix::identity(2), &Matrix::identity(2)).unwrap().value, 2.0);

        let wl = Matrix::from_rows(&[&[1.0], &[1.0]]);
        let o = loss_ortho(&e1, &wl).unwrap();
        assert_eq!(o.value, 1.0);
        assert_eq!(o.grad_wd, Matrix::from_rows(&[&[2.0], &[2.0]]));

        assert!(loss_ortho(&Matrix::zeros(2, 2), &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn ortho_gradient_matches_literal_formula() {
        let mut rng = Rng::new(8);
        let wd = sample_normal(&mut rng, 6, 3, 1.0).unwrap();
        let wl = sample_normal(&mut rng, 6, 3, 1.0).unwrap();
        let o = loss_ortho(&wd, &wl).unwrap();
        let literal = wl.matmul(&wl.transpose()).unwrap().matmul(&wd).unwrap().scale(2.0);
        let diff = o.grad_wd.sub(&literal).unwrap().max_abs();
        assert!(diff < 1e-12);
    }

    #[test]
    fn ortho_grad_check_random_pairs() {
        let mut rng = Rng::new(21);
        for _ in 0..5 {
            let wd = sample_normal(&mut rng, 8, 4, 1.0).unwrap();
            let wl = sample_normal(&mut rng, 8, 4, 1.0).unwrap();
            let mut x = wd.as_slice().to_vec();
            x.extend_from_slice(wl.as_slice());
            let f = |v: &[f64]| {
                let a = Matrix::from_vec(8, 4, v[..32].to_vec())?;
                let b = Matrix::from_vec(8, 4, v[32..].to_vec())?;
                let o = loss_ortho(&a, &b)?;
                let mut g = o.grad_wd.into_vec();
                g.extend(o.grad_wl.into_vec());
                Ok((o.value, g))
            };
            assert!(grad_check(f, &x, 1e-5).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn reg_examples() {
        assert_eq!(loss_reg(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = loss_reg(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss_reg(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(loss_reg(&[-0.5, 1.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn kl_is_non_negative_on_random_pairs() {
        let mut rng = Rng::new(13);
        for _ in 0..1000 {
            let a: Vec<f64> = (0..5).map(|_| rng.uniform()).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.uniform() + 1e-3).collect();
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            let p: Vec<f64> = a.iter().map(|v| v / sa).collect();
            let q: Vec<f64> = b.iter().map(|v| v / sb).collect();
            assert!(loss_reg(&p, &q).unwrap() >= 0.0);
            let z: Vec<f64> = q.iter().map(|v| v.ln() + 3.0).collect();
            assert!((kl_from_logits(&p, &z) - kl_divergence(&p, &q)).abs() < 1e-9);
        }
    }

    #[test]
    fn floored_energy() {
        let (v, g) = contrastive_energy_floored(&[-3.0, 2.0, 0.5], 0, 1.0, Some(0.0)).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(g, vec![0.0, 0.0, -1.0]);
        let (v, g) = contrastive_energy_floored(&[0.25, 2.0, 0.5], 0, 1.0, Some(0.0)).unwrap();
        assert_eq!(v, 0.75);
        assert_eq!(g, vec![1.0, 0.0, -1.0]);
        assert_eq!(hinge_kink_distance(&[0.25, 2.0, 1.5], 0, 1.0, Some(0.0)), 0.25);
    }

    #[test]
    fn disc_examples() {
        let (v, _) = loss_disc(&[0.0; 4], 1).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-15);
        let (v, _) = loss_disc(&[10.0, 0.0, 0.0, 0.0], 0).unwrap();
        let want = (1.0 + 3.0 * (-10f64).exp()).ln();
        assert!((v - want).abs() < 1e-15);
        // 3·e⁻¹⁰ to first order
        assert!((v - 1.3619e-4).abs() < 1e-8);
        let (w, _) = loss_disc(&[17.0, 7.0, 7.0, 7.0], 0).unwrap();
        assert!((v - w).abs() < 1e-13);
        assert!(loss_disc(&[0.0; 4], 4).is_err());
    }

    #[test]
    fn total_examples() {
        let zero = loss_total(&LossParts::default(), 0.9, 2.0, 0.1).unwrap();
        assert_eq!(zero.l_total, 0.0);
        let parts = LossParts {
            l_dse: 1.0,
            l_cl: 0.25,
            l_proto: 0.75,
            ..LossParts::default()
        };
        let t = loss_total(&parts, 0.9, 2.0, 0.0).unwrap();
        assert!((t.l_total - 2.9).abs() < 1e-15);
        assert_eq!(t.l_lse, 1.0);
        let with_all = LossParts {
            l_ortho: 0.5,
            l_reg: 0.25,
            l_disc: 3.0,
            ..parts
        };
        // λ_adv = 0 is the plain weighted sum without a discriminator term
        assert_eq!(loss_total(&with_all, 0.9, 2.0, 0.0).unwrap().l_total, 0.9 + 2.0 + 0.5 + 0.25);
        assert!(loss_total(&parts, -0.1, 2.0, 0.0).is_err());
    }

    #[test]
    fn grad_check_linear_is_exact() {
        let c = [1.5, -2.0, 0.25, 4.0];
        let f = |w: &[f64]| Ok((linalg::dot(&c, w), c.to_vec()));
        assert!(grad_check(f, &[0.3, 0.1, -0.7, 2.0], 1e-4).unwrap() <= 1e-10);
        assert!(grad_check(f, &[0.0; 4], 0.0).is_err());
    }

    #[test]
    fn hinge_kink_is_detected() {
        // E = m exactly: left and right derivatives differ
        let e = [0.2, 1.0, 3.0];
        assert_eq!(hinge_kink_distance(&e, 0, 1.0, None), 0.0);
        let f = |v: &[f64]| contrastive_energy(v, 0, 1.0);
        let err = grad_check(f, &e, 1e-6).unwrap();
        assert!(err > 0.1, "kink should break finite differences, got {err}");
        // resampled away from the kink the check passes
        let e2 = [0.2, 0.9, 3.0];
        assert!(hinge_kink_distance(&e2, 0, 1.0, None) > 1e-3);
        assert!(grad_check(f, &e2, 1e-6).unwrap() < 1e-8);
    }

    proptest! {
        #[test]
        fn contrastive_bounds(e in prop::collection::vec(-3.0..3.0f64, 1..6), m in 0.0..2.0f64, t in 0usize..6) {
            let t = t % e.len();
            let v = loss_dse(&e, t, m).unwrap();
            prop_assert!(v >= e[t]);
        }

        #[test]
        fn proto_translation_invariant(shift in prop::collection::vec(-5.0..5.0f64, 3), m in 0.0..2.0f64) {
            let mut rng = Rng::new(1);
            let p = sample_normal(&mut rng, 3, 3, 1.0).unwrap();
            let f0 = rng.normal_vec(3, 1.0);
            let mut ps = p.clone();
            for k in 0..3 {
                for i in 0..3 {
                    ps.row_mut(k)[i] += shift[i];
                }
            }
            let fs: Vec<f64> = f0.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let a = loss_proto(&f0, &p, 1, m, None).unwrap();
            let b = loss_proto(&fs, &ps, 1, m, None).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-9);
        }

        #[test]
        fn proto_margin_is_constant_shift(m in 0.0..5.0f64) {
            let mut rng = Rng::new(2);
            let p = sample_normal(&mut rng, 4, 3, 1.0).unwrap();
            let f0 = rng.normal_vec(3, 1.0);
            let a = loss_proto(&f0, &p, 2, 0.0, None).unwrap();
            let b = loss_proto(&f0, &p, 2, m, None).unwrap();
            prop_assert!((a.value - m - b.value).abs() < 1e-12);
            prop_assert_eq!(a.grad_f0, b.grad_f0);
        }

        #[test]
        fn ortho_zero_iff_orthogonal(v in prop::collection::vec(-2.0..2.0f64, 12)) {
            let wd = Matrix::from_vec(3, 2, v[..6].to_vec()).unwrap();
            let wl = Matrix::from_vec(3, 2, v[6..].to_vec()).unwrap();
            let o = loss_ortho(&wd, &wl).unwrap();
            let cross = wd.t_matmul(&wl).unwrap();
            prop_assert!(o.value >= 0.0);
            prop_assert_eq!(o.value == 0.0, cross.as_slice().iter().all(|x| *x == 0.0));
        }
    }
}
