//! Batch objective: forward pass through every branch, the weighted loss, and
//! the hand-derived backward pass into a [`ModelParams`]-shaped gradient.

use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, softmax};
use crate::losses::{self, LossBreakdown, LossParts, Margins};
use crate::model::{MacCounter, ModelParams};

/// Effective weight of each term; zero switches a term off entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub dse: f64,
    pub lse: f64,
    pub ortho: f64,
    /// weight on the KL smoothing term (1 when enabled)
    pub reg: f64,
    pub disc: f64,
}

impl TermWeights {
    pub fn all(lambda1: f64, lambda2: f64, lambda_adv: f64) -> Self {
        Self {
            dse: lambda1,
            lse: lambda2,
            ortho: 1.0,
            reg: 1.0,
            disc: lambda_adv,
        }
    }
}

/// How the discriminator loss reaches the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorCoupling {
    /// Gradient reversal: the encoder receives the negated gradient.
    Reversed,
    /// Plain gradient; used to audit against finite differences.
    Plain,
}

/// Latent perturbations and the (fixed) clean predictive distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialTargets {
    pub perturbations: Vec<Vec<f64>>,
    pub clean_probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveSpec<'a> {
    pub weights: TermWeights,
    pub margins: Margins,
    pub repulsion_cap: Option<f64>,
    /// Lower bound on the true-class term of both energy losses.
    pub energy_floor: Option<f64>,
    pub coupling: DiscriminatorCoupling,
    /// Required when `weights.reg > 0`.
    pub adversarial: Option<&'a AdversarialTargets>,
}

#[derive(Debug, Clone)]
pub struct ObjectiveOutput {
    pub breakdown: LossBreakdown,
    pub grads: Option<ModelParams>,
    /// `argmin C_y` per sample of the batch
    pub predictions: Vec<usize>,
    /// Distance to the nearest non-differentiable point (hinge or ReLU).
    pub kink_margin: f64,
}

pub fn evaluate_objective(
    params: &ModelParams,
    ds: &TimeSeriesDataset,
    indices: &[usize],
    spec: &ObjectiveSpec<'_>,
    with_grad: bool,
) -> Result<ObjectiveOutput> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let w = spec.weights;
    let adv = if w.reg > 0.0 {
        let adv = spec
            .adversarial
            .ok_or_else(|| Error::InvalidArgument("smoothing term enabled without adversarial targets".into()))?;
        if adv.perturbations.len() != indices.len() || adv.clean_probs.len() != indices.len() {
            return Err(Error::InvalidArgument("adversarial targets do not match the batch".into()));
        }
        Some(adv)
    } else {
        None
    };
    let n = indices.len() as f64;
    let mut grads = with_grad.then(|| params.zeros_like());
    let mut sums = LossParts::default();
    let mut predictions = Vec::with_capacity(indices.len());
    let mut kink = f64::INFINITY;
    let mut macs = MacCounter::default();
    let b = params.arch.encoding_dim;

    for (s, &i) in indices.iter().enumerate() {
        let (f0, enc_trace) = params.encode_traced(ds.sample(i), &mut macs)?;
        kink = kink.min(enc_trace.kink_margin());
        let y = ds.class_label(i);
        let d = ds.domain_label(i);
        let mut d_f0 = vec![0.0; b];

        if w.dse > 0.0 {
            let zd = ModelParams::project(&params.w_domain, &f0, &mut macs);
            let (ed, tr) = params.energy_domain.forward_traced(&zd, &mut macs);
            kink = kink.min(tr.kink_margin());
            kink = kink.min(losses::hinge_kink_distance(&ed, d, spec.margins.domain, spec.energy_floor));
            let (v, g) = losses::contrastive_energy_floored(&ed, d, spec.margins.domain, spec.energy_floor)?;
            sums.l_dse += v;
            if let Some(gr) = grads.as_mut() {
                let scale = w.dse / n;
                let g: Vec<f64> = g.iter().map(|x| x * scale).collect();
                let dz = params.energy_domain.backward(&tr, &g, &mut gr.energy_domain);
                let df = ModelParams::project_backward(&params.w_domain, &f0, &dz, &mut gr.w_domain);
                add_into(&mut d_f0, &df);
            }
        }

        let zl = ModelParams::project(&params.w_label, &f0, &mut macs);
        let (ey, ey_trace) = params.energy_label.forward_traced(&zl, &mut macs);
        let dists = params.prototype_distances(&f0);
        let consistency: Vec<f64> = ey.iter().zip(&dists).map(|(e, q)| e + q).collect();
        predictions.push(argmin(&consistency));

        if w.lse > 0.0 {
            kink = kink.min(ey_trace.kink_margin());
            kink = kink.min(losses::hinge_kink_distance(&ey, y, spec.margins.label, spec.energy_floor));
            let (v, g) = losses::contrastive_energy_floored(&ey, y, spec.margins.label, spec.energy_floor)?;
            sums.l_cl += v;
            let proto = losses::loss_proto(&f0, &params.prototypes, y, spec.margins.prototype, spec.repulsion_cap)?;
            if let Some(cap) = spec.repulsion_cap {
                for (k, q) in dists.iter().enumerate() {
                    if k != y {
                        kink = kink.min((q - cap).abs());
                    }
                }
            }
            sums.l_proto += proto.value;
            if let Some(gr) = grads.as_mut() {
                let scale = w.lse / n;
                let g: Vec<f64> = g.iter().map(|x| x * scale).collect();
                let dz = params.energy_label.backward(&ey_trace, &g, &mut gr.energy_label);
                let df = ModelParams::project_backward(&params.w_label, &f0, &dz, &mut gr.w_label);
                add_into(&mut d_f0, &df);
                for (a, g) in d_f0.iter_mut().zip(&proto.grad_f0) {
                    *a += scale * g;
                }
                gr.prototypes.add_scaled(&proto.grad_prototypes, scale)?;
            }
        }

        if let Some(adv) = adv {
            let r = &adv.perturbations[s];
            let p_clean = &adv.clean_probs[s];
            let f_adv: Vec<f64> = f0.iter().zip(r).map(|(a, b)| a + b).collect();
            let za = ModelParams::project(&params.w_label, &f_adv, &mut macs);
            let (ea, ea_trace) = params.energy_label.forward_traced(&za, &mut macs);
            kink = kink.min(ea_trace.kink_margin());
            let dist_a = params.prototype_distances(&f_adv);
            let neg_c: Vec<f64> = ea.iter().zip(&dist_a).map(|(e, q)| -(e + q)).collect();
            let q = softmax(&neg_c);
            sums.l_reg += losses::kl_from_logits(p_clean, &neg_c);
            if let Some(gr) = grads.as_mut() {
                // ∂KL/∂C = p − q since the logits are −C
                let scale = w.reg / n;
                let dc: Vec<f64> = p_clean.iter().zip(&q).map(|(p, q)| scale * (p - q)).collect();
                let dz = params.energy_label.backward(&ea_trace, &dc, &mut gr.energy_label);
                let mut df = ModelParams::project_backward(&params.w_label, &f_adv, &dz, &mut gr.w_label);
                for (k, &dck) in dc.iter().enumerate() {
                    let pk = params.prototypes.row(k);
                    let gp = gr.prototypes.row_mut(k);
                    for j in 0..b {
                        let diff = 2.0 * (f_adv[j] - pk[j]);
                        df[j] += dck * diff;
                        gp[j] -= dck * diff;
                    }
                }
                add_into(&mut d_f0, &df);
            }
        }

        if w.disc > 0.0 {
            let (logits, tr) = params.discriminator.forward_traced(&f0, &mut macs);
            kink = kink.min(tr.kink_margin());
            let (v, g) = losses::loss_disc(&logits, d)?;
            sums.l_disc += v;
            if let Some(gr) = grads.as_mut() {
                let scale = w.disc / n;
                let g: Vec<f64> = g.iter().map(|x| x * scale).collect();
                let df = params.discriminator.backward(&tr, &g, &mut gr.discriminator);
                let sign = match spec.coupling {
                    DiscriminatorCoupling::Reversed => -1.0,
                    DiscriminatorCoupling::Plain => 1.0,
                };
                for (a, g) in d_f0.iter_mut().zip(&df) {
                    *a += sign * g;
                }
            }
        }

        if let Some(gr) = grads.as_mut() {
            params.encode_backward(&enc_trace, &d_f0, gr);
        }
    }

    let mut parts = LossParts {
        l_dse: sums.l_dse / n,
        l_cl: sums.l_cl / n,
        l_proto: sums.l_proto / n,
        l_ortho: 0.0,
        l_reg: sums.l_reg / n,
        l_disc: sums.l_disc / n,
    };
    if w.ortho > 0.0 {
        let o = losses::loss_ortho(&params.w_domain, &params.w_label)?;
        parts.l_ortho = o.value;
        if let Some(gr) = grads.as_mut() {
            gr.w_domain.add_scaled(&o.grad_wd, w.ortho)?;
            gr.w_label.add_scaled(&o.grad_wl, w.ortho)?;
        }
    }
    let breakdown = losses::loss_total(&parts, w.dse, w.lse, w.disc)?;
    breakdown.check_finite()?;
    Ok(ObjectiveOutput {
        breakdown,
        grads,
        predictions,
        kink_margin: kink,
    })
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (k, &x)| if x < v[best] { k } else { best })
}

/// `softmax(−C_y(F0))` for every listed sample.
pub fn clean_probabilities(params: &ModelParams, ds: &TimeSeriesDataset, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    indices
        .iter()
        .map(|&i| {
            let f0 = params.encode_one(ds.sample(i))?;
            let neg: Vec<f64> = params.consistency_error(&f0).iter().map(|c| -c).collect();
            Ok(linalg::softmax(&neg))
        })
        .collect()
}
