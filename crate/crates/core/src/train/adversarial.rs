//! Latent-space adversarial perturbations by power iteration on the
//! predictive KL divergence.

use crate::data::TimeSeriesDataset;
use crate::error::Result;
use crate::linalg::{self, Rng};
use crate::model::{MacCounter, ModelParams};

use super::objective::AdversarialTargets;

/// Finite step along the probe direction.
pub const XI: f64 = 1e-6;

/// A predictor over a latent vector, with the input gradient of
/// `KL(p_clean ‖ p(h))` for a fixed `p_clean`.
pub trait LatentPredictor {
    fn probs(&self, h: &[f64]) -> Vec<f64>;
    fn kl_input_grad(&self, p_clean: &[f64], h: &[f64]) -> Vec<f64>;
}

/// The model's label distribution `softmax(−C_y(h))` as a function of `F0 = h`.
pub struct ConsistencyPredictor<'a>(pub &'a ModelParams);

impl LatentPredictor for ConsistencyPredictor<'_> {
    fn probs(&self, h: &[f64]) -> Vec<f64> {
        let neg: Vec<f64> = self.0.consistency_error(h).iter().map(|c| -c).collect();
        linalg::softmax(&neg)
    }

    fn kl_input_grad(&self, p_clean: &[f64], h: &[f64]) -> Vec<f64> {
        let params = self.0;
        let mut macs = MacCounter::default();
        let z = ModelParams::project(&params.w_label, h, &mut macs);
        let (ey, trace) = params.energy_label.forward_traced(&z, &mut macs);
        let neg: Vec<f64> = ey
            .iter()
            .zip(params.prototype_distances(h))
            .map(|(e, q)| -(e + q))
            .collect();
        let q = linalg::softmax(&neg);
        let dc: Vec<f64> = p_clean.iter().zip(&q).map(|(p, q)| p - q).collect();
        let dz = params.energy_label.backward_input(&trace, &dc);
        let w = &params.w_label;
        let mut grad: Vec<f64> = (0..w.rows()).map(|i| linalg::dot(w.row(i), &dz)).collect();
        for (k, &dck) in dc.iter().enumerate() {
            let pk = params.prototypes.row(k);
            for (j, g) in grad.iter_mut().enumerate() {
                *g += dck * 2.0 * (h[j] - pk[j]);
            }
        }
        grad
    }
}

/// `eps · u` where `u` approximates the direction that most increases
/// `KL(p(h) ‖ p(h + r))`: start from a random unit vector and repeatedly
/// replace it with the normalized KL gradient at `h + ξ·u`.
///
/// Returns the zero vector for `eps = 0` or when the gradient vanishes.
pub fn adv_perturbation<P: LatentPredictor>(
    predictor: &P,
    h: &[f64],
    eps: f64,
    iters: usize,
    rng: &mut Rng,
) -> Vec<f64> {
    let dim = h.len();
    if eps <= 0.0 {
        return vec![0.0; dim];
    }
    let p_clean = predictor.probs(h);
    let mut u = rng.unit_vector(dim);
    for _ in 0..iters {
        let probe: Vec<f64> = h.iter().zip(&u).map(|(a, b)| a + XI * b).collect();
        let g = predictor.kl_input_grad(&p_clean, &probe);
        let len = linalg::norm(&g);
        if !(len > 0.0) || !len.is_finite() {
            return vec![0.0; dim];
        }
        u = g.into_iter().map(|x| x / len).collect();
    }
    u.into_iter().map(|x| eps * x).collect()
}

/// Perturbations and clean distributions for a batch, one RNG stream per sample.
pub fn prepare_adversarial(
    params: &ModelParams,
    ds: &TimeSeriesDataset,
    indices: &[usize],
    eps: f64,
    iters: usize,
    rng: &Rng,
) -> Result<AdversarialTargets> {
    let predictor = ConsistencyPredictor(params);
    let mut perturbations = Vec::with_capacity(indices.len());
    let mut clean_probs = Vec::with_capacity(indices.len());
    for (s, &i) in indices.iter().enumerate() {
        let f0 = params.encode_one(ds.sample(i))?;
        let mut stream = rng.split(s as u64);
        perturbations.push(adv_perturbation(&predictor, &f0, eps, iters, &mut stream));
        clean_probs.push(predictor.probs(&f0));
    }
    Ok(AdversarialTargets {
        perturbations,
        clean_probs,
    })
}
