//! Latent adversarial directions found by power iteration raise the
//! predictive KL far more than random directions of the same length.

use eris::data::{gen_synthetic, SyntheticConfig};
use eris::linalg::{self, Rng};
use eris::losses::loss_reg;
use eris::model::{ArchConfig, ModelParams};
use eris::train::{adv_perturbation, ConsistencyPredictor, LatentPredictor};

fn main() -> eris::Result<()> {
    let ds = gen_synthetic(&SyntheticConfig::default())?;
    let arch = ArchConfig::benchmark().fitted_to(&ds);
    let mut rng = Rng::new(3);
    let mut params = ModelParams::init(&arch, &mut rng)?;
    for (_, m) in params.tensors_mut() {
        for v in m.as_mut_slice() {
            *v *= 10.0;
        }
    }
    let pred = ConsistencyPredictor(&params);
    println!("eps    iters  KL adversarial  KL random");
    for eps in [0.01, 0.1, 0.5] {
        for iters in [1, 3] {
            let (mut adv, mut rnd) = (0.0, 0.0);
            let samples = 40;
            for i in 0..samples {
                let f0 = params.encode_one(ds.sample(i * 7))?;
                let p = pred.probs(&f0);
                let r = adv_perturbation(&pred, &f0, eps, iters, &mut rng);
                let shifted: Vec<f64> = f0.iter().zip(&r).map(|(a, b)| a + b).collect();
                adv += loss_reg(&p, &pred.probs(&shifted))?;
                let u = rng.unit_vector(f0.len());
                let shifted: Vec<f64> = f0.iter().zip(&u).map(|(a, b)| a + eps * b).collect();
                rnd += loss_reg(&p, &pred.probs(&shifted))?;
            }
            println!(
                "{eps:<6} {iters:<6} {:<15.3e} {:.3e}",
                adv / samples as f64,
                rnd / samples as f64
            );
        }
    }
    println!("perturbation norm check: {:.3}", linalg::norm(&adv_perturbation(&pred, &params.encode_one(ds.sample(0))?, 0.5, 1, &mut rng)));
    Ok(())
}
