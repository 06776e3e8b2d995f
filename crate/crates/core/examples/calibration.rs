//! Expected calibration error: a calibrated simulator, an overconfident
//! predictor, and a trained model's reliability table.

use eris::data::{gen_synthetic, lodo_split, SyntheticConfig};
use eris::eval::{ece, predict_dataset, DEFAULT_ECE_BINS};
use eris::linalg::Rng;
use eris::model::ArchConfig;
use eris::train::{fit, TrainConfig};

fn main() -> eris::Result<()> {
    let mut rng = Rng::new(1);
    let conf: Vec<f64> = (0..10_000).map(|_| rng.uniform_range(0.25, 1.0)).collect();
    let hits: Vec<bool> = conf.iter().map(|&c| rng.bernoulli(c)).collect();
    println!("calibrated simulator: ECE {:.4}", ece(&conf, &hits, DEFAULT_ECE_BINS)?);

    let conf = vec![0.8; 1000];
    let hits: Vec<bool> = (0..1000).map(|i| i % 5 < 3).collect();
    println!("confidence 0.8, accuracy 0.6: ECE {:.4}", ece(&conf, &hits, DEFAULT_ECE_BINS)?);

    let ds = gen_synthetic(&SyntheticConfig::default())?;
    let (train, test) = lodo_split(&ds, 0)?;
    let (params, _) = fit(&train, &TrainConfig::benchmark(), &ArchConfig::benchmark().fitted_to(&ds))?;
    let pred = predict_dataset(&params, &test)?;
    let hits: Vec<bool> = pred.classes.iter().zip(test.class_labels()).map(|(p, y)| p == y).collect();
    println!("\ntrained model on held-out domain 0: ECE {:.4}", ece(&pred.confidences, &hits, DEFAULT_ECE_BINS)?);
    println!("bin          n    confidence  accuracy");
    let bins = 5;
    for b in 0..bins {
        let (lo, hi) = (b as f64 / bins as f64, (b + 1) as f64 / bins as f64);
        let members: Vec<usize> = (0..hits.len())
            .filter(|&i| pred.confidences[i] > lo && pred.confidences[i] <= hi)
            .collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let c = members.iter().map(|&i| pred.confidences[i]).sum::<f64>() / n;
        let a = members.iter().filter(|&&i| hits[i]).count() as f64 / n;
        println!("({lo:.1}, {hi:.1}]  {:<4} {c:<11.3} {a:.3}", members.len());
    }
    Ok(())
}
