//! Feature correlation and mutual information of F0 with and without the
//! orthogonality penalty.

use eris::data::{gen_synthetic, lodo_split, SyntheticConfig};
use eris::eval::{feature_correlation_matrix, mutual_information_matrix, DEFAULT_MI_BINS};
use eris::model::ArchConfig;
use eris::train::{fit, Ablation, TrainConfig};

fn main() -> eris::Result<()> {
    let ds = gen_synthetic(&SyntheticConfig::default())?;
    let (train, test) = lodo_split(&ds, 0)?;
    let arch = ArchConfig::benchmark().fitted_to(&ds);
    for ab in [Ablation::F, Ablation::G] {
        let (params, hist) = fit(&train, &TrainConfig::benchmark().with_ablation(ab), &arch)?;
        let feats = params.encode(&test)?;
        let corr = feature_correlation_matrix(&feats)?;
        let mi = mutual_information_matrix(&feats, DEFAULT_MI_BINS)?;
        let within = {
            let b = corr.matrix.rows();
            let off: Vec<f64> = (0..b)
                .flat_map(|i| (0..b).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| corr.matrix.get(i, j).abs())
                .collect();
            off.iter().filter(|&&v| v <= 0.1).count() as f64 / off.len() as f64
        };
        println!(
            "{}: mean |corr| {:.4} (share within 0.1: {:.3}), mean MI {:.4} nats, final ‖WdᵀWl‖ {:.3e}{}",
            ab.name(),
            corr.mean_abs_off_diagonal(),
            within,
            mi.mean_abs_off_diagonal(),
            hist.cross_norms().last().copied().unwrap_or(f64::NAN),
            if !corr.degenerate.is_empty() { " (constant features present)" } else { "" }
        );
    }
    Ok(())
}
