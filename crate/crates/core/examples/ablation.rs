//! Configurations A to G on one held-out domain.

use eris::data::{gen_synthetic, lodo_split, SyntheticConfig};
use eris::eval::evaluate;
use eris::model::ArchConfig;
use eris::train::{fit, Ablation, TrainConfig};

fn main() -> eris::Result<()> {
    let target = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let ds = gen_synthetic(&SyntheticConfig::default())?;
    let (train, test) = lodo_split(&ds, target)?;
    let arch = ArchConfig::benchmark().fitted_to(&ds);
    println!("cfg  dse   lse   ag    ortho  accuracy  cross-norm ratio");
    for ab in Ablation::ALL {
        let cfg = TrainConfig::benchmark().with_ablation(ab);
        let (params, hist) = fit(&train, &cfg, &arch)?;
        let cn = hist.cross_norms();
        let acc = evaluate(&params, &test)?.accuracy;
        println!(
            "{:<4} {:<5} {:<5} {:<5} {:<6} {acc:<9.4} {:.3}",
            ab.name(),
            cfg.enable_dse,
            cfg.enable_lse,
            cfg.enable_ag,
            cfg.enable_ortho,
            cn[cn.len() - 1] / cn[0]
        );
    }
    Ok(())
}
