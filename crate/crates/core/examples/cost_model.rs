//! Analytic forward cost versus an instrumented MAC count.

use eris::linalg::Rng;
use eris::model::{estimate_cost, ArchConfig, MacCounter, ModelParams};

fn main() -> eris::Result<()> {
    let length = 32;
    let arch = ArchConfig::benchmark();
    let est = estimate_cost(&arch, length);
    println!("benchmark architecture, N = {length}");
    println!("  conv MACs       {}", est.conv_macs);
    println!("  head MACs       {}", est.head_macs);
    println!("  total MACs      {}", est.time_macs);
    println!("  parameters      {}", est.param_count);
    println!("  activations     {}", est.activation_count);

    let mut rng = Rng::new(0);
    let params = ModelParams::init(&arch, &mut rng)?;
    let x = rng.normal_vec(length * arch.in_channels, 1.0);
    let mut macs = MacCounter::default();
    params.forward_energies(&x, &mut macs)?;
    println!("  counted MACs    {}", macs.0);

    println!("\nlength  estimated  counted");
    for n in [8, 64, 256, 1024] {
        let x = rng.normal_vec(n * arch.in_channels, 1.0);
        let mut macs = MacCounter::default();
        params.forward_energies(&x, &mut macs)?;
        println!("{n:<7} {:<10} {}", estimate_cost(&arch, n).time_macs, macs.0);
    }
    Ok(())
}
