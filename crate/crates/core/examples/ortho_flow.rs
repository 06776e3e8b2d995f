//! Gradient flow of the orthogonality penalty: a random 16×8 pair decays
//! monotonically, and the scalar case tracks L(t) = (1 + 4t)⁻².

use eris::linalg::{sample_normal, Matrix, Rng};
use eris::orthoflow::{describe, simulate_flow, verify_lemma};

fn main() -> eris::Result<()> {
    let mut rng = Rng::new(7);
    let wd = sample_normal(&mut rng, 16, 8, 1.0)?;
    let wl = sample_normal(&mut rng, 16, 8, 1.0)?;
    let res = simulate_flow(&wd, &wl, 1e-3, 200_000, 1_000)?;
    println!("t        ‖W_dᵀW_l‖_F²");
    // the decay is fast, so show the head of the log
    for (t, l) in res.trajectory.times.iter().zip(&res.trajectory.ortho_loss).take(12) {
        println!("{t:<8.4} {l:.3e}");
    }
    let rep = verify_lemma(&res.trajectory, 1e-12)?;
    println!("{}", describe(&rep));
    println!("dt halvings {}, final dt {:.2e}", res.halvings, res.final_dt);

    let one = Matrix::from_rows(&[&[1.0]]);
    let scalar = simulate_flow(&one, &one, 1e-4, 10_000, 2_500)?;
    println!("\nscalar a = b = 1");
    for (t, l) in scalar.trajectory.times.iter().zip(&scalar.trajectory.ortho_loss) {
        let exact = (1.0 + 4.0 * t).powi(-2);
        println!("t {t:.2}  simulated {l:.6}  exact {exact:.6}");
    }
    Ok(())
}
