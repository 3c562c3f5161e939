//! Fit boosted trees on a nonlinear target, then explain one prediction with
//! TreeSHAP and rank features by mean |phi|.

use ddm::gbt::{fit, gain_ranking, mean_abs_shap_ranking, tree_shap, GbtParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let names: Vec<String> = ["rate", "pitch", "noise", "pause"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<f64>> = (0..400)
        .map(|_| (0..4).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|x| 0.6 * x[0] + if x[1] > 0.5 { 0.3 } else { 0.0 } + 0.1 * x[3] * x[0])
        .collect();
    let model = fit(&rows, &y, &GbtParams::default(), names.clone())?;
    println!(
        "{} trees, base score {:.4}",
        model.trees.len(),
        model.base_score
    );

    let x = &rows[0];
    let a = tree_shap(&model, x)?;
    println!(
        "prediction {:.4} = base {:.4} + sum(phi)",
        model.predict(x)?,
        a.base
    );
    for (n, phi) in names.iter().zip(&a.phi) {
        println!("  phi[{n}] = {phi:+.4}");
    }
    println!(
        "local accuracy error {:.1e}",
        (a.output() - model.predict(x)?).abs()
    );

    println!("mean |phi| ranking:");
    for r in mean_abs_shap_ranking(&model, &rows)? {
        println!("  {:6} {:.4}", r.name, r.score);
    }
    println!(
        "gain ranking: {:?}",
        gain_ranking(&model)
            .iter()
            .map(|r| &r.name)
            .collect::<Vec<_>>()
    );
    Ok(())
}
