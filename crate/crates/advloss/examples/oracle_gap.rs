//! Compare the attack-approximated risk against the exhaustive grid
//! oracle on a tiny input space, and report the approximation gap.
//!
//! ```bash
//! cargo run --example oracle_gap
//! ```

use advloss::attack::{AttackSpec, NormKind};
use advloss::losses::builtin_catalog;
use advloss::model::{clean_accuracy, make_blobs, train, TrainConfig};
use advloss::riskeval::{approx_risk, approximation_error, grid_oracle_risk};

fn main() {
    let train_data = make_blobs(3000, 2, 3, 0.13, 1234).unwrap();
    let model = train(
        &train_data,
        &TrainConfig {
            epochs: 40,
            seed: 7,
            ..TrainConfig::default()
        },
    )
    .unwrap()
    .model;
    let holdout = make_blobs(200, 2, 3, 0.13, 999).unwrap();
    let eps = 0.10;

    println!(
        "clean accuracy: {:.4}",
        clean_accuracy(&model, &holdout).unwrap()
    );
    let oracle = grid_oracle_risk(&model, &holdout, eps, 20).unwrap();
    println!("grid oracle risk (41x41 lattice, eps {eps}): {oracle:.4}");

    let catalog = builtin_catalog();
    println!("\n{:<6} {:>8} {:>8}", "loss", "r''", "gap");
    for name in ["ce", "cw", "dlr", "bs5"] {
        let spec = AttackSpec::pgd(NormKind::Linf, eps, 10).with_seed(2024);
        let report = approx_risk(&model, catalog.get(name).unwrap(), &holdout, &spec).unwrap();
        println!(
            "{name:<6} {:>8.4} {:>8.4}",
            report.r_double_prime,
            approximation_error(oracle, report.r_double_prime)
        );
    }
    println!("\nthe oracle upper-bounds every attack; smaller gap = better surrogate");
}
