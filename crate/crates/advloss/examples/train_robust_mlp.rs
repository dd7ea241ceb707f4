//! Train a standard and an adversarially trained fixture and compare
//! their robustness under a 10-step attack.
//!
//! ```bash
//! cargo run --example train_robust_mlp
//! ```

use advloss::attack::{AttackSpec, NormKind};
use advloss::losses::builtin_catalog;
use advloss::model::{clean_accuracy, make_blobs, train, AtMode, TrainConfig};
use advloss::riskeval::approx_risk;

fn main() {
    let eps = 0.1;
    let data = make_blobs(2000, 2, 3, 0.11, 11).unwrap();
    let holdout = make_blobs(1000, 2, 3, 0.11, 99).unwrap();

    let standard = train(
        &data,
        &TrainConfig {
            epochs: 40,
            seed: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let robust = train(
        &data,
        &TrainConfig {
            epochs: 40,
            seed: 1,
            at_mode: AtMode::Fgsm,
            epsilon: eps,
            ..TrainConfig::default()
        },
    )
    .unwrap();

    let catalog = builtin_catalog();
    let ce = catalog.get("ce").unwrap();
    let spec = AttackSpec::pgd(NormKind::Linf, eps, 10).with_seed(5);

    println!("{:<10} {:>8} {:>10}", "trainer", "clean", "pgd10_acc");
    for (name, outcome) in [("standard", &standard), ("fgsm-at", &robust)] {
        let clean = clean_accuracy(&outcome.model, &holdout).unwrap();
        let report = approx_risk(&outcome.model, ce, &holdout, &spec).unwrap();
        println!(
            "{name:<10} {clean:>8.4} {:>10.4}",
            report.adversarial_accuracy
        );
    }
    println!("\ntraining curve (fgsm-at, last 3 epochs):");
    for stats in robust.curve.iter().rev().take(3).rev() {
        println!(
            "  epoch {:>2}: loss {:.4} accuracy {:.4}",
            stats.epoch, stats.mean_loss, stats.accuracy
        );
    }
}
