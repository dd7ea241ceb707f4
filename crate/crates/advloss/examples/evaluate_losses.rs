//! Evaluate the adversarial risk of a fixture under every catalog loss:
//! the handcrafted baselines and the five distilled expressions.
//!
//! ```bash
//! cargo run --example evaluate_losses
//! ```

use advloss::attack::{AttackSpec, NormKind};
use advloss::losses::builtin_catalog;
use advloss::model::{make_blobs, train, AtMode, TrainConfig};
use advloss::riskeval::{approx_risk, RiskReport};

fn main() {
    let data = make_blobs(2000, 2, 3, 0.12, 8).unwrap();
    let model = train(
        &data,
        &TrainConfig {
            epochs: 40,
            seed: 2,
            at_mode: AtMode::Fgsm,
            epsilon: 0.08,
            ..TrainConfig::default()
        },
    )
    .unwrap()
    .model;
    let holdout = make_blobs(1000, 2, 3, 0.12, 80).unwrap();
    let spec = AttackSpec::pgd(NormKind::Linf, 0.08, 10).with_seed(6);

    let catalog = builtin_catalog();
    println!("{}", RiskReport::csv_header());
    for loss in catalog.iter() {
        if loss.name() == "zero_one" {
            continue; // no gradient, cannot steer an attack
        }
        let report = approx_risk(&model, loss, &holdout, &spec).unwrap();
        println!("{}", report.csv_row());
    }
}
