//! Run PGD under both norms and inspect the result: perturbation norms,
//! box containment, success flags, and the per-step loss trace.
//!
//! ```bash
//! cargo run --example pgd_attack
//! ```

use advloss::attack::{pgd, AttackSpec, NormKind};
use advloss::losses::builtin_catalog;
use advloss::model::{make_blobs, train, TrainConfig};

fn main() {
    let data = make_blobs(1500, 2, 3, 0.12, 21).unwrap();
    let model = train(
        &data,
        &TrainConfig {
            epochs: 30,
            seed: 4,
            ..TrainConfig::default()
        },
    )
    .unwrap()
    .model;

    let probe = data.subset(&(0..8).collect::<Vec<_>>());
    let catalog = builtin_catalog();
    let cw = catalog.get("cw").unwrap();

    for norm in [NormKind::Linf, NormKind::L2] {
        let eps = match norm {
            NormKind::Linf => 0.08,
            NormKind::L2 => 0.15,
        };
        let spec = AttackSpec::pgd(norm, eps, 10).with_seed(3);
        let result = pgd(&model, cw, probe.features(), probe.labels(), &spec).unwrap();

        println!("norm={} eps={eps}", norm.name());
        for r in 0..probe.n_samples() {
            let delta: Vec<f64> = (0..2)
                .map(|c| result.x_adv.get(r, c) - probe.features().get(r, c))
                .collect();
            let size = match norm {
                NormKind::Linf => delta.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                NormKind::L2 => delta.iter().map(|v| v * v).sum::<f64>().sqrt(),
            };
            println!(
                "  sample {r}: |delta|={size:.4} in_box={} flipped={}",
                result.x_adv.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)),
                result.success_mask[r]
            );
        }
        let trace: Vec<String> = result.loss_trace.iter().map(|v| format!("{v:.3}")).collect();
        println!("  loss trace: {}", trace.join(" -> "));
    }
}
