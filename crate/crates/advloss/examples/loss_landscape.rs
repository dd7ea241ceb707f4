//! Chart losses over the plane spanned by two adversarial directions:
//! one from a handcrafted loss whose attack fails, one from a searched
//! loss whose attack succeeds.
//!
//! ```bash
//! cargo run --example loss_landscape
//! ```

use advloss::attack::{AttackSpec, NormKind};
use advloss::losses::builtin_catalog;
use advloss::model::{make_rings, train, AtMode, TrainConfig};
use advloss::riskeval::{find_landscape_anchors, landscape_grid, write_landscape_files};

fn main() {
    let eps = 0.055;
    let train_data = make_rings(3000, 3, 1234).unwrap();
    let model = train(
        &train_data,
        &TrainConfig {
            hidden: vec![12],
            epochs: 80,
            seed: 8,
            at_mode: AtMode::Fgsm,
            epsilon: eps,
            ..TrainConfig::default()
        },
    )
    .unwrap()
    .model;
    let holdout = make_rings(1000, 3, 9999).unwrap();

    let catalog = builtin_catalog();
    let spec = AttackSpec::pgd(NormKind::Linf, eps, 10).with_seed(31);
    let anchors = find_landscape_anchors(
        &model,
        catalog.get("cw").unwrap(),
        catalog.get("bs5").unwrap(),
        &holdout,
        &spec,
    )
    .unwrap()
    .expect("fixture admits an anchor pair");
    println!(
        "anchors on sample {} (label {}): cw attack fails, bs5 succeeds",
        anchors.sample_index, anchors.label
    );

    let losses = [
        catalog.get("zero_one").unwrap(),
        catalog.get("cw").unwrap(),
        catalog.get("bs5").unwrap(),
    ];
    let grids = landscape_grid(
        &model,
        &losses,
        &anchors.x,
        &[anchors.label],
        &anchors.x_adv_hc,
        &anchors.x_adv_bs,
        9,
    )
    .unwrap();

    // ASCII sketch of the 0-1 landscape: alpha down, beta across.
    println!("\n0-1 loss over (alpha, beta); # = misclassified:");
    for row in &grids[0].values {
        let line: String = row.iter().map(|&v| if v > 0.5 { '#' } else { '.' }).collect();
        println!("  {line}");
    }

    let dir = std::env::temp_dir().join("advloss_landscape");
    let paths = write_landscape_files(&grids, &dir).unwrap();
    println!("\nwrote {} grids:", paths.len());
    for p in paths {
        println!("  {}", p.display());
    }
}
