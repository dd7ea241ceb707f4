//! Search for a surrogate loss with the GP engine on a desk-scale
//! fixture, then compare the winner against the handcrafted baselines on
//! held-out data.
//!
//! ```bash
//! cargo run --example search_loss
//! ```

use advloss::attack::{AttackSpec, NormKind};
use advloss::losses::builtin_catalog;
use advloss::model::{make_rings, train, AtMode, TrainConfig};
use advloss::riskeval::approx_risk;
use advloss::search::{run_search, SearchConfig};

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
    let search_data = make_rings(2000, 3, 4321).unwrap();
    let holdout = make_rings(1000, 3, 9999).unwrap();

    let config = SearchConfig {
        generations: 20,
        population_size: 40,
        fitness_samples: 256,
        attack: AttackSpec::pgd(NormKind::Linf, eps, 10),
        seed: 20_007,
        ..SearchConfig::default()
    };
    println!("searching: {}", config.echo());
    let outcome = run_search(&config, &model, &search_data).unwrap();
    for row in outcome.log.rows.iter().step_by(4) {
        println!(
            "  gen {:>2}: best {:.4} mean {:.4} invalid {:>2}",
            row.generation, row.best_fitness, row.mean_fitness, row.invalid_count
        );
    }
    println!("\nbest expression: {}", outcome.best.tree().unwrap());
    println!("slice fitness:   {:.4}", outcome.best_fitness);

    // Held-out comparison with a fresh attack seed.
    let eval_spec = AttackSpec::pgd(NormKind::Linf, eps, 10).with_seed(777);
    let catalog = builtin_catalog();
    println!("\n{:<10} {:>10}", "loss", "heldout r''");
    for name in ["ce", "cw", "dlr"] {
        let r = approx_risk(&model, catalog.get(name).unwrap(), &holdout, &eval_spec).unwrap();
        println!("{name:<10} {:>10.4}", r.r_double_prime);
    }
    let searched = approx_risk(&model, &outcome.best, &holdout, &eval_spec).unwrap();
    println!("{:<10} {:>10.4}", "searched", searched.r_double_prime);
}
