//! Evolutionary search for surrogate losses.
//!
//! A generational GP loop over expression trees: ramped half-and-half
//! initialization, fitness by attack-approximated risk on a fixed
//! dataset slice, tournament selection, one-point crossover, subtree
//! mutation, and a hall of fame that survives the breeding population.
//!
//! Infeasible expressions (non-finite loss or gradient on a cheap probe
//! batch, or any evaluation failure) score exactly zero fitness.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Mutex;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::attack::{AttackSpec, NormKind};
use crate::expr::{
    eval_scalar, grad_wrt_p, random_tree, EvalContext, ExprTree, GrowMethod, MAX_TREE_DEPTH,
};
use crate::losses::SurrogateLoss;
use crate::model::{Dataset, MlpModel};
use crate::numerics::BatchMatrix;
use crate::riskeval::approx_risk;
use crate::seeds::{derive_seed, stable_hash};

// Stream tags for deriving independent randomness from the run seed.
const TAG_SLICE: u64 = 1;
const TAG_PROBE: u64 = 2;
const TAG_BREED: u64 = 3;
const TAG_FITNESS: u64 = 4;

/// Search hyperparameters. The defaults are the reference configuration:
/// 50 generations, depth cap 25, population 100, tournament size 3,
/// crossover rate 0.5, mutation rate 0.3, 1000 fitness samples, and a
/// 10-step L-infinity PGD as the inner attack.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub generations: usize,
    pub max_depth: usize,
    pub population_size: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub fitness_samples: usize,
    pub attack: AttackSpec,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            generations: 50,
            max_depth: 25,
            population_size: 100,
            tournament_size: 3,
            crossover_rate: 0.5,
            mutation_rate: 0.3,
            fitness_samples: 1000,
            attack: AttackSpec::pgd(NormKind::Linf, 8.0 / 255.0, 10),
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.population_size == 0 {
            return Err(SearchError::InvalidConfig("population must not be empty".into()));
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return Err(SearchError::InvalidConfig(
                "tournament size must be in 1..=population_size".into(),
            ));
        }
        for (name, rate) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(SearchError::InvalidConfig(format!(
                    "{name} must lie in [0,1], got {rate}"
                )));
            }
        }
        if self.max_depth == 0 || self.max_depth > MAX_TREE_DEPTH {
            return Err(SearchError::InvalidConfig(format!(
                "max_depth must lie in 1..={MAX_TREE_DEPTH}"
            )));
        }
        if self.fitness_samples == 0 {
            return Err(SearchError::InvalidConfig(
                "fitness_samples must be positive".into(),
            ));
        }
        self.attack.validate().map_err(|e| SearchError::InvalidConfig(e.to_string()))
    }

    /// `key=value` echo of every hyperparameter, used as the log header.
    pub fn echo(&self) -> String {
        format!(
            "generations={} max_depth={} population_size={} tournament_size={} \
             crossover_rate={:.6} mutation_rate={:.6} fitness_samples={} seed={} attack={}",
            self.generations,
            self.max_depth,
            self.population_size,
            self.tournament_size,
            self.crossover_rate,
            self.mutation_rate,
            self.fitness_samples,
            self.seed,
            self.attack.summary(),
        )
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("model and dataset are incompatible: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Fitness of one expression, with the infeasibility flag that produced
/// a hard zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessOutcome {
    pub value: f64,
    pub invalid: bool,
}

impl FitnessOutcome {
    fn invalid() -> Self {
        Self {
            value: 0.0,
            invalid: true,
        }
    }
}

/// Evaluates expression fitness against a fixed model and dataset slice.
///
/// Fitness is a pure function of the expression text: the attack seed is
/// derived from the run seed and a stable hash of the printed tree, so
/// caching and parallel evaluation can never change results.
pub struct FitnessEvaluator<'a> {
    model: &'a MlpModel,
    slice: Dataset,
    attack: AttackSpec,
    probe: EvalContext,
    run_seed: u64,
    cache: Mutex<HashMap<String, FitnessOutcome>>,
}

impl<'a> FitnessEvaluator<'a> {
    /// The probe batch is a tiny fixed random context used to reject
    /// infeasible expressions before paying for an attack.
    pub fn new(model: &'a MlpModel, dataset: &Dataset, config: &SearchConfig) -> Self {
        let slice = dataset.seeded_slice(
            config.fitness_samples,
            derive_seed(config.seed, TAG_SLICE),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TAG_PROBE));
        let classes = model.num_classes();
        let mut logits = BatchMatrix::zeros(8, classes);
        for i in 0..8 * classes {
            logits.data_mut()[i] = rng.gen_range(-5.0..5.0);
        }
        let labels: Vec<u32> = (0..8).map(|_| rng.gen_range(0..classes as u32)).collect();
        let probe = EvalContext::from_labels(logits, &labels).expect("probe context");
        Self {
            model,
            slice,
            attack: config.attack.clone(),
            probe,
            run_seed: config.seed,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn slice(&self) -> &Dataset {
        &self.slice
    }

    /// Fitness in `[0,1]`: the approximated risk of the expression, or
    /// exactly zero for infeasible expressions.
    pub fn fitness(&self, tree: &ExprTree) -> FitnessOutcome {
        let text = tree.to_string();
        if let Some(hit) = self.cache.lock().unwrap().get(&text) {
            return *hit;
        }
        let outcome = self.compute(tree, &text);
        self.cache.lock().unwrap().insert(text, outcome);
        outcome
    }

    fn compute(&self, tree: &ExprTree, text: &str) -> FitnessOutcome {
        match eval_scalar(tree, &self.probe) {
            Ok(v) if v.is_finite() => {}
            _ => return FitnessOutcome::invalid(),
        }
        match grad_wrt_p(tree, &self.probe) {
            Ok(g) if g.all_finite() => {}
            _ => return FitnessOutcome::invalid(),
        }
        let candidate = SurrogateLoss::from_tree("candidate", tree.clone());
        let spec = AttackSpec {
            seed: derive_seed(
                derive_seed(self.run_seed, TAG_FITNESS),
                stable_hash(text.as_bytes()),
            ),
            ..self.attack.clone()
        };
        match approx_risk(self.model, &candidate, &self.slice, &spec) {
            Ok(report) => FitnessOutcome {
                value: report.r_double_prime,
                invalid: false,
            },
            Err(_) => FitnessOutcome::invalid(),
        }
    }
}

/// Tournament selection with replacement: each winner is the best of
/// `tournament_size` uniform draws, earlier draws winning ties.
pub fn tournament_select<R: Rng>(
    population: &[ExprTree],
    fitness: &[f64],
    k_winners: usize,
    tournament_size: usize,
    rng: &mut R,
) -> Vec<ExprTree> {
    assert_eq!(population.len(), fitness.len());
    assert!(tournament_size >= 1 && tournament_size <= population.len());
    (0..k_winners)
        .map(|_| {
            let mut best = rng.gen_range(0..population.len());
            for _ in 1..tournament_size {
                let challenger = rng.gen_range(0..population.len());
                if fitness[challenger] > fitness[best] {
                    best = challenger;
                }
            }
            population[best].clone()
        })
        .collect()
}

/// One-point crossover: a uniformly chosen subtree of each parent is
/// swapped into the other. A child that would exceed `max_depth` is
/// replaced by a copy of its own parent.
pub fn crossover<R: Rng>(
    a: &ExprTree,
    b: &ExprTree,
    max_depth: usize,
    rng: &mut R,
) -> (ExprTree, ExprTree) {
    let i = rng.gen_range(0..a.size());
    let j = rng.gen_range(0..b.size());
    let child_a = a.with_replaced(i, b.subtree_at(j).clone());
    let child_b = b.with_replaced(j, a.subtree_at(i).clone());
    let child_a = if child_a.depth() > max_depth {
        a.clone()
    } else {
        child_a
    };
    let child_b = if child_b.depth() > max_depth {
        b.clone()
    } else {
        child_b
    };
    (child_a, child_b)
}

/// Subtree mutation: a uniformly chosen node is replaced by a fresh
/// grow-style tree of depth at most 4, with the same depth guard as
/// crossover.
pub fn mutate<R: Rng>(tree: &ExprTree, max_depth: usize, rng: &mut R) -> ExprTree {
    let i = rng.gen_range(0..tree.size());
    let replacement = random_tree(rng, 1, 4, GrowMethod::Grow);
    let mutant = tree.with_replaced(i, replacement);
    if mutant.depth() > max_depth {
        tree.clone()
    } else {
        mutant
    }
}

/// One row of the per-generation log.
#[derive(Debug, Clone)]
pub struct GenerationLog {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub invalid_count: usize,
    pub best_expression: String,
}

/// Full search log: a config echo header plus one row per generation.
#[derive(Debug, Clone)]
pub struct SearchLog {
    pub header: String,
    pub rows: Vec<GenerationLog>,
}

impl SearchLog {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# {}", self.header)?;
        writeln!(
            out,
            "generation,best_fitness,mean_fitness,invalid_count,best_expression"
        )?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{},{}",
                row.generation,
                row.best_fitness,
                row.mean_fitness,
                row.invalid_count,
                row.best_expression
            )?;
        }
        Ok(())
    }
}

/// Search result: the log, the hall-of-fame loss, and the fitness
/// trajectory of the hall of fame (one entry per evaluated generation).
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub log: SearchLog,
    pub best: SurrogateLoss,
    pub best_fitness: f64,
    pub hof_history: Vec<f64>,
}

/// Run the full search loop. Deterministic for a fixed config, including
/// under parallel fitness evaluation.
pub fn run_search(
    config: &SearchConfig,
    model: &MlpModel,
    dataset: &Dataset,
) -> Result<SearchOutcome, SearchError> {
    config.validate()?;
    if model.input_dim() != dataset.input_dim() {
        return Err(SearchError::Incompatible(format!(
            "model expects {} inputs, dataset has {}",
            model.input_dim(),
            dataset.input_dim()
        )));
    }
    if model.num_classes() != dataset.num_classes() {
        return Err(SearchError::Incompatible(format!(
            "model emits {} classes, dataset has {}",
            model.num_classes(),
            dataset.num_classes()
        )));
    }

    let evaluator = FitnessEvaluator::new(model, dataset, config);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TAG_BREED));

    let mut population = initial_population(config, &mut rng);
    let mut fitness: Vec<f64> = Vec::new();
    let mut hof: Option<(ExprTree, f64)> = None;
    let mut hof_history = Vec::with_capacity(config.generations + 1);
    let mut rows = Vec::with_capacity(config.generations + 1);

    for generation in 0..=config.generations {
        if generation > 0 {
            population = breed(&population, &fitness, config, &mut rng);
        }
        assert_eq!(population.len(), config.population_size);
        debug_assert!(population.iter().all(|t| t.depth() <= config.max_depth));

        let outcomes: Vec<FitnessOutcome> = population
            .par_iter()
            .map(|tree| evaluator.fitness(tree))
            .collect();
        fitness = outcomes.iter().map(|o| o.value).collect();

        let mut best_idx = 0;
        for (i, &f) in fitness.iter().enumerate() {
            if f > fitness[best_idx] {
                best_idx = i;
            }
        }
        if hof.as_ref().map_or(true, |(_, f)| fitness[best_idx] > *f) {
            hof = Some((population[best_idx].clone(), fitness[best_idx]));
        }
        hof_history.push(hof.as_ref().unwrap().1);

        rows.push(GenerationLog {
            generation,
            best_fitness: fitness[best_idx],
            mean_fitness: fitness.iter().sum::<f64>() / fitness.len() as f64,
            invalid_count: outcomes.iter().filter(|o| o.invalid).count(),
            best_expression: population[best_idx].to_string(),
        });
    }

    let (best_tree, best_fitness) = hof.unwrap();
    Ok(SearchOutcome {
        log: SearchLog {
            header: config.echo(),
            rows,
        },
        best: SurrogateLoss::from_tree("searched", best_tree),
        best_fitness,
        hof_history,
    })
}

fn initial_population(config: &SearchConfig, rng: &mut ChaCha8Rng) -> Vec<ExprTree> {
    // Ramped half-and-half over depths 2..=6 (capped by max_depth),
    // alternating full and grow trees.
    let cap = config.max_depth.min(6).max(2);
    (0..config.population_size)
        .map(|i| {
            let depth = 2 + (i % (cap - 1));
            let method = if (i / (cap - 1)) % 2 == 0 {
                GrowMethod::Full
            } else {
                GrowMethod::Grow
            };
            match method {
                GrowMethod::Full => random_tree(rng, depth, depth, GrowMethod::Full),
                GrowMethod::Grow => random_tree(rng, 2.min(depth), depth, GrowMethod::Grow),
            }
        })
        .collect()
}

fn breed(
    population: &[ExprTree],
    fitness: &[f64],
    config: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<ExprTree> {
    let parents = tournament_select(
        population,
        fitness,
        config.population_size,
        config.tournament_size,
        rng,
    );
    let mut offspring = Vec::with_capacity(parents.len());
    let mut iter = parents.chunks_exact(2);
    for pair in &mut iter {
        if rng.gen::<f64>() < config.crossover_rate {
            let (a, b) = crossover(&pair[0], &pair[1], config.max_depth, rng);
            offspring.push(a);
            offspring.push(b);
        } else {
            offspring.push(pair[0].clone());
            offspring.push(pair[1].clone());
        }
    }
    offspring.extend(iter.remainder().iter().cloned());
    for child in &mut offspring {
        if rng.gen::<f64>() < config.mutation_rate {
            *child = mutate(child, config.max_depth, rng);
        }
    }
    offspring
}
