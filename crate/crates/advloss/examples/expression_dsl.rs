//! Tour of the loss expression DSL: parsing, printing, evaluation,
//! gradients, random generation, and simplification.
//!
//! ```bash
//! cargo run --example expression_dsl
//! ```

use advloss::expr::{
    eval, eval_scalar, grad_wrt_p, parse, random_tree, simplify, EvalContext, GrowMethod,
};
use advloss::numerics::BatchMatrix;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    // A margin loss written by hand: max_{i != y} p_i - p_y is not
    // directly expressible, but (max p) - p_y is close and simple.
    let margin = parse("(sub (max p) (sum (mul p q)))").unwrap();
    println!("parsed:     {margin}");

    // Logits for a batch of two samples, labels 0 and 2.
    let p = BatchMatrix::from_rows(&[&[2.0, -1.0, 0.5], &[0.1, 0.3, 1.8]]);
    let ctx = EvalContext::from_labels(p, &[0, 2]).unwrap();

    let out = eval(&margin, &ctx).unwrap();
    println!("eval rows:  {:?} {:?}", out.row(0), out.row(1));
    println!("scalarized: {:.6}", eval_scalar(&margin, &ctx).unwrap());

    let grad = grad_wrt_p(&margin, &ctx).unwrap();
    println!("grad row 0: {:?}", grad.row(0));

    // Sugar desugars to the primitive operators.
    let ratio = parse("(div p (max p))").unwrap();
    println!("div sugar:  {ratio}");

    // Simplification folds constants and strips identities.
    let clutter = parse("(add (mul 1 (neg (neg p))) (mul (exp 0) 0))").unwrap();
    println!("simplify:   {clutter}  ->  {}", simplify(&clutter));

    // Random trees as used by the search initializer.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let tree = random_tree(&mut rng, 2, 4, GrowMethod::Grow);
        println!("random:     {tree}   (depth {})", tree.depth());
    }
}
