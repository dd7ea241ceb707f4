//! Synthetic dataset generation and the binary dataset format.
//!
//! ```bash
//! cargo run --example dataset_tour
//! ```

use advloss::model::{load_dataset, make_blobs, make_rings, save_dataset};

fn main() {
    let blobs = make_blobs(1000, 2, 3, 0.08, 42).unwrap();
    println!(
        "blobs: {} samples, {} dims, {} classes",
        blobs.n_samples(),
        blobs.input_dim(),
        blobs.num_classes()
    );
    let mins: Vec<f64> = (0..2)
        .map(|c| {
            (0..blobs.n_samples())
                .map(|r| blobs.features().get(r, c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    println!("feature minima stay inside the box: {mins:?}");

    let rings = make_rings(1000, 3, 42).unwrap();
    let radius = |r: usize| {
        let x = rings.features().get(r, 0) - 0.5;
        let y = rings.features().get(r, 1) - 0.5;
        (x * x + y * y).sqrt()
    };
    println!(
        "rings: first three radii per class: {:.3} {:.3} {:.3}",
        radius(0),
        radius(1),
        radius(2)
    );

    // Round-trip through the binary format is exact.
    let dir = std::env::temp_dir();
    let path = dir.join("advloss_dataset_tour.alds");
    save_dataset(&blobs, &path).unwrap();
    let reloaded = load_dataset(&path).unwrap();
    assert_eq!(blobs, reloaded);
    println!("saved and reloaded byte-exactly: {}", path.display());

    // Deterministic slicing drives fitness subsampling in the search.
    let slice = blobs.seeded_slice(128, 5);
    println!("seeded 128-sample slice, first label {}", slice.labels()[0]);
    std::fs::remove_file(&path).ok();
}
