//! Projects a noisy density onto {lower <= mu <= cap, sum w mu = 1} and checks
//! the result against brute-force enumeration of active sets.

use conformal_spectra::density_opt::{enumerate_projection, project_to_feasible, FeasibleSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> conformal_spectra::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 8;
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let set = FeasibleSet::new(0.0, 4.0, weights)?;
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..6.0)).collect();
    let p = project_to_feasible(&raw, &set)?;
    let brute = enumerate_projection(&raw, &set).expect("feasible set is nonempty");
    let mass: f64 = p.values.iter().zip(&set.weights).map(|(m, w)| m * w).sum();
    println!("raw        {:?}", rounded(&raw));
    println!("projected  {:?}", rounded(&p.values));
    println!("enumerated {:?}", rounded(&brute));
    println!("mass {mass:.12}, in set: {}", set.contains(&p.values, 1e-12));
    Ok(())
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
