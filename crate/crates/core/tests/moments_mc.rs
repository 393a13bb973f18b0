//! Centered moments from the recursion against Monte Carlo on exact samplers.

use cbi::harness::par_map;
use cbi::model::{CbiParams, JumpMeasure};
use cbi::moments::{centered_moments, DEFAULT_STEP};
use cbi::simulate::{simulate_replicate, SimConfig};
use cbi::stats;

const REPS: usize = 100_000;

fn check(params: &CbiParams, seed: u64) {
    let xs: Vec<f64> = par_map(REPS, 0, |r| simulate_replicate(params, 1, &SimConfig::default(), seed, r).unwrap().observations[1]);
    let exact = centered_moments(params, 1.0, 4, DEFAULT_STEP).unwrap();
    let mean = stats::mean(&xs);
    for j in 2..=4 {
        let powers: Vec<f64> = xs.iter().map(|x| (x - mean).powi(j as i32)).collect();
        let z = (stats::mean(&powers) - exact.order(j)) / stats::std_error(&powers);
        assert!(z.abs() <= 4.0, "order {j}: z = {z}");
    }
}

#[test]
fn cir_moments_match_monte_carlo() {
    check(&CbiParams::new(0.5, 1.0, 0.0, JumpMeasure::empty(), JumpMeasure::empty()).unwrap(), 1);
}

#[test]
fn compound_poisson_moments_match_monte_carlo() {
    let nu = JumpMeasure::from_pairs(&[(1.0, 1.0), (2.5, 0.3)]).unwrap();
    check(&CbiParams::new(0.0, 0.4, 0.0, nu, JumpMeasure::empty()).unwrap(), 2);
}
