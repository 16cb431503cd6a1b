#![allow(dead_code)]

use std::sync::Arc;

use mvlse::estimate::ObservationSet;
use mvlse::model::{example_model, ExampleModel};
use mvlse::simulate::{
    brownian_increments, limit_ode, particle_system_seeded, tamed_em_path, InitialPath, LawProvider, NoiseStreams,
};
use mvlse::{DiscretePath, GridSpec, SimConfig};

pub const THETA0: [f64; 2] = [0.5, 0.3];

pub fn grid(n: usize) -> GridSpec {
    GridSpec::new(1.0, n, 0.5).unwrap()
}

pub fn model() -> ExampleModel {
    example_model(0.5).unwrap()
}

pub fn limit_path(n: usize) -> DiscretePath {
    let g = grid(n);
    limit_ode(&model(), &InitialPath::LinearRamp(1.0).segment(&g).unwrap(), &THETA0, &g, 0.5).unwrap()
}

/// Observations of particle 0 of an `N`-particle system, law = the ensemble.
pub fn ensemble_data(n: usize, epsilon: f64, particles: usize, seed: u64, rep: u64) -> ObservationSet {
    let g = grid(n);
    let xi = InitialPath::LinearRamp(1.0).segment(&g).unwrap();
    let cfg = SimConfig::new(g, epsilon, 0.5, particles, seed).unwrap();
    let paths = particle_system_seeded(&model(), &xi, &THETA0, &cfg, rep).unwrap();
    let observed = paths[0].clone();
    ObservationSet::new(observed, LawProvider::Ensemble(Arc::new(paths)), epsilon, 0.5).unwrap()
}

/// A single path driven against the point mass at the limit path.
pub fn dirac_data(n: usize, epsilon: f64, seed: u64) -> ObservationSet {
    let g = grid(n);
    let xi = InitialPath::LinearRamp(1.0).segment(&g).unwrap();
    let law = LawProvider::DiracAtLimit(Arc::new(limit_path(n)));
    let cfg = SimConfig::new(g, epsilon, 0.5, 1, seed).unwrap();
    let noise = brownian_increments(&mut NoiseStreams::new(seed).stream(0, 0), &g, 1);
    let path = tamed_em_path(&model(), &xi, &THETA0, &cfg, &law, &noise).unwrap();
    ObservationSet::new(path, law, epsilon, 0.5).unwrap()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!("[{}] criterion {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}
