//! Empirical W2 distance between particle ensembles of window segments.

use mvlse::measure::w2_empirical;
use mvlse::segment::Segment;
use mvlse::ParticleEnsemble;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ensemble(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> mvlse::Result<ParticleEnsemble> {
    let particles = (0..n)
        .map(|_| {
            let level = shift + rng.random_range(-1.0..1.0);
            Segment::scalar(0.1, (0..6).map(|i| level + 0.05 * i as f64).collect())
        })
        .collect::<mvlse::Result<Vec<_>>>()?;
    ParticleEnsemble::new(particles)
}

fn main() -> mvlse::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [4, 16, 64, 128] {
        let a = ensemble(&mut rng, n, 0.0)?;
        let b = ensemble(&mut rng, n, 0.5)?;
        let d = w2_empirical(&a, &b)?;
        let kind = if d.exact { "exact" } else { "greedy upper bound" };
        println!("N = {n:<4} W2 = {:.4} ({kind})", d.value);
    }
    Ok(())
}
