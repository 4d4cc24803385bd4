use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::moments::Observation;

use super::spec::{CovariateLaw, DgpSpec, DgpSpec2, DgpSpecK};

/// Latent draws kept alongside each observation for oracle checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub tstar: u8,
    /// Latent type; always 0 in binary worlds.
    pub ustar: u32,
    /// Potential outcomes `Y0`, `Y1` for the realized disturbance.
    pub y0: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub observations: Vec<Observation>,
    pub latent: Vec<Latent>,
}

/// Generator for replication `stream` of master seed `seed`.
///
/// Streams are independent ChaCha8 sequences keyed by `(seed, stream)`, so
/// replication `r` reproduces regardless of which worker runs it.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` i.i.d. draws from `spec` on stream 0.
pub fn simulate(spec: &DgpSpec, n: usize, seed: u64) -> Sample {
    simulate_stream(spec, n, seed, 0)
}

pub fn simulate_stream(spec: &DgpSpec, n: usize, seed: u64, stream: u64) -> Sample {
    let mut rng = stream_rng(seed, stream);
    match spec {
        DgpSpec::Binary(s) => draw_binary(s, n, &mut rng),
        DgpSpec::Mixture(s) => draw_mixture(s, n, &mut rng),
    }
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> u8 {
    (rng.random::<f64>() < p) as u8
}

fn categorical(rng: &mut ChaCha8Rng, probs: impl IntoIterator<Item = f64>) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.into_iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
        last = i;
    }
    last
}

fn draw_zv(rng: &mut ChaCha8Rng, pr_v: f64, pr_z_given_v: [f64; 2]) -> (u8, u8) {
    let v = bernoulli(rng, pr_v);
    let z = bernoulli(rng, pr_z_given_v[v as usize]);
    (z, v)
}

fn draw_binary(spec: &DgpSpec2, n: usize, rng: &mut ChaCha8Rng) -> Sample {
    let mut observations = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let (z, v) = draw_zv(rng, spec.pr_v, spec.pr_z_given_v);
        let x = spec.covariate.map(|CovariateLaw::Uniform { low, high, .. }| low + (high - low) * rng.random::<f64>());
        let cell = crate::moments::CellIndex::new(z, v);
        let tstar = bernoulli(rng, spec.pr_tstar_at(cell));
        let t = bernoulli(rng, spec.misclassification[z as usize][tstar as usize]);
        let noise: f64 = rng.sample(StandardNormal);
        let base = spec.alpha[v as usize] + spec.covariate.map_or(0.0, |c| c.coef() * x.unwrap_or(0.0));
        let eps = spec.offset(v, tstar) + spec.noise.sd() * noise;
        let (y0, y1) = (base + eps, base + spec.beta[v as usize] + eps);
        let y = if tstar == 1 { y1 } else { y0 };
        let mut o = Observation::new(y, t, z, v);
        o.x = x.into_iter().collect();
        observations.push(o);
        latent.push(Latent { tstar, ustar: 0, y0, y1 });
    }
    Sample { observations, latent }
}

fn draw_mixture(spec: &DgpSpecK, n: usize, rng: &mut ChaCha8Rng) -> Sample {
    let k = spec.k();
    let mut observations = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let (z, v) = draw_zv(rng, spec.pr_v, spec.pr_z_given_v);
        let cell = crate::moments::CellIndex::new(z, v);
        let sstar = categorical(rng, spec.pr_sstar[cell.position()].iter().copied());
        let s = categorical(rng, (0..k).map(|i| spec.emission[z as usize][i][sstar]));
        let noise: f64 = rng.sample(StandardNormal);
        let (u, tstar) = (sstar / 2, (sstar % 2) as u8);
        let eps = spec.noise.sd() * noise;
        let y0 = spec.alpha[u][v as usize] + eps;
        let y1 = y0 + spec.beta[u][v as usize];
        let y = if tstar == 1 { y1 } else { y0 };
        let mut o = Observation::new(y, (s % 2) as u8, z, v);
        o.u = Some((s / 2) as u32);
        observations.push(o);
        latent.push(Latent { tstar, ustar: u as u32, y0, y1 });
    }
    Sample { observations, latent }
}
