//! BIS participation vectors and mechanism outputs under the neighbouring
//! distributions `P` (example present) and `Q` (example zeroed out).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::MechanismShape;

/// A seeded random stream. Distinct `stream_id`s under one seed are
/// independent ChaCha streams, so work can be split into chunks whose
/// output does not depend on which thread runs them.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Sorted zero-based indices of the iterations an example takes part in.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParticipationVector {
    indices: Vec<usize>,
}

impl ParticipationVector {
    pub fn new(shape: MechanismShape, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.len() != shape.participations() {
            return Err(Error::InvalidShape(format!(
                "participation vector needs {} distinct indices, got {}",
                shape.participations(),
                indices.len()
            )));
        }
        if indices.last().is_some_and(|&i| i >= shape.iterations()) {
            return Err(Error::InvalidShape("participation index out of range".into()));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// The 0/1 indicator vector `x` of length `T`.
    pub fn indicator(&self, iterations: usize) -> Vec<f64> {
        let mut x = vec![0.0; iterations];
        for &i in &self.indices {
            x[i] = 1.0;
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    FromP,
    FromQ,
}

/// One mechanism output `y` together with the distribution it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub y: Vec<f64>,
    pub source: Source,
}

/// Reusable partial Fisher-Yates sampler.
///
/// The permutation buffer is never reset between draws: shuffling the first
/// `k` slots of any permutation yields a uniform `k`-subset, so leaving the
/// previous draw in place costs nothing in uniformity.
#[derive(Debug, Clone)]
pub struct ParticipationSampler {
    shape: MechanismShape,
    perm: Vec<usize>,
}

impl ParticipationSampler {
    pub fn new(shape: MechanismShape) -> Self {
        Self { shape, perm: (0..shape.iterations()).collect() }
    }

    /// Writes a uniform sorted `k`-subset of `0..T` into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut Vec<usize>) {
        let t = self.shape.iterations();
        let k = self.shape.participations();
        out.clear();
        if k == t {
            out.extend(0..t);
            return;
        }
        for i in 0..k {
            let j = rng.random_range(i..t);
            self.perm.swap(i, j);
        }
        out.extend_from_slice(&self.perm[..k]);
        out.sort_unstable();
    }

    /// Fills `y` with one draw from `source` at noise multiplier `sigma`.
    /// `scratch` receives the participation indices when drawing from `P`.
    pub fn output_into<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        sigma: f64,
        source: Source,
        scratch: &mut Vec<usize>,
        y: &mut Vec<f64>,
    ) {
        let t = self.shape.iterations();
        y.clear();
        if source == Source::FromP {
            self.sample_into(rng, scratch);
        }
        y.extend((0..t).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)));
        if source == Source::FromP {
            for &i in scratch.iter() {
                y[i] += 1.0;
            }
        }
    }
}

/// Draws the set of iterations a single example participates in.
pub fn sample_participation(shape: MechanismShape, rng: &mut RngStream) -> ParticipationVector {
    let mut out = Vec::with_capacity(shape.participations());
    ParticipationSampler::new(shape).sample_into(rng, &mut out);
    ParticipationVector { indices: out }
}

/// Draws one mechanism output: `y = sigma * w` under `Q`, `y = x + sigma * w`
/// under `P`.
pub fn sample_output(
    shape: MechanismShape,
    sigma: f64,
    source: Source,
    rng: &mut RngStream,
) -> Result<Realization> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma must be positive and finite, got {sigma}")));
    }
    let mut y = Vec::with_capacity(shape.iterations());
    let mut scratch = Vec::with_capacity(shape.participations());
    ParticipationSampler::new(shape).output_into(rng, sigma, source, &mut scratch, &mut y);
    Ok(Realization { y, source })
}
