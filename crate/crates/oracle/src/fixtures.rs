//! Seeded random tensors and parameter records for tests.

use mgdfis_core::{Init, ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub struct Fixture {
    rng: Xoshiro256PlusPlus,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    pub fn int(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        self.rng.gen_range(lo..=hi_inclusive)
    }

    pub fn pick<T: Copy>(&mut self, items: &[T]) -> T {
        items[self.rng.gen_range(0..items.len())]
    }

    /// Entries uniform in `[-scale, scale)`.
    pub fn tensor(&mut self, dims: [usize; 4], scale: f64) -> Tensor<f64> {
        Tensor::from_fn(dims, |_| self.rng.gen_range(-scale..scale))
    }

    /// Weights uniform in `±gain/√fan_in`; constants moved by up to
    /// `±jitter` so that no leaf sits at a degenerate value.
    pub fn randomize<P: ParamSet<f64>>(&mut self, p: &mut P, gain: f64, jitter: f64) {
        p.visit_mut("", &mut |leaf| {
            for v in leaf.data.iter_mut() {
                *v = match leaf.init {
                    Init::Uniform { fan_in } => {
                        let b = gain / (fan_in.max(1) as f64).sqrt();
                        self.rng.gen_range(-b..b)
                    }
                    Init::Constant(c) if jitter > 0.0 => c + self.rng.gen_range(-jitter..jitter),
                    Init::Constant(c) => c,
                };
            }
        });
    }
}
