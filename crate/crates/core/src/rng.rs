//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, stream, counter)`:
//!
//! ```text
//! mix(z)   = SplitMix64 finalizer:
//!            z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
//!            z ^= z >> 27; z *= 0x94D049BB133111EB
//!            z ^= z >> 31
//! key      = mix(mix(seed ^ 0x243F6A8885A308D3) ^ mix(stream + 0x9E3779B97F4A7C15))
//! draw     = mix(key ^ mix(counter * 0x9E3779B97F4A7C15 + 0xD1B54A32D192ED03))
//! uniform  = (draw >> 11) * 2^-53
//! ```
//!
//! For mission outcomes the stream is the mission id and the counter is the
//! POI index, so a POI's classification draw does not depend on event order.
//! Sub-seeds for nested loops come from [`derive_seed`].

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SEED_SALT: u64 = 0x243F_6A88_85A3_08D3;
const COUNTER_SALT: u64 = 0xD1B5_4A32_D192_ED03;

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn stream_key(seed: u64, stream: u64) -> u64 {
    mix(mix(seed ^ SEED_SALT) ^ mix(stream.wrapping_add(GOLDEN)))
}

#[inline]
fn draw(key: u64, counter: u64) -> u64 {
    mix(key ^ mix(counter.wrapping_mul(GOLDEN).wrapping_add(COUNTER_SALT)))
}

/// The raw 64-bit draw for `(seed, stream, counter)`.
#[inline]
pub fn counter_u64(seed: u64, stream: u64, counter: u64) -> u64 {
    draw(stream_key(seed, stream), counter)
}

/// Uniform in `[0, 1)` for `(seed, stream, counter)`.
#[inline]
pub fn counter_f64(seed: u64, stream: u64, counter: u64) -> f64 {
    to_unit(counter_u64(seed, stream, counter))
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Folds a path of indices into a new seed, e.g. `(train_seed, update, episode)`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed ^ SEED_SALT), |acc, &p| counter_u64(acc, p, 0))
}

/// Sequential view over one `(seed, stream)` pair.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: stream_key(seed, stream),
            counter: 0,
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = draw(self.key, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.next_f64() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
    }
}
