//! Seedable PRNG with named sub-streams.
//!
//! The generator is xoshiro256++ seeded through SplitMix64, which is enough
//! state for every consumer in this crate and reproduces bit-exactly across
//! platforms. Consumers never share a stream: each one derives its own via
//! [`Rng::split`] with a fixed tag, keyed off the *original* seed rather than
//! the current state, so adding or reordering consumers cannot silently shift
//! anyone else's draws.

use crate::tensor::Matrix;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// xoshiro256++ generator tagged with the seed it was created from.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    state: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut state = [0u64; 4];
        for s in &mut state {
            *s = splitmix64(&mut sm);
        }
        // xoshiro forbids the all-zero state; SplitMix64 cannot emit four
        // consecutive zeros, but guard anyway.
        if state.iter().all(|&s| s == 0) {
            state[0] = 1;
        }
        Rng { seed, state }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent sub-stream for a named consumer. The
    /// derivation uses the creation seed, not the current state, so the
    /// result is the same no matter how much of this stream was consumed.
    pub fn split(&self, tag: &str) -> Rng {
        let mut mix = self.seed ^ fnv1a64(tag.as_bytes());
        Rng::new(splitmix64(&mut mix))
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` via Lemire's multiply-shift.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle in place.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }

    pub fn uniform(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| self.next_f64()).collect();
        Matrix::from_vec(rows, cols, data).expect("caller supplies valid dims")
    }

    pub fn uniform_range(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        let span = hi - lo;
        let data = (0..rows * cols).map(|_| lo + span * self.next_f64()).collect();
        Matrix::from_vec(rows, cols, data).expect("caller supplies valid dims")
    }

    /// Normal draws via the Box-Muller transform: each pair of uniforms
    /// (u1 in (0,1], u2 in [0,1)) yields two independent gaussians
    /// sqrt(-2 ln u1)·(cos, sin)(2π u2). A trailing odd element discards
    /// its pair partner, so a call consumes a deterministic number of
    /// uniforms regardless of previous calls.
    pub fn normal(&mut self, rows: usize, cols: usize, mean: f64, std: f64) -> Matrix {
        debug_assert!(std >= 0.0);
        let n = rows * cols;
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let u1 = 1.0 - self.next_f64();
            let u2 = self.next_f64();
            let radius = (-2.0 * u1.ln()).sqrt();
            let theta = std::f64::consts::TAU * u2;
            data.push(mean + std * radius * theta.cos());
            if data.len() < n {
                data.push(mean + std * radius * theta.sin());
            }
        }
        Matrix::from_vec(rows, cols, data).expect("caller supplies valid dims")
    }
}
