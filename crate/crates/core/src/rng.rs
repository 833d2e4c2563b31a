//! Counter-based Gaussian streams.
//!
//! The value attached to `(seed, stream, sample, cell)` is a pure function of
//! that key: ChaCha8 keyed by `(seed, stream)`, with the sample index as the
//! ChaCha stream id and the cell index as the word position.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream tag of the primary noise draw.
pub const NOISE_STREAM: u64 = 0;
/// Stream tag base for conditional-expectation resamples.
pub const RESAMPLE_STREAM: u64 = 1 << 32;
/// Stream tag of the fBm driver.
pub const DRIVER_STREAM: u64 = 2 << 32;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key(seed: u64, stream: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    let mut z = splitmix(seed) ^ splitmix(stream ^ 0x5851_f42d_4c95_7f2d);
    for chunk in out.chunks_mut(8) {
        z = splitmix(z);
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    out
}

/// Generator positioned at cell 0 of one sample.
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64, sample: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(key(seed, stream));
        rng.set_stream(sample);
        Self { rng }
    }

    /// Jump to the given cell. Each cell consumes four 32-bit words.
    pub fn seek(&mut self, cell: u64) {
        self.rng.set_word_pos(cell as u128 * 4);
    }

    /// Standard normal for the current cell, then advance.
    pub fn next_normal(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Fills `out[c]` with the normal attached to cell `c`.
pub fn fill_normals(seed: u64, stream: u64, sample: u64, out: &mut [f64]) {
    let mut s = NormalStream::new(seed, stream, sample);
    for v in out.iter_mut() {
        *v = s.next_normal();
    }
}

/// Uniform in `[0,1)` attached to `(seed, stream, index)`.
pub fn uniform(seed: u64, stream: u64, index: u64) -> f64 {
    let z = splitmix(splitmix(seed ^ splitmix(stream)) ^ index);
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seek_matches_sequential() {
        let mut buf = vec![0.0; 50];
        fill_normals(7, NOISE_STREAM, 3, &mut buf);
        let mut s = NormalStream::new(7, NOISE_STREAM, 3);
        s.seek(31);
        assert_eq!(s.next_normal(), buf[31]);
    }

    #[test]
    fn streams_differ() {
        let mut a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        fill_normals(1, NOISE_STREAM, 0, &mut a);
        fill_normals(1, NOISE_STREAM, 1, &mut b);
        assert_ne!(a, b);
        fill_normals(2, NOISE_STREAM, 0, &mut b);
        assert_ne!(a, b);
    }

    #[test]
    fn moments() {
        let mut buf = vec![0.0; 200_000];
        fill_normals(11, NOISE_STREAM, 0, &mut buf);
        let n = buf.len() as f64;
        let mean = buf.iter().sum::<f64>() / n;
        let var = buf.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let kurt = buf.iter().map(|v| v.powi(4)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 / n.sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
        assert!((kurt - 3.0).abs() < 4.0 * (96.0 / n).sqrt());
    }
}
