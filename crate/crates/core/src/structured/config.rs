use serde::{Deserialize, Serialize};

use crate::composite::CompositeBasis;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Kernel dimensions `C×N×N` plus the structure parameters `c, n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructuredConfig {
    /// `C`
    pub channels: usize,
    /// `N`
    pub size: usize,
    /// `c`
    pub c: usize,
    /// `n`
    pub n: usize,
}

impl StructuredConfig {
    pub fn new(channels: usize, size: usize, c: usize, n: usize) -> Result<Self> {
        let cfg = Self { channels, size, c, n };
        cfg.validate()?;
        Ok(cfg)
    }

    /// No structure: every kernel entry is free.
    pub fn identity(channels: usize, size: usize) -> Self {
        Self { channels, size, c: channels, n: size }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.size == 0 {
            return Err(Error::InvalidConfig(format!("empty kernel dims in {self:?}")));
        }
        if self.c == 0 || self.c > self.channels {
            return Err(Error::InvalidConfig(format!(
                "c = {} outside 1..={}",
                self.c, self.channels
            )));
        }
        if self.n == 0 || self.n > self.size {
            return Err(Error::InvalidConfig(format!(
                "n = {} outside 1..={}",
                self.n, self.size
            )));
        }
        Ok(())
    }

    /// `c·n²`
    pub fn num_basis(&self) -> usize {
        self.c * self.n * self.n
    }

    /// `C·N²`
    pub fn kernel_len(&self) -> usize {
        self.channels * self.size * self.size
    }

    /// Extent of each basis cuboid, which is also the sum-pool window:
    /// `(C−c+1, N−n+1, N−n+1)`.
    pub fn pool_dims(&self) -> (usize, usize, usize) {
        let s = self.size - self.n + 1;
        (self.channels - self.c + 1, s, s)
    }

    pub fn alpha_shape(&self) -> [usize; 3] {
        [self.c, self.n, self.n]
    }

    pub fn kernel_shape(&self) -> [usize; 3] {
        [self.channels, self.size, self.size]
    }

    pub fn is_identity(&self) -> bool {
        self.c == self.channels && self.n == self.size
    }

    /// `C·N² / (c·n²)` as a reduced fraction.
    pub fn compression_ratio(&self) -> (u64, u64) {
        let (a, b) = (self.kernel_len() as u64, self.num_basis() as u64);
        let g = gcd(a, b);
        (a / g, b / g)
    }
}

pub(crate) fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// The `c·n²` shifted cuboids of ones, ordered lexicographically by their
/// corner `(i, j, k)`.
pub fn generate_structured_basis(cfg: &StructuredConfig) -> CompositeBasis {
    let (pc, ps, _) = cfg.pool_dims();
    let (big_c, big_n) = (cfg.channels, cfg.size);
    let mut elements = Vec::with_capacity(cfg.num_basis());
    for i in 0..cfg.c {
        for j in 0..cfg.n {
            for k in 0..cfg.n {
                elements.push(Tensor::from_fn(&[big_c, big_n, big_n], |f| {
                    let (ch, u, v) = (f / (big_n * big_n), (f / big_n) % big_n, f % big_n);
                    let inside = (i..i + pc).contains(&ch)
                        && (j..j + ps).contains(&u)
                        && (k..k + ps).contains(&v);
                    inside as u8 as f64
                }));
            }
        }
    }
    CompositeBasis::new(big_c, big_n, elements).expect("cuboid basis is binary and non-empty")
}
