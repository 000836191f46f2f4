//! Setting-choice bit sources, XOR combining and excess predictability.
//!
//! Each party XORs several independent bit sources into one setting bit.
//! Physical generators are modelled at the bit level as seeded Bernoulli
//! processes with a configurable bias `P(bit = 1) - 1/2`; the pseudorandom
//! source can instead replay a flat bit file (8 bits per byte, MSB first).

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RandomnessError {
    #[error("bias {0} is outside [-1/2, 1/2]")]
    Bias(f64),
    #[error("pseudorandom stream exhausted after {0} bits")]
    Exhausted(usize),
    #[error("cannot XOR an empty list of bits")]
    EmptyXor,
    #[error("need at least {needed} bits to estimate a bias, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("reading bit file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    #[serde(rename = "phase-diffusion-model")]
    PhaseDiffusion,
    #[serde(rename = "amplitude-sample-model")]
    AmplitudeSample,
    PseudorandomStream,
}

/// Configuration of one bit source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitSourceSpec {
    pub kind: SourceKind,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub seed: u64,
    /// XOR every output with all earlier raw bits.
    #[serde(default)]
    pub cumulative_xor: bool,
    /// Bit file replayed by a pseudorandom-stream source. Without a file the
    /// stream is generated from `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl BitSourceSpec {
    pub fn bernoulli(kind: SourceKind, bias: f64, seed: u64) -> Self {
        Self {
            kind,
            bias,
            seed,
            cumulative_xor: false,
            path: None,
        }
    }

    pub fn with_cumulative_xor(mut self) -> Self {
        self.cumulative_xor = true;
        self
    }

    pub fn validate(&self) -> Result<(), RandomnessError> {
        if !(self.bias.abs() <= 0.5) {
            return Err(RandomnessError::Bias(self.bias));
        }
        Ok(())
    }

    /// The three sources one party XORs together: a phase-diffusion source
    /// with cumulative XOR and the measured bias, an amplitude-sampling
    /// source and a predetermined pseudorandom stream. Seeds are derived
    /// from `seed`.
    pub fn standard_triple(seed: u64, phase_diffusion_bias: f64) -> Vec<Self> {
        vec![
            Self::bernoulli(SourceKind::PhaseDiffusion, phase_diffusion_bias, seed)
                .with_cumulative_xor(),
            Self::bernoulli(SourceKind::AmplitudeSample, 0.0, seed.wrapping_add(1)),
            Self::bernoulli(SourceKind::PseudorandomStream, 0.0, seed.wrapping_add(2)),
        ]
    }
}

enum Generator {
    Bernoulli {
        rng: Box<ChaCha8Rng>,
        /// Output 1 iff a uniform 64-bit word is below this threshold.
        threshold: u128,
    },
    Stream {
        bytes: Vec<u8>,
        position: usize,
    },
}

/// A running bit source. Single owner, sequential.
pub struct BitSource {
    generator: Generator,
    cumulative_xor: bool,
    parity: bool,
}

impl BitSource {
    pub fn from_spec(spec: &BitSourceSpec) -> Result<Self, RandomnessError> {
        spec.validate()?;
        match (&spec.kind, &spec.path) {
            (SourceKind::PseudorandomStream, Some(path)) => {
                Ok(Self::from_bytes(read_bit_file(path)?, spec.cumulative_xor))
            }
            _ => Ok(Self::bernoulli(spec.bias, spec.seed, spec.cumulative_xor)),
        }
    }

    pub fn bernoulli(bias: f64, seed: u64, cumulative_xor: bool) -> Self {
        let p_one = (0.5 + bias).clamp(0.0, 1.0);
        // 2^64 * p, so p = 1 makes every word pass.
        let threshold = (p_one * 18_446_744_073_709_551_616.0) as u128;
        Self {
            generator: Generator::Bernoulli {
                rng: Box::new(ChaCha8Rng::seed_from_u64(seed)),
                threshold,
            },
            cumulative_xor,
            parity: false,
        }
    }

    /// Replays `bytes` bit by bit, most significant bit first.
    pub fn from_bytes(bytes: Vec<u8>, cumulative_xor: bool) -> Self {
        Self {
            generator: Generator::Stream { bytes, position: 0 },
            cumulative_xor,
            parity: false,
        }
    }

    pub fn next_bit(&mut self) -> Result<bool, RandomnessError> {
        let raw = match &mut self.generator {
            Generator::Bernoulli { rng, threshold } => (rng.next_u64() as u128) < *threshold,
            Generator::Stream { bytes, position } => {
                let byte = *bytes
                    .get(*position / 8)
                    .ok_or(RandomnessError::Exhausted(*position))?;
                let bit = (byte >> (7 - (*position % 8))) & 1 == 1;
                *position += 1;
                bit
            }
        };
        if self.cumulative_xor {
            self.parity ^= raw;
            Ok(self.parity)
        } else {
            Ok(raw)
        }
    }
}

pub fn read_bit_file(path: &Path) -> Result<Vec<u8>, RandomnessError> {
    fs::read(path).map_err(|source| RandomnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Packs bits into bytes, MSB first; the last byte is zero-padded.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i)))
        })
        .collect()
}

/// Parity of the inputs.
pub fn xor_combine(bits: &[bool]) -> Result<bool, RandomnessError> {
    if bits.is_empty() {
        return Err(RandomnessError::EmptyXor);
    }
    Ok(bits.iter().fold(false, |acc, &b| acc ^ b))
}

/// Bias of the XOR of independent bits with the given biases:
/// magnitude `2^(k-1) · Π |b_i|`. Biases are `P(1) - 1/2`, which makes the
/// sign `(-1)^(k+1) · sign(Π b_i)`.
pub fn piling_up_bias(biases: &[f64]) -> f64 {
    if biases.is_empty() {
        return 0.0;
    }
    biases.iter().fold(-0.5, |acc, &b| acc * -2.0 * b)
}

/// Running parity: output `i` is the XOR of inputs `1..=i`.
pub fn xor_accumulate<I>(bits: I) -> CumulativeXor<I::IntoIter>
where
    I: IntoIterator<Item = bool>,
{
    CumulativeXor {
        inner: bits.into_iter(),
        parity: false,
    }
}

/// Inverse of [`xor_accumulate`]: `input_i = output_i XOR output_(i-1)`.
pub fn xor_deaccumulate(bits: &[bool]) -> Vec<bool> {
    let mut previous = false;
    bits.iter()
        .map(|&b| {
            let raw = b ^ previous;
            previous = b;
            raw
        })
        .collect()
}

pub struct CumulativeXor<I> {
    inner: I,
    parity: bool,
}

impl<I: Iterator<Item = bool>> Iterator for CumulativeXor<I> {
    type Item = bool;

    fn next(&mut self) -> Option<bool> {
        let bit = self.inner.next()?;
        self.parity ^= bit;
        Some(self.parity)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.inner.size_hint()
    }
}

/// Upper bound on setting predictability: a setting is guessed with
/// probability at most `(1 + epsilon) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictabilityBound {
    pub epsilon: f64,
}

impl PredictabilityBound {
    pub fn new(epsilon: f64) -> Option<Self> {
        (0.0..=1.0).contains(&epsilon).then_some(Self { epsilon })
    }

    pub fn guess_probability(&self) -> f64 {
        0.5 * (1.0 + self.epsilon)
    }

    /// Conservative bound `factor` times larger, capped at certainty.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            epsilon: (self.epsilon * factor).min(1.0),
        }
    }
}

/// A bit with bias `b` is guessed correctly with probability `1/2 + |b|`,
/// so the excess predictability is `2|b|`.
pub fn predictability_from_bias(bias: f64) -> Result<PredictabilityBound, RandomnessError> {
    if !(bias.abs() <= 0.5) {
        return Err(RandomnessError::Bias(bias));
    }
    Ok(PredictabilityBound {
        epsilon: 2.0 * bias.abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub bias: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Empirical `mean - 1/2` with binomial standard error `sqrt(p(1-p)/n)`.
pub fn estimate_bias(bits: &[bool]) -> Result<BiasEstimate, RandomnessError> {
    if bits.len() < 2 {
        return Err(RandomnessError::TooShort {
            needed: 2,
            got: bits.len(),
        });
    }
    let n = bits.len();
    let ones = bits.iter().filter(|&&b| b).count();
    let p = ones as f64 / n as f64;
    Ok(BiasEstimate {
        bias: p - 0.5,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
        n,
    })
}
