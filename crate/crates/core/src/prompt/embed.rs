//! Hashed bag-of-words prompt embedding.
//!
//! Each distinct token is salted with the rank of its first occurrence and
//! hashed into a few signed buckets; the sum is L2-normalized. Repeating a
//! token only rescales the vector, while reordering words changes it.

use serde::{Deserialize, Serialize};

use super::tokenize;

pub const DEFAULT_EMBED_DIM: usize = 512;

/// Buckets written per token.
const PROBES: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbedding {
    pub lambda: Vec<f64>,
    pub token_count: usize,
}

impl PromptEmbedding {
    pub fn zeros(dim: usize) -> Self {
        Self {
            lambda: vec![0.0; dim],
            token_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn embed_prompt(text: &str) -> PromptEmbedding {
    embed_prompt_with_dim(text, DEFAULT_EMBED_DIM)
}

pub fn embed_prompt_with_dim(text: &str, dim: usize) -> PromptEmbedding {
    let tokens = tokenize(text);
    let mut lambda = vec![0.0; dim];
    let mut distinct: Vec<&str> = Vec::new();
    for tok in &tokens {
        let rank = match distinct.iter().position(|d| d == tok) {
            Some(r) => r,
            None => {
                distinct.push(tok);
                distinct.len() - 1
            }
        };
        for probe in 0..PROBES {
            let salt = format!("{rank}\u{1f}{probe}\u{1f}");
            let h = fnv1a(salt.bytes().chain(tok.bytes()));
            let bucket = (h % dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            lambda[bucket] += sign;
        }
    }
    let norm = lambda.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        lambda.iter_mut().for_each(|v| *v /= norm);
    }
    PromptEmbedding {
        lambda,
        token_count: tokens.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_prompt_is_zero() {
        let e = embed_prompt("");
        assert_eq!(e.dim(), 512);
        assert!(e.lambda.iter().all(|&v| v == 0.0));
        assert_eq!(e.token_count, 0);
    }

    #[test]
    fn repetition_keeps_direction() {
        let a = embed_prompt("a a");
        let b = embed_prompt("a");
        let dot: f64 = a.lambda.iter().zip(&b.lambda).map(|(x, y)| x * y).sum();
        assert!((dot - 1.0).abs() < 1e-12);
        let na: f64 = a.lambda.iter().map(|v| v * v).sum();
        assert!((na - 1.0).abs() < 1e-12);
    }

    #[test]
    fn word_order_matters() {
        let a = embed_prompt("bed left of table");
        let b = embed_prompt("table left of bed");
        assert_ne!(a.lambda, b.lambda);
    }

    #[test]
    fn deterministic() {
        assert_eq!(embed_prompt("There is a desk."), embed_prompt("there is a DESK"));
    }
}
