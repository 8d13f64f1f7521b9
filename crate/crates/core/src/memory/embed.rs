use crate::backends::{BackendError, Embedder};

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

/// Deterministic offline embedder: signed feature hashing of lowercased
/// alphanumeric tokens.
///
/// Each token is hashed with 64-bit FNV-1a. The bucket is `h % dim`; the
/// sign is `+1` when `h` has an even number of set bits, else `-1`. Text
/// with no alphanumeric token is hashed whole as a single token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIM)
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let toks: Vec<String> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    if toks.is_empty() && !lower.trim().is_empty() {
        vec![lower.trim().to_string()]
    } else {
        toks
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&mut self, text: &str) -> Result<Vec<f64>, BackendError> {
        let mut v = vec![0.0; self.dim];
        for tok in tokens(text) {
            let h = fnv1a64(tok.as_bytes());
            let sign = if h.count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        Ok(v)
    }
}

/// Embeds `text` and L2-normalizes the result.
pub fn embed(text: &str, embedder: &mut dyn Embedder) -> Result<Vec<f64>, BackendError> {
    if text.trim().is_empty() {
        return Err(BackendError::InvalidInput("cannot embed empty text".into()));
    }
    let mut v = embedder.embed_raw(text)?;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        // Signed hashing can cancel to zero; fall back to a fixed unit axis
        // so the record is still storable.
        if v.is_empty() {
            return Err(BackendError::InvalidInput("embedder returned an empty vector".into()));
        }
        tracing::warn!("embedding of {text:?} has zero norm");
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
        return Ok(v);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
