//! Temporal ensembling of overlapping action chunks.

use std::collections::VecDeque;

use visk_core::data::ACTION_WIDTH;

use crate::PolicyError;

/// One predicted chunk and the tick it was issued at.
#[derive(Debug, Clone, PartialEq)]
pub struct IssuedChunk {
    pub issued: u64,
    pub actions: Vec<[f32; ACTION_WIDTH]>,
}

/// Weighted average of every chunk's prediction for tick `t`.
///
/// Chunk `j` contributes `actions[t - issued_j]` with weight
/// `exp(-m · (issued_j - oldest))`, where `oldest` is the earliest issue tick
/// among the contributing chunks, so older predictions weigh more for `m > 0`.
/// Chunks issued after `t` or whose horizon ends before `t` are ignored.
pub fn temporal_smooth(chunks: &[IssuedChunk], t: u64, m: f64) -> Result<[f32; ACTION_WIDTH], PolicyError> {
    if chunks.is_empty() {
        return Err(PolicyError::EmptyBuffer);
    }
    let live: Vec<(u64, &[f32; ACTION_WIDTH])> = chunks
        .iter()
        .filter(|c| c.issued <= t)
        .filter_map(|c| c.actions.get((t - c.issued) as usize).map(|a| (c.issued, a)))
        .collect();
    if live.is_empty() {
        return Err(PolicyError::StaleChunk { tick: t });
    }
    let issued: Vec<u64> = live.iter().map(|(s, _)| *s).collect();
    let weights = smooth_weights(&issued, m);
    let mut acc = [0.0f64; ACTION_WIDTH];
    for (w, (_, a)) in weights.iter().zip(&live) {
        for i in 0..ACTION_WIDTH {
            acc[i] += w * a[i] as f64;
        }
    }
    Ok(acc.map(|v| v as f32))
}

/// Normalised ensembling weights `exp(-m · (issued_j - oldest))` for the
/// given issue ticks. Empty input gives an empty vector.
pub fn smooth_weights(issued: &[u64], m: f64) -> Vec<f64> {
    let Some(&oldest) = issued.iter().min() else {
        return Vec::new();
    };
    let raw: Vec<f64> = issued.iter().map(|&s| (-m * (s - oldest) as f64).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// Rolling store of the chunks that can still contribute.
#[derive(Debug, Clone)]
pub struct ChunkBuffer {
    horizon: usize,
    m: f64,
    chunks: VecDeque<IssuedChunk>,
}

impl ChunkBuffer {
    pub fn new(horizon: usize, m: f64) -> Self {
        Self { horizon, m, chunks: VecDeque::with_capacity(horizon) }
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn clear(&mut self) {
        self.chunks.clear();
    }

    /// Adds the chunk issued at tick `issued` and drops chunks that no longer
    /// cover it.
    pub fn push(&mut self, issued: u64, actions: Vec<[f32; ACTION_WIDTH]>) {
        let horizon = self.horizon as u64;
        self.chunks.retain(|c| c.issued + horizon > issued);
        self.chunks.push_back(IssuedChunk { issued, actions });
    }

    /// Ensembled action for tick `t`.
    pub fn action(&self, t: u64) -> Result<[f32; ACTION_WIDTH], PolicyError> {
        let chunks: Vec<IssuedChunk> = self.chunks.iter().cloned().collect();
        temporal_smooth(&chunks, t, self.m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(issued: u64, h: usize, v: f32) -> IssuedChunk {
        IssuedChunk { issued, actions: vec![[v; ACTION_WIDTH]; h] }
    }

    #[test]
    fn single_chunk_passes_through() {
        let c = IssuedChunk { issued: 3, actions: (0..4).map(|i| [i as f32; 4]).collect() };
        assert_eq!(temporal_smooth(&[c], 5, 0.01).unwrap(), [2.0; 4]);
    }

    #[test]
    fn zero_m_is_plain_mean() {
        let cs = [chunk(0, 5, 1.0), chunk(1, 5, 2.0), chunk(2, 5, 6.0)];
        assert!((temporal_smooth(&cs, 2, 0.0).unwrap()[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn empty_and_stale() {
        assert!(matches!(temporal_smooth(&[], 0, 0.1), Err(PolicyError::EmptyBuffer)));
        assert!(matches!(temporal_smooth(&[chunk(0, 2, 1.0)], 2, 0.1), Err(PolicyError::StaleChunk { tick: 2 })));
    }

    #[test]
    fn buffer_evicts_expired() {
        let mut b = ChunkBuffer::new(3, 0.0);
        for t in 0..10 {
            b.push(t, vec![[t as f32; 4]; 3]);
            assert!(b.len() <= 3);
        }
        assert_eq!(b.action(9).unwrap(), [8.0; 4]);
    }
}
