//! The frame-aligned condition tensor `c = [content, speaker, emotion, f0]`.

use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionBlock {
    Content,
    Speaker,
    Emotion,
    F0,
}

impl ConditionBlock {
    /// Concatenation order of the blocks.
    pub const ORDER: [ConditionBlock; 4] = [Self::Content, Self::Speaker, Self::Emotion, Self::F0];

    pub fn dim(self) -> usize {
        match self {
            Self::Content => 192,
            Self::Speaker => 256,
            Self::Emotion => 256,
            Self::F0 => 64,
        }
    }

    /// Channel range of this block inside `c`.
    pub fn range(self) -> Range<usize> {
        let start: usize = Self::ORDER.iter().take_while(|&&b| b != self).map(|b| b.dim()).sum();
        start..start + self.dim()
    }

    /// Content and F0 vary per frame; speaker and emotion are broadcast.
    pub fn per_frame(self) -> bool {
        matches!(self, Self::Content | Self::F0)
    }
}

pub const CONDITION_DIM: usize = 192 + 256 + 256 + 64;

/// `frames x 768`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet {
    pub frames: usize,
    pub values: Vec<f64>,
}

impl ConditionSet {
    /// Concatenates blocks given in canonical order. Per-frame blocks hold
    /// `frames x dim` values, utterance-level blocks hold `dim`.
    pub fn from_blocks(frames: usize, blocks: &[(ConditionBlock, &[f64])]) -> Result<Self> {
        let kinds: Vec<ConditionBlock> = blocks.iter().map(|(b, _)| *b).collect();
        if kinds != ConditionBlock::ORDER {
            return Err(Error::InvalidInput(format!(
                "condition blocks must be [content, speaker, emotion, f0], got {kinds:?}"
            )));
        }
        for (b, v) in blocks {
            let want = if b.per_frame() { frames * b.dim() } else { b.dim() };
            if v.len() != want {
                return Err(Error::FeatureAlignment(format!(
                    "{b:?} block has {} values, expected {want} for {frames} frames",
                    v.len()
                )));
            }
        }
        let mut values = Vec::with_capacity(frames * CONDITION_DIM);
        for t in 0..frames {
            for (b, v) in blocks {
                let row = if b.per_frame() { &v[t * b.dim()..(t + 1) * b.dim()] } else { &v[..] };
                values.extend_from_slice(row);
            }
        }
        Ok(Self { frames, values })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * CONDITION_DIM..(t + 1) * CONDITION_DIM]
    }

    /// Channel-major copy, `768 x frames`.
    pub fn channel_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for t in 0..self.frames {
            for c in 0..CONDITION_DIM {
                out[c * self.frames + t] = self.values[t * CONDITION_DIM + c];
            }
        }
        out
    }
}

/// Checks frame agreement, then concatenates in canonical order.
pub fn assemble_conditions(content: &[f64], speaker: &[f64], emotion: &[f64], f0: &[f64]) -> Result<ConditionSet> {
    let frames = content.len() / ConditionBlock::Content.dim();
    if f0.len() != frames * ConditionBlock::F0.dim() {
        return Err(Error::FeatureAlignment(format!(
            "content has {frames} frames, f0 block has {}",
            f0.len() / ConditionBlock::F0.dim()
        )));
    }
    ConditionSet::from_blocks(
        frames,
        &[
            (ConditionBlock::Content, content),
            (ConditionBlock::Speaker, speaker),
            (ConditionBlock::Emotion, emotion),
            (ConditionBlock::F0, f0),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks(t: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        (vec![1.0; t * 192], vec![2.0; 256], vec![0.0; 256], vec![4.0; t * 64])
    }

    #[test]
    fn shape_and_block_ranges() {
        let (c, s, e, f) = blocks(126);
        let set = assemble_conditions(&c, &s, &e, &f).unwrap();
        assert_eq!(set.frames, 126);
        assert_eq!(set.values.len(), 126 * 768);
        let row = set.frame(5);
        assert!(row[ConditionBlock::Content.range()].iter().all(|&v| v == 1.0));
        assert!(row[ConditionBlock::Speaker.range()].iter().all(|&v| v == 2.0));
        assert!(row[ConditionBlock::Emotion.range()].iter().all(|&v| v == 0.0));
        assert!(row[ConditionBlock::F0.range()].iter().all(|&v| v == 4.0));
        assert_eq!(ConditionBlock::F0.range(), 704..768);
    }

    #[test]
    fn permuted_order_rejected() {
        let (c, s, e, f) = blocks(3);
        let err = ConditionSet::from_blocks(
            3,
            &[
                (ConditionBlock::Speaker, &s),
                (ConditionBlock::Content, &c),
                (ConditionBlock::Emotion, &e),
                (ConditionBlock::F0, &f),
            ],
        );
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn frame_mismatch_rejected() {
        let (c, s, e, _) = blocks(3);
        let f = vec![0.0; 4 * 64];
        assert!(matches!(assemble_conditions(&c, &s, &e, &f), Err(Error::FeatureAlignment(_))));
    }
}
