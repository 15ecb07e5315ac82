//! Input layout for the student: one vision slot, K thinking slots, the
//! question tokens and the answer tokens, with loss labels on the answer only.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value for positions that carry no loss.
pub const LABEL_MASK: i64 = -100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `[V][T1..TK][Q][A]`
    #[default]
    ThinkBeforeQuestion,
    /// `[V][Q][T1..TK][A]`: the scratchpad can read the question.
    ThinkAfterQuestion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

/// What occupies one input position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Vision,
    Thinking(usize),
    Token(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub layout: Layout,
    pub vision: Span,
    pub thinking: Span,
    pub question: Span,
    pub answer: Span,
    pub question_ids: Vec<u32>,
    pub answer_ids: Vec<u32>,
    /// Per position: the answer token at answer positions, [`LABEL_MASK`] elsewhere.
    pub label_ids: Vec<i64>,
}

impl TokenSequence {
    pub fn total_len(&self) -> usize {
        self.label_ids.len()
    }

    pub fn k(&self) -> usize {
        self.thinking.len
    }

    pub fn slots(&self) -> Vec<Slot> {
        let mut slots = vec![Slot::Vision; self.total_len()];
        for (i, p) in self.thinking.range().enumerate() {
            slots[p] = Slot::Thinking(i);
        }
        for (p, &id) in self.question.range().zip(&self.question_ids) {
            slots[p] = Slot::Token(id);
        }
        for (p, &id) in self.answer.range().zip(&self.answer_ids) {
            slots[p] = Slot::Token(id);
        }
        slots
    }

    /// Rows of the logit matrix that predict the answer tokens: each answer
    /// token is predicted from the position just before it.
    pub fn answer_logit_rows(&self) -> std::ops::Range<usize> {
        self.answer.start - 1..self.answer.end() - 1
    }
}

/// Lays out `[V][T][Q][A]` (or `[V][Q][T][A]`). `answer_ids` may be empty at
/// inference time. Fails rather than truncate when the sequence is too long.
pub fn build_sequence(
    k: usize,
    question_ids: &[u32],
    answer_ids: &[u32],
    max_len: usize,
    layout: Layout,
) -> Result<TokenSequence> {
    if question_ids.is_empty() {
        return Err(Error::InvalidConfig("question must have at least one token".into()));
    }
    let total = 1 + k + question_ids.len() + answer_ids.len();
    if total > max_len {
        return Err(Error::SequenceTooLong { total, max: max_len });
    }
    let vision = Span { start: 0, len: 1 };
    let (thinking, question) = match layout {
        Layout::ThinkBeforeQuestion => {
            let t = Span { start: 1, len: k };
            (t, Span { start: t.end(), len: question_ids.len() })
        }
        Layout::ThinkAfterQuestion => {
            let q = Span { start: 1, len: question_ids.len() };
            (Span { start: q.end(), len: k }, q)
        }
    };
    let answer = Span { start: 1 + k + question_ids.len(), len: answer_ids.len() };
    let mut label_ids = vec![LABEL_MASK; total];
    for (p, &id) in answer.range().zip(answer_ids) {
        label_ids[p] = id as i64;
    }
    Ok(TokenSequence {
        layout,
        vision,
        thinking,
        question,
        answer,
        question_ids: question_ids.to_vec(),
        answer_ids: answer_ids.to_vec(),
        label_ids,
    })
}

/// `mask[i][j]` is true when position `i` may attend to position `j` (`j <= i`).
pub fn causal_mask(total_len: usize) -> Array2<bool> {
    Array2::from_shape_fn((total_len, total_len), |(i, j)| j <= i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn k8_layout() {
        let s = build_sequence(8, &[1, 5, 6, 7, 2], &[8, 9, 10, 2], 64, Layout::default()).unwrap();
        assert_eq!(s.total_len(), 18);
        assert!(s.label_ids[..14].iter().all(|&l| l == LABEL_MASK));
        assert_eq!(&s.label_ids[14..], &[8, 9, 10, 2]);
        assert_eq!(s.thinking, Span { start: 1, len: 8 });
        assert_eq!(s.answer_logit_rows(), 13..17);
    }

    #[test]
    fn k0_baseline_layout() {
        let s = build_sequence(0, &[1, 5, 6, 7, 2], &[8, 9, 10, 2], 64, Layout::default()).unwrap();
        assert_eq!(s.total_len(), 10);
        assert_eq!(s.slots()[1], Slot::Token(1));
    }

    #[test]
    fn ablation_grid_accepted() {
        for k in [2, 4, 8, 16] {
            assert!(build_sequence(k, &[1, 2], &[3, 2], 64, Layout::default()).is_ok());
        }
    }

    #[test]
    fn too_long_is_an_error() {
        let err = build_sequence(60, &[1, 2, 3], &[4, 5], 64, Layout::default()).unwrap_err();
        assert!(matches!(err, Error::SequenceTooLong { total: 66, max: 64 }));
    }

    #[test]
    fn question_after_vision_in_alternate_layout() {
        let s = build_sequence(3, &[1, 7, 2], &[9, 2], 64, Layout::ThinkAfterQuestion).unwrap();
        assert_eq!(s.question, Span { start: 1, len: 3 });
        assert_eq!(s.thinking, Span { start: 4, len: 3 });
        assert_eq!(s.answer.start, 7);
        assert_eq!(s.slots()[4], Slot::Thinking(0));
    }

    #[test]
    fn mask_rows() {
        assert_eq!(causal_mask(1), Array2::from_elem((1, 1), true));
        let m = causal_mask(3);
        assert_eq!(m.row(2).to_vec(), vec![true, true, true]);
        assert_eq!(m.row(0).to_vec(), vec![true, false, false]);
        assert_eq!(causal_mask(5).slice(ndarray::s![..3, ..3]), m);
    }

    proptest! {
        #[test]
        fn labels_only_on_answer(k in 0usize..20, q in 1usize..15, a in 0usize..15) {
            let qi: Vec<u32> = (0..q as u32).collect();
            let ai: Vec<u32> = (0..a as u32).map(|x| x + 4).collect();
            let s = build_sequence(k, &qi, &ai, 128, Layout::default()).unwrap();
            prop_assert_eq!(s.total_len(), 1 + k + q + a);
            prop_assert_eq!(s.label_ids.iter().filter(|&&l| l != LABEL_MASK).count(), a);
            let mask = causal_mask(s.total_len());
            for p in s.answer.range() {
                for t in s.thinking.range() {
                    prop_assert!(mask[[p, t]]);
                }
            }
            for t in s.thinking.range() {
                for p in s.question.range().chain(s.answer.range()) {
                    prop_assert!(!mask[[t, p]]);
                }
            }
        }
    }
}
