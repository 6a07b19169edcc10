//! Preprocessing: annotation transfer between two tokenizations of the same
//! transcript, long-sentence splitting, feature clipping and label rescaling.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EditOp {
    /// `src[i] == dst[j]`
    Keep(usize, usize),
    /// `src[i]` becomes `dst[j]`
    Replace(usize, usize),
    Delete(usize),
    Insert(usize),
}

/// Ordered (left to right) edit operations turning a source sequence into a
/// target sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
    pub src_len: usize,
    pub dst_len: usize,
}

impl EditScript {
    /// Identity script over a sequence of length `n`.
    pub fn identity(n: usize) -> Self {
        Self {
            ops: (0..n).map(|i| EditOp::Keep(i, i)).collect(),
            src_len: n,
            dst_len: n,
        }
    }

    /// Number of non-`Keep` operations.
    pub fn cost(&self) -> usize {
        self.ops
            .iter()
            .filter(|op| !matches!(op, EditOp::Keep(..)))
            .count()
    }

    /// Replays the script on `src`, reading inserted and replacement items
    /// from `dst`.
    pub fn apply<T: Clone>(&self, src: &[T], dst: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.dst_len);
        for op in &self.ops {
            match *op {
                EditOp::Keep(i, _) => out.push(src[i].clone()),
                EditOp::Replace(_, j) | EditOp::Insert(j) => out.push(dst[j].clone()),
                EditOp::Delete(_) => {}
            }
        }
        out
    }
}

/// Unit-cost edit distance and one minimal script. The backtrace prefers
/// Keep, then Replace, then Delete, then Insert.
pub fn levenshtein_script<T: PartialEq>(src: &[T], dst: &[T]) -> (usize, EditScript) {
    let (n, m) = (src.len(), dst.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(src[i - 1] != dst[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diag = d[(i - 1) * w + j - 1];
            if src[i - 1] == dst[j - 1] && diag == here {
                ops.push(EditOp::Keep(i - 1, j - 1));
                i -= 1;
                j -= 1;
                continue;
            }
            if src[i - 1] != dst[j - 1] && diag + 1 == here {
                ops.push(EditOp::Replace(i - 1, j - 1));
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            ops.push(EditOp::Delete(i - 1));
            i -= 1;
        } else {
            ops.push(EditOp::Insert(j - 1));
            j -= 1;
        }
    }
    ops.reverse();
    (
        d[n * w + m],
        EditScript {
            ops,
            src_len: n,
            dst_len: m,
        },
    )
}

/// Carries per-token tags along an edit script. Kept and replaced tokens
/// keep their tag, inserted tokens get `fill`, deleted tags are dropped.
pub fn transfer_tags<G: Clone>(src_tags: &[G], script: &EditScript, fill: G) -> Result<Vec<G>> {
    if src_tags.len() != script.src_len {
        return Err(Error::LengthMismatch {
            what: "transfer_tags source",
            left: src_tags.len(),
            right: script.src_len,
        });
    }
    let mut out = vec![fill.clone(); script.dst_len];
    for op in &script.ops {
        match *op {
            EditOp::Keep(i, j) | EditOp::Replace(i, j) => out[j] = src_tags[i].clone(),
            EditOp::Insert(j) => out[j] = fill.clone(),
            EditOp::Delete(_) => {}
        }
    }
    Ok(out)
}

/// Drops tokens matching `skip` (e.g. a punctuation placeholder) and returns
/// the kept tokens with their original indices.
pub fn filter_tokens<T: Clone>(tokens: &[T], skip: impl Fn(&T) -> bool) -> (Vec<T>, Vec<usize>) {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| !skip(t))
        .map(|(i, t)| (t.clone(), i))
        .unzip()
}

pub const MAX_SENTENCE_LEN: usize = 50;
pub const MIN_CHUNK: usize = 4;

/// Splits a sentence longer than `max_len` at the given breakpoints
/// (indices where a new chunk starts). Chunks of `min_chunk` tokens or fewer
/// are merged into the following chunk; a short trailing chunk is merged
/// into the preceding one.
pub fn split_long_sentences<T: Clone>(
    tokens: &[T],
    max_len: usize,
    min_chunk: usize,
    breakpoints: &[usize],
) -> Result<Vec<Vec<T>>> {
    if tokens.len() <= max_len {
        return Ok(vec![tokens.to_vec()]);
    }
    if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "breakpoints must be strictly increasing".into(),
        ));
    }
    if breakpoints.iter().any(|&b| b == 0 || b >= tokens.len()) {
        return Err(Error::InvalidArgument(format!(
            "breakpoints must lie in 1..{}",
            tokens.len()
        )));
    }
    let mut bounds = Vec::with_capacity(breakpoints.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(breakpoints);
    bounds.push(tokens.len());

    let mut chunks: Vec<Vec<T>> = Vec::new();
    let mut pending: Vec<T> = Vec::new();
    for w in bounds.windows(2) {
        pending.extend_from_slice(&tokens[w[0]..w[1]]);
        if pending.len() > min_chunk {
            chunks.push(std::mem::take(&mut pending));
        }
    }
    if !pending.is_empty() {
        match chunks.last_mut() {
            Some(last) => last.extend(pending),
            None => chunks.push(pending),
        }
    }
    Ok(chunks)
}

pub const CLIP_LO: f64 = -30.0;
pub const CLIP_HI: f64 = 30.0;

/// Clamps every entry to `[lo, hi]`; non-finite entries become 0.
pub fn clip_features(m: &[Vec<f64>], lo: f64, hi: f64) -> Vec<Vec<f64>> {
    m.iter()
        .map(|row| row.iter().map(|&v| clip_value(v, lo, hi)).collect())
        .collect()
}

pub fn clip_value(v: f64, lo: f64, hi: f64) -> f64 {
    if v.is_finite() {
        v.clamp(lo, hi)
    } else {
        0.0
    }
}

/// Applies [`clip_value`] to every feature in the corpus.
pub fn clip_corpus(c: &mut crate::corpus::Corpus, lo: f64, hi: f64) {
    for r in &mut c.reviews {
        for s in &mut r.sentences {
            for t in &mut s.tokens {
                let f = &mut t.features;
                for v in f
                    .text
                    .iter_mut()
                    .chain(f.audio.iter_mut())
                    .chain(f.video.iter_mut())
                {
                    *v = clip_value(*v, lo, hi);
                }
            }
        }
    }
}

/// Maps `raw` in `[src_min, src_max]` linearly onto `[0, 1]`.
pub fn rescale_text_label(raw: f64, src_min: f64, src_max: f64) -> Result<f64> {
    if src_min >= src_max || !src_min.is_finite() || !src_max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "invalid source range [{src_min}, {src_max}]"
        )));
    }
    if !(src_min..=src_max).contains(&raw) {
        return Err(Error::OutOfRange {
            value: raw,
            lo: src_min,
            hi: src_max,
        });
    }
    Ok((raw - src_min) / (src_max - src_min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_sequences() {
        let a = toks("a b c");
        let (d, s) = levenshtein_script(&a, &a);
        assert_eq!(d, 0);
        assert_eq!(s, EditScript::identity(3));
    }

    #[test]
    fn single_substitution() {
        let (d, s) = levenshtein_script(&toks("a b c"), &toks("a b d"));
        assert_eq!(d, 1);
        assert_eq!(
            s.ops,
            vec![
                EditOp::Keep(0, 0),
                EditOp::Keep(1, 1),
                EditOp::Replace(2, 2)
            ]
        );
    }

    #[test]
    fn empty_sequences() {
        let e: Vec<u8> = vec![];
        assert_eq!(levenshtein_script(&e, &e).0, 0);
        let (d, s) = levenshtein_script(&e, &[1u8, 2]);
        assert_eq!(d, 2);
        assert_eq!(s.ops, vec![EditOp::Insert(0), EditOp::Insert(1)]);
        let (d, s) = levenshtein_script(&[1u8, 2], &e);
        assert_eq!(d, 2);
        assert_eq!(s.ops, vec![EditOp::Delete(0), EditOp::Delete(1)]);
    }

    #[test]
    fn tags_follow_identity() {
        assert_eq!(
            transfer_tags(&[1, 0, 1], &EditScript::identity(3), 0).unwrap(),
            vec![1, 0, 1]
        );
    }

    #[test]
    fn tags_follow_hand_script() {
        let script = EditScript {
            ops: vec![EditOp::Delete(0), EditOp::Keep(1, 0), EditOp::Insert(1)],
            src_len: 2,
            dst_len: 2,
        };
        assert_eq!(transfer_tags(&[1, 0], &script, 0).unwrap(), vec![0, 0]);
        assert!(matches!(
            transfer_tags(&[1, 0, 0], &script, 0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn split_short_sentence_untouched() {
        let t: Vec<usize> = (0..30).collect();
        assert_eq!(split_long_sentences(&t, 50, 4, &[10]).unwrap(), vec![t]);
    }

    #[test]
    fn split_once() {
        let t: Vec<usize> = (0..60).collect();
        let c = split_long_sentences(&t, 50, 4, &[28]).unwrap();
        assert_eq!(c.iter().map(Vec::len).collect::<Vec<_>>(), vec![28, 32]);
    }

    #[test]
    fn short_leading_chunk_merges_forward() {
        let t: Vec<usize> = (0..60).collect();
        let c = split_long_sentences(&t, 50, 4, &[3, 30]).unwrap();
        assert_eq!(c.iter().map(Vec::len).collect::<Vec<_>>(), vec![30, 30]);
        assert_eq!(c.concat(), t);
    }

    #[test]
    fn short_trailing_chunk_merges_backward() {
        let t: Vec<usize> = (0..60).collect();
        let c = split_long_sentences(&t, 50, 4, &[30, 56]).unwrap();
        assert_eq!(c.iter().map(Vec::len).collect::<Vec<_>>(), vec![30, 30]);
        // exactly min_chunk counts as short
        let c = split_long_sentences(&t, 50, 4, &[4, 30]).unwrap();
        assert_eq!(c.iter().map(Vec::len).collect::<Vec<_>>(), vec![30, 30]);
    }

    #[test]
    fn bad_breakpoints() {
        let t: Vec<usize> = (0..60).collect();
        assert!(split_long_sentences(&t, 50, 4, &[30, 10]).is_err());
        assert!(split_long_sentences(&t, 50, 4, &[60]).is_err());
    }

    #[test]
    fn clipping() {
        let m = vec![
            vec![45.0, -3.0, f64::NEG_INFINITY],
            vec![f64::NAN, -31.0, 30.0],
        ];
        assert_eq!(
            clip_features(&m, CLIP_LO, CLIP_HI),
            vec![vec![30.0, -3.0, 0.0], vec![0.0, -30.0, 30.0]]
        );
        let inside = vec![vec![1.0, -2.5]];
        assert_eq!(clip_features(&inside, CLIP_LO, CLIP_HI), inside);
    }

    #[test]
    fn rescaling() {
        assert_eq!(rescale_text_label(1.0, 1.0, 7.0).unwrap(), 0.0);
        assert_eq!(rescale_text_label(7.0, 1.0, 7.0).unwrap(), 1.0);
        assert_eq!(rescale_text_label(4.0, 1.0, 7.0).unwrap(), 0.5);
        assert!(matches!(
            rescale_text_label(7.5, 1.0, 7.0),
            Err(Error::OutOfRange { .. })
        ));
        assert!(rescale_text_label(1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn filtering_keeps_indices() {
        let (kept, idx) = filter_tokens(&toks("a sp b sp c"), |t| t == "sp");
        assert_eq!(kept, toks("a b c"));
        assert_eq!(idx, vec![0, 2, 4]);
    }

    fn seq() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..4, 0..12)
    }

    proptest! {
        #[test]
        fn script_reproduces_target(a in seq(), b in seq()) {
            let (d, s) = levenshtein_script(&a, &b);
            prop_assert_eq!(s.apply(&a, &b), b.clone());
            prop_assert_eq!(s.cost(), d);
        }

        #[test]
        fn distance_is_a_metric(a in seq(), b in seq(), c in seq()) {
            let ab = levenshtein_script(&a, &b).0;
            prop_assert_eq!(ab, levenshtein_script(&b, &a).0);
            prop_assert!(levenshtein_script(&a, &c).0 <= ab + levenshtein_script(&b, &c).0);
        }

        #[test]
        fn clipping_is_idempotent_and_monotone(row in prop::collection::vec(-100.0f64..100.0, 1..20)) {
            let once = clip_features(std::slice::from_ref(&row), CLIP_LO, CLIP_HI);
            prop_assert_eq!(clip_features(&once, CLIP_LO, CLIP_HI), once.clone());
            for i in 0..row.len() {
                for j in 0..row.len() {
                    if row[i] <= row[j] {
                        prop_assert!(once[0][i] <= once[0][j]);
                    }
                }
            }
        }
    }
}
