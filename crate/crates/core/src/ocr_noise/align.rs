//! Character alignment by minimum edit distance.

/// One step of an alignment between a clean text and its OCR reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match(char),
    Substitute {
        from: char,
        to: char,
    },
    /// Character present only in the OCR text.
    Insert(char),
    /// Character of the clean text missing from the OCR text.
    Delete(char),
}

/// Levenshtein distance with unit costs.
pub fn edit_distance(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Minimum-edit-distance alignment of `truth` against `ocr`.
///
/// When several alignments share the minimum cost the backtrace takes the
/// diagonal (match or substitution) before a deletion, and a deletion before
/// an insertion.
pub fn align(truth: &[char], ocr: &[char]) -> Vec<EditOp> {
    let (n, m) = (truth.len(), ocr.len());
    let width = m + 1;
    let mut dp = vec![0u32; (n + 1) * width];
    for (j, cell) in dp[..width].iter_mut().enumerate() {
        *cell = j as u32;
    }
    for i in 1..=n {
        dp[i * width] = i as u32;
        for j in 1..=m {
            let sub = dp[(i - 1) * width + j - 1] + u32::from(truth[i - 1] != ocr[j - 1]);
            let del = dp[(i - 1) * width + j] + 1;
            let ins = dp[i * width + j - 1] + 1;
            dp[i * width + j] = sub.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * width + j];
        if i > 0 && j > 0 {
            let diff = truth[i - 1] != ocr[j - 1];
            if here == dp[(i - 1) * width + j - 1] + u32::from(diff) {
                ops.push(if diff {
                    EditOp::Substitute {
                        from: truth[i - 1],
                        to: ocr[j - 1],
                    }
                } else {
                    EditOp::Match(truth[i - 1])
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dp[(i - 1) * width + j] + 1 {
            ops.push(EditOp::Delete(truth[i - 1]));
            i -= 1;
        } else {
            ops.push(EditOp::Insert(ocr[j - 1]));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}
