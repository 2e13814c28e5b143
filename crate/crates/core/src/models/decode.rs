use super::{Ctx, ModelInput, ParamStore, Seq2Seq};
use crate::autograd::Scalar;
use crate::corpus::{PaddedSeq, BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding for every item in the batch.
///
/// Starts from `BOS`, appends the arg-max token at each step, and stops a
/// row at `EOS` or after `max_len` tokens. Returned sequences exclude `BOS`
/// and `EOS`.
pub fn greedy_decode<T: Scalar>(
    model: &Seq2Seq,
    params: &ParamStore<T>,
    input: ModelInput<'_>,
    max_len: usize,
) -> Result<Vec<Vec<u32>>> {
    if max_len < 1 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let mut cx = Ctx::inference(params);
    let enc = model.encode(&mut cx, input)?;
    let batch = enc.memory.batch;
    let mut prefix: Vec<Vec<u32>> = vec![vec![BOS]; batch];
    let mut out: Vec<Vec<u32>> = vec![Vec::new(); batch];
    let mut done = vec![false; batch];
    for _ in 0..max_len {
        let seq = PaddedSeq::from_rows(&prefix, PAD);
        let dists = model.decode_teacher_forced(&mut cx, &enc.memory, &seq)?;
        let logits = &cx.g.value(dists.logits).data;
        let t = seq.len;
        for b in 0..batch {
            let next = if done[b] {
                EOS
            } else {
                let row = &logits[((b * t) + t - 1) * dists.vocab..((b * t) + t) * dists.vocab];
                argmax_lowest(row) as u32
            };
            if !done[b] {
                if next == EOS {
                    done[b] = true;
                } else {
                    out[b].push(next);
                }
            }
            prefix[b].push(next);
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(argmax_lowest(&[1.0f32, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_lowest(&[0.0f64; 5]), 0);
        assert_eq!(argmax_lowest(&[-1.0f32, -0.5]), 1);
    }
}
