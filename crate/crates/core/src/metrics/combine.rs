use serde::{Deserialize, Serialize};

use crate::numkit::{softmax_rows, Tensor};
use crate::{Error, Result};

/// Class probabilities of `n` members for `b` examples over `k` classes,
/// stored member-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    n: usize,
    b: usize,
    k: usize,
    probs: Vec<f64>,
}

impl PredictionBatch {
    pub fn new(n: usize, b: usize, k: usize, probs: Vec<f64>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::input("prediction batch needs n >= 1 and k >= 1"));
        }
        if probs.len() != n * b * k {
            return Err(Error::dim("prediction batch", n * b * k, probs.len()));
        }
        for (r, row) in probs.chunks_exact(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::input(format!(
                    "row {} of member {} is not a distribution (sum {sum})",
                    r % b.max(1),
                    r / b.max(1)
                )));
            }
        }
        Ok(Self { n, b, k, probs })
    }

    /// Softmax of each member's `(b, k)` logits.
    pub fn from_logits(member_logits: &[Tensor]) -> Result<Self> {
        let first = member_logits
            .first()
            .ok_or_else(|| Error::input("no member logits"))?;
        let (b, k) = (first.rows(), first.cols());
        let mut probs = Vec::with_capacity(member_logits.len() * b * k);
        for l in member_logits {
            if l.shape() != first.shape() {
                return Err(Error::dim("member logits", format!("{:?}", first.shape()), format!("{:?}", l.shape())));
            }
            probs.extend_from_slice(softmax_rows(l).data());
        }
        Self::new(member_logits.len(), b, k, probs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn batch_size(&self) -> usize {
        self.b
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn row(&self, member: usize, example: usize) -> &[f64] {
        let start = (member * self.b + example) * self.k;
        &self.probs[start..start + self.k]
    }

    fn mean_row(&self, example: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.k];
        for i in 0..self.n {
            m.iter_mut().zip(self.row(i, example)).for_each(|(a, p)| *a += p);
        }
        m.iter_mut().for_each(|a| *a /= self.n as f64);
        m
    }
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn combine_average(preds: &PredictionBatch) -> Vec<usize> {
    (0..preds.b).map(|e| argmax(&preds.mean_row(e))).collect()
}

/// The most confident member decides; ties go to the lowest member.
pub fn combine_hard_vote(preds: &PredictionBatch) -> Vec<usize> {
    (0..preds.b)
        .map(|e| {
            let conf: Vec<f64> = (0..preds.n)
                .map(|i| preds.row(i, e).iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            argmax(preds.row(argmax(&conf), e))
        })
        .collect()
}

/// Modal member argmax; a tie is settled by the mean probability of the tied
/// classes.
pub fn combine_majority_vote(preds: &PredictionBatch) -> Vec<usize> {
    (0..preds.b)
        .map(|e| {
            let mut votes = vec![0usize; preds.k];
            for i in 0..preds.n {
                votes[argmax(preds.row(i, e))] += 1;
            }
            let top = *votes.iter().max().expect("k >= 1");
            let tied: Vec<usize> = (0..preds.k).filter(|&c| votes[c] == top).collect();
            if tied.len() == 1 {
                return tied[0];
            }
            let mean = preds.mean_row(e);
            let scores: Vec<f64> = tied.iter().map(|&c| mean[c]).collect();
            tied[argmax(&scores)]
        })
        .collect()
}

/// Argmax of the mean logit vector.
pub fn combine_average_logits(member_logits: &[Tensor]) -> Result<Vec<usize>> {
    let first = member_logits
        .first()
        .ok_or_else(|| Error::input("no member logits"))?;
    let mut sum = vec![0.0; first.data().len()];
    for l in member_logits {
        if l.shape() != first.shape() {
            return Err(Error::dim("member logits", format!("{:?}", first.shape()), format!("{:?}", l.shape())));
        }
        sum.iter_mut().zip(l.data()).for_each(|(s, v)| *s += v);
    }
    Ok(sum.chunks_exact(first.cols().max(1)).map(argmax).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    #[default]
    Average,
    HardVote,
    Majority,
    /// Averages raw logits instead of probabilities.
    AverageLogits,
}

impl Combiner {
    pub fn predict(self, member_logits: &[Tensor]) -> Result<Vec<usize>> {
        if self == Combiner::AverageLogits {
            return combine_average_logits(member_logits);
        }
        let preds = PredictionBatch::from_logits(member_logits)?;
        Ok(match self {
            Combiner::Average => combine_average(&preds),
            Combiner::HardVote => combine_hard_vote(&preds),
            Combiner::Majority => combine_majority_vote(&preds),
            Combiner::AverageLogits => unreachable!(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(members: &[&[f64]]) -> PredictionBatch {
        let k = members[0].len();
        PredictionBatch::new(members.len(), 1, k, members.concat()).unwrap()
    }

    #[test]
    fn average_fixtures() {
        assert_eq!(combine_average(&batch(&[&[0.3, 0.7]])), vec![1]);
        assert_eq!(combine_average(&batch(&[&[0.6, 0.4], &[0.2, 0.8]])), vec![1]);
        assert_eq!(combine_average(&batch(&[&[0.5, 0.5]])), vec![0]);
    }

    #[test]
    fn hard_vote_fixtures() {
        assert_eq!(combine_hard_vote(&batch(&[&[0.9, 0.1], &[0.4, 0.6]])), vec![0]);
        assert_eq!(combine_hard_vote(&batch(&[&[0.2, 0.8]])), vec![1]);
        assert_eq!(combine_hard_vote(&batch(&[&[0.7, 0.3], &[0.3, 0.7]])), vec![0]);
    }

    #[test]
    fn majority_fixtures() {
        let three = batch(&[&[0.6, 0.4], &[0.7, 0.3], &[0.1, 0.9]]);
        assert_eq!(combine_majority_vote(&three), vec![0]);
        assert_eq!(combine_majority_vote(&batch(&[&[0.1, 0.9]])), vec![1]);
        assert_eq!(combine_majority_vote(&batch(&[&[0.55, 0.45], &[0.1, 0.9]])), vec![1]);
    }

    #[test]
    fn rejects_non_distributions() {
        assert!(PredictionBatch::new(1, 1, 2, vec![0.5, 0.6]).is_err());
        assert!(PredictionBatch::new(1, 1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn average_logits_variant() {
        let a = Tensor::new(vec![1, 2], vec![2.0, 0.0]).unwrap();
        let b = Tensor::new(vec![1, 2], vec![0.0, 3.0]).unwrap();
        assert_eq!(Combiner::AverageLogits.predict(&[a.clone(), b.clone()]).unwrap(), vec![1]);
        assert_eq!(Combiner::Average.predict(&[a.clone(), a]).unwrap(), vec![0]);
    }
}
