use crate::metrics::Combiner;
use crate::numkit::{accuracy, mlp_logits, MlpSpec, ParamVector};
use crate::tasks::{stack_examples, Example};
use crate::Result;

const EVAL_CHUNK: usize = 1000;

/// How a trained state turns inputs into labels.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Single(&'a ParamVector),
    Ensemble(&'a [ParamVector], Combiner),
}

pub fn eval_accuracy(spec: &MlpSpec, predictor: Predictor<'_>, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0.0;
    for chunk in examples.chunks(EVAL_CHUNK) {
        let (x, y) = stack_examples(chunk);
        let acc = match predictor {
            Predictor::Single(p) => accuracy(&mlp_logits(spec, p, &x)?, &y),
            Predictor::Ensemble(members, combiner) => {
                let logits = members
                    .iter()
                    .map(|m| mlp_logits(spec, m, &x))
                    .collect::<Result<Vec<_>>>()?;
                let pred = combiner.predict(&logits)?;
                pred.iter().zip(&y).filter(|(p, y)| p == y).count() as f64 / y.len() as f64
            }
        };
        hits += acc * chunk.len() as f64;
    }
    Ok(hits / examples.len() as f64)
}
