//! Emotion-polarity-penalized cross-entropy and the three-branch loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::taxonomy::{Polarity, DEFAULT_POLARITY};
use crate::tensor::{Scalar, Tensor};

/// Penalty coefficient per polarity of the *true* class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gammas {
    pub pos: f64,
    pub neu: f64,
    pub neg: f64,
}

impl Gammas {
    pub fn uniform(g: f64) -> Self {
        Gammas { pos: g, neu: g, neg: g }
    }

    pub fn of(&self, p: Polarity) -> f64 {
        match p {
            Polarity::Positive => self.pos,
            Polarity::Neutral => self.neu,
            Polarity::Negative => self.neg,
        }
    }
}

impl Default for Gammas {
    fn default() -> Self {
        Gammas::uniform(0.7)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarityMap {
    pub mapping: Vec<Polarity>,
    pub gamma: Gammas,
}

impl Default for PolarityMap {
    fn default() -> Self {
        PolarityMap {
            mapping: DEFAULT_POLARITY.to_vec(),
            gamma: Gammas::default(),
        }
    }
}

impl PolarityMap {
    pub fn new(mapping: Vec<Polarity>, gamma: Gammas) -> Result<Self> {
        let pm = PolarityMap { mapping, gamma };
        pm.validate()?;
        Ok(pm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mapping.is_empty() {
            return Err(Error::Config("polarity map covers no classes".into()));
        }
        for g in [self.gamma.pos, self.gamma.neu, self.gamma.neg] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::Config(format!("penalty coefficients must be finite and >= 0, got {g}")));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.mapping.len()
    }

    /// Multiplier `1 + γ_ep(y)·[ep(ŷ) ≠ ep(y)]`.
    pub fn factor(&self, label: usize, pred: usize) -> f64 {
        let (py, pp) = (self.mapping[label], self.mapping[pred]);
        if py == pp {
            1.0
        } else {
            1.0 + self.gamma.of(py)
        }
    }
}

/// Index of the row maximum; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    (0..logits.shape()[0]).map(|i| argmax(logits.row(i))).collect()
}

fn check_batch<T: Scalar>(tape: &Tape<'_, T>, logits: Var, labels: &[usize], pm: &PolarityMap) -> Result<(usize, usize)> {
    let (n, c) = match tape.shape(logits) {
        [n, c] => (*n, *c),
        s => return Err(dim_err!("logits must be N x C, got {s:?}")),
    };
    if labels.len() != n {
        return Err(Error::Contract(format!("{} labels for {n} logit rows", labels.len())));
    }
    if c != pm.num_classes() {
        return Err(Error::Contract(format!(
            "{c} logit columns but the polarity map covers {} classes",
            pm.num_classes()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Input(format!("label {bad} outside [0, {c})")));
    }
    Ok((n, c))
}

/// `-(1/N) Σ_i (1 + γ_ep(y_i)·s_i) log p_{i,y_i}`. The penalty indicator is
/// read from the forward values and enters as a constant weight.
pub fn ep_ce_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    logits: Var,
    labels: &[usize],
    pm: &PolarityMap,
) -> Result<Var> {
    let (n, c) = check_batch(tape, logits, labels, pm)?;
    let preds = argmax_rows(tape.value(logits));
    let mut w = vec![T::zero(); n * c];
    for (i, (&y, &p)) in labels.iter().zip(&preds).enumerate() {
        w[i * c + y] = T::of(-pm.factor(y, p) / n as f64);
    }
    let logp = tape.log_softmax(logits, 1)?;
    let w = tape.constant(Tensor::new(vec![n, c], w)?);
    let picked = tape.mul(logp, w)?;
    tape.sum_all(picked)
}

/// Weighted sum of the EP-CE losses of the fused, visual and audio logits.
pub fn multitask_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    fused: Var,
    visual: Var,
    audio: Var,
    labels: &[usize],
    pm: &PolarityMap,
    weights: [f64; 3],
) -> Result<Var> {
    let shape = tape.shape(fused).to_vec();
    if tape.shape(visual) != shape.as_slice() || tape.shape(audio) != shape.as_slice() {
        return Err(Error::Contract(format!(
            "branch logits differ in shape: {:?}, {:?}, {:?}",
            shape,
            tape.shape(visual),
            tape.shape(audio)
        )));
    }
    let mut total = None;
    for (logits, w) in [(fused, weights[0]), (visual, weights[1]), (audio, weights[2])] {
        let l = ep_ce_loss(tape, logits, labels, pm)?;
        let l = if w == 1.0 { l } else { tape.scale(l, T::of(w))? };
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    Ok(total.unwrap())
}
