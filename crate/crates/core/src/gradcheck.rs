//! Central finite-difference verification of analytic gradients.
//!
//! Checks run in 64-bit. For every scalar entry `x` of every input and
//! parameter, the numeric derivative `(f(x+h) - f(x-h)) / 2h` is compared
//! with the tape's analytic gradient using
//! `|a - n| / max(|a|, |n|, floor)`.

mod suite;

use crate::autodiff::{OpKind, Tape, Var};
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub use suite::{standard_suite, SuiteConfig};

/// Step and error threshold for a check.
#[derive(Clone, Copy, Debug)]
pub struct CheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so that entries whose
    /// true gradient is zero compare absolutely.
    pub floor: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub unit: String,
    pub max_rel_err: f64,
    /// Location of the worst entry: input/param label and flat index.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
    pub passed: bool,
}

impl CheckReport {
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        match &self.worst {
            Some((at, i)) => format!(
                "{verdict} {:<28} max_rel_err={:.3e} entries={} worst={}[{}]",
                self.unit, self.max_rel_err, self.entries, at, i
            ),
            None => format!("{verdict} {:<28} entries=0", self.unit),
        }
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare analytic and numeric gradients of the scalar returned by `f` with
/// respect to every entry of `inputs` and of every tensor in `params`.
///
/// `fault` corrupts one op's backward rule on the analytic tape; it is the
/// self-test hook for this checker.
pub fn check<F>(
    unit: &str,
    inputs: &[Tensor<f64>],
    params: &ParamStore<f64>,
    cfg: CheckConfig,
    fault: Option<OpKind>,
    f: F,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>], params: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::with_params(params);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::with_params(params);
    if let Some(kind) = fault {
        tape.inject_fault(kind);
    }
    let param_nodes: Vec<_> = params
        .ids()
        .map(|id| tape.param(id).map(|v| (id, v)))
        .collect::<Result<_>>()?;
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = (0.0f64, None::<(String, usize)>);
    let mut entries = 0;
    let mut record = |err: f64, at: String, i: usize, entries: &mut usize| {
        *entries += 1;
        if err > worst.0 || worst.1.is_none() {
            worst = (err, Some((at, i)));
        }
    };

    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zero(*var);
        let mut probe = inputs.to_vec();
        for i in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + cfg.step;
            let up = eval(&probe, params)?;
            probe[k].data_mut()[i] = x0 - cfg.step;
            let down = eval(&probe, params)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * cfg.step);
            let err = rel_err(analytic.data()[i], numeric, cfg.floor);
            record(err, format!("input{k}"), i, &mut entries);
        }
    }

    let mut probe = params.clone();
    for (id, var) in param_nodes {
        let analytic = grads.get_or_zero(var);
        for i in 0..params.get(id).numel() {
            let x0 = params.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = x0 + cfg.step;
            let up = eval(inputs, &probe)?;
            probe.get_mut(id).data_mut()[i] = x0 - cfg.step;
            let down = eval(inputs, &probe)?;
            probe.get_mut(id).data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * cfg.step);
            let err = rel_err(analytic.data()[i], numeric, cfg.floor);
            record(err, params.name(id).to_string(), i, &mut entries);
        }
    }

    Ok(CheckReport {
        unit: unit.to_string(),
        max_rel_err: worst.0,
        worst: worst.1,
        entries,
        passed: worst.0 < cfg.tolerance,
    })
}
