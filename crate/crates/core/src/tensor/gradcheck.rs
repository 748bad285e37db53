use serde::Serialize;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::par;

/// Outcome of comparing reverse-mode gradients to central differences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Which input tensor holds the worst coordinate.
    pub worst_tensor: usize,
    /// Flat index of the worst coordinate within that tensor.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-12)
}

/// Central-difference check of `f` at `x` for a single input tensor.
///
/// `f` records a scalar function of its leaf argument on the given tape.
pub fn finite_diff_grad<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var> + Sync,
{
    finite_diff_grad_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// Central-difference check over every coordinate of every tensor in `xs`.
pub fn finite_diff_grad_many<F>(f: F, xs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step must be positive, got {h}")));
    }
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let coords: Vec<(usize, usize)> = xs.iter().enumerate().flat_map(|(t, x)| (0..x.len()).map(move |i| (t, i))).collect();
    let per_eval = tape.len() * 64;
    let numeric = par::map_range(coords.len(), coords.len() * per_eval, |c| {
        let (t, i) = coords[c];
        let mut inputs = xs.to_vec();
        let x0 = inputs[t].data()[i];
        inputs[t].data_mut()[i] = x0 + h;
        let up = eval(&inputs)?;
        inputs[t].data_mut()[i] = x0 - h;
        let down = eval(&inputs)?;
        Ok((up - down) / (2.0 * h))
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: coords.len(),
    };
    for (c, (&(t, i), n)) in coords.iter().zip(numeric).enumerate() {
        let n = n?;
        let a = grads.get(vars[t]).map_or(0.0, |g| g.data()[i]);
        let e = rel_error(a, n);
        if c == 0 || e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst_tensor = t;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = n;
        }
    }
    Ok(report)
}
