//! Central finite-difference gradient checking.
//!
//! The checker only evaluates the forward function; it never touches the
//! backward pass, so it stays an independent oracle for it.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// |a − n| / max(|a|, |n|, 1e-3). The floor makes near-zero gradients
/// compare on an absolute scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Builds the scalar function of `inputs` in a fresh graph.
pub type Builder<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

pub struct Report {
    pub max_rel_err: f64,
    pub checked: usize,
}

fn eval(f: &Builder<'_>, inputs: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Analytic gradients of the scalar `f` with respect to each input.
pub fn analytic(f: &Builder<'_>, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect())
}

/// Central difference at one coordinate.
pub fn numeric_at(f: &Builder<'_>, inputs: &[Tensor], which: usize, coord: usize, step: f64) -> Result<f64> {
    let mut plus = inputs.to_vec();
    plus[which].data_mut()[coord] += step;
    let mut minus = inputs.to_vec();
    minus[which].data_mut()[coord] -= step;
    Ok((eval(f, &plus)? - eval(f, &minus)?) / (2.0 * step))
}

/// Compares analytic and numeric gradients over every coordinate, or over
/// at most `max_coords` evenly spaced coordinates per input.
pub fn check(f: &Builder<'_>, inputs: &[Tensor], step: f64, max_coords: Option<usize>) -> Result<Report> {
    let grads = analytic(f, inputs)?;
    let mut report = Report { max_rel_err: 0.0, checked: 0 };
    for (which, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let stride = max_coords.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        for coord in (0..n).step_by(stride) {
            let num = numeric_at(f, inputs, which, coord, step)?;
            report.max_rel_err = report.max_rel_err.max(rel_err(grads[which][coord], num));
            report.checked += 1;
        }
    }
    Ok(report)
}
