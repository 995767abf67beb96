//! Central finite-difference gradient checking.

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }
}

/// Absolute scale below which gradients are compared absolutely rather than relatively.
const ABS_FLOOR: f64 = 1e-8;

/// Finite-difference formula used by [`grad_check_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`
    #[default]
    Central,
    /// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`; truncation error
    /// O(h⁴), for deep compositions with strong curvature.
    CentralFourthOrder,
}

/// Compare `backward` against `(f(x+h·e) − f(x−h·e)) / 2h` at each checked
/// coordinate (all of them when `coords` is `None`).
///
/// `f` receives a fresh graph and the `requires_grad` leaf holding the
/// (perturbed) point, and must return a scalar.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, h: f64, tol: f64, coords: Option<&[usize]>) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_with(f, point, h, tol, coords, Stencil::Central)
}

pub fn grad_check_with<F>(
    f: F,
    point: &Tensor<f64>,
    h: f64,
    tol: f64,
    coords: Option<&[usize]>,
    stencil: Stencil,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let eval = |x: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.param(x);
        let out = f(&mut g, v)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let v = g.param(point.clone());
    let out = f(&mut g, v)?;
    g.backward(out)?;
    let analytic = g.grad(v).unwrap_or_else(|| Tensor::zeros(point.shape().to_vec()));

    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.numel()).collect();
            &all
        }
    };

    let mut report = GradCheckReport::default();
    for &i in coords {
        let at = |step: f64| {
            let mut x = point.clone();
            x.data_mut()[i] += step;
            eval(x)
        };
        let numeric = match stencil {
            Stencil::Central => (at(h)? - at(-h)?) / (2.0 * h),
            Stencil::CentralFourthOrder => (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h),
        };
        let a = analytic.data()[i];
        let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
        report.entries.push(GradCheckEntry {
            index: i,
            analytic: a,
            numeric,
            rel_err,
            pass: rel_err < tol,
        });
    }
    Ok(report)
}
