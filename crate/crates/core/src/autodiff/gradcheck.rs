//! Central-difference gradient verification.

use super::array::Array;
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

/// Denominators below this are treated as this value when forming relative
/// errors, so coordinates with vanishing gradients compare absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compare tape gradients of the scalar function `f` at `point` against
/// central differences with step `h`.
pub fn grad_check<F>(f: F, point: &[Array], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|p| tape.param(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Array> = vars.iter().map(|&v| grads.get(v)).collect();

    let eval = |pt: &[Array]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = pt.iter().map(|p| t.param(p.clone())).collect();
        let r = f(&mut t, &vs)?;
        Ok(t.scalar(r))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        passed: true,
    };
    let mut work: Vec<Array> = point.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        for j in 0..a.len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let err = relative_error(a.data()[j], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, j);
                report.analytic = a.data()[j];
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
