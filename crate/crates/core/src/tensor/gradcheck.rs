use crate::error::{Error, Result};

use super::{Matrix, Tape, Var};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on an absolute scale instead of amplifying
/// finite-difference roundoff.
pub const REL_ERR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
    pub tol: f64,
    pub passed: bool,
}

fn evaluate<F>(f: &F, inputs: &[Matrix]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.item(out))
}

/// Compares the tape gradient of a scalar function against central
/// differences `(f(x+h) - f(x-h)) / 2h` on every input coordinate.
pub fn grad_check<F>(f: F, inputs: &[Matrix], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let f0 = tape.item(out);
    if !f0.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check forward".into(),
            index: 0,
        });
    }
    tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coordinates: 0,
        tol,
        passed: true,
    };
    let mut flat_offset = 0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var);
        let mut probe: Vec<Matrix> = inputs.to_vec();
        for c in 0..inputs[k].len() {
            let x0 = flat(&inputs[k], c);
            set_flat(&mut probe[k], c, x0 + h);
            let fp = evaluate(&f, &probe)?;
            set_flat(&mut probe[k], c, x0 - h);
            let fm = evaluate(&f, &probe)?;
            set_flat(&mut probe[k], c, x0);
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("grad_check probe of input {k}"),
                    index: flat_offset + c,
                });
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = flat(&analytic, c);
            let denom = a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            let err = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((k, c));
            }
        }
        flat_offset += inputs[k].len();
    }
    report.passed = report.max_rel_err <= tol;
    Ok(report)
}

fn flat(m: &Matrix, c: usize) -> f64 {
    let cols = m.ncols();
    m[[c / cols, c % cols]]
}

fn set_flat(m: &mut Matrix, c: usize, v: f64) {
    let cols = m.ncols();
    m[[c / cols, c % cols]] = v;
}
