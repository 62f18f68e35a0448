//! Check the hand-written derivative rules against central differences.

use ndarray::array;
use nfarec::tensor::{grad_check, Tape, Var};

fn main() -> nfarec::Result<()> {
    let x = array![[0.3, -1.2, 0.8], [1.5, 0.1, -0.4]];
    let w = array![[0.2, -0.5], [0.7, 0.1], [-0.3, 0.9]];
    let f = |t: &mut Tape, v: &[Var]| {
        let z = t.matmul(v[0], v[1])?;
        let z = t.elu(z);
        let z = t.layer_norm_rows(z);
        let z = t.softplus_beta_const(z, 2.0)?;
        Ok(t.sum(z))
    };
    let report = grad_check(f, &[x, w], 1e-5, 1e-6)?;
    println!(
        "{} coordinates, max relative error {:.2e}: {}",
        report.coordinates,
        report.max_rel_err,
        if report.passed { "ok" } else { "MISMATCH" }
    );

    // A deliberately wrong rule is caught.
    let broken = |t: &mut Tape, v: &[Var]| {
        let z = t.faulty_identity(v[0]);
        let z = t.tanh(z);
        Ok(t.sum(z))
    };
    let bad = grad_check(broken, &[array![[0.5, -0.2]]], 1e-5, 1e-6)?;
    println!("faulty rule detected: {}", !bad.passed);
    Ok(())
}
