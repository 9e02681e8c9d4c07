//! Dense matrices and a reverse-mode gradient tape.

mod dense;
mod tape;

pub use dense::Tensor;
pub use tape::{concat_rows, mean_of, Axis, Tape, Var, LOG_FLOOR, MASK_SENTINEL};

use crate::error::{Error, Result};

/// Cosine similarity of every row of `rows` with the single row `v`, as `n×1`.
pub fn cosine_to_vector<'t>(rows: Var<'t>, v: Var<'t>) -> Result<Var<'t>> {
    if v.shape().0 != 1 || rows.shape().1 != v.shape().1 {
        return Err(Error::Dimension {
            op: "cosine_to_vector",
            left: rows.shape(),
            right: v.shape(),
        });
    }
    let unit_rows = rows.normalize_rows()?;
    let unit_v = v.normalize_rows()?;
    unit_rows.matmul(unit_v.transpose())
}

/// Largest relative discrepancy between tape gradients and central differences.
///
/// The error for each entry is `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        loss.backward()?;
        vars.iter()
            .map(|v| v.grad().expect("leaf gradient populated"))
            .collect()
    };

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..work[pi].len() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[k];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
