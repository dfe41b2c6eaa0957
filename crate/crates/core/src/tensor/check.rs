use super::{Tape, Tensor, TensorError, Var};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |numeric|)` over every entry.
    pub max_rel_error: f64,
    /// Entry (parameter index, flat offset) where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    pub entries: usize,
}

/// Compares the gradient of a scalar objective against central differences
/// with step `step`. `f` records the objective on the tape given one leaf
/// per entry of `params`, and must be deterministic.
pub fn finite_diff_check<F, E>(f: F, params: &[Tensor], step: f64) -> std::result::Result<GradCheck, E>
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, E>,
    E: From<TensorError>,
{
    assert!(step > 0.0, "finite difference step must be positive");

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape
        .value(out)
        .item()
        .ok_or_else(|| TensorError::NonScalarLoss(tape.value(out).shape().to_vec()))?;
    if !value.is_finite() {
        return Err(TensorError::NonFinite(value).into());
    }
    let grads = tape.backward(out)?;

    let eval = |perturbed: &[Tensor]| -> std::result::Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| tape.leaf(p.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item().unwrap_or(f64::NAN);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TensorError::NonFinite(v).into())
        }
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut check = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(|g| g.data().to_vec());
        for j in 0..params[pi].len() {
            let original = params[pi].data()[j];
            work[pi].data_mut()[j] = original + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = original - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.as_ref().map_or(0.0, |g| g[j]);
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            check.entries += 1;
            if err > check.max_rel_error || check.worst.is_none() {
                check.max_rel_error = check.max_rel_error.max(err);
                check.worst = Some((pi, j));
            }
        }
    }
    Ok(check)
}
