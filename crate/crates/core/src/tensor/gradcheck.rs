use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

/// Outcome of comparing tape gradients against central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)` over every coordinate.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the maximum occurred.
    pub worst: (usize, usize),
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    pub tolerance: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Checks the reverse-mode gradient of a scalar function of `inputs` against central
/// differences with the given step.
pub fn grad_check<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();

    let eval = |point: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out);
        if !value.is_scalar() {
            return Err(Error::NonScalarLoss(value.shape().to_vec()));
        }
        Ok(value.item().as_f64())
    };

    let mut point = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        worst_values: (0.0, 0.0),
        tolerance,
        coordinates: 0,
    };
    for i in 0..inputs.len() {
        for k in 0..inputs[i].len() {
            let original = point[i].data()[k];
            point[i].data_mut()[k] = T::of(original.as_f64() + step);
            let plus = eval(&point)?;
            point[i].data_mut()[k] = T::of(original.as_f64() - step);
            let minus = eval(&point)?;
            point[i].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let exact = analytic[i].data()[k].as_f64();
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = (i, k);
                report.worst_values = (exact, numeric);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::<f64>::from_f64(vec![1, 3], &[0.3, -1.2, 2.0]).unwrap();
        let x = Tensor::<f64>::from_f64(vec![3, 1], &[1.5, 0.25, -0.75]).unwrap();
        let report = grad_check(|t, v| t.matmul(v[0], v[1]), &[w, x], 1e-6, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn negated_derivative_is_caught() {
        let x = Tensor::<f64>::from_f64(vec![3], &[0.2, -0.4, 1.1]).unwrap();
        let report = grad_check(
            |t, v| {
                let y = t.map_with_derivative(v[0], |x| x.sin(), |x| -x.cos())?;
                t.sum(y)
            },
            &[x],
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error > 0.1);
        assert!(!report.passed());
    }

    #[test]
    fn non_scalar_output_is_an_error() {
        let x = Tensor::<f64>::from_f64(vec![2], &[1.0, 2.0]).unwrap();
        assert!(grad_check(|t, v| t.exp(v[0]), &[x], 1e-6, 1e-5).is_err());
    }
}
