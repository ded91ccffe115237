//! Finite-difference verification of reverse-mode gradients.

use crate::diffcore::{ParamSet, Real, Tape, Var};
use crate::error::{Error, Result};

/// A scalar function of a parameter set, evaluable at any precision.
pub trait Objective {
    /// `vars` holds one tape variable per parameter, in set order.
    fn evaluate<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, vars: &[Var]) -> Result<Var>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst component.
    pub worst: Option<(String, usize)>,
    pub components: usize,
}

fn evaluate_loss<T: Real, O: Objective>(
    objective: &O,
    params: &ParamSet<T>,
    with_grad: bool,
) -> Result<(Tape<T>, Var)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> =
        params.ids().map(|id| if with_grad { tape.param(params, id) } else { tape.frozen_param(params, id) }).collect();
    let loss = objective.evaluate(&mut tape, params, &vars)?;
    tape.ensure_finite()?;
    Ok((tape, loss))
}

/// Reverse-mode gradients at precision `T` compared componentwise against
/// central differences `(f(x+h) − f(x−h)) / 2h`. The differences are always
/// taken in f64 so the reference does not inherit single-precision noise.
/// Relative error uses the denominator `max(|a|, |b|, 1e-8)`.
pub fn grad_check<T: Real, O: Objective>(objective: &O, point: &ParamSet<f64>, h: f64) -> Result<GradCheckReport> {
    let mut at_t: ParamSet<T> = point.cast();
    at_t.zero_grad();
    let (tape, loss) = evaluate_loss(objective, &at_t, true)?;
    let grads = tape.backward(loss)?;
    tape.accumulate_param_grads(&grads, &mut at_t);

    let mut probe = point.clone();
    let mut report = GradCheckReport { max_relative_error: 0.0, worst: None, components: 0 };
    for id in point.ids() {
        let name = point.get(id).name.clone();
        let n = point.get(id).tensor.len();
        let analytic: Vec<f64> = match at_t.get(id).tensor.grad() {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; n],
        };
        for j in 0..n {
            let orig = probe.get(id).tensor.data()[j];
            probe.get_mut(id).tensor.data_mut()[j] = orig + h;
            let (t_plus, l_plus) = evaluate_loss(objective, &probe, false)?;
            probe.get_mut(id).tensor.data_mut()[j] = orig - h;
            let (t_minus, l_minus) = evaluate_loss(objective, &probe, false)?;
            probe.get_mut(id).tensor.data_mut()[j] = orig;
            let (fp, fm) = (t_plus.value(l_plus).item(), t_minus.value(l_minus).item());
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(format!("objective near `{name}`[{j}]")));
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.components += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((name.clone(), j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    struct SumOfSquares;
    impl Objective for SumOfSquares {
        fn evaluate<T: Real>(&self, tape: &mut Tape<T>, _: &ParamSet<T>, vars: &[Var]) -> Result<Var> {
            let sq = tape.mul(vars[0], vars[0])?;
            Ok(tape.sum(sq))
        }
    }

    struct Constant;
    impl Objective for Constant {
        fn evaluate<T: Real>(&self, tape: &mut Tape<T>, _: &ParamSet<T>, _: &[Var]) -> Result<Var> {
            Ok(tape.constant(Tensor::scalar(T::of(3.0))))
        }
    }

    fn point(values: &[f64]) -> ParamSet<f64> {
        let mut set = ParamSet::new();
        set.add("x", Tensor::new(&[values.len()], values.to_vec()).unwrap()).unwrap();
        set
    }

    #[test]
    fn quadratic_is_exact() {
        let report = grad_check::<f64, _>(&SumOfSquares, &point(&[1.0, 2.0]), 1e-3).unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
        let report = grad_check::<f32, _>(&SumOfSquares, &point(&[1.0, 2.0]), 1e-3).unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
        assert_eq!(report.components, 2);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let report = grad_check::<f64, _>(&Constant, &point(&[0.3, -4.0]), 1e-3).unwrap();
        assert_eq!(report.max_relative_error, 0.0);
    }
}
