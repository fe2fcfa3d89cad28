use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Largest elementwise `|a − n| / max(1e-8, |a| + |n|)`.
pub fn max_relative_error<T: Real>(analytic: &[T], numeric: &[T]) -> T {
    max_relative_error_floored(analytic, numeric, T::lit(1e-8))
}

/// As [`max_relative_error`] with an explicit denominator floor.
pub fn max_relative_error_floored<T: Real>(analytic: &[T], numeric: &[T], floor: T) -> T {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / floor.max(a.abs() + n.abs()))
        .fold(T::zero(), T::max)
}

/// Compares the tape gradient of scalar `f` at `x` against central
/// differences with step `eps`, returning the max relative error.
///
/// A central difference cannot resolve slopes much below
/// `machine_eps · |f| / eps`, so entries smaller than a thousand times that
/// are measured against it instead of against themselves. Exactly-zero
/// gradients then score their roundoff as 1e-3 rather than as 1.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<T>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let eval = |input: &Tensor<T>| -> Result<T> {
        let mut tape = Tape::inference();
        let v = tape.leaf(input);
        let out = f(&mut tape, v)?;
        let y = tape.scalar(out)?;
        if !y.is_finite() {
            return Err(Error::Evaluation(format!("function value is not finite: {y}")));
        }
        Ok(y)
    };

    let leaf = x.clone().with_requires_grad(true);
    let f0 = eval(&leaf)?;
    let mut tape = Tape::new();
    let v = tape.leaf(&leaf);
    let out = f(&mut tape, v)?;
    let analytic = match tape.backward(out) {
        Ok(g) => g.get(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); x.numel()]),
        // f does not depend on x at all
        Err(Error::InvalidArgument(_)) if !tape.requires_grad(out) => vec![T::zero(); x.numel()],
        Err(e) => return Err(e),
    };

    let two = T::lit(2.0);
    let mut numeric = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((up - down) / (two * eps));
    }
    let resolution = T::epsilon() * f0.abs() / eps * T::lit(1e3);
    Ok(max_relative_error_floored(&analytic, &numeric, resolution.max(T::lit(1e-8))))
}
