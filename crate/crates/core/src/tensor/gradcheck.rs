//! Central finite-difference verification of analytic gradients.
//!
//! For a tensor-valued `f`, the check contracts the output with a fixed
//! random projection `r` and compares `r·J` (one vector-Jacobian product via
//! [`Tensor::backward_with`]) against `(r·f(x+h) − r·f(x−h)) / 2h`, with the
//! contraction done in f64 so untouched outputs cancel exactly. Scalar `f`
//! uses `r = [1]`.
//!
//! The error per coordinate is `|analytic − numeric| / max(|analytic|, |numeric|, 1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::FLIP_INPUT_GRAD;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Checks every coordinate of `input`.
pub fn grad_check<F>(f: F, input: &Tensor, step: f32) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let coords: Vec<usize> = (0..input.numel()).collect();
    grad_check_coords(f, input, step, &coords)
}

/// Checks only the listed coordinates of `input`.
pub fn grad_check_coords<F>(f: F, input: &Tensor, step: f32, coords: &[usize]) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if step <= 0.0 {
        return Err(Error::Contract("finite-difference step must be positive".into()));
    }
    let x = input.detach().into_param();
    let y = f(&x)?;
    let projection: Vec<f32> = if y.numel() == 1 {
        vec![1.0]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        (0..y.numel()).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
    };
    y.backward_with(&projection)?;
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);

    let project = |t: &Tensor| -> f64 {
        t.data()
            .iter()
            .zip(&projection)
            .map(|(&v, &r)| v as f64 * r as f64)
            .sum()
    };

    let base = input.data().to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for &i in coords {
        if i >= base.len() {
            return Err(Error::Contract(format!("coordinate {i} out of range")));
        }
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += step;
        minus[i] -= step;
        let span = plus[i] as f64 - minus[i] as f64;
        let fp = project(&f(&Tensor::new(input.shape(), plus)?)?);
        let fm = project(&f(&Tensor::new(input.shape(), minus)?)?);
        let numeric = (fp - fm) / span;
        let a = analytic[i] as f64;
        let err = rel_error(a, numeric);
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("gradient check at coordinate {i}")));
        }
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Fault injection used to prove the gradient checks can fail.
pub mod fault {
    use super::FLIP_INPUT_GRAD;

    /// While enabled, conv3d negates its input gradient on the calling thread.
    pub fn set_conv_input_grad_sign_flip(enabled: bool) {
        FLIP_INPUT_GRAD.with(|f| f.set(enabled));
    }

    pub fn conv_input_grad_sign_flip() -> bool {
        FLIP_INPUT_GRAD.with(|f| f.get())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{scale, sum};

    #[test]
    fn linear_function_has_negligible_error() {
        let x = Tensor::new(&[5], vec![0.1, -0.4, 0.9, 0.0, -1.0]).unwrap();
        let report = grad_check(|t| Ok(sum(&scale(t, 3.0))), &x, 1e-3).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert_eq!(report.checked, 5);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // relu at exactly zero has subgradient 0 but the two-sided difference sees 0.5
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        let report = grad_check(|t| Ok(sum(&crate::tensor::scale(&crate::tensor::relu(t), 4.0))), &x, 1e-3).unwrap();
        assert!(report.max_rel_error > 0.1);
    }
}
