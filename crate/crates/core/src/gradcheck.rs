//! Central finite-difference gradient checking.
//!
//! Test-support oracle: independent of the backward implementations it
//! verifies. Run in f64; the default step of 1e-3 leaves enough headroom
//! for a 1e-4 relative tolerance.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-3;

/// Relative error with an absolute floor so near-zero gradients compare
/// sanely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / scale
}

/// Checks the analytic gradient of `f` with respect to `input` against
/// central finite differences. `f` must rebuild the graph on every call
/// and return a scalar loss. Returns the worst relative error.
pub fn check_gradient<T, F>(input: &Tensor<T>, mut f: F, step: f64) -> f64
where
    T: Scalar,
    F: FnMut() -> Tensor<T>,
{
    input.set_requires_grad(true);
    input.zero_grad();
    let loss = f();
    loss.backward().expect("backward failed in gradcheck");
    let analytic = input.grad().expect("no gradient recorded");

    let h = T::of_f64(step);
    let two_h = T::of_f64(2.0 * step);
    let n = input.numel();
    let mut worst = 0.0_f64;
    for i in 0..n {
        let orig = input.data()[i];
        input.with_data_mut(|d| d[i] = orig + h);
        let plus = f().item().as_f64();
        input.with_data_mut(|d| d[i] = orig - h);
        let minus = f().item().as_f64();
        input.with_data_mut(|d| d[i] = orig);
        let numeric = (plus - minus) / two_h.as_f64();
        let err = relative_error(analytic[i].as_f64(), numeric);
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// Spot-checks a handful of coordinates of `input` instead of all of them;
/// used for composite losses where a full sweep would be slow.
pub fn spot_check_gradient<T, F>(
    input: &Tensor<T>,
    mut f: F,
    step: f64,
    coords: &[usize],
) -> f64
where
    T: Scalar,
    F: FnMut() -> Tensor<T>,
{
    input.set_requires_grad(true);
    input.zero_grad();
    let loss = f();
    loss.backward().expect("backward failed in gradcheck");
    let analytic = input.grad().expect("no gradient recorded");

    let h = T::of_f64(step);
    let mut worst = 0.0_f64;
    for &i in coords {
        let orig = input.data()[i];
        input.with_data_mut(|d| d[i] = orig + h);
        let plus = f().item().as_f64();
        input.with_data_mut(|d| d[i] = orig - h);
        let minus = f().item().as_f64();
        input.with_data_mut(|d| d[i] = orig);
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i].as_f64(), numeric);
        if err > worst {
            worst = err;
        }
    }
    worst
}
