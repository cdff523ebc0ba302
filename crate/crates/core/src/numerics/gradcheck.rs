use alloc::vec;
use alloc::vec::Vec;

use super::Objective;

/// Central-difference gradient of `obj` at `x` with absolute step `h`.
pub fn central_difference<O: Objective + ?Sized>(obj: &O, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            // Divide by the step actually taken after rounding.
            let (hi, lo) = (x[i] + h, x[i] - h);
            probe[i] = hi;
            let up = obj.value(&probe);
            probe[i] = lo;
            let down = obj.value(&probe);
            probe[i] = x[i];
            (up - down) / (hi - lo)
        })
        .collect()
}

/// Largest coordinate-wise discrepancy between the analytic gradient and a
/// central-difference estimate, measured as
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn check_gradient<O: Objective + ?Sized>(obj: &O, x: &[f64], h: f64) -> f64 {
    assert!(h > 0.0, "check_gradient: step must be positive");
    let mut analytic = vec![0.0; x.len()];
    obj.value_and_gradient(x, &mut analytic);
    let numeric = central_difference(obj, x, h);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| libm::fabs(a - n) / f64::max(1.0, libm::fabs(*n)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::FnObjective;

    #[test]
    fn sum_of_squares() {
        let obj = FnObjective::new(
            4,
            |x: &[f64]| x.iter().map(|v| v * v).sum(),
            |x: &[f64], g: &mut [f64]| g.iter_mut().zip(x).for_each(|(g, x)| *g = 2.0 * x),
        );
        for x in [[0.0; 4], [1.0, -2.0, 3.5, 0.25], [3.0, -2.0, 0.7, 1e-3]] {
            assert!(check_gradient(&obj, &x, 1e-5) < 1e-9);
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        let obj = FnObjective::new(1, |x: &[f64]| x[0] * x[0], |x: &[f64], g: &mut [f64]| g[0] = 3.0 * x[0]);
        assert!(check_gradient(&obj, &[2.0], 1e-5) > 0.4);
    }
}
