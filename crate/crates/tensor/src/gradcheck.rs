//! Central finite differences, used as an independent oracle for the
//! analytic gradients produced by [`crate::Graph::backward`].

use crate::Tensor;

/// Default step for central differences at double precision.
pub const STEP: f64 = 1e-6;

/// Numerical gradient of scalar `f` at `x` by central differences.
pub fn numeric_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, step: f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = vec![0.0; x.numel()];
    for (i, o) in out.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        *o = (up - down) / (2.0 * step);
    }
    Tensor::new(x.shape(), out)
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`.
///
/// Both gradients vanishing counts as agreement.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.sq_norm().sqrt().max(b.sq_norm().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}
