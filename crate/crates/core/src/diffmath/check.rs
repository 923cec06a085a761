//! Central finite differences, used to audit the adjoint rules.

use super::graph::{Gradients, ParamStore};
use super::tensor::Tensor;

/// Numeric gradient of `f` with respect to every trainable parameter in
/// `store`, by central differences with step `h`. Frozen parameters get
/// `None`.
pub fn numeric_gradients(store: &ParamStore, h: f64, f: impl Fn(&ParamStore) -> f64) -> Vec<Option<Tensor>> {
    let mut work = store.clone();
    store
        .ids()
        .map(|id| {
            if store.is_frozen(id) {
                return None;
            }
            let (rows, cols) = store.get(id).shape();
            let mut out = Tensor::zeros(rows, cols);
            for k in 0..rows * cols {
                let orig = work.get(id).data()[k];
                work.get_mut(id).data_mut()[k] = orig + h;
                let up = f(&work);
                work.get_mut(id).data_mut()[k] = orig - h;
                let down = f(&work);
                work.get_mut(id).data_mut()[k] = orig;
                out.data_mut()[k] = (up - down) / (2.0 * h);
            }
            Some(out)
        })
        .collect()
}

/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over all trainable
/// parameters, treating a missing analytic gradient as zero.
pub fn relative_error(store: &ParamStore, analytic: &Gradients, numeric: &[Option<Tensor>]) -> f64 {
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for id in store.ids() {
        let Some(num) = &numeric[id.index()] else { continue };
        let zeros = Tensor::zeros(num.rows(), num.cols());
        let an = analytic.get(id).unwrap_or(&zeros);
        for (a, n) in an.data().iter().zip(num.data()) {
            diff += (a - n) * (a - n);
            na += a * a;
            nn += n * n;
        }
    }
    let scale = na.sqrt().max(nn.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}
