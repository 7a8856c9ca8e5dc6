//! Central-difference verification of tape gradients.

use super::graph::{Graph, Var};
use super::kernels::Real;
use super::{NnError, ParamStore};

/// Finite-difference step applied to each parameter entry.
pub const GRAD_CHECK_STEP: f32 = 1e-3;
/// Pass threshold on the maximum relative error.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    /// Entries compared.
    pub checked: usize,
    /// Entries whose stencil crossed a ReLU kink, where the central
    /// difference does not estimate the one-sided derivative.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn grad_check<T, F, E>(store: &mut ParamStore, forward: F) -> Result<GradCheckReport, E>
where
    T: Real,
    F: FnMut(&mut Graph<T>, &ParamStore) -> Result<Var, E>,
    E: From<NnError>,
{
    grad_check_with(store, forward, |_| {})
}

/// Like [`grad_check`], but lets the caller edit the analytic gradients
/// before the comparison (used for negative controls).
pub fn grad_check_with<T, F, E, C>(
    store: &mut ParamStore,
    mut forward: F,
    tamper: C,
) -> Result<GradCheckReport, E>
where
    T: Real,
    F: FnMut(&mut Graph<T>, &ParamStore) -> Result<Var, E>,
    E: From<NnError>,
    C: FnOnce(&mut ParamStore),
{
    store.zero_grad();
    let mut graph = Graph::<T>::new();
    let loss = forward(&mut graph, store)?;
    finite(graph.scalar(loss).as_f64())?;
    let base_signature = graph.relu_signature();
    graph.backward(loss, store)?;
    tamper(store);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        skipped_kinks: 0,
    };

    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).trainable).collect();
    for id in ids {
        let n = store.get(id).value.len();
        for i in 0..n {
            let original = store.get(id).value.data()[i];
            let analytic = f64::from(store.get(id).grad.data()[i]);

            let plus = original + GRAD_CHECK_STEP;
            let minus = original - GRAD_CHECK_STEP;
            store.get_mut(id).value.data_mut()[i] = plus;
            let (f_plus, sig_plus) = evaluate(&mut forward, store)?;
            store.get_mut(id).value.data_mut()[i] = minus;
            let (f_minus, sig_minus) = evaluate(&mut forward, store)?;
            store.get_mut(id).value.data_mut()[i] = original;

            if sig_plus != base_signature || sig_minus != base_signature {
                report.skipped_kinks += 1;
                continue;
            }
            // Exact perturbation actually applied after f32 rounding.
            let span = f64::from(plus) - f64::from(minus);
            let numeric = (f_plus - f_minus) / span;
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if report.checked == 1 || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

fn evaluate<T, F, E>(forward: &mut F, store: &ParamStore) -> Result<(f64, u64), E>
where
    T: Real,
    F: FnMut(&mut Graph<T>, &ParamStore) -> Result<Var, E>,
    E: From<NnError>,
{
    let mut g = Graph::<T>::new();
    let loss = forward(&mut g, store)?;
    let value = g.scalar(loss).as_f64();
    finite(value)?;
    Ok((value, g.relu_signature()))
}

fn finite(v: f64) -> Result<(), NnError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(NnError::NonFinite {
            context: "loss during gradient check".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::normal_tensor;
    use crate::nn::Tensor;

    fn linear_store() -> (ParamStore, crate::nn::ParamId, crate::nn::ParamId) {
        let mut s = ParamStore::new();
        let w = s.add("w", normal_tensor(&[4, 3], 0.7, 1)).unwrap();
        let b = s.add("b", normal_tensor(&[3], 0.7, 2)).unwrap();
        (s, w, b)
    }

    fn linear_loss(
        g: &mut Graph<f64>,
        s: &ParamStore,
        w: crate::nn::ParamId,
        b: crate::nn::ParamId,
    ) -> Result<Var, NnError> {
        let x = g.input(2, 4, vec![0.5, -1.0, 2.0, 0.25, 1.5, 0.3, -0.7, 1.1])?;
        let (wv, bv) = (g.param(s, w), g.param(s, b));
        let y = g.affine(x, wv, bv)?;
        let ones = g.input(3, 1, vec![1.0, 2.0, -1.0])?;
        let col = g.matmul(y, ones)?;
        let halves = g.input(2, 1, vec![0.5, 0.5])?;
        let t = g.mul(col, halves)?;
        let row = g.input(1, 2, vec![1.0, 1.0])?;
        g.matmul(row, t)
    }

    #[test]
    fn linear_model_is_exact() {
        let (mut s, w, b) = linear_store();
        let report = grad_check(&mut s, |g, s| linear_loss(g, s, w, b)).unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
        assert_eq!(report.checked, 15);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (mut s, w, b) = linear_store();
        let report = grad_check_with(
            &mut s,
            |g, s| linear_loss(g, s, w, b),
            |s| s.get_mut(w).grad.data_mut()[5] *= 2.0,
        )
        .unwrap();
        assert!(report.max_rel_error > 0.3, "{report:?}");
        assert_eq!(report.worst_param, "w");
        assert_eq!(report.worst_index, 5);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::filled(&[1, 1], 1.0)).unwrap();
        let res = grad_check::<f64, _, NnError>(&mut s, |g, s| {
            let x = g.input(1, 1, vec![f64::INFINITY])?;
            let wv = g.param(s, w);
            g.matmul(x, wv)
        });
        assert!(matches!(res, Err(NnError::NonFinite { .. })));
    }
}
