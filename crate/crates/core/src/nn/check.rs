//! Central finite-difference verification of analytic parameter gradients.

use rayon::prelude::*;

use crate::error::Result;

use super::graph::{Graph, Var};
use super::model::Model;

/// Agreement between analytic and numeric gradients for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    /// ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂); 0 when both norms are below
    /// [`VANISHING_NORM`].
    pub relative_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Gradient norm under which a tensor counts as having no gradient at all. Attention key
/// biases sit here: softmax is shift-invariant, so their exact gradient is zero and both
/// estimates are rounding noise.
pub const VANISHING_NORM: f64 = 1e-8;

/// Compares the gradient of the scalar built by `loss` against central differences with
/// step `eps` for every parameter whose name passes `select`.
pub fn gradient_check<F>(model: &Model, loss: F, select: impl Fn(&str) -> bool, eps: f64) -> Result<Vec<GroupError>>
where
    F: Fn(&Model, &mut Graph) -> Result<Var> + Sync,
{
    let mut g = Graph::new();
    let out = loss(model, &mut g)?;
    let analytic = g.param_grads(&g.backward(out), &model.params);
    let eval = |m: &Model| -> Result<f64> {
        let mut g = Graph::new();
        let v = loss(m, &mut g)?;
        Ok(g.scalar(v))
    };
    let mut report = Vec::new();
    for idx in 0..model.params.len() {
        let name = model.params.name(idx);
        if !select(name) {
            continue;
        }
        let numeric = (0..model.params.value(idx).len())
            .into_par_iter()
            .map(|k| {
                let mut probe = model.clone();
                probe.params.value_mut(idx).data[k] += eps;
                let plus = eval(&probe)?;
                probe.params.value_mut(idx).data[k] -= 2.0 * eps;
                let minus = eval(&probe)?;
                Ok((plus - minus) / (2.0 * eps))
            })
            .collect::<Result<Vec<f64>>>()?;
        let a = &analytic[idx];
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let an = norm(&mut a.iter().copied());
        let nn = norm(&mut numeric.iter().copied());
        let diff = norm(&mut a.iter().zip(&numeric).map(|(x, y)| x - y));
        let scale = an.max(nn);
        report.push(GroupError {
            name: name.to_string(),
            relative_error: if scale < VANISHING_NORM { 0.0 } else { diff / scale },
            analytic_norm: an,
            numeric_norm: nn,
        });
    }
    Ok(report)
}
