use super::{Graph, ParamStore, Result, Tensor, TensorError, Var};

const STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences and returns the largest relative error over every
/// input element.
///
/// `f` receives a fresh graph plus one leaf per input and must return a
/// scalar node.
pub fn grad_check<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &leaves)?;
    let mut scratch = ParamStore::new();
    g.backward(out, &mut scratch)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = match g.grad(*leaf) {
            Some(t) => t.clone(),
            None => Tensor::zeros(inputs[k].shape()),
        };
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + STEP;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - STEP;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            if !numeric.is_finite() {
                return Err(TensorError::State(format!(
                    "non-finite finite difference at input {k} element {i}"
                )));
            }
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}
