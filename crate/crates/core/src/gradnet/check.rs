//! Central finite-difference gradient checking.

use super::tape::{Matrix, Tape, Var};

/// Outcome of comparing tape gradients with central differences for one
/// input.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub input: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-12)`.
    pub rel_error: f64,
    pub analytic_norm: f64,
}

/// Rebuilds `f` on a fresh tape for every perturbed input and compares the
/// backward-pass gradient of the scalar output with
/// `(f(x + h) − f(x − h)) / 2h`, entry by entry.
pub fn check_gradients<F>(f: F, inputs: &[Matrix], step: f64) -> Vec<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Matrix]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = f(&tape, &vars);
        tape.scalar(out)
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out);

    let mut results = Vec::with_capacity(inputs.len());
    let mut work: Vec<Matrix> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[k].dim());
        let mut numeric = Matrix::zeros(inputs[k].dim());
        for idx in 0..inputs[k].len() {
            let (r, c) = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let orig = work[k][[r, c]];
            work[k][[r, c]] = orig + step;
            let plus = eval(&work);
            work[k][[r, c]] = orig - step;
            let minus = eval(&work);
            work[k][[r, c]] = orig;
            numeric[[r, c]] = (plus - minus) / (2.0 * step);
        }
        let diff = (&analytic - &numeric).mapv(|x| x * x).sum().sqrt();
        let an = analytic.mapv(|x| x * x).sum().sqrt();
        let nn = numeric.mapv(|x| x * x).sum().sqrt();
        results.push(GradCheck {
            input: k,
            rel_error: diff / an.max(nn).max(1e-12),
            analytic_norm: an,
        });
    }
    results
}

/// Largest relative error over all inputs.
pub fn max_rel_error<F>(f: F, inputs: &[Matrix], step: f64) -> f64
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    check_gradients(f, inputs, step)
        .iter()
        .map(|c| c.rel_error)
        .fold(0.0, f64::max)
}
