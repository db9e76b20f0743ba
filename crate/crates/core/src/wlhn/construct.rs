use std::rc::Rc;

use crate::gradnet::{Matrix, Tape, Var};
use crate::wlcolor::Coloring;

/// Intermediate values of one construction step, per color class.
#[derive(Debug, Clone)]
pub struct ConstructionTrace {
    /// Lowest-indexed member of each class.
    pub reps: Vec<usize>,
    /// Child direction after rotation, before scaling (unit rows).
    pub directions: Var,
    /// Unit direction of the grandparent after moving the parent to the
    /// origin; `None` for the root call.
    pub reflected_parent_dir: Option<Var>,
    /// Parent point of each class; `None` for the root call.
    pub parents: Option<Var>,
    /// Placed point of each class.
    pub points: Var,
}

/// Row-wise circle inversion `ι_a(x) = c + r²(x − c)/‖x − c‖²` with
/// `c = a/‖a‖²` and `r² = 1/‖a‖² − 1`, which swaps `a` and the origin.
/// Every row of `a` must be nonzero.
pub fn invert_rows(t: &Tape, a: Var, x: Var) -> Var {
    let aa = t.row_dot(a, a);
    let inv_aa = t.recip(aa);
    let c = t.mul_col(a, inv_aa);
    let r2 = t.add_scalar(inv_aa, -1.0);
    let xc = t.sub(x, c);
    let dd = t.row_dot(xc, xc);
    let k = t.mul(r2, t.recip(dd));
    t.add(c, t.mul_col(xc, k))
}

/// Places every color class of `coloring` at hyperbolic distance `tau` from
/// its parent class and returns one row per node (members of a class share
/// the row of its representative).
///
/// With `z_prev = None` this is the root step: classes land at
/// `tanh(τ/2)·h̃` around the origin. Otherwise the parent point `a` of each
/// class is read from `z_prev` and the grandparent from `z_prevprev`
/// (the origin when absent). The parent is moved to the origin by inversion,
/// the normalized child row is rotated so that `(−1/√d, …, −1/√d)` points at
/// the moved grandparent, scaled to radius `tanh(τ/2)` and mapped back.
/// Because `h` is nonnegative the child direction makes an angle of at least
/// π/2 with the grandparent direction.
pub fn diff_hyp_con(
    t: &Tape,
    h: Var,
    z_prev: Option<Var>,
    z_prevprev: Option<Var>,
    coloring: &Coloring,
    tau: f64,
) -> (Var, ConstructionTrace) {
    let (n, d) = t.shape(h);
    assert_eq!(n, coloring.num_nodes(), "diff_hyp_con: coloring does not cover the rows");
    let reps = coloring.representatives();
    let radius = (tau / 2.0).tanh();
    let child = t.row_normalize(t.gather_rows(h, reps.clone()));

    let (placed, directions, reflected, parents) = match z_prev {
        None => (t.scale(child, radius), child, None, None),
        Some(zp) => {
            let a = t.gather_rows(zp, reps.clone());
            let b = match z_prevprev {
                Some(zpp) => t.gather_rows(zpp, reps.clone()),
                None => t.constant(Matrix::zeros((reps.len(), d))),
            };
            let u = t.row_normalize(invert_rows(t, a, b));
            let w = Rc::new(vec![-1.0 / (d as f64).sqrt(); d]);
            let dir = t.householder(child, u, w);
            let local = t.scale(dir, radius);
            (invert_rows(t, a, local), dir, Some(u), Some(a))
        }
    };
    let points = t.project_to_ball(placed);
    let class_of: Vec<usize> = coloring.colors().iter().map(|&c| c as usize).collect();
    let z = t.gather_rows(points, class_of);
    (
        z,
        ConstructionTrace {
            reps,
            directions,
            reflected_parent_dir: reflected,
            parents,
            points,
        },
    )
}
