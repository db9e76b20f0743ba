//! Differentiable operations recorded on a [`Tape`].
//!
//! Shape mismatches are programming errors and panic when the operation is
//! recorded.

use std::rc::Rc;

use ndarray::{Array2, Axis, Zip};

use super::tape::{Matrix, Tape, Var};
use crate::graph::Graph;
use crate::hypgeo::BOUNDARY_EPS;

/// Rows whose norm is below this are replaced by the uniform direction in
/// [`Tape::row_normalize`].
pub const ZERO_ROW_EPS: f64 = 1e-12;

fn same_shape(op: &str, a: (usize, usize), b: (usize, usize)) {
    assert_eq!(a, b, "{op}: shape mismatch {a:?} vs {b:?}");
}

fn broadcast_row(r: &Matrix, rows: usize) -> Matrix {
    r.broadcast((rows, r.ncols())).unwrap().to_owned()
}

fn col_sums(g: &Matrix) -> Matrix {
    g.sum_axis(Axis(0)).insert_axis(Axis(0))
}

fn row_sums(g: &Matrix) -> Matrix {
    g.sum_axis(Axis(1)).insert_axis(Axis(1))
}

impl Tape {
    pub fn add(&self, a: Var, b: Var) -> Var {
        same_shape("add", self.shape(a), self.shape(b));
        let v = &*self.value(a) + &*self.value(b);
        self.push(v, &[a, b], Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        same_shape("sub", self.shape(a), self.shape(b));
        let v = &*self.value(a) - &*self.value(b);
        self.push(v, &[a, b], Box::new(|g, _, _| vec![Some(g.clone()), Some(-g)]))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        same_shape("mul", self.shape(a), self.shape(b));
        let v = &*self.value(a) * &*self.value(b);
        self.push(
            v,
            &[a, b],
            Box::new(|g, p, _| vec![Some(g * p[1]), Some(g * p[0])]),
        )
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let v = &*self.value(a) * c;
        self.push(v, &[a], Box::new(move |g, _, _| vec![Some(g * c)]))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let v = &*self.value(a) + c;
        self.push(v, &[a], Box::new(|g, _, _| vec![Some(g.clone())]))
    }

    /// `x · s` for a 1×1 `s`.
    pub fn scale_by(&self, x: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "scale_by: factor must be 1x1");
        let sv = self.value(s)[[0, 0]];
        let v = &*self.value(x) * sv;
        self.push(
            v,
            &[x, s],
            Box::new(|g, p, _| {
                let s = p[1][[0, 0]];
                let ds = (g * p[0]).sum();
                vec![Some(g * s), Some(Matrix::from_elem((1, 1), ds))]
            }),
        )
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa.1, sb.0, "matmul: inner dimensions {sa:?} x {sb:?}");
        let v = self.value(a).dot(&*self.value(b));
        self.push(
            v,
            &[a, b],
            Box::new(|g, p, _| vec![Some(g.dot(&p[1].t())), Some(p[0].t().dot(g))]),
        )
    }

    /// `x + r` with the 1×d row `r` broadcast over rows.
    pub fn add_row(&self, x: Var, r: Var) -> Var {
        let (sx, sr) = (self.shape(x), self.shape(r));
        assert!(sr.0 == 1 && sr.1 == sx.1, "add_row: {sx:?} + {sr:?}");
        let v = &*self.value(x) + &*self.value(r);
        self.push(v, &[x, r], Box::new(|g, _, _| vec![Some(g.clone()), Some(col_sums(g))]))
    }

    pub fn sub_row(&self, x: Var, r: Var) -> Var {
        let (sx, sr) = (self.shape(x), self.shape(r));
        assert!(sr.0 == 1 && sr.1 == sx.1, "sub_row: {sx:?} - {sr:?}");
        let v = &*self.value(x) - &*self.value(r);
        self.push(v, &[x, r], Box::new(|g, _, _| vec![Some(g.clone()), Some(-col_sums(g))]))
    }

    /// `x ∘ r` with the 1×d row `r` broadcast over rows.
    pub fn mul_row(&self, x: Var, r: Var) -> Var {
        let (sx, sr) = (self.shape(x), self.shape(r));
        assert!(sr.0 == 1 && sr.1 == sx.1, "mul_row: {sx:?} * {sr:?}");
        let v = &*self.value(x) * &*self.value(r);
        self.push(
            v,
            &[x, r],
            Box::new(|g, p, _| vec![Some(g * p[1]), Some(col_sums(&(g * p[0])))]),
        )
    }

    /// `x ∘ c` with the n×1 column `c` broadcast over columns.
    pub fn mul_col(&self, x: Var, c: Var) -> Var {
        let (sx, sc) = (self.shape(x), self.shape(c));
        assert!(sc.1 == 1 && sc.0 == sx.0, "mul_col: {sx:?} * {sc:?}");
        let v = &*self.value(x) * &*self.value(c);
        self.push(
            v,
            &[x, c],
            Box::new(|g, p, _| vec![Some(g * p[1]), Some(row_sums(&(g * p[0])))]),
        )
    }

    /// Per-row sums as an n×1 column.
    pub fn row_sum(&self, x: Var) -> Var {
        let v = row_sums(&self.value(x));
        self.push(
            v,
            &[x],
            Box::new(|g, p, _| vec![Some(g.broadcast(p[0].dim()).unwrap().to_owned())]),
        )
    }

    /// Per-row inner products `⟨a_i, b_i⟩` as an n×1 column.
    pub fn row_dot(&self, a: Var, b: Var) -> Var {
        let ab = self.mul(a, b);
        self.row_sum(ab)
    }

    /// Column means as a 1×d row.
    pub fn col_mean(&self, x: Var) -> Var {
        let n = self.shape(x).0 as f64;
        let v = col_sums(&self.value(x)) / n;
        self.push(
            v,
            &[x],
            Box::new(move |g, p, _| vec![Some(broadcast_row(g, p[0].nrows()) / n)]),
        )
    }

    /// Sum of every entry as 1×1.
    pub fn sum(&self, x: Var) -> Var {
        let v = Matrix::from_elem((1, 1), self.value(x).sum());
        self.push(
            v,
            &[x],
            Box::new(|g, p, _| vec![Some(Matrix::from_elem(p[0].dim(), g[[0, 0]]))]),
        )
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn relu(&self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a.max(0.0));
        self.push(
            v,
            &[x],
            Box::new(|g, p, _| {
                let mut out = g.clone();
                Zip::from(&mut out).and(p[0]).for_each(|o, &x| {
                    if x <= 0.0 {
                        *o = 0.0
                    }
                });
                vec![Some(out)]
            }),
        )
    }

    pub fn tanh(&self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::tanh);
        self.push(
            v,
            &[x],
            Box::new(|g, _, out| vec![Some(g * &out.mapv(|y| 1.0 - y * y))]),
        )
    }

    pub fn sqrt(&self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::sqrt);
        self.push(
            v,
            &[x],
            Box::new(|g, _, out| vec![Some(g / &out.mapv(|y| 2.0 * y))]),
        )
    }

    pub fn recip(&self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::recip);
        self.push(
            v,
            &[x],
            Box::new(|g, _, out| vec![Some(-(g * &out.mapv(|y| y * y)))]),
        )
    }

    /// Rows `x[idx[i]]`; the backward pass scatter-adds into `x`.
    pub fn gather_rows(&self, x: Var, idx: Vec<usize>) -> Var {
        let src = self.value(x);
        let d = src.ncols();
        let mut v = Array2::zeros((idx.len(), d));
        for (i, &j) in idx.iter().enumerate() {
            v.row_mut(i).assign(&src.row(j));
        }
        drop(src);
        self.push(
            v,
            &[x],
            Box::new(move |g, p, _| {
                let mut out = Matrix::zeros(p[0].dim());
                for (i, &j) in idx.iter().enumerate() {
                    let mut r = out.row_mut(j);
                    r += &g.row(i);
                }
                vec![Some(out)]
            }),
        )
    }

    /// Sums rows into `segments` buckets: `out[seg[i]] += x[i]`.
    pub fn segment_sum(&self, x: Var, seg: Vec<usize>, segments: usize) -> Var {
        let src = self.value(x);
        assert_eq!(src.nrows(), seg.len(), "segment_sum: one segment id per row");
        let mut v = Array2::zeros((segments, src.ncols()));
        for (i, &s) in seg.iter().enumerate() {
            let mut r = v.row_mut(s);
            r += &src.row(i);
        }
        drop(src);
        self.push(
            v,
            &[x],
            Box::new(move |g, p, _| {
                let mut out = Matrix::zeros(p[0].dim());
                for (i, &s) in seg.iter().enumerate() {
                    out.row_mut(i).assign(&g.row(s));
                }
                vec![Some(out)]
            }),
        )
    }

    /// Neighborhood sum `out_v = Σ_{u∈N(v)} x_u`, accumulated in ascending
    /// neighbor order. Adjacency is symmetric, so the backward pass is the
    /// same aggregation applied to the output gradient.
    pub fn scatter_sum(&self, x: Var, graph: &Graph) -> Var {
        assert_eq!(
            self.shape(x).0,
            graph.num_nodes(),
            "scatter_sum: one row per graph node"
        );
        let adj: Rc<Vec<Vec<usize>>> = Rc::new(
            (0..graph.num_nodes())
                .map(|v| graph.neighbors(v).to_vec())
                .collect(),
        );
        let v = neighbor_sum(&adj, &self.value(x));
        self.push(v, &[x], Box::new(move |g, _, _| vec![Some(neighbor_sum(&adj, g))]))
    }

    /// Scales each row to unit norm. Rows with norm below [`ZERO_ROW_EPS`]
    /// become `(1/√d, …, 1/√d)` and pass no gradient.
    pub fn row_normalize(&self, x: Var) -> Var {
        let src = self.value(x);
        let d = src.ncols();
        let fallback = 1.0 / (d as f64).sqrt();
        let norms: Vec<f64> = src.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let mut v = src.to_owned();
        drop(src);
        for (mut row, &n) in v.rows_mut().into_iter().zip(&norms) {
            if n < ZERO_ROW_EPS {
                row.fill(fallback);
            } else {
                row /= n;
            }
        }
        self.push(
            v,
            &[x],
            Box::new(move |g, _, out| {
                let mut gx = Matrix::zeros(g.dim());
                for i in 0..g.nrows() {
                    let n = norms[i];
                    if n < ZERO_ROW_EPS {
                        continue;
                    }
                    let y = out.row(i);
                    let gi = g.row(i);
                    let k = y.dot(&gi);
                    let mut r = gx.row_mut(i);
                    r.assign(&((&gi - &(&y * k)) / n));
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Row-wise Householder reflection mapping the constant unit vector `w`
    /// onto the unit row `u_i`, applied to row `p_i`.
    ///
    /// Rows with `u_i ≈ w` are left unchanged and rows with `u_i ≈ −w` use the
    /// axis `w`; neither passes a gradient to `u`.
    pub fn householder(&self, p: Var, u: Var, w: Rc<Vec<f64>>) -> Var {
        let (sp, su) = (self.shape(p), self.shape(u));
        same_shape("householder", sp, su);
        assert_eq!(w.len(), sp.1, "householder: w has the wrong width");
        let pv = self.value(p);
        let uv = self.value(u);
        let mut kinds = Vec::with_capacity(sp.0);
        let mut v = pv.to_owned();
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..sp.0 {
            let diff: Vec<f64> = w.iter().zip(uv.row(i)).map(|(a, b)| a - b).collect();
            let s: f64 = diff.iter().map(|x| x * x).sum();
            let sum_n: f64 = w.iter().zip(uv.row(i)).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
            let axis = if s.sqrt() < 1e-12 {
                kinds.push(HouseholderKind::Identity);
                continue;
            } else if sum_n < 1e-12 {
                kinds.push(HouseholderKind::Antipodal);
                w.iter().map(|x| x / wn).collect::<Vec<_>>()
            } else {
                kinds.push(HouseholderKind::General(s));
                let n = s.sqrt();
                diff.iter().map(|x| x / n).collect()
            };
            let mut row = v.row_mut(i);
            let k = 2.0 * axis.iter().zip(row.iter()).map(|(a, b)| a * b).sum::<f64>();
            row.iter_mut().zip(&axis).for_each(|(r, a)| *r -= k * a);
        }
        drop(pv);
        drop(uv);
        self.push(
            v,
            &[p, u],
            Box::new(move |g, parents, _| {
                let (pv, uv) = (parents[0], parents[1]);
                let mut gp = g.clone();
                let mut gu = Matrix::zeros(uv.dim());
                for (i, kind) in kinds.iter().enumerate() {
                    match *kind {
                        HouseholderKind::Identity => {}
                        HouseholderKind::Antipodal => {
                            let gi = g.row(i);
                            let k = 2.0 * w.iter().zip(gi.iter()).map(|(a, b)| a * b).sum::<f64>() / (wn * wn);
                            gp.row_mut(i).iter_mut().zip(w.iter()).for_each(|(o, a)| *o -= k * a);
                        }
                        HouseholderKind::General(s) => {
                            // out = p − (2/s)·diff·⟨diff, p⟩ with diff = w − u.
                            let diff: Vec<f64> = w.iter().zip(uv.row(i)).map(|(a, b)| a - b).collect();
                            let gi = g.row(i);
                            let pi = pv.row(i);
                            let kp: f64 = diff.iter().zip(pi.iter()).map(|(a, b)| a * b).sum();
                            let kg: f64 = diff.iter().zip(gi.iter()).map(|(a, b)| a * b).sum();
                            let mut gpr = gp.row_mut(i);
                            gpr.iter_mut().zip(&diff).for_each(|(o, dj)| *o -= 2.0 / s * kg * dj);
                            // ∂L/∂diff, then ∂L/∂u = −∂L/∂diff.
                            let mut gur = gu.row_mut(i);
                            for j in 0..diff.len() {
                                let gdiff = -2.0 / s * (kg * pi[j] + kp * gi[j])
                                    + 4.0 * kp * kg / (s * s) * diff[j];
                                gur[j] = -gdiff;
                            }
                        }
                    }
                }
                vec![Some(gp), Some(gu)]
            }),
        )
    }

    /// Rescales rows whose norm exceeds `1 − BOUNDARY_EPS` back onto that
    /// sphere.
    pub fn project_to_ball(&self, x: Var) -> Var {
        let max = 1.0 - BOUNDARY_EPS;
        let src = self.value(x);
        let norms: Vec<f64> = src.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let mut v = src.to_owned();
        drop(src);
        let mut any = false;
        for (mut row, &n) in v.rows_mut().into_iter().zip(&norms) {
            if n > max {
                crate::hypgeo::diagnostics::boundary();
                any = true;
                row *= max / n;
            }
        }
        if !any {
            return self.push(v, &[x], Box::new(|g, _, _| vec![Some(g.clone())]));
        }
        self.push(
            v,
            &[x],
            Box::new(move |g, p, _| {
                let mut gx = g.clone();
                for (i, &n) in norms.iter().enumerate() {
                    if n > max {
                        let xi = p[0].row(i);
                        let gi = g.row(i);
                        let k = xi.dot(&gi) / (n * n);
                        let r = (&gi - &(&xi * k)) * (max / n);
                        gx.row_mut(i).assign(&r);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Row-wise `log₀(x) = artanh(‖x‖) x/‖x‖`, with the norm clamped below
    /// `1 − BOUNDARY_EPS`.
    pub fn log0(&self, x: Var) -> Var {
        self.radial_map(x, |r| crate::hypgeo::raw::artanh_clamped(r), |r| {
            let r = r.min(1.0 - BOUNDARY_EPS);
            1.0 / (1.0 - r * r)
        })
    }

    /// Row-wise `exp₀(v) = tanh(‖v‖) v/‖v‖`.
    pub fn exp0(&self, x: Var) -> Var {
        self.radial_map(x, f64::tanh, |r| {
            let t = r.tanh();
            1.0 - t * t
        })
    }

    /// `out_i = f(r_i) x_i / r_i` with `r_i = ‖x_i‖`, for `f(0) = 0` and
    /// `f'(0) = 1`.
    fn radial_map(&self, x: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Var {
        let src = self.value(x);
        let norms: Vec<f64> = src.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let mut v = src.to_owned();
        drop(src);
        let mut ratio = Vec::with_capacity(norms.len());
        for (mut row, &r) in v.rows_mut().into_iter().zip(&norms) {
            let q = if r > 0.0 { f(r) / r } else { 1.0 };
            ratio.push(q);
            row *= q;
        }
        self.push(
            v,
            &[x],
            Box::new(move |g, p, _| {
                let mut gx = g.clone();
                for (i, &r) in norms.iter().enumerate() {
                    if r == 0.0 {
                        continue;
                    }
                    let q = ratio[i];
                    let xi = p[0].row(i);
                    let gi = g.row(i);
                    let k = (df(r) - q) * xi.dot(&gi) / (r * r);
                    let out = &gi * q + &(&xi * k);
                    gx.row_mut(i).assign(&out);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Mean cross-entropy of row-wise softmax against integer labels, using
    /// the max-shifted log-sum-exp.
    pub fn cross_entropy(&self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        let (n, k) = lv.dim();
        assert_eq!(n, labels.len(), "cross_entropy: one label per row");
        assert!(labels.iter().all(|&l| l < k), "cross_entropy: label out of range");
        let mut probs = Matrix::zeros((n, k));
        let mut loss = 0.0;
        for i in 0..n {
            let row = lv.row(i);
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
            for j in 0..k {
                probs[[i, j]] = (row[j] - lse).exp();
            }
        }
        drop(lv);
        let labels = labels.to_vec();
        self.push(
            Matrix::from_elem((1, 1), loss / n as f64),
            &[logits],
            Box::new(move |g, _, _| {
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[[i, l]] -= 1.0;
                }
                vec![Some(d * (g[[0, 0]] / n as f64))]
            }),
        )
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&self, pred: Var, target: &Matrix) -> Var {
        same_shape("mse", self.shape(pred), target.dim());
        let diff = &*self.value(pred) - target;
        let n = diff.len() as f64;
        let loss = diff.mapv(|d| d * d).sum() / n;
        self.push(
            Matrix::from_elem((1, 1), loss),
            &[pred],
            Box::new(move |g, _, _| vec![Some(&diff * (2.0 * g[[0, 0]] / n))]),
        )
    }
}

#[derive(Clone, Copy)]
enum HouseholderKind {
    Identity,
    Antipodal,
    General(f64),
}

fn neighbor_sum(adj: &[Vec<usize>], x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.dim());
    for (v, nb) in adj.iter().enumerate() {
        let mut row = out.row_mut(v);
        for &u in nb {
            row += &x.row(u);
        }
    }
    out
}
