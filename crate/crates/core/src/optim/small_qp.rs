//! Exact solution of tiny convex QPs with a diagonal Hessian by active-set enumeration.

use crate::scalar::Scalar;

/// Largest dimension accepted by [`diagonal_qp`]; the enumeration grows like `rows^dim`.
pub const MAX_QP_DIM: usize = 3;

/// Linear inequality `a . d >= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace<T> {
    pub a: Vec<T>,
    pub b: T,
}

/// Minimizes `Σ w_j (d_j − t_j)²` subject to every halfspace (all `w_j > 0`).
///
/// Every subset of at most `dim` constraints is treated as active; the weighted projection of `t`
/// onto its face is a candidate, and the cheapest candidate satisfying all constraints (within
/// `slack`) is the optimum. Returns `None` when no candidate is feasible or `dim > MAX_QP_DIM`.
pub fn diagonal_qp<T: Scalar>(w: &[T], t: &[T], rows: &[Halfspace<T>], slack: T) -> Option<Vec<T>> {
    let n = t.len();
    if n == 0 || n > MAX_QP_DIM || w.len() != n || rows.iter().any(|r| r.a.len() != n) {
        return None;
    }
    let mut best: Option<(T, Vec<T>)> = None;
    let mut consider = |d: Vec<T>| {
        if rows.iter().any(|r| dot(&r.a, &d) < r.b - slack) {
            return;
        }
        let cost: T = d.iter().zip(t).zip(w).map(|((d, t), w)| *w * (*d - *t) * (*d - *t)).sum();
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, d));
        }
    };
    consider(t.to_vec());
    let mut active = Vec::with_capacity(n);
    subsets(rows.len(), n, 0, &mut active, &mut |s| {
        if let Some(d) = project_onto_face(w, t, rows, s) {
            consider(d);
        }
    });
    best.map(|b| b.1)
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// Calls `f` on every non-empty index subset of `0..m` with at most `k` elements.
fn subsets(m: usize, k: usize, from: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    for i in from..m {
        cur.push(i);
        f(cur);
        if cur.len() < k {
            subsets(m, k, i + 1, cur, f);
        }
        cur.pop();
    }
}

/// Weighted projection of `t` onto `{d : a_i . d = b_i, i ∈ s}`; `None` if the rows are dependent.
fn project_onto_face<T: Scalar>(w: &[T], t: &[T], rows: &[Halfspace<T>], s: &[usize]) -> Option<Vec<T>> {
    // d = t + W⁻¹ Aᵀ μ with (A W⁻¹ Aᵀ) μ = b − A t.
    let k = s.len();
    let mut m = vec![vec![T::zero(); k + 1]; k];
    for (r, &i) in s.iter().enumerate() {
        for (c, &j) in s.iter().enumerate() {
            m[r][c] = rows[i].a.iter().zip(&rows[j].a).zip(w).map(|((x, y), w)| *x * *y / *w).sum();
        }
        m[r][k] = rows[i].b - dot(&rows[i].a, t);
    }
    let mu = gauss_solve(m)?;
    let mut d = t.to_vec();
    for (r, &i) in s.iter().enumerate() {
        for (j, dj) in d.iter_mut().enumerate() {
            *dj += rows[i].a[j] * mu[r] / w[j];
        }
    }
    Some(d)
}

/// Solves an augmented `k × (k+1)` system with partial pivoting.
fn gauss_solve<T: Scalar>(mut m: Vec<Vec<T>>) -> Option<Vec<T>> {
    let k = m.len();
    let scale = m.iter().flat_map(|r| r[..k].iter()).fold(T::zero(), |a, v| a.max(v.abs()));
    let tiny = scale * T::of(1e-12);
    for col in 0..k {
        let piv = (col..k).max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap_or(std::cmp::Ordering::Equal))?;
        if !(m[piv][col].abs() > tiny) {
            return None;
        }
        m.swap(col, piv);
        let (top, rest) = m.split_at_mut(col + 1);
        let pivot = &top[col];
        for row in rest.iter_mut() {
            let f = row[col] / pivot[col];
            for (x, &v) in row[col..].iter_mut().zip(&pivot[col..]) {
                *x -= f * v;
            }
        }
    }
    let mut x = vec![T::zero(); k];
    for r in (0..k).rev() {
        let s: T = (r + 1..k).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][k] - s) / m[r][r];
    }
    Some(x)
}
