//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector};

/// Eigenvalues (ascending) and matching eigenvectors (columns) of a symmetric matrix.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    nalgebra::SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky with diagonal pivoting of a symmetric positive semidefinite
/// matrix. Returns `(F, perm)` with `F` of size `rank x n` such that
/// `Q = F^T F`, or `None` when a pivot goes negative beyond `tol`.
pub fn pivoted_cholesky(q: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let n = q.nrows();
    let mut a = q.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale = (0..n).map(|i| q[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        let (piv, &best) = (k..n)
            .map(|i| (i, &a[(i, i)]))
            .max_by(|x, y| x.1.total_cmp(y.1))
            .unwrap();
        if best < -tol * scale {
            return None;
        }
        if best <= tol * scale {
            // remaining Schur complement must be negligible
            for i in k..n {
                for j in k..n {
                    if a[(i, j)].abs() > 10.0 * tol * scale {
                        return None;
                    }
                }
            }
            break;
        }
        a.swap_rows(k, piv);
        a.swap_columns(k, piv);
        l.swap_rows(k, piv);
        perm.swap(k, piv);
        let d = best.sqrt();
        l[(k, k)] = d;
        for i in k + 1..n {
            l[(i, k)] = a[(i, k)] / d;
        }
        for i in k + 1..n {
            for j in k + 1..=i {
                let v = a[(i, j)] - l[(i, k)] * l[(j, k)];
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        rank += 1;
    }
    // Q[perm][perm] = L L^T  =>  Q = P^T L L^T P, F = (P^T L)^T restricted to rank
    let mut f = DMatrix::<f64>::zeros(rank, n);
    for k in 0..rank {
        for i in 0..n {
            f[(k, perm[i])] = l[(i, k)];
        }
    }
    Some(f)
}

/// Factor `F` with `Q = F^T F` for symmetric PSD `Q`: pivoted Cholesky first,
/// eigenvalue square root when pivoting breaks down. `None` if `Q` has an
/// eigenvalue below `-tol`.
pub fn psd_factor(q: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    if let Some(f) = pivoted_cholesky(q, tol) {
        return Some(f);
    }
    let (vals, vecs) = sym_eigen(q);
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if vals.first().is_some_and(|&v| v < -tol * scale) {
        return None;
    }
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > tol * scale).collect();
    let mut f = DMatrix::zeros(keep.len(), q.nrows());
    for (r, &i) in keep.iter().enumerate() {
        let s = vals[i].sqrt();
        for j in 0..q.nrows() {
            f[(r, j)] = s * vecs[(j, i)];
        }
    }
    Some(f)
}

/// Select a maximal set of linearly independent sparse rows by Householder
/// QR with column pivoting applied to the transposed (row-normalized) matrix.
/// Returns the kept row indices in their original order.
pub fn independent_rows(rows: &[Vec<(usize, f64)>], ncols: usize, tol: f64) -> Vec<usize> {
    let p = rows.len();
    // column j of the work matrix is row j of the input, normalized
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut live: Vec<usize> = Vec::with_capacity(p);
    for (j, row) in rows.iter().enumerate() {
        let nrm = row.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
        if nrm == 0.0 {
            continue;
        }
        let mut c = vec![0.0; ncols];
        for &(k, v) in row {
            c[k] += v / nrm;
        }
        cols.push(c);
        live.push(j);
    }
    let q = cols.len();
    let mut norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut order: Vec<usize> = (0..q).collect();
    let mut kept = Vec::new();
    let mut first_diag = None;
    for k in 0..q.min(ncols) {
        let (piv_pos, _) = (k..q)
            .map(|i| (i, norms[order[i]]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        order.swap(k, piv_pos);
        let jc = order[k];
        // Householder on rows k.. of column jc
        let alpha = cols[jc][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let d0 = *first_diag.get_or_insert(alpha);
        if alpha <= tol * d0.max(1e-300) {
            break;
        }
        kept.push(live[jc]);
        let sign = if cols[jc][k] >= 0.0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = cols[jc][k..].to_vec();
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for &jo in &order[k + 1..] {
            let c = &mut cols[jo];
            let dot: f64 = v.iter().zip(&c[k..]).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (ci, vi) in c[k..].iter_mut().zip(&v) {
                *ci -= f * vi;
            }
            norms[jo] = c[k + 1..].iter().map(|x| x * x).sum();
        }
    }
    kept.sort_unstable();
    kept
}

/// Dense symmetric positive definite solve with a relative diagonal shift.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, shift: f64) -> Option<DVector<f64>> {
    let mut m = a.clone();
    let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..m.nrows() {
        m[(i, i)] += shift * scale.max(f64::MIN_POSITIVE);
    }
    m.cholesky().map(|c| c.solve(b))
}
