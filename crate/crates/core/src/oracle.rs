//! Slow, dense reference implementations of the sparse kernels, selection
//! rules and metrics. Used by tests and `selfcheck`, never by training.

use crate::diffkernel::Matrix;
use crate::rationale::dense_scores_oracle;

fn matmul(a: &[Vec<f64>], x: &Matrix<f64>) -> Matrix<f64> {
    let mut out = Matrix::zeros(a.len(), x.cols());
    for (i, row) in a.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if w != 0.0 {
                for c in 0..x.cols() {
                    out[(i, c)] += w * x[(j, c)];
                }
            }
        }
    }
    out
}

fn sum_layers(stack: &[Matrix<f64>], include_layer0: bool) -> Matrix<f64> {
    let parts = if include_layer0 { stack } else { &stack[1..] };
    let mut acc = parts[0].clone();
    for m in &parts[1..] {
        acc.add_assign(m);
    }
    acc
}

/// Entity layers `[E0..EL]` through one dense operator per relation:
/// `E_l = sum_r (A_r E_{l-1}) ⊙ e_r`, `A_r[h][t] = sum omega / |N_h|`.
pub fn dense_kg_layers(
    ent: &Matrix<f64>,
    rel: &Matrix<f64>,
    wq: &Matrix<f64>,
    wk: &Matrix<f64>,
    triplets: &[(usize, usize, usize)],
    layers: usize,
) -> Vec<Matrix<f64>> {
    let n = ent.rows();
    let (_, omega, _) = dense_scores_oracle(triplets, ent, rel, wq, wk);
    let mut deg = vec![0usize; n];
    for &(h, _, _) in triplets {
        deg[h] += 1;
    }
    let mut ops = vec![vec![vec![0.0; n]; n]; rel.rows()];
    for (i, &(h, r, t)) in triplets.iter().enumerate() {
        ops[r][h][t] += omega[i] / deg[h] as f64;
    }
    let mut stack = vec![ent.clone()];
    for _ in 0..layers {
        let prev = stack.last().unwrap();
        let mut next = Matrix::zeros(n, ent.cols());
        for (r, a) in ops.iter().enumerate() {
            let m = matmul(a, prev);
            for h in 0..n {
                for c in 0..ent.cols() {
                    next[(h, c)] += m[(h, c)] * rel[(r, c)];
                }
            }
        }
        stack.push(next);
    }
    stack
}

/// User layers: layer `l` is the dense row-normalised interaction matrix
/// times entity layer `l - 1`.
pub fn dense_user_layers(user0: &Matrix<f64>, entity_layers: &[Matrix<f64>], edges: &[(usize, usize)]) -> Vec<Matrix<f64>> {
    let nu = user0.rows();
    let ne = entity_layers[0].rows();
    let mut r = vec![vec![0.0; ne]; nu];
    for &(u, v) in edges {
        r[u][v] = 1.0;
    }
    for row in &mut r {
        let d: f64 = row.iter().sum();
        if d > 0.0 {
            row.iter_mut().for_each(|x| *x /= d);
        }
    }
    let mut stack = vec![user0.clone()];
    for e in &entity_layers[..entity_layers.len() - 1] {
        stack.push(matmul(&r, e));
    }
    stack
}

/// Dense `D^-1/2 A D^-1/2` propagation over `[users; items]`, summed over
/// layers. Returns `(x_u, x_v)`.
pub fn dense_lightgcn(
    user0: &Matrix<f64>,
    item0: &Matrix<f64>,
    edges: &[(usize, usize)],
    layers: usize,
    include_layer0: bool,
) -> (Matrix<f64>, Matrix<f64>) {
    let (nu, ni, d) = (user0.rows(), item0.rows(), user0.cols());
    let n = nu + ni;
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in edges {
        a[u][nu + v] = 1.0;
        a[nu + v][u] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            if a[i][j] != 0.0 {
                a[i][j] /= (deg[i] * deg[j]).sqrt();
            }
        }
    }
    let mut x0 = Matrix::zeros(n, d);
    for i in 0..nu {
        x0.row_mut(i).copy_from_slice(user0.row(i));
    }
    for i in 0..ni {
        x0.row_mut(nu + i).copy_from_slice(item0.row(i));
    }
    let mut stack = vec![x0];
    for _ in 0..layers {
        let next = matmul(&a, stack.last().unwrap());
        stack.push(next);
    }
    let x = sum_layers(&stack, include_layer0);
    let xu = x.gather_rows(&(0..nu).collect::<Vec<_>>());
    let xv = x.gather_rows(&(nu..n).collect::<Vec<_>>());
    (xu, xv)
}

/// Indices of the `k` largest scores (ties to the smaller index), ascending.
pub fn sort_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut out = idx[..k].to_vec();
    out.sort();
    out
}

/// Indices of the `k` smallest scores (ties to the smaller index), ascending.
pub fn sort_bottom_k(scores: &[f64], k: usize) -> Vec<usize> {
    let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
    sort_top_k(&neg, k)
}

/// Per-user recall and NDCG by sorting every item; users without test items
/// are skipped. Returns `(recall, ndcg, users_evaluated)`.
pub fn naive_rank_metrics(scores: &[Vec<f64>], train: &[Vec<usize>], test: &[Vec<usize>], n: usize) -> (f64, f64, usize) {
    let (mut rs, mut ns, mut k) = (0.0, 0.0, 0);
    for u in 0..scores.len() {
        if test[u].is_empty() {
            continue;
        }
        let mut items: Vec<usize> = (0..scores[u].len()).filter(|v| !train[u].contains(v)).collect();
        items.sort_by(|&a, &b| scores[u][b].partial_cmp(&scores[u][a]).unwrap().then(a.cmp(&b)));
        let top = &items[..n.min(items.len())];
        let hits: Vec<bool> = top.iter().map(|v| test[u].contains(v)).collect();
        let recall = hits.iter().filter(|&&h| h).count() as f64 / test[u].len() as f64;
        let mut dcg = 0.0;
        for (i, &h) in hits.iter().enumerate() {
            if h {
                dcg += 1.0 / (i as f64 + 2.0).log2();
            }
        }
        let mut idcg = 0.0;
        for i in 0..test[u].len().min(n) {
            idcg += 1.0 / (i as f64 + 2.0).log2();
        }
        rs += recall;
        ns += dcg / idcg;
        k += 1;
    }
    let d = k.max(1) as f64;
    (rs / d, ns / d, k)
}

/// Largest absolute elementwise difference.
pub fn max_abs_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_ties() {
        assert_eq!(sort_top_k(&[1.0, 3.0, 3.0, 2.0], 2), vec![1, 2]);
        assert_eq!(sort_bottom_k(&[1.0, 1.0, 3.0], 1), vec![0]);
    }

    #[test]
    fn naive_rank_two() {
        let (r, n, k) = naive_rank_metrics(&[vec![0.9, 0.5, 0.1]], &[vec![]], &[vec![1]], 20);
        assert_eq!((r, k), (1.0, 1));
        assert!((n - 1.0 / 3f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn lightgcn_isolated_rows_are_zero() {
        let u = Matrix::filled(2, 2, 1.0);
        let v = Matrix::filled(1, 2, 1.0);
        let (xu, xv) = dense_lightgcn(&u, &v, &[(0, 0)], 1, false);
        assert_eq!(xu.row(0), &[1.0, 1.0]);
        assert_eq!(xu.row(1), &[0.0, 0.0]);
        assert_eq!(xv.row(0), &[1.0, 1.0]);
    }
}
