use std::sync::Arc;

use kgrec::diffkernel::{decode_checkpoint, encode_checkpoint, grad_check, CheckpointHeader, Matrix, ParamGrads, ParamStore, SparseMatrix, Tape};
use kgrec::evalkit::{aggregate, per_user_metrics};
use kgrec::graphstore::{InteractionGraph, KnowledgeGraph, Triplet};
use kgrec::model::UiView;
use kgrec::oracle::{sort_bottom_k, sort_top_k};
use kgrec::rationale::{normalize_scores, select_mask_set, select_noise_set, top_k_indices, RationaleConfig, RationaleState};
use kgrec::rng::{stream_rng, Stream};
use kgrec::selfcheck::{metrics_case, softmax_topk_case, sparse_dense_case};
use proptest::prelude::*;
use rand::Rng;

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(128)
}

/// One relation, distinct tails, the given heads.
fn star_kg(heads: &[usize]) -> KnowledgeGraph {
    let ne = 8 + heads.len();
    let trip = heads.iter().enumerate().map(|(i, &h)| Triplet::new(h, 0, 8 + i)).collect();
    KnowledgeGraph::new(ne, 1, trip, false).unwrap()
}

fn head_groups() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| (prop::collection::vec(0usize..8, n), prop::collection::vec(-20.0f64..20.0, n)))
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn omega_sums_to_one_per_head((heads, f) in head_groups()) {
        let kg = star_kg(&heads);
        let s = normalize_scores(&kg, f);
        for h in 0..8 {
            let idx: Vec<usize> = (0..heads.len()).filter(|&i| heads[i] == h).collect();
            if idx.is_empty() { continue; }
            let sum: f64 = idx.iter().map(|&i| s.omega[i]).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6);
            for &i in &idx {
                prop_assert!((s.gamma[i] - idx.len() as f64 * s.omega[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn uniform_head_scores_give_unit_gamma(heads in prop::collection::vec(0usize..8, 1..40), per_head in prop::collection::vec(-30.0f64..30.0, 8)) {
        let kg = star_kg(&heads);
        let s = normalize_scores(&kg, heads.iter().map(|&h| per_head[h]).collect());
        prop_assert!(s.gamma.iter().all(|g| (g - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn mask_set_matches_sort_oracle(scores in prop::collection::vec(-4i8..4, 0..60), frac in 0.0f64..=1.0) {
        let s: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
        let k = (frac * s.len() as f64) as usize;
        let got: Vec<usize> = select_mask_set(&s, k).unwrap().into_iter().map(|t| t.0).collect();
        prop_assert_eq!(got.len(), k);
        prop_assert_eq!(&got, &sort_top_k(&s, k));
        prop_assert_eq!(top_k_indices(&s, k), sort_top_k(&s, k));
    }

    #[test]
    fn noise_set_matches_sort_oracle(scores in prop::collection::vec(-4i8..4, 0..60), rho in 0.0f64..1.0) {
        let s: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
        let k = (rho * s.len() as f64).floor() as usize;
        let got: Vec<usize> = select_noise_set(&s, rho).unwrap().into_iter().map(|t| t.0).collect();
        prop_assert_eq!(got.len(), k);
        prop_assert_eq!(got, sort_bottom_k(&s, k));
    }

    #[test]
    fn per_head_shift_is_invisible((heads, f) in head_groups(), shift in prop::collection::vec(-50.0f64..50.0, 8), frac in 0.0f64..=1.0) {
        let kg = star_kg(&heads);
        let a = normalize_scores(&kg, f.clone());
        let b = normalize_scores(&kg, f.iter().zip(&heads).map(|(v, &h)| v + shift[h]).collect());
        for i in 0..f.len() {
            prop_assert!((a.omega[i] - b.omega[i]).abs() <= 1e-12);
            prop_assert!((a.gamma[i] - b.gamma[i]).abs() <= 1e-12);
        }
        // mask sets agree unless the boundary scores are within rounding
        let k = (frac * f.len() as f64) as usize;
        let mut sorted = a.gamma.clone();
        sorted.sort_by(|x, y| y.total_cmp(x));
        if k == 0 || k == sorted.len() || sorted[k - 1] - sorted[k] > 1e-9 {
            prop_assert_eq!(select_mask_set(&a.gamma, k).unwrap(), select_mask_set(&b.gamma, k).unwrap());
        }
    }

    #[test]
    fn selection_sizes_are_exact(seed in any::<u64>(), frac in 0.0f64..=1.0, rho_k in 0.0f64..1.0, frac_u in 0.0f64..1.0) {
        let mut rng = stream_rng(seed, Stream::Toy, 0);
        let trip: Vec<Triplet> = (0..40).map(|_| Triplet::new(rng.gen_range(0..20), rng.gen_range(0..3), rng.gen_range(0..20))).collect();
        let kg = KnowledgeGraph::new(20, 3, trip, true).unwrap();
        let edges: Vec<(usize, usize)> = (0..6).flat_map(|u| (0..10).map(move |v| (u, v))).filter(|_| rng.gen_bool(0.4)).collect();
        prop_assume!(edges.len() > 1);
        let ui = InteractionGraph::from_edges(6, 10, edges).unwrap();
        let t = kg.num_triplets();
        let f: Vec<f64> = (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let cfg = RationaleConfig {
            k_m: (frac * t as f64) as usize,
            rho_k,
            rho_u: (frac_u * ui.num_edges() as f64) as usize,
            ..RationaleConfig::default()
        };
        let st = RationaleState::derive(&kg, &ui, normalize_scores(&kg, f), &cfg, &mut rng).unwrap();
        prop_assert_eq!(st.mask_set.len(), cfg.k_m);
        prop_assert_eq!(st.kg_noise_set.len(), (rho_k * t as f64).floor() as usize);
        prop_assert_eq!(st.ui_drop_set.len(), cfg.rho_u);
        let mut d = st.ui_drop_set.clone();
        d.dedup();
        prop_assert_eq!(d.len(), cfg.rho_u);
    }

    #[test]
    fn random_rationale_instances(seed in any::<u64>()) {
        let bad = softmax_topk_case(seed).unwrap();
        prop_assert!(bad.is_empty(), "{:?}", bad);
    }

    #[test]
    fn sparse_matches_dense(seed in any::<u64>()) {
        let d = sparse_dense_case(seed).unwrap();
        prop_assert!(d <= 1e-8, "deviation {}", d);
    }

    #[test]
    fn metrics_match_naive_sort(seed in any::<u64>()) {
        let d = metrics_case(seed);
        prop_assert!(d <= 1e-12, "deviation {}", d);
    }

    #[test]
    fn metrics_ignore_order_preserving_relabelling(seed in any::<u64>()) {
        let mut rng = stream_rng(seed, Stream::Toy, 1);
        let (nu, ni) = (8, 25);
        let scores: Vec<Vec<f64>> = (0..nu).map(|_| (0..ni).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let mut tr = Vec::new();
        let mut te = Vec::new();
        for u in 0..nu {
            for v in 0..ni {
                match rng.gen_range(0..6) { 0 => tr.push((u, v)), 1 => te.push((u, v)), _ => {} }
            }
        }
        let mut perm: Vec<usize> = (0..ni).collect();
        for i in (1..ni).rev() { perm.swap(i, rng.gen_range(0..=i)); }
        let relabel = |e: &[(usize, usize)]| e.iter().map(|&(u, v)| (u, perm[v])).collect::<Vec<_>>();
        let mut pscores = vec![vec![0.0; ni]; nu];
        for u in 0..nu { for v in 0..ni { pscores[u][perm[v]] = scores[u][v]; } }
        let run = |s: &Vec<Vec<f64>>, a: Vec<(usize, usize)>, b: Vec<(usize, usize)>| {
            let train = InteractionGraph::from_edges(nu, ni, a).unwrap();
            let test = InteractionGraph::from_edges(nu, ni, b).unwrap();
            aggregate(&per_user_metrics(|u| s[u].clone(), nu, &train, &test, 5), 5)
        };
        let m1 = run(&scores, tr.clone(), te.clone());
        let m2 = run(&pscores, relabel(&tr), relabel(&te));
        prop_assert!((m1.recall - m2.recall).abs() <= 1e-12);
        prop_assert!((m1.ndcg - m2.ndcg).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&m1.recall) && (0.0..=1.0).contains(&m1.ndcg));
    }

    #[test]
    fn normalized_adjacency_is_symmetric(seed in any::<u64>()) {
        let mut rng = stream_rng(seed, Stream::Toy, 2);
        let edges: Vec<(usize, usize)> = (0..7).flat_map(|u| (0..9).map(move |v| (u, v))).filter(|_| rng.gen_bool(0.3)).collect();
        let g = InteractionGraph::from_edges(7, 9, edges).unwrap();
        let a = UiView::full(&g).normalized_adjacency::<f64>().to_dense();
        for i in 0..16 { for j in 0..16 { prop_assert_eq!(a[(i, j)], a[(j, i)]); } }
    }

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6) {
        let mut rng = stream_rng(seed, Stream::Toy, 3);
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1e3..1e3)).collect()));
        s.insert("b", Matrix::from_vec(1, cols, (0..cols).map(|_| rng.gen()).collect()));
        let h = CheckpointHeader { dim: cols as u32, num_entities: rows as u32, num_relations: 1, num_users: 2 };
        let bytes = encode_checkpoint(&h, &s);
        let (h2, s2) = decode_checkpoint::<f32>(&bytes).unwrap();
        prop_assert_eq!(h2, h);
        prop_assert_eq!(&s2, &s);
        // tensors are stored as 32-bit floats, so a 64-bit store is stable after one trip
        let (_, wide) = decode_checkpoint::<f64>(&bytes).unwrap();
        prop_assert_eq!(encode_checkpoint(&h, &wide), bytes);
    }
}

/// Weighted-sum loss through one op; checks the op's vector-Jacobian product.
fn vjp_check(build: impl Fn(&mut Tape<f64>, kgrec::diffkernel::Var, kgrec::diffkernel::Var) -> kgrec::diffkernel::Var, a: Matrix<f64>, b: Matrix<f64>, out_shape_seed: u64) {
    let mut store = ParamStore::<f64>::new();
    let ia = store.insert("a", a);
    let ib = store.insert("b", b);
    let loss = |s: &ParamStore<f64>| -> (f64, ParamGrads<f64>) {
        let mut t = Tape::new();
        let (x, y) = (t.param(s, ia), t.param(s, ib));
        let o = build(&mut t, x, y);
        let (r, c) = t.value(o).shape();
        let mut rng = stream_rng(out_shape_seed, Stream::Toy, 4);
        let w = t.input(Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()));
        let m = t.mul(o, w);
        let l = t.sum(m);
        let g = t.backward(l);
        (t.value(l).item(), t.param_grads(&g, s))
    };
    let report = grad_check(&store, loss, 1e-6, None);
    assert!(report.passed, "{report}");
}

fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> Matrix<f64> {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect())
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn vjp_segment_ops(seed in any::<u64>(), segs in prop::collection::vec(0usize..4, 1..6)) {
        let mut rng = stream_rng(seed, Stream::Toy, 5);
        let n: usize = segs.iter().sum();
        prop_assume!(n > 0);
        let mut offsets = vec![0];
        for s in &segs { offsets.push(offsets.last().unwrap() + s); }
        let off: Arc<[usize]> = offsets.into();
        let o2 = off.clone();
        vjp_check(move |t, x, y| { let w = t.segment_softmax(y, o2.clone()); t.segment_weighted_mean(x, w, o2.clone()) }, rand_mat(&mut rng, n, 3), rand_mat(&mut rng, n, 1), seed);
        vjp_check(move |t, x, _| t.segment_softmax(x, off.clone()), rand_mat(&mut rng, n, 1), rand_mat(&mut rng, 1, 1), seed);
    }

    #[test]
    fn vjp_dense_ops(seed in any::<u64>(), n in 1usize..5, d in 1usize..5) {
        let mut rng = stream_rng(seed, Stream::Toy, 6);
        vjp_check(|t, x, y| t.matmul(x, y), rand_mat(&mut rng, n, d), rand_mat(&mut rng, d, 3), seed);
        vjp_check(|t, x, y| t.row_dot(x, y), rand_mat(&mut rng, n, d), rand_mat(&mut rng, n, d), seed);
        vjp_check(|t, x, y| { let p = t.mul(x, y); t.row_logsumexp(p) }, rand_mat(&mut rng, n, d), rand_mat(&mut rng, n, d), seed);
        vjp_check(|t, x, y| { let s = t.add_row(x, y); t.log_sigmoid(s) }, rand_mat(&mut rng, n, d), rand_mat(&mut rng, 1, d), seed);
        vjp_check(|t, x, _| t.row_normalize(x), rand_mat(&mut rng, n, d), rand_mat(&mut rng, 1, 1), seed);
        vjp_check(|t, x, y| { let c = t.concat_rows(&[x, y]); t.sigmoid(c) }, rand_mat(&mut rng, n, d), rand_mat(&mut rng, 2, d), seed);
        vjp_check(|t, x, y| t.concat_cols(&[x, y]), rand_mat(&mut rng, n, d), rand_mat(&mut rng, n, 2), seed);
        let idx: Arc<[usize]> = (0..2 * n).map(|_| rng.gen_range(0..n)).collect();
        vjp_check(move |t, x, _| t.gather(x, idx.clone()), rand_mat(&mut rng, n, d), rand_mat(&mut rng, 1, 1), seed);
    }

    #[test]
    fn vjp_spmm(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6) {
        let mut rng = stream_rng(seed, Stream::Toy, 7);
        let entries: Vec<(usize, usize, f64)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).filter(|_| rng.gen_bool(0.5)).map(|(r, c)| (r, c, 0.7 * (r + 1) as f64 - 0.3 * c as f64)).collect();
        let s = Arc::new(SparseMatrix::from_sorted_entries(rows, cols, entries));
        let x = rand_mat(&mut rng, cols, 3);
        let dense = s.to_dense().matmul(&x);
        prop_assert!(s.mul_dense(&x).as_slice().iter().zip(dense.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
        vjp_check(move |t, x, _| t.spmm(s.clone(), x), x, rand_mat(&mut rng, 1, 1), seed);
    }
}
