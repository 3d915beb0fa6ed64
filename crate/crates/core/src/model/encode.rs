use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::{MlpVars, ParamLayout, ParamVars};
use super::views::{KgView, UiView};
use crate::diffkernel::{dot, Matrix, ParamStore, SparseMatrix, Tape, Var};
use crate::error::{KgError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden dimension `d`.
    pub dim: usize,
    /// Propagation layers for both encoders.
    pub layers: usize,
    /// Sum layer 0 (the raw tables) into the final embeddings.
    pub include_layer0: bool,
    /// Give the LightGCN view its own base tables.
    pub separate_cf_tables: bool,
    /// Score recommendations with encodings of the masked graph; when false
    /// the full graph is re-encoded for the ranking loss.
    pub rec_on_masked_graph: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            layers: 2,
            include_layer0: true,
            separate_cf_tables: false,
            rec_on_masked_graph: true,
        }
    }
}

/// Raw rationale scores `f` for the view's triplets, as an `n x 1` column.
pub fn attention_scores<T: Scalar>(tape: &mut Tape<T>, p: &ParamVars, view: &KgView) -> Var {
    let d = tape.value(p.entity).cols();
    let q = tape.matmul(p.entity, p.attn_q);
    let k = tape.matmul(p.entity, p.attn_k);
    let qh = tape.gather(q, view.heads.clone());
    let kt = tape.gather(k, view.tails.clone());
    let er = tape.gather(p.relation, view.relations.clone());
    let kr = tape.mul(kt, er);
    let f = tape.row_dot(qh, kr);
    tape.scale(f, T::one() / T::of_usize(d).sqrt())
}

/// Head-local softmax of `f` over the view's surviving triplets.
pub fn attention_weights<T: Scalar>(tape: &mut Tape<T>, p: &ParamVars, view: &KgView) -> Var {
    let f = attention_scores(tape, p, view);
    tape.segment_softmax(f, view.offsets.clone())
}

/// Entity layer stack `[E0, E1, .., EL]` with
/// `E_l[h] = (1/|N_h|) * sum omega * (e_r ⊙ E_{l-1}[t])` over the view.
pub fn kg_aggregate<T: Scalar>(tape: &mut Tape<T>, p: &ParamVars, view: &KgView, omega: Var, layers: usize) -> Vec<Var> {
    let mut stack = vec![p.entity];
    if view.is_empty() {
        let zero = tape.input(Matrix::zeros(view.num_entities, tape.value(p.entity).cols()));
        stack.extend(std::iter::repeat(zero).take(layers));
        return stack;
    }
    let er = tape.gather(p.relation, view.relations.clone());
    for _ in 0..layers {
        let prev = *stack.last().unwrap();
        let et = tape.gather(prev, view.tails.clone());
        let msg = tape.mul(er, et);
        stack.push(tape.segment_weighted_mean(msg, omega, view.offsets.clone()));
    }
    stack
}

/// User layer stack: layer 0 is `user0`, layer `l` averages the user's items
/// at entity layer `l - 1` through the row-normalised operator.
pub fn user_aggregate<T: Scalar>(tape: &mut Tape<T>, user0: Var, entity_stack: &[Var], op: &Arc<SparseMatrix<T>>) -> Vec<Var> {
    let mut stack = vec![user0];
    for &e in &entity_stack[..entity_stack.len() - 1] {
        stack.push(tape.spmm(op.clone(), e));
    }
    stack
}

/// Elementwise sum of a layer stack, optionally skipping layer 0.
pub fn encode_final<T: Scalar>(tape: &mut Tape<T>, stack: &[Var], include_layer0: bool) -> Var {
    let parts = if include_layer0 || stack.len() == 1 { stack } else { &stack[1..] };
    let mut acc = parts[0];
    for &v in &parts[1..] {
        acc = tape.add(acc, v);
    }
    acc
}

/// LightGCN propagation over a normalised adjacency of users then items.
/// Returns the final `(x_u, x_v)`.
pub fn lightgcn_encode<T: Scalar>(
    tape: &mut Tape<T>,
    user0: Var,
    item0: Var,
    adj: &Arc<SparseMatrix<T>>,
    layers: usize,
    include_layer0: bool,
) -> (Var, Var) {
    let nu = tape.value(user0).rows();
    let ni = tape.value(item0).rows();
    let x0 = tape.concat_rows(&[user0, item0]);
    let mut stack = vec![x0];
    for _ in 0..layers {
        let prev = *stack.last().unwrap();
        stack.push(tape.spmm(adj.clone(), prev));
    }
    let x = encode_final(tape, &stack, include_layer0);
    let users: Arc<[usize]> = (0..nu).collect();
    let items: Arc<[usize]> = (nu..nu + ni).collect();
    (tape.gather(x, users), tape.gather(x, items))
}

/// `sigma(x W1 + b1) W2 + b2`.
pub fn project_contrastive<T: Scalar>(tape: &mut Tape<T>, x: Var, mlp: &MlpVars) -> Var {
    let h = tape.matmul(x, mlp.w1);
    let h = tape.add_row(h, mlp.b1);
    let h = tape.sigmoid(h);
    let o = tape.matmul(h, mlp.w2);
    tape.add_row(o, mlp.b2)
}

/// Rows `0..n` of `m`.
pub fn prefix_rows<T: Scalar>(tape: &mut Tape<T>, m: Var, n: usize) -> Var {
    let idx: Arc<[usize]> = (0..n).collect();
    tape.gather(m, idx)
}

/// `e_u . e_v`.
pub fn predict<T: Scalar>(user_out: &Matrix<T>, entity_out: &Matrix<T>, u: usize, v: usize) -> Result<T> {
    if u >= user_out.rows() || v >= entity_out.rows() {
        return Err(KgError::Contract(format!(
            "predict({u}, {v}) outside {} users / {} entities",
            user_out.rows(),
            entity_out.rows()
        )));
    }
    Ok(dot(user_out.row(u), entity_out.row(v)))
}

/// Final user and entity embeddings of the main encoder on the given views.
#[derive(Debug, Clone)]
pub struct Encoded<T> {
    pub users: Matrix<T>,
    pub entities: Matrix<T>,
}

/// Forward pass of the main encoder without recording gradients for later
/// use; used for ranking and diagnostics.
pub fn encode_main<T: Scalar>(
    store: &ParamStore<T>,
    layout: &ParamLayout,
    kg: &KgView,
    ui: &UiView,
    cfg: &ModelConfig,
) -> Encoded<T> {
    let mut tape = Tape::new();
    let p = layout.load(&mut tape, store);
    let omega = attention_weights(&mut tape, &p, kg);
    let ents = kg_aggregate(&mut tape, &p, kg, omega, cfg.layers);
    let op = Arc::new(ui.user_mean_operator(kg.num_entities));
    let users = user_aggregate(&mut tape, p.user, &ents, &op);
    let e = encode_final(&mut tape, &ents, cfg.include_layer0);
    let u = encode_final(&mut tape, &users, cfg.include_layer0);
    Encoded {
        users: tape.value(u).clone(),
        entities: tape.value(e).clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkernel::ParamStore;
    use crate::graphstore::{InteractionGraph, KnowledgeGraph, Triplet};
    use crate::model::views::ViewKind;

    #[test]
    fn single_neighbor_layer_one() {
        let kg = KnowledgeGraph::new(2, 1, vec![Triplet::new(0, 0, 1)], false).unwrap();
        let view = KgView::full(&kg);
        let mut store = ParamStore::<f64>::new();
        let ent = store.insert("e", Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, -1.0]]));
        let rel = store.insert("r", Matrix::from_rows(&[vec![2.0, 3.0]]));
        let mut tape = Tape::new();
        let e = tape.param(&store, ent);
        let r = tape.param(&store, rel);
        let omega = tape.input(Matrix::column(vec![1.0]));
        let er = tape.gather(r, view.relations.clone());
        let et = tape.gather(e, view.tails.clone());
        let msg = tape.mul(er, et);
        let l1 = tape.segment_weighted_mean(msg, omega, view.offsets.clone());
        assert_eq!(tape.value(l1).row(0), &[2.0, -3.0]);
        assert_eq!(tape.value(l1).row(1), &[0.0, 0.0]);
    }

    #[test]
    fn user_mean_of_opposites_is_zero() {
        let g = InteractionGraph::from_edges(1, 2, vec![(0, 0), (0, 1)]).unwrap();
        let op = Arc::new(UiView::full(&g).user_mean_operator::<f64>(2));
        let mut tape = Tape::new();
        let e0 = tape.input(Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, -2.0]]));
        let u0 = tape.input(Matrix::zeros(1, 2));
        let stack = user_aggregate(&mut tape, u0, &[e0, e0], &op);
        assert_eq!(tape.value(stack[1]).row(0), &[0.0, 0.0]);
    }

    #[test]
    fn biregular_all_ones_stays_ones() {
        let edges = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        let g = InteractionGraph::from_edges(2, 2, edges).unwrap();
        let adj = Arc::new(UiView::excluding(&g, &[], ViewKind::AugmentedUi).normalized_adjacency::<f64>());
        let mut tape = Tape::new();
        let u0 = tape.input(Matrix::filled(2, 3, 1.0));
        let i0 = tape.input(Matrix::filled(2, 3, 1.0));
        let (xu, xv) = lightgcn_encode(&mut tape, u0, i0, &adj, 1, false);
        for x in [xu, xv] {
            assert!(tape.value(x).as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_input_projection() {
        let mut store = ParamStore::<f64>::new();
        let w1 = store.insert("w1", Matrix::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.4]]));
        let b1 = store.insert("b1", Matrix::zeros(1, 2));
        let w2 = store.insert("w2", Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b2 = store.insert("b2", Matrix::zeros(1, 2));
        let mut tape = Tape::new();
        let mlp = MlpVars {
            w1: tape.param(&store, w1),
            b1: tape.param(&store, b1),
            w2: tape.param(&store, w2),
            b2: tape.param(&store, b2),
        };
        let x = tape.input(Matrix::zeros(1, 2));
        let z = project_contrastive(&mut tape, x, &mlp);
        assert_eq!(tape.value(z).row(0), &[2.0, 3.0]);
    }

    #[test]
    fn predict_checks_range() {
        let u = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(predict(&u, &e, 0, 0).unwrap(), 1.0);
        assert_eq!(predict(&u, &e, 0, 1).unwrap(), 0.0);
        assert!(predict(&u, &e, 1, 0).is_err());
    }
}
