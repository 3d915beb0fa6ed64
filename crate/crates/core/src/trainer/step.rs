use std::sync::Arc;

use rand::Rng;

use super::config::TrainConfig;
use super::sampling::{BprSampler, BprTriple};
use crate::diffkernel::{adam_step, Matrix, ParamGrads, ParamStore, SparseMatrix, Tape, Var};
use crate::error::{KgError, Result};
use crate::graphstore::{Dataset, InteractionGraph, KnowledgeGraph};
use crate::model::{
    attention_weights, encode_final, kg_aggregate, lightgcn_encode, prefix_rows, project_contrastive, user_aggregate,
    KgView, ModelDims, ParamLayout, ParamVars, UiView, ViewKind,
};
use crate::objectives::{
    bpr_loss, contrastive_loss, joint_loss, joint_loss_var, reconstruction_loss, sample_contrastive_negatives, ContrastiveSims, LossBundle,
};
use crate::rationale::{score_all, RationaleState};
use crate::scalar::Scalar;

/// Graphs and fixed operators shared by every step of a run.
#[derive(Debug, Clone)]
pub struct TrainContext<T> {
    pub kg: KnowledgeGraph,
    pub train: InteractionGraph,
    pub full_kg: KgView,
    pub full_ui: UiView,
    /// Row-normalised user-to-entity mean operator of the training graph.
    pub user_op: Arc<SparseMatrix<T>>,
    pub full_adj: Arc<SparseMatrix<T>>,
}

impl<T: Scalar> TrainContext<T> {
    pub fn new(kg: &KnowledgeGraph, train: &InteractionGraph) -> Self {
        let full_ui = UiView::full(train);
        TrainContext {
            kg: kg.clone(),
            train: train.clone(),
            full_kg: KgView::full(kg),
            user_op: Arc::new(full_ui.user_mean_operator(kg.num_entities())),
            full_adj: Arc::new(full_ui.normalized_adjacency()),
            full_ui,
        }
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        Self::new(&ds.kg, &ds.train)
    }

    pub fn dims(&self, dim: usize) -> ModelDims {
        ModelDims {
            num_users: self.train.num_users(),
            num_items: self.train.num_items(),
            num_entities: self.kg.num_entities(),
            num_relations: self.kg.num_relations(),
            dim,
        }
    }
}

/// Everything sampled for one step. Given a plan, the loss is a
/// deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct StepPlan<T> {
    pub rationale: RationaleState<T>,
    pub masked_kg: KgView,
    pub aug_kg: KgView,
    pub aug_adj: Arc<SparseMatrix<T>>,
    /// `(h, r, t)` of the masked triplets.
    pub mask_triplets: Vec<(usize, usize, usize)>,
    pub bpr: Vec<BprTriple>,
    /// Distinct positive items of the batch, used as contrastive anchors.
    pub cl_items: Vec<usize>,
    pub cl_negatives: Vec<(usize, usize)>,
}

impl<T: Scalar> StepPlan<T> {
    pub fn sample<R: Rng + ?Sized>(
        ctx: &TrainContext<T>,
        store: &ParamStore<T>,
        layout: &ParamLayout,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let bpr = BprSampler::new(&ctx.train).sample(cfg.batch_size, rng);
        let scores = score_all(&ctx.kg, store, layout);
        let rationale = RationaleState::derive(&ctx.kg, &ctx.train, scores, &cfg.rationale, rng)?;
        let masked_kg = KgView::excluding(&ctx.kg, &rationale.mask_set, ViewKind::MaskedKg);
        let aug_kg = KgView::excluding(&ctx.kg, &rationale.kg_noise_set, ViewKind::AugmentedKg);
        let aug_ui = UiView::excluding(&ctx.train, &rationale.ui_drop_set, ViewKind::AugmentedUi);
        let mask_triplets = rationale
            .mask_set
            .iter()
            .map(|&id| {
                let t = ctx.kg.triplet(id);
                (t.head, t.relation, t.tail)
            })
            .collect();
        let (cl_items, cl_negatives) = if cfg.loss.lambda2 > 0.0 && !bpr.is_empty() {
            let mut items: Vec<usize> = bpr.iter().map(|t| t.1).collect();
            items.sort_unstable();
            items.dedup();
            let negs = sample_contrastive_negatives(items.len(), rng)?;
            (items, negs)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(StepPlan {
            rationale,
            masked_kg,
            aug_kg,
            aug_adj: Arc::new(aug_ui.normalized_adjacency()),
            mask_triplets,
            bpr,
            cl_items,
            cl_negatives,
        })
    }
}

/// A recorded forward pass.
pub struct Forward<T> {
    pub tape: Tape<T>,
    pub loss: Var,
    /// Unweighted components; `l_m` and `l_c` are constant zero when their
    /// weight is zero.
    pub l_rec: Var,
    pub l_m: Var,
    pub l_c: Var,
    pub bundle: LossBundle,
    pub sims: Option<ContrastiveSims>,
}

/// Main-encoder final embeddings `(users, entities)` on a KG view, with the
/// training interaction graph for user aggregation.
pub(crate) fn encode_main_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    p: &ParamVars,
    view: &KgView,
    user_op: &Arc<SparseMatrix<T>>,
    cfg: &TrainConfig,
) -> (Var, Var) {
    let omega = attention_weights(tape, p, view);
    let ents = kg_aggregate(tape, p, view, omega, cfg.model.layers);
    let users = user_aggregate(tape, p.user, &ents, user_op);
    let e = encode_final(tape, &ents, cfg.model.include_layer0);
    let u = encode_final(tape, &users, cfg.model.include_layer0);
    (u, e)
}

/// Projected `(z_u, z_k)` for items `0..num_items` of the given views.
pub(crate) fn contrastive_views<T: Scalar>(
    tape: &mut Tape<T>,
    p: &ParamVars,
    kg_view: &KgView,
    adj: &Arc<SparseMatrix<T>>,
    num_items: usize,
    items: &[usize],
    cfg: &TrainConfig,
) -> (Var, Var) {
    let omega = attention_weights(tape, p, kg_view);
    let ents = kg_aggregate(tape, p, kg_view, omega, cfg.model.layers);
    let e = encode_final(tape, &ents, cfg.model.include_layer0);
    let idx: Arc<[usize]> = items.into();
    let xk = tape.gather(e, idx.clone());
    let user0 = p.cf_user.unwrap_or(p.user);
    let item0 = match p.cf_item {
        Some(v) => v,
        None => prefix_rows(tape, p.entity, num_items),
    };
    let (_, xv) = lightgcn_encode(tape, user0, item0, adj, cfg.model.layers, cfg.model.include_layer0);
    let xu = tape.gather(xv, idx);
    let zu = project_contrastive(tape, xu, &p.mlp_u);
    let zk = project_contrastive(tape, xk, &p.mlp_k);
    (zu, zk)
}

fn scalar_value<T: Scalar>(tape: &Tape<T>, v: Var) -> f64 {
    tape.value(v).item().as_f64()
}

/// Joint loss of one plan. Components with zero weight are not built.
pub fn forward<T: Scalar>(
    ctx: &TrainContext<T>,
    store: &ParamStore<T>,
    layout: &ParamLayout,
    plan: &StepPlan<T>,
    cfg: &TrainConfig,
) -> Result<Forward<T>> {
    let mut tape = Tape::new();
    let p = layout.load(&mut tape, store);
    let (u_m, e_m) = encode_main_on_tape(&mut tape, &p, &plan.masked_kg, &ctx.user_op, cfg);
    let (u_rec, e_rec) = if cfg.model.rec_on_masked_graph {
        (u_m, e_m)
    } else {
        encode_main_on_tape(&mut tape, &p, &ctx.full_kg, &ctx.user_op, cfg)
    };

    let us: Arc<[usize]> = plan.bpr.iter().map(|t| t.0).collect();
    let vs: Arc<[usize]> = plan.bpr.iter().map(|t| t.1).collect();
    let js: Arc<[usize]> = plan.bpr.iter().map(|t| t.2).collect();
    let eu = tape.gather(u_rec, us);
    let ev = tape.gather(e_rec, vs);
    let ej = tape.gather(e_rec, js);
    let pos = tape.row_dot(eu, ev);
    let neg = tape.row_dot(eu, ej);
    let l_rec = bpr_loss(&mut tape, pos, neg, cfg.loss.reduction);

    let zero = tape.input(Matrix::scalar(T::zero()));
    let l_m = if cfg.loss.lambda1 > 0.0 {
        reconstruction_loss(&mut tape, e_m, p.relation, &plan.mask_triplets, cfg.loss.reduction)
    } else {
        zero
    };

    let (l_c, sims) = if cfg.loss.lambda2 > 0.0 && !plan.cl_items.is_empty() {
        let (zu, zk) = contrastive_views(
            &mut tape,
            &p,
            &plan.aug_kg,
            &plan.aug_adj,
            ctx.train.num_items(),
            &plan.cl_items,
            cfg,
        );
        let local: Vec<usize> = (0..plan.cl_items.len()).collect();
        let (l, s) = contrastive_loss(&mut tape, zu, zk, &local, &plan.cl_negatives, &cfg.loss)?;
        (l, Some(s))
    } else {
        (zero, None)
    };

    let loss = joint_loss_var(&mut tape, l_rec, l_m, l_c, &cfg.loss);
    let bundle = joint_loss(
        scalar_value(&tape, l_rec),
        scalar_value(&tape, l_m),
        scalar_value(&tape, l_c),
        0.0,
        &cfg.loss,
    );
    Ok(Forward {
        tape,
        loss,
        l_rec,
        l_m,
        l_c,
        bundle,
        sims,
    })
}

/// Loss and parameter gradients for a fixed plan.
pub fn loss_and_grads<T: Scalar>(
    ctx: &TrainContext<T>,
    store: &ParamStore<T>,
    layout: &ParamLayout,
    plan: &StepPlan<T>,
    cfg: &TrainConfig,
) -> Result<(LossBundle, ParamGrads<T>)> {
    let f = forward(ctx, store, layout, plan, cfg)?;
    if !f.bundle.is_finite() {
        return Err(KgError::NonFinite {
            tensor: "loss".into(),
            detail: f.bundle.to_string(),
        });
    }
    let g = f.tape.backward(f.loss);
    Ok((f.bundle, f.tape.param_grads(&g, store)))
}

/// One optimisation step on a freshly sampled plan. Returns `None` when the
/// batch is empty and nothing was done.
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    ctx: &TrainContext<T>,
    store: &mut ParamStore<T>,
    layout: &ParamLayout,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Option<LossBundle>> {
    if cfg.batch_size == 0 {
        return Ok(None);
    }
    let plan = StepPlan::sample(ctx, store, layout, cfg, rng)?;
    if plan.bpr.is_empty() {
        return Ok(None);
    }
    let (bundle, grads) = loss_and_grads(ctx, store, layout, &plan, cfg)?;
    adam_step(store, &grads, &cfg.optim)?;
    Ok(Some(bundle))
}
