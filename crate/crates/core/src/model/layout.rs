use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffkernel::{CheckpointHeader, Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{KgError, Result};
use crate::scalar::Scalar;

/// Table sizes a parameter store is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_users: usize,
    pub num_items: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    pub dim: usize,
}

impl ModelDims {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            dim: self.dim as u32,
            num_entities: self.num_entities as u32,
            num_relations: self.num_relations as u32,
            num_users: self.num_users as u32,
        }
    }

    /// Fails with a configuration error naming the first mismatching field.
    pub fn check_header(&self, h: &CheckpointHeader) -> Result<()> {
        let pairs = [
            ("dim", self.dim, h.dim),
            ("num_entities", self.num_entities, h.num_entities),
            ("num_relations", self.num_relations, h.num_relations),
            ("num_users", self.num_users, h.num_users),
        ];
        for (name, want, got) in pairs {
            if want != got as usize {
                return Err(KgError::Config(format!(
                    "checkpoint {name} = {got} but the dataset/config needs {want}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Where each named tensor lives in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub entity: ParamId,
    pub relation: ParamId,
    pub user: ParamId,
    pub attn_q: ParamId,
    pub attn_k: ParamId,
    pub mlp_u: MlpIds,
    pub mlp_k: MlpIds,
    /// Separate base tables for the LightGCN view, when enabled.
    pub cf_user: Option<ParamId>,
    pub cf_item: Option<ParamId>,
}

fn mlp_names(view: char) -> [String; 4] {
    ["w1", "b1", "w2", "b2"].map(|p| format!("mlp_{view}_{p}"))
}

impl ParamLayout {
    /// Fresh parameters: Xavier-uniform weights and tables, zero biases.
    pub fn init<T: Scalar, R: Rng + ?Sized>(dims: &ModelDims, separate_cf_tables: bool, rng: &mut R) -> (ParamStore<T>, Self) {
        let d = dims.dim;
        let mut s = ParamStore::new();
        s.insert_xavier("entity_embed", dims.num_entities, d, rng);
        s.insert_xavier("relation_embed", dims.num_relations, d, rng);
        s.insert_xavier("user_embed", dims.num_users, d, rng);
        s.insert_xavier("attn_q", d, d, rng);
        s.insert_xavier("attn_k", d, d, rng);
        for view in ['u', 'k'] {
            let [w1, b1, w2, b2] = mlp_names(view);
            s.insert_xavier(w1, d, d, rng);
            s.insert(b1, Matrix::zeros(1, d));
            s.insert_xavier(w2, d, d, rng);
            s.insert(b2, Matrix::zeros(1, d));
        }
        if separate_cf_tables {
            s.insert_xavier("cf_user_embed", dims.num_users, d, rng);
            s.insert_xavier("cf_item_embed", dims.num_items, d, rng);
        }
        let layout = Self::resolve(&s, dims).expect("freshly built store is complete");
        (s, layout)
    }

    /// Looks every tensor up by name and checks its shape against `dims`.
    pub fn resolve<T: Scalar>(store: &ParamStore<T>, dims: &ModelDims) -> Result<Self> {
        let d = dims.dim;
        let get = |name: &str, rows: usize, cols: usize| -> Result<ParamId> {
            let id = store.id(name)?;
            let shape = store.tensor(id).shape();
            if shape != (rows, cols) {
                return Err(KgError::Config(format!(
                    "parameter `{name}` has shape {shape:?}, expected {:?}",
                    (rows, cols)
                )));
            }
            Ok(id)
        };
        let mlp = |view: char| -> Result<MlpIds> {
            let [w1, b1, w2, b2] = mlp_names(view);
            Ok(MlpIds {
                w1: get(&w1, d, d)?,
                b1: get(&b1, 1, d)?,
                w2: get(&w2, d, d)?,
                b2: get(&b2, 1, d)?,
            })
        };
        let cf_user = match store.find("cf_user_embed") {
            Some(_) => Some(get("cf_user_embed", dims.num_users, d)?),
            None => None,
        };
        let cf_item = match store.find("cf_item_embed") {
            Some(_) => Some(get("cf_item_embed", dims.num_items, d)?),
            None => None,
        };
        if cf_user.is_some() != cf_item.is_some() {
            return Err(KgError::Checkpoint("only one of the separate CF tables is present".into()));
        }
        Ok(ParamLayout {
            entity: get("entity_embed", dims.num_entities, d)?,
            relation: get("relation_embed", dims.num_relations, d)?,
            user: get("user_embed", dims.num_users, d)?,
            attn_q: get("attn_q", d, d)?,
            attn_k: get("attn_k", d, d)?,
            mlp_u: mlp('u')?,
            mlp_k: mlp('k')?,
            cf_user,
            cf_item,
        })
    }

    /// Puts every tensor on the tape as a trainable leaf.
    pub fn load<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> ParamVars {
        let mut mlp = |m: &MlpIds| MlpVars {
            w1: tape.param(store, m.w1),
            b1: tape.param(store, m.b1),
            w2: tape.param(store, m.w2),
            b2: tape.param(store, m.b2),
        };
        let mlp_u = mlp(&self.mlp_u);
        let mlp_k = mlp(&self.mlp_k);
        ParamVars {
            entity: tape.param(store, self.entity),
            relation: tape.param(store, self.relation),
            user: tape.param(store, self.user),
            attn_q: tape.param(store, self.attn_q),
            attn_k: tape.param(store, self.attn_k),
            mlp_u,
            mlp_k,
            cf_user: self.cf_user.map(|id| tape.param(store, id)),
            cf_item: self.cf_item.map(|id| tape.param(store, id)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Tape handles for every parameter of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub entity: Var,
    pub relation: Var,
    pub user: Var,
    pub attn_q: Var,
    pub attn_k: Var,
    pub mlp_u: MlpVars,
    pub mlp_k: MlpVars,
    pub cf_user: Option<Var>,
    pub cf_item: Option<Var>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn dims() -> ModelDims {
        ModelDims {
            num_users: 3,
            num_items: 2,
            num_entities: 5,
            num_relations: 4,
            dim: 4,
        }
    }

    #[test]
    fn init_then_resolve() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (store, layout) = ParamLayout::init::<f64, _>(&dims(), true, &mut rng);
        assert_eq!(ParamLayout::resolve(&store, &dims()).unwrap(), layout);
        assert!(store.tensor(layout.mlp_u.b1).as_slice().iter().all(|&x| x == 0.0));
        let wrong = ModelDims { dim: 8, ..dims() };
        assert!(matches!(ParamLayout::resolve(&store, &wrong), Err(KgError::Config(_))));
    }

    #[test]
    fn header_mismatch_is_a_config_error() {
        let h = dims().header();
        dims().check_header(&h).unwrap();
        let other = ModelDims { num_users: 9, ..dims() };
        assert!(matches!(other.check_header(&h), Err(KgError::Config(_))));
    }
}
