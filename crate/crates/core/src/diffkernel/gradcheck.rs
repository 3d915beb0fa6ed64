use super::params::{ParamGrads, ParamId, ParamStore};

/// Central-difference step.
pub const FD_EPS: f64 = 1e-5;

/// Relative errors are taken against at least `REL_FLOOR`, so vanishing
/// gradients are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    /// Largest coordinatewise `|a - n| / max(|a|, |n|, REL_FLOOR)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `max |a - n| / max(max |a|, max |n|, REL_FLOOR)` over the tensor; this
    /// is what pass/fail is decided on.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "  {:<16} coords={:<5} rel={:.3e} max_abs={:.3e} max_coord_rel={:.3e}",
                t.name, t.coords, t.rel_error, t.max_abs_error, t.max_rel_error
            )?;
        }
        write!(
            f,
            "  worst={:.3e} tol={:.1e} -> {}",
            self.worst(),
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares the analytic gradients returned by `loss` against
/// `(L(p + eps) - L(p - eps)) / 2 eps` for every coordinate of every tensor
/// (or only `only`, when given). Each tensor is judged on its normwise
/// relative error; coordinatewise errors are reported alongside.
pub fn grad_check<F>(store: &ParamStore<f64>, loss: F, tol: f64, only: Option<&[ParamId]>) -> GradCheckReport
where
    F: Fn(&ParamStore<f64>) -> (f64, ParamGrads<f64>),
{
    let (_, analytic) = loss(store);
    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let mut work = store.clone();
    let mut tensors = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.tensor(id).len();
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let mut scale = 0.0f64;
        for k in 0..n {
            let orig = store.tensor(id).as_slice()[k];
            work.tensor_mut(id).as_mut_slice()[k] = orig + FD_EPS;
            let plus = loss(&work).0;
            work.tensor_mut(id).as_mut_slice()[k] = orig - FD_EPS;
            let minus = loss(&work).0;
            work.tensor_mut(id).as_mut_slice()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_EPS);
            let a = analytic.get(id).map_or(0.0, |g| g.as_slice()[k]);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            max_abs = max_abs.max(abs);
            scale = scale.max(a.abs()).max(numeric.abs());
            max_rel = max_rel.max(rel);
        }
        tensors.push(TensorCheck {
            name: store.name(id).to_string(),
            coords: n,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            rel_error: max_abs / scale.max(REL_FLOOR),
        });
    }
    let passed = tensors.iter().all(|t| t.rel_error <= tol);
    GradCheckReport {
        tensors,
        tolerance: tol,
        passed,
    }
}
