//! Central finite-difference check of tape gradients.

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.rel_error < self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.rel_error >= self.tol)
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn eval<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let v = g.value(loss);
    if !v.is_scalar() {
        return Err(Error::Contract(format!("grad_check loss has shape {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

/// Compares tape gradients of `f` against `(f(p+h) − f(p−h)) / 2h` for
/// every element of every listed parameter. Parameter values are restored
/// before returning.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    f: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::Contract("grad_check step must be positive".into()));
    }
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let base = g.value(loss).data()[0];
    let grads = g.backward(loss)?;
    drop(g);
    if eval(&f, store)?.to_bits() != base.to_bits() {
        return Err(Error::Contract(
            "grad_check function is not deterministic: repeated evaluation differs".into(),
        ));
    }

    let mut entries = Vec::new();
    for &id in params {
        let n = store.value(id).numel();
        let name = store.get(id).name.clone();
        for index in 0..n {
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[index]);
            let orig = store.value(id).data()[index];
            store.get_mut(id).value.data_mut()[index] = orig + h;
            let plus = eval(&f, store);
            store.get_mut(id).value.data_mut()[index] = orig - h;
            let minus = eval(&f, store);
            store.get_mut(id).value.data_mut()[index] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            entries.push(GradCheckEntry {
                param: name.clone(),
                index,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric),
            });
        }
    }
    Ok(GradCheckReport { entries, tol })
}
