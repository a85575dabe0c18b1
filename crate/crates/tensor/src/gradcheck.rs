//! Finite-difference validation of analytic parameter gradients.
//!
//! Each parameter scalar is probed with a fourth-order five-point stencil.
//! ReLU and `|x|` make the loss piecewise smooth, so every probe also
//! compares the graph's [`Graph::kink_signature`]: when the symmetric stencil
//! straddles a kink, a one-sided fourth-order stencil on the smooth side is
//! used instead, and the step is shrunk if neither side is clean.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub one_sided: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub step: f64,
    /// Denominator floor of the relative error, for gradients that vanish.
    pub floor: f64,
    pub max_refinements: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { step: 1e-3, floor: 1e-6, max_refinements: 4 }
    }
}

fn eval<F>(build: &F, store: &ParamStore<f64>) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let v = g.value(loss).item();
    if !v.is_finite() {
        return Err(TensorError::NonFinite(format!("loss {v}")));
    }
    Ok((v, g.kink_signature()))
}

/// Runs the check over every scalar of every parameter in `store`.
pub fn check_gradients<F>(store: &mut ParamStore<f64>, build: F, opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let f_base = g.value(loss).item();
    if !f_base.is_finite() {
        return Err(TensorError::NonFinite("loss at base point".into()));
    }
    let base_sig = g.kink_signature();
    let grads = g.param_grads(loss, store)?;
    drop(g);

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        one_sided: 0,
    };
    let ids: Vec<ParamId> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).data()[i];
            let mut probe = |offset: f64| -> Result<(f64, u64)> {
                store.get_mut(id).data_mut()[i] = orig + offset;
                let r = eval(&build, store);
                store.get_mut(id).data_mut()[i] = orig;
                // Differences from the base value keep the stencils free of
                // cancellation when the loss is flat on one side.
                r.map(|(v, sig)| (v - f_base, sig))
            };
            let mut h = opts.step;
            let mut numeric = None;
            for _ in 0..=opts.max_refinements {
                let m2 = probe(-2.0 * h)?;
                let m1 = probe(-h)?;
                let p1 = probe(h)?;
                let p2 = probe(2.0 * h)?;
                if [m2.1, m1.1, p1.1, p2.1].iter().all(|&s| s == base_sig) {
                    numeric = Some((-p2.0 + 8.0 * p1.0 - 8.0 * m1.0 + m2.0) / (12.0 * h));
                    break;
                }
                let p3 = probe(3.0 * h)?;
                let p4 = probe(4.0 * h)?;
                if [p1.1, p2.1, p3.1, p4.1].iter().all(|&s| s == base_sig) {
                    numeric = Some((48.0 * p1.0 - 36.0 * p2.0 + 16.0 * p3.0 - 3.0 * p4.0) / (12.0 * h));
                    report.one_sided += 1;
                    break;
                }
                let m3 = probe(-3.0 * h)?;
                let m4 = probe(-4.0 * h)?;
                if [m1.1, m2.1, m3.1, m4.1].iter().all(|&s| s == base_sig) {
                    numeric = Some((-48.0 * m1.0 + 36.0 * m2.0 - 16.0 * m3.0 + 3.0 * m4.0) / (12.0 * h));
                    report.one_sided += 1;
                    break;
                }
                h *= 0.1;
            }
            let numeric = numeric.ok_or_else(|| {
                TensorError::NonFinite(format!("{}[{i}] sits on a kink at every step size", store.name(id)))
            })?;
            let analytic = grads.get(id).data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = store.name(id).to_string();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
