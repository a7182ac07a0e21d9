//! Central finite-difference checks of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

/// Below this magnitude both gradients count as zero and the coordinate passes.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub passed: usize,
    pub worst_rel: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64, tol: f64) {
        let rel = relative_error(analytic, numeric);
        self.checked += 1;
        self.worst_rel = self.worst_rel.max(rel);
        if rel < tol {
            self.passed += 1;
        } else {
            self.failures.push(Mismatch {
                name: name.to_string(),
                index,
                analytic,
                numeric,
            });
        }
    }
}

/// `|a − n| / max(|a|, |n|)`, or 0 when both are below [`GRAD_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < GRAD_FLOOR {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares parameter gradients of the scalar built by `f` against central
/// differences with step `h`, on up to `samples` random coordinates per
/// parameter (all of them when the parameter is smaller).
pub fn check_params<F>(
    store: &mut ParamStore,
    samples: usize,
    h: f64,
    tol: f64,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward_into(loss, store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let len = store.get(id).len();
        let picks = sample(&mut rng, len, samples.min(len)).into_vec();
        for i in picks {
            let analytic = store.get(id).grad[i];
            let orig = store.get(id).value[i];
            let eval = |v: f64, store: &mut ParamStore| -> Result<f64> {
                store.get_mut(id).value[i] = v;
                let mut g = Graph::new();
                let l = f(&mut g, store)?;
                Ok(g.scalar(l))
            };
            let plus = eval(orig + h, store)?;
            let minus = eval(orig - h, store)?;
            store.get_mut(id).value[i] = orig;
            let name = store.name(id).to_string();
            report.record(&name, i, analytic, (plus - minus) / (2.0 * h), tol);
        }
    }
    Ok(report)
}

/// Compares input gradients of the scalar built by `f` against central
/// differences at every coordinate of every input.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let run = |ts: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.input(t.clone())).collect();
        let l = f(&mut g, &vars)?;
        Ok((g, vars, l))
    };
    let (g, vars, loss) = run(inputs)?;
    let grads = g.backward(loss)?;
    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[k].len()];
        let analytic = grads.get(*var).unwrap_or(&zeros).to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let (g1, _, l1) = run(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let (g2, _, l2) = run(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (g1.scalar(l1) - g2.scalar(l2)) / (2.0 * h);
            report.record(&format!("input{k}"), i, a, numeric, tol);
        }
    }
    Ok(report)
}
