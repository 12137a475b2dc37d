//! Backprop gradients against central finite differences.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{Graph, NodeId};

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_PER_GROUP: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Worst relative error per parameter tensor.
    pub per_group: BTreeMap<String, f64>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<(&str, f64)> {
        self.per_group
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, v)| (k.as_str(), *v))
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// `loss` builds a scalar on the given graph from the given parameters; it must
/// be a deterministic function of the parameters.
pub fn grad_check<F>(params: &ParamStore, epsilon: f64, per_group: usize, seed: u64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut report = GradCheckReport { max_rel_err: 0.0, per_group: BTreeMap::new(), checked: 0 };
    if params.is_empty() {
        return Ok(report);
    }
    let mut g = Graph::new();
    let out = loss(&mut g, params)?;
    let grads = g.backward(out);
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::inference();
        let out = loss(&mut g, p)?;
        Ok(g.value(out).data[0])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    for entry in params.entries() {
        let n = entry.data.len();
        let idx: Vec<usize> = if n <= per_group { (0..n).collect() } else { sample(&mut rng, n, per_group).into_vec() };
        let analytic = grads.get(&entry.name);
        let mut worst = 0.0f64;
        for i in idx {
            let orig = entry.data[i];
            probe.get_mut(&entry.name).expect("same names").data[i] = orig + epsilon;
            let up = eval(&probe)?;
            probe.get_mut(&entry.name).expect("same names").data[i] = orig - epsilon;
            let down = eval(&probe)?;
            probe.get_mut(&entry.name).expect("same names").data[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.map_or(0.0, |g| g[i]);
            worst = worst.max(rel_err(a, numeric));
            report.checked += 1;
        }
        report.max_rel_err = report.max_rel_err.max(worst);
        report.per_group.insert(entry.name.clone(), worst);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tensor;

    #[test]
    fn quadratic_layer() {
        let mut p = ParamStore::new();
        p.insert("w", vec![3, 2], vec![0.3, -1.2, 0.7, 2.0, -0.4, 0.1]);
        p.insert("b", vec![2], vec![0.5, -0.25]);
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 0.25, 3.0, -1.0]);
        let report = grad_check(&p, 1e-4, 20, 0, |g, p| {
            let xn = g.constant(x.clone());
            let (w, b) = (g.param(p, "w"), g.param(p, "b"));
            let y = g.linear(xn, w, Some(b));
            let z = g.constant(Tensor::zeros(vec![2, 2]));
            Ok(g.mse(y, z))
        })
        .unwrap();
        assert_eq!(report.checked, 8);
        assert!(report.max_rel_err < 1e-7, "{report:?}");
    }

    #[test]
    fn empty_store_passes() {
        let report = grad_check(&ParamStore::new(), 1e-4, 20, 0, |g, _| Ok(g.constant(Tensor::scalar(1.0)))).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
        assert_eq!(report.checked, 0);
    }
}
