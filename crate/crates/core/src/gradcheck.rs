//! Central finite-difference oracle for analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Which parameter coordinates to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coordinates {
    All,
    /// At most `per_param` randomly chosen coordinates of each tensor.
    Sample { per_param: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    pub checked: usize,
    /// Coordinates left out because `θ ± ε` fell on different branches of a
    /// piecewise activation or max-pool.
    pub skipped: usize,
}

/// `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradient of the scalar built by `f` against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`, one coordinate at a time.
///
/// `f` is called once on a tracking graph for the analytic gradient and
/// twice per coordinate on inference graphs. It must be deterministic.
/// Parameter values are restored exactly afterwards. Coordinates whose two
/// evaluations take different activation or max-pool branches are skipped and
/// counted, since the central difference is not a derivative across a kink.
pub fn finite_diff_check<F>(mut f: F, store: &mut ParamStore, epsilon: f64, coords: Coordinates) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {epsilon}")));
    }
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new(store.values());
        let loss = f(&mut g)?;
        g.backward(loss)?;
        store
            .ids()
            .map(|id| match g.param_grad(id) {
                Some(grad) => grad.to_vec(),
                None => vec![0.0; store.value(id).numel()],
            })
            .collect()
    };

    let eval = |store: &ParamStore, f: &mut F| -> Result<(f64, u64)> {
        let mut g = Graph::inference(store.values());
        let out = f(&mut g)?;
        let v = g.value(out).item().ok_or_else(|| Error::NotScalar(g.shape(out).to_vec()))?;
        Ok((v, g.branch_signature()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
        skipped: 0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.value(id).numel();
        // candidate order; sampling keeps drawing until `want` coordinates pass the branch test
        let (order, want): (Vec<usize>, usize) = match coords {
            Coordinates::All => ((0..n).collect(), n),
            Coordinates::Sample { per_param, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (id.index() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                (sample(&mut rng, n, n).into_vec(), per_param.min(n))
            }
        };
        let mut done = 0;
        for idx in order {
            if done == want {
                break;
            }
            let original = store.value(id).data()[idx];
            store.value_mut(id).data_mut()[idx] = original + epsilon;
            let plus = eval(store, &mut f);
            store.value_mut(id).data_mut()[idx] = original - epsilon;
            let minus = eval(store, &mut f);
            store.value_mut(id).data_mut()[idx] = original;
            let ((plus, sig_plus), (minus, sig_minus)) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Oracle {
                    param: store.name(id).to_string(),
                    index: idx,
                });
            }
            if sig_plus != sig_minus {
                report.skipped += 1;
                continue;
            }
            done += 1;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(analytic[id.index()][idx], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), idx));
                report.worst_values = (analytic[id.index()][idx], numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_objective_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.3, -1.2, 4.0, 2.5])).unwrap();
        let report = finite_diff_check(
            |g| {
                let v = g.param(w);
                Ok(g.sum(v))
            },
            &mut store,
            1e-5,
            Coordinates::All,
        )
        .unwrap();
        assert_eq!(report.checked, 4);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(store.value(w).data(), &[0.3, -1.2, 4.0, 2.5]);
    }

    #[test]
    fn coordinates_straddling_a_kink_are_skipped() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.5, 2e-5, -0.7])).unwrap();
        let report = finite_diff_check(
            |g| {
                let v = g.param(w);
                let r = g.unary(v, crate::autodiff::Unary::Selu);
                Ok(g.sum(r))
            },
            &mut store,
            1e-4,
            Coordinates::All,
        )
        .unwrap();
        assert_eq!((report.checked, report.skipped), (2, 1));
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn non_finite_objective_names_coordinate() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![1.0, 1e308])).unwrap();
        let err = finite_diff_check(
            |g| {
                let v = g.param(w);
                let big = g.scale(v, 10.0);
                Ok(g.sum(big))
            },
            &mut store,
            1e-5,
            Coordinates::All,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Oracle { ref param, index: 0 } if param == "w"), "{err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.0)).unwrap();
        let res = finite_diff_check(|g| Ok(g.param(w)), &mut store, 0.0, Coordinates::All);
        assert!(matches!(res, Err(Error::Config(_))));
    }
}
