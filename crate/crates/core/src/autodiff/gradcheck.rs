//! Central-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use crate::error::{FinoError, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub eps: f64,
    /// Per tensor: check every element up to this many; above it, a seeded
    /// random subsample of this size.
    pub max_per_tensor: usize,
    /// Denominator floor of the relative error, so that gradients that are
    /// zero up to rounding do not produce spurious failures.
    pub floor: f64,
    pub seed: RngState,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-5,
            max_per_tensor: 10_000,
            floor: 1e-5,
            seed: RngState::new(0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter index, element index)` of the largest error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Elements whose +/- eps evaluations landed on a different smooth piece
    /// (a relu sign or pool winner flipped); central differences are not a
    /// valid oracle there, so they are excluded from `max_rel_err`.
    pub kinks_skipped: usize,
    pub analytic: Vec<Tensor>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(forward: &mut F, params: &[Tensor], frozen: &[bool]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .zip(frozen)
        .map(|(p, &f)| if f { g.constant(p.clone()) } else { g.param(p.clone()) })
        .collect();
    let loss = forward(&mut g, &vars)?;
    if g.value(loss).len() != 1 {
        return Err(FinoError::contract("grad_check forward must return a scalar"));
    }
    Ok((g, vars, loss))
}

impl GradCheck {
    pub fn run<F>(&self, forward: F, params: &[Tensor]) -> Result<GradCheckReport>
    where
        F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
    {
        self.run_with_frozen(forward, params, &vec![false; params.len()])
    }

    /// Frozen parameters enter the graph as constants; their analytic
    /// gradient is reported (and must be zero) but not differenced.
    pub fn run_with_frozen<F>(
        &self,
        mut forward: F,
        params: &[Tensor],
        frozen: &[bool],
    ) -> Result<GradCheckReport>
    where
        F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
    {
        assert_eq!(params.len(), frozen.len());
        let (mut g, vars, loss) = evaluate(&mut forward, params, frozen)?;
        let base_signature = g.kink_signature();
        g.backward(loss)?;
        let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v)).collect();
        drop(g);

        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for (i, p) in params.iter().enumerate() {
            if frozen[i] {
                continue;
            }
            if p.len() > self.max_per_tensor {
                let mut rng = self.seed.derive(i as u64).stream();
                let mut picks = rng.choose_distinct(p.len(), self.max_per_tensor);
                picks.sort_unstable();
                candidates.extend(picks.into_iter().map(|e| (i, e)));
            } else {
                candidates.extend((0..p.len()).map(|e| (i, e)));
            }
        }

        let mut work: Vec<Tensor> = params.to_vec();
        let mut max_rel_err = 0.0;
        let mut worst = None;
        let mut kinks_skipped = 0;
        for &(pi, ei) in &candidates {
            let orig = work[pi].data()[ei];
            let mut side = |delta: f64, work: &mut Vec<Tensor>| -> Result<(f64, u64)> {
                work[pi].data_mut()[ei] = orig + delta;
                let (g, _, loss) = evaluate(&mut forward, work, frozen)?;
                Ok((g.value(loss).data()[0], g.kink_signature()))
            };
            let (plus, sig_plus) = side(self.eps, &mut work)?;
            let (minus, sig_minus) = side(-self.eps, &mut work)?;
            work[pi].data_mut()[ei] = orig;
            if sig_plus != base_signature || sig_minus != base_signature {
                kinks_skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * self.eps);
            let a = analytic[pi].data()[ei];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(FinoError::NonFinite(format!(
                    "gradient check at parameter {pi}, element {ei}"
                )));
            }
            let err = relative_error(a, numeric, self.floor);
            if err > max_rel_err || worst.is_none() {
                max_rel_err = err;
                worst = Some((pi, ei));
            }
        }
        Ok(GradCheckReport {
            max_rel_err,
            worst,
            checked: candidates.len() - kinks_skipped,
            kinks_skipped,
            analytic,
        })
    }
}
