//! Central finite-difference verification of analytic gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Base step; the actual step is `step · max(1, |x|)`.
    pub step: f64,
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is zero are compared at rounding scale.
    pub floor: f64,
}

impl GradCheckConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            step: 1e-4,
            tol,
            floor: 1e-6,
        }
    }
}

/// Which coordinates to probe.
#[derive(Debug, Clone)]
pub enum Coords {
    All,
    /// `count` coordinates drawn uniformly over all checked inputs.
    Sample { count: usize, seed: u64 },
    /// Explicit `(input, flat index)` pairs.
    List(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// First coordinate where either gradient was NaN or infinite.
    pub non_finite: Option<(usize, usize)>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite.is_none() && self.max_rel_error <= self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of the scalar `f(inputs)` against central
/// differences. Inputs listed in `checked` are differentiated; the others
/// are held constant.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor],
    checked: &[usize],
    coords: Coords,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.leaf(t.clone(), checked.contains(&i)))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Shape("grad_check needs a scalar-valued function".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = inputs
        .iter()
        .zip(&vars)
        .map(|(t, &v)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(tape);

    let probes: Vec<(usize, usize)> = match coords {
        Coords::All => checked
            .iter()
            .flat_map(|&i| (0..inputs[i].numel()).map(move |k| (i, k)))
            .collect(),
        Coords::Sample { count, seed } => {
            let total: usize = checked.iter().map(|&i| inputs[i].numel()).sum();
            let mut rng = SplitMix64::new(seed);
            (0..count)
                .map(|_| {
                    let mut k = rng.below(total as u64) as usize;
                    for &i in checked {
                        if k < inputs[i].numel() {
                            return (i, k);
                        }
                        k -= inputs[i].numel();
                    }
                    unreachable!("index within total")
                })
                .collect()
        }
        Coords::List(list) => list,
    };

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::inference();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).item())
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        non_finite: None,
        tol: cfg.tol,
    };
    let mut work = inputs.to_vec();
    for (i, k) in probes {
        let x0 = inputs[i].data()[k];
        let h = cfg.step * x0.abs().max(1.0);
        work[i].data_mut()[k] = x0 + h;
        let fp = eval(&work);
        work[i].data_mut()[k] = x0 - h;
        let fm = eval(&work);
        work[i].data_mut()[k] = x0;
        let numeric = match (fp, fm) {
            (Ok(a), Ok(b)) => (a - b) / (2.0 * h),
            (Err(Error::NonFinite { .. }), _) | (_, Err(Error::NonFinite { .. })) => f64::NAN,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let a = analytic[i].data()[k];
        report.checked += 1;
        if !a.is_finite() || !numeric.is_finite() {
            report.non_finite.get_or_insert((i, k));
            continue;
        }
        let rel = relative_error(a, numeric, cfg.floor);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((i, k));
        }
    }
    Ok(report)
}
