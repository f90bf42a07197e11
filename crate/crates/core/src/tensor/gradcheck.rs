use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Bound, DoubleDouble, ParamStore, Scalar, Tape, TensorError, Var};

/// Initial central-difference step.
const STEP: f64 = 1e-5;
/// Refinement gives up here and reports the coordinate as a kink.
const MIN_STEP: f64 = 1e-8;

/// A scalar function of a parameter store, evaluable at any precision.
pub trait Objective {
    type Error: From<TensorError>;

    fn eval<F: Scalar>(&self, tape: &mut Tape<F>, params: &Bound<'_, F>) -> Result<Var, Self::Error>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    /// Coordinates sitting on a kink of a piecewise-linear activation,
    /// where no derivative exists; excluded from `max_rel_error`.
    pub kinks: usize,
}

/// Compares `f64` backward gradients of `objective` against central
/// differences, over up to `per_param` sampled coordinates of each
/// parameter. Reports the worst `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// The perturbed losses are evaluated in double-double, so `f64` rounding
/// in the loss cannot pose as a gradient of order `ulp(loss) / step`; that
/// matters wherever the true gradient is exactly zero, as for a bias
/// feeding a softmax through a unit of constant sign.
///
/// A stencil that straddles a PReLU kink averages two slopes, so each
/// estimate is confirmed against one with a tenfold smaller step; on
/// disagreement the step shrinks until the two agree or `MIN_STEP` is hit.
pub fn grad_check<O: Objective>(
    objective: &O,
    params: &ParamStore<f64>,
    seed: u64,
    per_param: usize,
) -> Result<GradCheckReport, O::Error> {
    let analytic = {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let loss = objective.eval(&mut tape, &bound)?;
        let grads = tape.backward(loss)?;
        bound.vars().iter().map(|&v| grads.wrt(v)).collect::<Vec<_>>()
    };
    let eval = |store: &ParamStore<DoubleDouble>| -> Result<DoubleDouble, O::Error> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let loss = objective.eval(&mut tape, &bound)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.cast::<DoubleDouble>();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
        kinks: 0,
    };
    for (pi, name) in params.names().iter().enumerate() {
        let n = params.tensors()[pi].numel();
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, per_param).into_vec()
        };
        for j in coords {
            let orig = DoubleDouble::lift(params.tensors()[pi].data()[j]);
            let mut central = |h: f64| -> Result<f64, O::Error> {
                let h = DoubleDouble::lift(h);
                work.tensors_mut()[pi].data_mut()[j] = orig + h;
                let up = eval(&work)?;
                work.tensors_mut()[pi].data_mut()[j] = orig - h;
                let down = eval(&work)?;
                work.tensors_mut()[pi].data_mut()[j] = orig;
                Ok(((up - down) / (h + h)).as_f64())
            };
            let mut h = STEP;
            let mut estimate = central(h)?;
            let numeric = loop {
                if h / 10.0 < MIN_STEP {
                    break None;
                }
                let finer = central(h / 10.0)?;
                if (estimate - finer).abs() <= 1e-4 * estimate.abs().max(finer.abs()) + 1e-8 {
                    break Some(estimate);
                }
                estimate = finer;
                h /= 10.0;
            };
            let Some(numeric) = numeric else {
                report.kinks += 1;
                continue;
            };

            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = j;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
