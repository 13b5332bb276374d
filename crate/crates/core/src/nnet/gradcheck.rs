/// A model whose scalar loss can be evaluated at perturbed parameters.
pub trait GradCheckable {
    fn num_params(&self) -> usize;
    fn get_param(&self, index: usize) -> f64;
    fn set_param(&mut self, index: usize, value: f64);
    /// Loss at the model's fixed probe inputs.
    fn loss(&self) -> f64;
    /// Analytic gradient of [`GradCheckable::loss`], flat over all parameters.
    fn analytic_grad(&mut self) -> Vec<f64>;
    /// Human-readable location of a flat index.
    fn describe(&self, index: usize) -> String {
        format!("param[{index}]")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_location: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Probes skipped because the loss is not differentiable there.
    pub kinks: usize,
}

/// Denominators below this are clamped so that gradients which are both
/// essentially zero do not register as large relative errors.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// One-sided slopes further apart than this mark a kink (a ReLU or a
/// piecewise-linear interpolation boundary sitting inside `[p-eps, p+eps]`).
const KINK_TOL: f64 = 0.05;

/// Compares analytic gradients with central differences at the probe
/// indices and reports the worst relative error. Probes where the forward
/// and backward one-sided slopes disagree are counted in `kinks` and not
/// compared, since no single derivative exists there.
pub fn grad_check<M: GradCheckable>(model: &mut M, probes: &[usize], eps: f64) -> GradCheckReport {
    let grad = model.analytic_grad();
    let base = model.loss();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        worst_location: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        kinks: 0,
    };
    for &i in probes {
        let orig = model.get_param(i);
        model.set_param(i, orig + eps);
        let plus = model.loss();
        model.set_param(i, orig - eps);
        let minus = model.loss();
        model.set_param(i, orig);
        if relative_error((plus - base) / eps, (base - minus) / eps) > KINK_TOL {
            report.kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(grad[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.checked == 1 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = grad[i];
            report.numeric = numeric;
        }
    }
    report.worst_location = model.describe(report.worst_index);
    report
}
