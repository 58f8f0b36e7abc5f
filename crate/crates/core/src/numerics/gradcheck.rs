//! Central finite-difference checking of analytic gradients.

use serde::Serialize;

use super::ParamStore;
use crate::error::Result;

/// Options for [`grad_check_with`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    pub step: f64,
    /// Upper bound on coordinates probed per tensor.
    pub max_coords: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-5,
            max_coords: 64,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_error: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed)
    }

    pub fn worst_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_error).fold(0.0, f64::max)
    }
}

/// Coordinates probed for a tensor of `len` values: all of them, or an even
/// stride of `max` when the tensor is larger.
pub fn probe_coords(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|i| i * len / max).collect()
    }
}

pub fn grad_check<F>(params: &mut ParamStore, tolerance: f64, model: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    grad_check_with(
        params,
        GradCheckOptions {
            tolerance,
            ..Default::default()
        },
        model,
    )
}

/// Compares analytic gradients against central differences.
///
/// `model` must compute the loss for the current parameter values and
/// accumulate its analytic gradients into `params`. Only tensors with
/// `requires_grad` are checked. Error per coordinate is
/// `|analytic - numeric| / max(1, |numeric|)`. Gradients are zero on return.
pub fn grad_check_with<F>(
    params: &mut ParamStore,
    opts: GradCheckOptions,
    mut model: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    params.zero_grad();
    model(params)?;
    let analytic: Vec<(String, Vec<f64>)> = params
        .iter()
        .filter(|(_, t)| t.requires_grad)
        .map(|(n, t)| (n.to_string(), t.grad.clone().unwrap_or_else(|| vec![0.0; t.len()])))
        .collect();

    let mut tensors = Vec::with_capacity(analytic.len());
    for (name, grad) in analytic {
        let coords = probe_coords(grad.len(), opts.max_coords);
        let mut check = TensorCheck {
            name: name.clone(),
            coords_checked: coords.len(),
            max_error: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for &c in &coords {
            let orig = params.get(&name)?.data()[c];
            params.get_mut(&name)?.data_mut()[c] = orig + opts.step;
            let plus = model(params)?;
            params.get_mut(&name)?.data_mut()[c] = orig - opts.step;
            let minus = model(params)?;
            params.get_mut(&name)?.data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = (grad[c] - numeric).abs() / numeric.abs().max(1.0);
            if err > check.max_error || !err.is_finite() {
                check.max_error = err;
                check.worst_coord = c;
                check.analytic = grad[c];
                check.numeric = numeric;
            }
        }
        check.passed = check.max_error < opts.tolerance;
        tensors.push(check);
    }
    params.zero_grad();
    let passed = tensors.iter().all(|t| t.passed);
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        tensors,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor2;

    fn quadratic_store() -> ParamStore {
        let mut p = ParamStore::new();
        p.register("w", Tensor2::from_rows(&[[0.5, -1.5, 2.0]]).trainable())
            .unwrap();
        p.register("frozen", Tensor2::from_rows(&[[3.0]])).unwrap();
        p
    }

    fn quadratic(p: &mut ParamStore, grad_factor: f64) -> Result<f64> {
        let w = p.get("w")?.clone();
        let f = p.get("frozen")?.data()[0];
        let loss = f * w.data().iter().map(|v| v * v).sum::<f64>();
        let g = w.map(|v| grad_factor * f * v);
        p.accumulate("w", &g)?;
        Ok(loss)
    }

    #[test]
    fn correct_gradient_passes_and_frozen_is_excluded() {
        let mut p = quadratic_store();
        let report = grad_check(&mut p, 1e-6, |p| quadratic(p, 2.0)).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.tensors.len(), 1);
        assert_eq!(report.tensors[0].name, "w");
        assert!(p.get("w").unwrap().grad.as_ref().unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut p = quadratic_store();
        let report = grad_check(&mut p, 1e-4, |p| quadratic(p, 1.0)).unwrap();
        assert!(!report.passed);
        assert_eq!(report.failures().count(), 1);
    }

    #[test]
    fn probe_coords_subsamples() {
        assert_eq!(probe_coords(3, 64), vec![0, 1, 2]);
        let c = probe_coords(1000, 64);
        assert_eq!(c.len(), 64);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(*c.last().unwrap() < 1000);
    }
}
