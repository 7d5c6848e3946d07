//! Analytic gradients versus central finite differences.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub eps: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Entries checked per input; larger inputs are subsampled evenly.
    pub max_entries: usize,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// One-sided slopes disagreeing by more than this fraction mark a kink.
    pub kink_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            max_entries: 48,
            floor: 1e-4,
            kink_tol: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputCheck {
    pub input: usize,
    pub checked: usize,
    /// Entries sitting on a non-smooth point, excluded from the error.
    pub kinks: usize,
    pub max_rel_error: f64,
    pub worst_entry: Option<usize>,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
    /// Set when the function under test failed to evaluate.
    pub error: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.inputs.iter().all(|c| c.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().fold(0.0, |m, c| m.max(c.max_rel_error))
    }

    pub fn kinks(&self) -> usize {
        self.inputs.iter().map(|c| c.kinks).sum()
    }
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).sum())
}

fn entries(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    (0..max).map(|i| (i * len + len / (2 * max)) / max).collect()
}

/// Compare analytic gradients of the scalar `f(inputs)` against central
/// differences, entry by entry. Never panics on evaluation errors; they are
/// recorded in the report.
pub fn grad_check<F>(f: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut report = GradCheckReport::default();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let analytic = match f(&mut g, &vars).and_then(|out| {
        let grads = g.backward(out)?;
        Ok(vars.iter().map(|&v| grads.wrt(&g, v)).collect::<Vec<_>>())
    }) {
        Ok(a) => a,
        Err(e) => {
            report.error = Some(e.to_string());
            return report;
        }
    };
    let base = match eval(&f, inputs) {
        Ok(v) => v,
        Err(e) => {
            report.error = Some(e.to_string());
            return report;
        }
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        let mut check = InputCheck {
            input: k,
            checked: 0,
            kinks: 0,
            max_rel_error: 0.0,
            worst_entry: None,
            passed: true,
        };
        for i in entries(inputs[k].len(), cfg.max_entries) {
            let x0 = inputs[k].data()[i];
            work[k].data_mut()[i] = x0 + cfg.eps;
            let plus = eval(&f, &work);
            work[k].data_mut()[i] = x0 - cfg.eps;
            let minus = eval(&f, &work);
            work[k].data_mut()[i] = x0;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => {
                    report.error = Some(e.to_string());
                    return report;
                }
            };
            let right = (plus - base) / cfg.eps;
            let left = (base - minus) / cfg.eps;
            let scale = right.abs().max(left.abs()).max(cfg.floor);
            if (right - left).abs() > cfg.kink_tol * scale {
                check.kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            check.checked += 1;
            if !(rel <= check.max_rel_error) {
                check.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                check.worst_entry = Some(i);
            }
        }
        check.passed = check.max_rel_error <= cfg.tol;
        report.inputs.push(check);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_relu_kink() {
        let report = grad_check(
            |g, v| {
                let r = g.relu(v[0]);
                Ok(g.sum(r))
            },
            &[Tensor::vector(vec![0.0, 1.0, -1.0])],
            &GradCheckConfig::default(),
        );
        assert!(report.passed());
        assert_eq!(report.inputs[0].kinks, 1);
        assert_eq!(report.inputs[0].checked, 2);
    }

    #[test]
    fn reports_wrong_gradient() {
        struct Wrong;
        impl crate::CustomOp for Wrong {
            fn name(&self) -> &'static str {
                "wrong"
            }
            fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
                vec![Some(g.scale(3.0))]
            }
        }
        let report = grad_check(
            |g, v| {
                let value = g.value(v[0]).clone();
                Ok(g.custom(&[v[0]], value, Box::new(Wrong)))
            },
            &[Tensor::scalar(0.3)],
            &GradCheckConfig::default(),
        );
        assert!(!report.passed());
    }

    #[test]
    fn evaluation_error_is_captured() {
        let report = grad_check(
            |g, v| g.add(v[0], v[1]),
            &[Tensor::zeros(&[2]), Tensor::zeros(&[3])],
            &GradCheckConfig::default(),
        );
        assert!(report.error.is_some());
        assert!(!report.passed());
    }
}
