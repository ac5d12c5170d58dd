use serde::{Deserialize, Serialize};

use crate::model::Network;
use crate::scalar::Scalar;

/// `1 / (1 + e^(−x))`.
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logistic of each value's z-score under the population standard deviation;
/// every score is 0.5 when the values do not vary.
pub fn relative_scores(values: &[f64]) -> Vec<f64> {
    let (mean, std) = mean_std(values);
    values
        .iter()
        .map(|&v| if std > 0.0 { logistic((v - mean) / std) } else { 0.5 })
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub fitness_mean: f64,
    pub fitness_std: f64,
    pub params_mean: f64,
    pub params_std: f64,
}

/// Sets relative fitness and relative complexity on every member of `group`.
pub fn calibrate<'a, S: Scalar>(
    group: impl IntoIterator<Item = &'a mut Network<S>>,
) -> CalibrationStats {
    let mut group: Vec<&mut Network<S>> = group.into_iter().collect();
    assert!(!group.is_empty(), "calibration needs a non-empty group");
    let fitness: Vec<f64> = group.iter().map(|n| n.absolute_fitness).collect();
    let params: Vec<f64> = group.iter().map(|n| n.parameter_count() as f64).collect();
    for ((net, f), c) in group
        .iter_mut()
        .zip(relative_scores(&fitness))
        .zip(relative_scores(&params))
    {
        net.relative_fitness = f;
        net.relative_complexity = c;
    }
    let (fitness_mean, fitness_std) = mean_std(&fitness);
    let (params_mean, params_std) = mean_std(&params);
    CalibrationStats { fitness_mean, fitness_std, params_mean, params_std }
}
