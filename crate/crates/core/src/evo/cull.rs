use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::weighted_choice;
use crate::model::{Network, NetworkId};
use crate::scalar::Scalar;

/// `age / (f_r · c_r)`: old, weak and large networks go first.
pub fn cull_weight(age: u32, relative_fitness: f64, relative_complexity: f64) -> f64 {
    let denom = relative_fitness * relative_complexity;
    if denom > 0.0 {
        age as f64 / denom
    } else if age == 0 {
        0.0
    } else {
        f64::MAX
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CullReport {
    pub removed: Vec<NetworkId>,
    /// Protected networks removed because the protected set alone exceeded the limit.
    pub anomalies: Vec<NetworkId>,
}

/// Removes networks until `limit` remain. New offspring and `champions` are
/// protected; the others are drawn one at a time with probability
/// proportional to their cull weight (uniformly if every weight is zero).
pub fn cull<S: Scalar>(
    nets: &mut Vec<Network<S>>,
    limit: usize,
    champions: &BTreeSet<NetworkId>,
    rng: &mut impl Rng,
) -> CullReport {
    let mut report = CullReport::default();
    while nets.len() > limit {
        let open: Vec<usize> = (0..nets.len())
            .filter(|&i| !nets[i].is_new_offspring && !champions.contains(&nets[i].id()))
            .collect();
        if !open.is_empty() {
            let weights: Vec<f64> = open
                .iter()
                .map(|&i| cull_weight(nets[i].age, nets[i].relative_fitness, nets[i].relative_complexity))
                .collect();
            let pick = weighted_choice(&weights, rng).unwrap_or_else(|| rng.random_range(0..open.len()));
            report.removed.push(nets.remove(open[pick]).id());
            continue;
        }
        // last resort: the earliest-born offspring that is not a champion,
        // then the weakest champion
        let victim = (0..nets.len())
            .filter(|&i| !champions.contains(&nets[i].id()))
            .min_by_key(|&i| nets[i].id())
            .or_else(|| {
                (0..nets.len()).min_by(|&a, &b| {
                    nets[a].absolute_fitness.total_cmp(&nets[b].absolute_fitness)
                })
            })
            .expect("population is larger than the limit");
        let id = nets.remove(victim).id();
        report.removed.push(id);
        report.anomalies.push(id);
    }
    report
}
