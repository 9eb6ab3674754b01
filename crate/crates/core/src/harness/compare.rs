//! Standard against enhanced scheduling over seeds and interference levels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{inf_f64, SimConfig};
use super::scenario::{run_scenario, Summary, SUMMARY_SCHEMA_VERSION};
use crate::error::Result;
use crate::mac::Scheme;
use crate::rl::Policy;

/// Per-point means over the runs in which the rate was defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanGrids {
    pub aor: Vec<Vec<Option<f64>>>,
    pub peor: Vec<Vec<Option<f64>>>,
}

/// How often the enhanced scheme is at or below the standard one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dominance {
    /// Grid points defined for both schemes.
    pub points: usize,
    pub no_worse: usize,
    pub strictly_better: usize,
}

impl Dominance {
    pub fn of(enhanced: &[Vec<Option<f64>>], standard: &[Vec<Option<f64>>]) -> Self {
        let mut d = Dominance::default();
        for (re, rs) in enhanced.iter().zip(standard) {
            for (e, s) in re.iter().zip(rs) {
                if let (Some(e), Some(s)) = (e, s) {
                    d.points += 1;
                    d.no_worse += usize::from(e <= s);
                    d.strictly_better += usize::from(e < s);
                }
            }
        }
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub interference_vehicles: usize,
    pub standard: MeanGrids,
    pub enhanced: MeanGrids,
    pub aor: Dominance,
    pub peor: Dominance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    #[serde(with = "inf_f64::vec")]
    pub aoi_thresholds_ms: Vec<f64>,
    #[serde(with = "inf_f64::vec")]
    pub error_thresholds_m: Vec<f64>,
    #[serde(with = "inf_f64::vec")]
    pub distances_m: Vec<f64>,
    pub rows: Vec<CompareRow>,
    /// Every run, ordered by interference level, then seed, then scheme.
    pub runs: Vec<Summary>,
}

fn mean_grid(runs: &[&Vec<Vec<Option<f64>>>]) -> Vec<Vec<Option<f64>>> {
    let Some(first) = runs.first() else { return Vec::new() };
    (0..first.len())
        .map(|t| {
            (0..first[t].len())
                .map(|k| {
                    let vals: Vec<f64> = runs.iter().filter_map(|g| g[t][k]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect()
        })
        .collect()
}

fn means(runs: &[&Summary]) -> MeanGrids {
    MeanGrids {
        aor: mean_grid(&runs.iter().map(|s| &s.aor.rates).collect::<Vec<_>>()),
        peor: mean_grid(&runs.iter().map(|s| &s.peor.rates).collect::<Vec<_>>()),
    }
}

/// Runs both schemes for every seed and interference level, replications in
/// parallel, and aggregates them in seed order.
pub fn compare(base: &SimConfig, seeds: &[u64], interference: &[usize], policy: Option<&Policy>) -> Result<CompareReport> {
    let jobs: Vec<(usize, u64, Scheme)> = interference
        .iter()
        .flat_map(|&n| seeds.iter().flat_map(move |&s| [(n, s, Scheme::Standard), (n, s, Scheme::Enhanced)]))
        .collect();
    let runs: Vec<Summary> = jobs
        .par_iter()
        .map(|&(n, seed, scheme)| {
            let cfg = SimConfig {
                seed,
                scheme,
                interference_vehicles: n,
                ..base.clone()
            };
            run_scenario(&cfg, policy).map(|r| r.summary)
        })
        .collect::<Result<_>>()?;

    let rows = interference
        .iter()
        .map(|&n| {
            let pick = |scheme| runs.iter().filter(|s| s.interference_vehicles == n && s.scheme == scheme).collect::<Vec<_>>();
            let standard = means(&pick(Scheme::Standard));
            let enhanced = means(&pick(Scheme::Enhanced));
            CompareRow {
                interference_vehicles: n,
                aor: Dominance::of(&enhanced.aor, &standard.aor),
                peor: Dominance::of(&enhanced.peor, &standard.peor),
                standard,
                enhanced,
            }
        })
        .collect();
    Ok(CompareReport {
        schema_version: SUMMARY_SCHEMA_VERSION,
        seeds: seeds.to_vec(),
        aoi_thresholds_ms: base.aoi_thresholds_ms.clone(),
        error_thresholds_m: base.error_thresholds_m.clone(),
        distances_m: base.distances_m.clone(),
        rows,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominance_counts_defined_points_only() {
        let e = vec![vec![Some(0.1), Some(0.2), None]];
        let s = vec![vec![Some(0.1), Some(0.3), Some(0.5)]];
        assert_eq!(
            Dominance::of(&e, &s),
            Dominance {
                points: 2,
                no_worse: 2,
                strictly_better: 1
            }
        );
    }

    #[test]
    fn mean_skips_undefined_runs() {
        let a = vec![vec![Some(0.2), None]];
        let b = vec![vec![Some(0.4), None]];
        let c = vec![vec![None, None]];
        let m = mean_grid(&[&a, &b, &c]);
        assert!((m[0][0].unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(m[0][1], None);
    }
}
