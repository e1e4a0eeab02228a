//! Sensitivity indices from (parameter set, output) pairs.
//!
//! Morris screening: along each trajectory consecutive sets differ in one
//! parameter, giving the elementary effect `(y' - y) / (u' - u)` where `u` is
//! the parameter's unit position (`level / (levels - 1)`). Categorical
//! parameters are treated as ordered levels. Per parameter, `mu` is the mean
//! effect, `mu_star` the mean absolute effect and `sigma` the sample
//! standard deviation (zero for a single trajectory).
//!
//! Variance-based indices use the Saltelli (2002) design: independent unit
//! matrices `A` and `B` of `N` rows and, for each parameter `i`, `C_i` equal
//! to `B` with column `i` taken from `A`. Outputs are evaluated in the order
//! `A`, `B`, `C_1`, ..., `C_k` and centered on their grand mean. With all
//! sums normalized by `1/N`:
//!
//! ```text
//! f0^2  = mean(yA * yB)
//! V     = mean(yA^2) - f0^2
//! S_i   = (mean(yA * yC_i) - f0^2) / V
//! S_Ti  = 1 - (mean(yB * yC_i) - f0^2) / V
//! ```
//!
//! When `V` is not positive the indices are reported as zero and flagged.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::param_space::{ParameterSet, ParameterSpace};

#[derive(Debug, Error, PartialEq)]
pub enum SaError {
    #[error(
        "trajectory {trajectory} step {step} changes {changed} parameters, expected exactly one"
    )]
    Structure {
        trajectory: usize,
        step: usize,
        changed: usize,
    },
    #[error("expected {expected} outputs, got {got}")]
    Length { expected: usize, got: usize },
    #[error("sobol estimation needs N >= 2, got {0}")]
    TooFewSamples(usize),
    #[error("parameter set has {got} values, space has {expected}")]
    Arity { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorrisEntry {
    pub parameter: String,
    pub mu: f64,
    pub mu_star: f64,
    pub sigma: f64,
    /// Number of elementary effects observed.
    pub effects: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorrisIndices {
    pub entries: Vec<MorrisEntry>,
}

impl MorrisIndices {
    /// Parameter indices by descending `mu_star`.
    pub fn ranking(&self) -> Vec<usize> {
        rank_parameters(&self.entries.iter().map(|e| e.mu_star).collect::<Vec<_>>())
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<[String; 4]> = self
            .entries
            .iter()
            .map(|e| [e.parameter.clone(), fmt(e.mu), fmt(e.mu_star), fmt(e.sigma)])
            .collect();
        table(&["parameter", "mu", "mu_star", "sigma"], &rows)
    }
}

/// Elementary-effect statistics over `trajectories` with `outputs[t][s]`
/// the model output at `trajectories[t][s]`.
pub fn morris_indices(
    space: &ParameterSpace,
    trajectories: &[Vec<ParameterSet>],
    outputs: &[Vec<f64>],
) -> Result<MorrisIndices, SaError> {
    if outputs.len() != trajectories.len() {
        return Err(SaError::Length {
            expected: trajectories.len(),
            got: outputs.len(),
        });
    }
    let k = space.len();
    let mut effects: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (t, (traj, ys)) in trajectories.iter().zip(outputs).enumerate() {
        if ys.len() != traj.len() {
            return Err(SaError::Length {
                expected: traj.len(),
                got: ys.len(),
            });
        }
        for set in traj {
            if set.levels().len() != k {
                return Err(SaError::Arity {
                    expected: k,
                    got: set.levels().len(),
                });
            }
        }
        for step in 1..traj.len() {
            let (before, after) = (&traj[step - 1], &traj[step]);
            let changed: Vec<usize> = (0..k)
                .filter(|&j| before.level(j) != after.level(j))
                .collect();
            let &[j] = changed.as_slice() else {
                return Err(SaError::Structure {
                    trajectory: t,
                    step,
                    changed: changed.len(),
                });
            };
            let spec = &space.specs()[j];
            let du = spec.unit_position(after.level(j)) - spec.unit_position(before.level(j));
            effects[j].push((ys[step] - ys[step - 1]) / du);
        }
    }
    let entries = effects
        .iter()
        .zip(space.specs())
        .map(|(ee, spec)| {
            let n = ee.len();
            let (mu, mu_star, sigma) = if n == 0 {
                (0.0, 0.0, 0.0)
            } else {
                let mu = ee.iter().sum::<f64>() / n as f64;
                let mu_star = ee.iter().map(|e| e.abs()).sum::<f64>() / n as f64;
                let constant = ee.iter().all(|&e| e == ee[0]);
                let sigma = if n < 2 || constant {
                    0.0
                } else {
                    (ee.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                };
                (mu, mu_star, sigma)
            };
            MorrisEntry {
                parameter: spec.name().to_string(),
                mu,
                mu_star,
                sigma,
                effects: n,
            }
        })
        .collect();
    Ok(MorrisIndices { entries })
}

/// Splits a flat list into consecutive chunks of `len`.
pub fn chunk_trajectories<T: Clone>(flat: &[T], len: usize) -> Vec<Vec<T>> {
    flat.chunks(len.max(1)).map(<[T]>::to_vec).collect()
}

/// Parameter sets of a Saltelli design in evaluation order.
#[derive(Clone, Debug, PartialEq)]
pub struct SobolDesign {
    pub n: usize,
    pub k: usize,
    pub sets: Vec<ParameterSet>,
}

pub fn sobol_design(space: &ParameterSpace, n: usize, seed: u64) -> Result<SobolDesign, SaError> {
    if n < 2 {
        return Err(SaError::TooFewSamples(n));
    }
    let k = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..k).map(|_| rng.gen::<f64>()).collect())
            .collect()
    };
    let a = draw();
    let b = draw();
    let to_set = |row: &[f64]| {
        ParameterSet(
            row.iter()
                .zip(space.specs())
                .map(|(&u, s)| s.level_from_unit(u))
                .collect(),
        )
    };
    let mut sets: Vec<ParameterSet> = Vec::with_capacity((k + 2) * n);
    sets.extend(a.iter().map(|r| to_set(r)));
    sets.extend(b.iter().map(|r| to_set(r)));
    for i in 0..k {
        for (ra, rb) in a.iter().zip(&b) {
            let mut row = rb.clone();
            row[i] = ra[i];
            sets.push(to_set(&row));
        }
    }
    Ok(SobolDesign { n, k, sets })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolEntry {
    pub parameter: String,
    pub s: f64,
    pub s_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolIndices {
    pub n: usize,
    pub variance: f64,
    pub zero_variance: bool,
    pub entries: Vec<SobolEntry>,
}

impl SobolIndices {
    /// Parameter indices by descending total index.
    pub fn ranking(&self) -> Vec<usize> {
        rank_parameters(&self.entries.iter().map(|e| e.s_total).collect::<Vec<_>>())
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<[String; 3]> = self
            .entries
            .iter()
            .map(|e| [e.parameter.clone(), fmt(e.s), fmt(e.s_total)])
            .collect();
        let mut out = table(&["parameter", "S", "S_T"], &rows);
        if self.zero_variance {
            out.push_str("output variance is zero; indices set to 0\n");
        }
        out
    }
}

/// Estimates first-order and total indices from outputs in design order.
pub fn sobol_indices(
    space: &ParameterSpace,
    n: usize,
    outputs: &[f64],
) -> Result<SobolIndices, SaError> {
    if n < 2 {
        return Err(SaError::TooFewSamples(n));
    }
    let k = space.len();
    if outputs.len() != (k + 2) * n {
        return Err(SaError::Length {
            expected: (k + 2) * n,
            got: outputs.len(),
        });
    }
    let grand = outputs.iter().sum::<f64>() / outputs.len() as f64;
    let y: Vec<f64> = outputs.iter().map(|v| v - grand).collect();
    let ya = &y[..n];
    let yb = &y[n..2 * n];
    let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let f0_sq = dot(ya, yb);
    let variance = dot(ya, ya) - f0_sq;
    let zero_variance =
        variance.is_nan() || variance <= 0.0 || outputs.iter().all(|&v| v == outputs[0]);
    let entries = space
        .specs()
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let yc = &y[(2 + i) * n..(3 + i) * n];
            let (s, s_total) = if zero_variance {
                (0.0, 0.0)
            } else {
                (
                    (dot(ya, yc) - f0_sq) / variance,
                    1.0 - (dot(yb, yc) - f0_sq) / variance,
                )
            };
            SobolEntry {
                parameter: spec.name().to_string(),
                s,
                s_total,
            }
        })
        .collect();
    Ok(SobolIndices {
        n,
        variance: if zero_variance { 0.0 } else { variance },
        zero_variance,
        entries,
    })
}

/// Builds the design, evaluates `model` on it and estimates the indices;
/// `(k + 2) * n` model evaluations.
pub fn sobol_vbd(
    space: &ParameterSpace,
    model: impl Fn(&ParameterSet) -> f64,
    n: usize,
    seed: u64,
) -> Result<SobolIndices, SaError> {
    let design = sobol_design(space, n, seed)?;
    let outputs: Vec<f64> = design.sets.iter().map(model).collect();
    sobol_indices(space, n, &outputs)
}

/// Indices sorted by descending score; ties keep declaration order.
pub fn rank_parameters(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Left-aligned first column, right-aligned numeric columns.
pub(crate) fn table<const N: usize>(header: &[&str; N], rows: &[[String; N]]) -> String {
    let mut width: [usize; N] = header.map(str::len);
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut parts = Vec::with_capacity(N);
        for (c, cell) in cells.enumerate() {
            parts.push(if c == 0 {
                format!("{cell:<w$}", w = width[c])
            } else {
                format!("{cell:>w$}", w = width[c])
            });
        }
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut header.iter().copied());
    for row in rows {
        line(&mut row.iter().map(String::as_str));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_space::{morris_trajectories, ParameterSpec};

    fn unit_space(k: usize, levels: u32) -> ParameterSpace {
        let step = 1.0 / f64::from(levels - 1);
        ParameterSpace::new(
            (0..k)
                .map(|i| ParameterSpec::grid(&format!("x{}", i + 1), 0.0, 1.0, step, 0.0).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn unit(space: &ParameterSpace, set: &ParameterSet) -> Vec<f64> {
        set.unit_point(space)
    }

    fn morris_of(
        space: &ParameterSpace,
        f: impl Fn(&[f64]) -> f64,
        r: usize,
        seed: u64,
    ) -> MorrisIndices {
        let trajs = morris_trajectories(space, r, 4, seed).unwrap();
        let ys: Vec<Vec<f64>> = trajs
            .iter()
            .map(|t| t.iter().map(|s| f(&unit(space, s))).collect())
            .collect();
        morris_indices(space, &trajs, &ys).unwrap()
    }

    #[test]
    fn constant_model() {
        let space = unit_space(3, 5);
        let m = morris_of(&space, |_| 4.2, 6, 1);
        for e in &m.entries {
            assert_eq!((e.mu, e.mu_star, e.sigma), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn linear_model_is_exact() {
        let space = unit_space(3, 5);
        let m = morris_of(&space, |x| 3.0 * x[0], 10, 9);
        assert_eq!(m.entries[0].mu_star, 3.0);
        assert_eq!(m.entries[0].sigma, 0.0);
        assert_eq!(m.entries[0].effects, 10);
        assert_eq!((m.entries[1].mu_star, m.entries[2].mu_star), (0.0, 0.0));
    }

    #[test]
    fn interaction_spreads_effects() {
        let space = unit_space(2, 5);
        let m = morris_of(&space, |x| x[0] * x[1], 20, 4);
        assert!(m.entries[0].sigma > 0.0);
    }

    #[test]
    fn broken_trajectory_rejected() {
        let space = unit_space(2, 5);
        let traj = vec![vec![ParameterSet(vec![0, 0]), ParameterSet(vec![2, 2])]];
        let err = morris_indices(&space, &traj, &[vec![0.0, 1.0]]).unwrap_err();
        assert_eq!(
            err,
            SaError::Structure {
                trajectory: 0,
                step: 1,
                changed: 2
            }
        );
        assert!(morris_indices(&space, &traj, &[vec![0.0]]).is_err());
    }

    #[test]
    fn design_layout() {
        let space = unit_space(3, 101);
        let d = sobol_design(&space, 8, 2).unwrap();
        assert_eq!(d.sets.len(), 5 * 8);
        let (a, b) = (&d.sets[..8], &d.sets[8..16]);
        for i in 0..3 {
            for r in 0..8 {
                let c = &d.sets[(2 + i) * 8 + r];
                for j in 0..3 {
                    let expected = if j == i { a[r].level(j) } else { b[r].level(j) };
                    assert_eq!(c.level(j), expected);
                }
            }
        }
        assert!(sobol_design(&space, 1, 0).is_err());
    }

    #[test]
    fn constant_model_flagged() {
        let space = unit_space(2, 11);
        let s = sobol_vbd(&space, |_| 1.5, 64, 3).unwrap();
        assert!(s.zero_variance);
        assert!(s.entries.iter().all(|e| e.s == 0.0 && e.s_total == 0.0));
    }

    #[test]
    fn ranking_ties_keep_order() {
        assert_eq!(rank_parameters(&[0.5]), vec![0]);
        assert_eq!(rank_parameters(&[1.0, 1.0, 1.0]), vec![0, 1, 2]);
        assert_eq!(rank_parameters(&[0.2, 0.8, 0.2]), vec![1, 0, 2]);
    }

    #[test]
    fn text_table_is_aligned() {
        let rows = vec![
            ["a".to_string(), "1.0".to_string()],
            ["long".to_string(), "10.25".to_string()],
        ];
        let t = table(&["name", "v"], &rows);
        assert_eq!(t, "name      v\na       1.0\nlong  10.25\n");
    }
}
