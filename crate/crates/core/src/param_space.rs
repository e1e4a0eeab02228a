//! Parameter domains and the samplers that draw parameter sets from them.
//!
//! Every domain is discrete: a real-valued grid `lo, lo + step, ..., hi` or a
//! list of named choices. A [`ParameterSet`] stores the *level index* of each
//! value, never the rendered real, so two sets are equal exactly when they
//! would bind identical values to every task. Reals are produced only when a
//! task actually runs (see [`ParameterSpace::value`]).

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while loading a parameter space or validating sample plans.
#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("malformed parameter space config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parameter `{name}`: {reason}")]
    InvalidDomain { name: String, reason: String },
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("parameter `{name}`: default {default} is outside its domain")]
    DefaultOutsideDomain { name: String, default: String },
    #[error("invalid sample plan: {0}")]
    InvalidPlan(String),
    #[error("line {line}: {reason}")]
    BadSetLine { line: usize, reason: String },
}

/// The values a single parameter may take.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    /// `lo, lo + step, ...` up to and including `hi` when it lies on the grid.
    Grid { lo: f64, hi: f64, step: f64 },
    /// Unordered named values; sampling treats list order as level order.
    Choices(Vec<String>),
}

impl Domain {
    fn level_count(&self) -> u32 {
        match self {
            Domain::Grid { lo, hi, step } => ((hi - lo) / step + 1e-9).floor() as u32 + 1,
            Domain::Choices(values) => values.len() as u32,
        }
    }
}

/// A concrete parameter value, rendered from a level index.
#[derive(Clone, Debug, PartialEq)]
pub enum Value<'a> {
    Real(f64),
    Choice(&'a str),
}

impl Value<'_> {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Real(v) => Some(*v),
            Value::Choice(_) => None,
        }
    }
}

impl fmt::Display for Value<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Real(v) => write!(f, "{v}"),
            Value::Choice(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSpec {
    name: String,
    domain: Domain,
    default: u32,
    levels: u32,
}

impl ParameterSpec {
    pub fn grid(name: &str, lo: f64, hi: f64, step: f64, default: f64) -> Result<Self, SpaceError> {
        let invalid = |reason: &str| SpaceError::InvalidDomain {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        if !(lo.is_finite() && hi.is_finite() && step.is_finite()) {
            return Err(invalid("grid bounds must be finite"));
        }
        if step <= 0.0 {
            return Err(invalid("grid step must be positive"));
        }
        if lo > hi {
            return Err(invalid("grid lower bound exceeds upper bound"));
        }
        let domain = Domain::Grid { lo, hi, step };
        let levels = domain.level_count();
        let mut spec = ParameterSpec {
            name: name.to_string(),
            domain,
            default: 0,
            levels,
        };
        spec.default =
            spec.grid_level_exact(default)
                .ok_or_else(|| SpaceError::DefaultOutsideDomain {
                    name: name.to_string(),
                    default: default.to_string(),
                })?;
        Ok(spec)
    }

    pub fn choices(name: &str, values: Vec<String>, default: &str) -> Result<Self, SpaceError> {
        if values.is_empty() {
            return Err(SpaceError::InvalidDomain {
                name: name.to_string(),
                reason: "choice list is empty".to_string(),
            });
        }
        let mut seen = HashSet::new();
        if let Some(dup) = values.iter().find(|v| !seen.insert(v.as_str())) {
            return Err(SpaceError::InvalidDomain {
                name: name.to_string(),
                reason: format!("choice `{dup}` listed twice"),
            });
        }
        let default = values.iter().position(|v| v == default).ok_or_else(|| {
            SpaceError::DefaultOutsideDomain {
                name: name.to_string(),
                default: default.to_string(),
            }
        })? as u32;
        Ok(ParameterSpec {
            name: name.to_string(),
            levels: values.len() as u32,
            domain: Domain::Choices(values),
            default,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Number of distinct values in the domain.
    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Level index of the default value.
    pub fn default_level(&self) -> u32 {
        self.default
    }

    pub fn value(&self, level: u32) -> Value<'_> {
        match &self.domain {
            Domain::Grid { lo, step, .. } => {
                let v = lo + f64::from(level) * step;
                // strip accumulation noise such as 2.5 + 3 * 0.5 = 3.9999999999999996
                Value::Real((v * 1e9).round() / 1e9)
            }
            Domain::Choices(values) => Value::Choice(&values[level as usize]),
        }
    }

    /// Position of `level` on `[0, 1]`, with the first level at 0 and the last at 1.
    pub fn unit_position(&self, level: u32) -> f64 {
        if self.levels <= 1 {
            0.0
        } else {
            f64::from(level) / f64::from(self.levels - 1)
        }
    }

    /// Snaps a real value to the nearest grid level; ties go toward `lo`.
    /// Values outside the grid clamp to the end levels. Choice domains have
    /// no real embedding and return `None`.
    pub fn snap(&self, x: f64) -> Option<u32> {
        match &self.domain {
            Domain::Grid { lo, step, .. } => Some(self.nearest_level((x - lo) / step)),
            Domain::Choices(_) => None,
        }
    }

    /// Maps a unit-interval coordinate onto a level: grids snap
    /// `lo + u * (hi - lo)` to the nearest level (ties toward `lo`), choices
    /// index the list by `floor(u * len)`.
    pub fn level_from_unit(&self, u: f64) -> u32 {
        match &self.domain {
            Domain::Grid { .. } => self.nearest_level(u * f64::from(self.levels - 1)),
            Domain::Choices(_) => {
                ((u * f64::from(self.levels)).floor().max(0.0) as u32).min(self.levels - 1)
            }
        }
    }

    fn nearest_level(&self, t: f64) -> u32 {
        // a tiny relative tolerance keeps exact on-grid inputs from being
        // pushed across a tie by representation error
        let k = (t - 0.5 - 1e-9).ceil();
        k.clamp(0.0, f64::from(self.levels - 1)) as u32
    }

    fn grid_level_exact(&self, x: f64) -> Option<u32> {
        let Domain::Grid { lo, step, .. } = self.domain else {
            return None;
        };
        let t = (x - lo) / step;
        let k = t.round();
        if (t - k).abs() > 1e-6 || k < 0.0 || k > f64::from(self.levels - 1) {
            return None;
        }
        Some(k as u32)
    }

    /// Parses a rendered value (as written in sample files) back to a level.
    pub fn parse_value(&self, text: &str) -> Option<u32> {
        match &self.domain {
            Domain::Grid { .. } => self.grid_level_exact(text.trim().parse().ok()?),
            Domain::Choices(values) => values
                .iter()
                .position(|v| v == text.trim())
                .map(|p| p as u32),
        }
    }
}

/// Ordered parameter definitions. Order fixes the task-binding order used by
/// reuse detection and must not change during a study.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSpace {
    specs: Vec<ParameterSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    #[serde(default)]
    grid: Option<[f64; 3]>,
    #[serde(default)]
    choices: Option<Vec<String>>,
    default: serde_json::Value,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSpace {
    List(Vec<RawSpec>),
    Wrapped { parameters: Vec<RawSpec> },
}

impl ParameterSpace {
    pub fn new(specs: Vec<ParameterSpec>) -> Result<Self, SpaceError> {
        let mut names = HashSet::new();
        for spec in &specs {
            if !names.insert(spec.name.as_str()) {
                return Err(SpaceError::DuplicateName(spec.name.clone()));
            }
        }
        Ok(ParameterSpace { specs })
    }

    /// Parses the JSON parameter-space format: a list of
    /// `{"name", "grid": [lo, hi, step], "default"}` or
    /// `{"name", "choices": [...], "default"}` entries, optionally wrapped as
    /// `{"parameters": [...]}`.
    pub fn parse(config_text: &str) -> Result<Self, SpaceError> {
        let raw = match serde_json::from_str::<RawSpace>(config_text)? {
            RawSpace::List(list) | RawSpace::Wrapped { parameters: list } => list,
        };
        let specs = raw
            .into_iter()
            .map(|r| match (r.grid, r.choices) {
                (Some([lo, hi, step]), None) => {
                    let default =
                        r.default
                            .as_f64()
                            .ok_or_else(|| SpaceError::DefaultOutsideDomain {
                                name: r.name.clone(),
                                default: r.default.to_string(),
                            })?;
                    ParameterSpec::grid(&r.name, lo, hi, step, default)
                }
                (None, Some(choices)) => {
                    let default =
                        r.default
                            .as_str()
                            .ok_or_else(|| SpaceError::DefaultOutsideDomain {
                                name: r.name.clone(),
                                default: r.default.to_string(),
                            })?;
                    ParameterSpec::choices(&r.name, choices, default)
                }
                _ => Err(SpaceError::InvalidDomain {
                    name: r.name.clone(),
                    reason: "exactly one of `grid` or `choices` is required".to_string(),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        ParameterSpace::new(specs)
    }

    pub fn specs(&self) -> &[ParameterSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn value(&self, param: usize, level: u32) -> Value<'_> {
        self.specs[param].value(level)
    }

    pub fn default_set(&self) -> ParameterSet {
        ParameterSet(self.specs.iter().map(|s| s.default).collect())
    }

    /// Product of the domain sizes, saturating at `u64::MAX`.
    pub fn cardinality(&self) -> u64 {
        self.specs
            .iter()
            .fold(1u64, |acc, s| acc.saturating_mul(u64::from(s.levels)))
    }

    pub fn contains(&self, set: &ParameterSet) -> bool {
        set.0.len() == self.specs.len() && set.0.iter().zip(&self.specs).all(|(&l, s)| l < s.levels)
    }

    /// Renders a set as one comma-separated line in space order.
    pub fn render(&self, set: &ParameterSet) -> String {
        set.0
            .iter()
            .enumerate()
            .map(|(i, &l)| self.value(i, l).to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn header(&self) -> String {
        self.specs
            .iter()
            .map(|s| s.name.as_str())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parses the sample file format written by [`ParameterSpace::render`].
    /// Blank lines and lines starting with `#` are skipped, as is a header
    /// line equal to [`ParameterSpace::header`].
    pub fn parse_sets(&self, text: &str) -> Result<Vec<ParameterSet>, SpaceError> {
        let header = self.header();
        let mut sets = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == header {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != self.specs.len() {
                return Err(SpaceError::BadSetLine {
                    line: i + 1,
                    reason: format!(
                        "expected {} values, found {}",
                        self.specs.len(),
                        fields.len()
                    ),
                });
            }
            let levels = fields
                .iter()
                .zip(&self.specs)
                .map(|(f, s)| {
                    s.parse_value(f).ok_or_else(|| SpaceError::BadSetLine {
                        line: i + 1,
                        reason: format!("`{f}` is not in the domain of `{}`", s.name),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            sets.push(ParameterSet(levels));
        }
        Ok(sets)
    }
}

/// Level indices aligned with [`ParameterSpace::specs`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterSet(pub Vec<u32>);

impl ParameterSet {
    pub fn levels(&self) -> &[u32] {
        &self.0
    }

    pub fn level(&self, param: usize) -> u32 {
        self.0[param]
    }

    /// Unit-interval coordinates of every value.
    pub fn unit_point(&self, space: &ParameterSpace) -> Vec<f64> {
        self.0
            .iter()
            .zip(space.specs())
            .map(|(&l, s)| s.unit_position(l))
            .collect()
    }
}

/// Injective byte encoding of a run of level indices: a big-endian length
/// followed by each level as a big-endian `u32`. Grid values are keyed by
/// their integer index, so no floating-point text ever reaches a key.
pub fn canonical_key(values: &[u32]) -> Vec<u8> {
    let mut key = Vec::with_capacity(4 + 4 * values.len());
    key.extend_from_slice(&(values.len() as u32).to_be_bytes());
    for v in values {
        key.extend_from_slice(&v.to_be_bytes());
    }
    key
}

/// Radical inverse of `index` in `base`: the base-`base` digits of `index`
/// mirrored around the radix point.
pub fn halton(index: u64, base: u32) -> f64 {
    assert!(base >= 2, "halton base must be at least 2");
    let base_f = f64::from(base);
    let mut i = index;
    let mut scale = 1.0 / base_f;
    let mut out = 0.0;
    while i > 0 {
        out += scale * (i % u64::from(base)) as f64;
        i /= u64::from(base);
        scale /= base_f;
    }
    out
}

/// The first `n` primes.
pub fn first_primes(n: usize) -> Vec<u32> {
    let mut primes: Vec<u32> = Vec::with_capacity(n);
    let mut candidate = 2u32;
    while primes.len() < n {
        if primes
            .iter()
            .take_while(|&&p| p * p <= candidate)
            .all(|&p| !candidate.is_multiple_of(p))
        {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SampleMethod {
    MonteCarlo {
        count: usize,
    },
    Lhs {
        count: usize,
    },
    /// Point `i` uses index `seed + i + 1` with the `j`-th prime as base of dimension `j`.
    Halton {
        count: usize,
    },
    Morris {
        trajectories: usize,
        #[serde(default = "default_morris_levels")]
        levels: u32,
    },
    /// Variance-based design with `count` base rows, `(k + 2) * count` sets.
    Saltelli {
        count: usize,
    },
}

fn default_morris_levels() -> u32 {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    #[serde(flatten)]
    pub method: SampleMethod,
    #[serde(default)]
    pub seed: u64,
}

impl SamplePlan {
    pub fn new(method: SampleMethod, seed: u64) -> Self {
        SamplePlan { method, seed }
    }

    pub fn validate(&self) -> Result<(), SpaceError> {
        if let SampleMethod::Saltelli { count } = self.method {
            if count < 2 {
                return Err(SpaceError::InvalidPlan(format!(
                    "saltelli needs at least 2 base rows, got {count}"
                )));
            }
        }
        if let SampleMethod::Morris {
            trajectories,
            levels,
        } = self.method
        {
            if trajectories == 0 {
                return Err(SpaceError::InvalidPlan(
                    "morris needs at least one trajectory".into(),
                ));
            }
            if levels < 2 || levels % 2 != 0 {
                return Err(SpaceError::InvalidPlan(format!(
                    "morris level count must be even and at least 2, got {levels}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws parameter sets according to `plan`. Unit-hypercube points are
/// mapped per dimension with [`ParameterSpec::level_from_unit`]. Morris
/// output is the concatenation of [`morris_trajectories`].
pub fn sample(space: &ParameterSpace, plan: &SamplePlan) -> Result<Vec<ParameterSet>, SpaceError> {
    plan.validate()?;
    let k = space.len();
    let to_set = |unit: &[f64]| {
        ParameterSet(
            unit.iter()
                .zip(space.specs())
                .map(|(&u, s)| s.level_from_unit(u))
                .collect(),
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let sets = match plan.method {
        SampleMethod::MonteCarlo { count } => (0..count)
            .map(|_| {
                let unit: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
                to_set(&unit)
            })
            .collect(),
        SampleMethod::Lhs { count } => {
            let strata: Vec<Vec<usize>> = (0..k)
                .map(|_| {
                    let mut perm: Vec<usize> = (0..count).collect();
                    perm.shuffle(&mut rng);
                    perm
                })
                .collect();
            (0..count)
                .map(|i| {
                    let unit: Vec<f64> = strata
                        .iter()
                        .map(|perm| (perm[i] as f64 + rng.gen::<f64>()) / count as f64)
                        .collect();
                    to_set(&unit)
                })
                .collect()
        }
        SampleMethod::Halton { count } => {
            let bases = first_primes(k);
            (0..count as u64)
                .map(|i| {
                    let index = plan.seed + i + 1;
                    let unit: Vec<f64> = bases.iter().map(|&b| halton(index, b)).collect();
                    to_set(&unit)
                })
                .collect()
        }
        SampleMethod::Morris {
            trajectories,
            levels,
        } => morris_trajectories(space, trajectories, levels, plan.seed)?
            .into_iter()
            .flatten()
            .collect(),
        SampleMethod::Saltelli { count } => {
            crate::sa::sobol_design(space, count, plan.seed)
                .map_err(|e| SpaceError::InvalidPlan(e.to_string()))?
                .sets
        }
    };
    Ok(sets)
}

/// Morris one-at-a-time trajectories on a `levels`-level unit grid with jump
/// `levels / (2 (levels - 1))`.
///
/// Each trajectory starts from a random base point and then moves every
/// varying parameter exactly once, in random order and random direction, so
/// consecutive sets differ in exactly one coordinate. Parameters with a
/// single-value domain cannot move and are held at that value; a trajectory
/// has `k' + 1` sets where `k'` counts the parameters with two or more values.
pub fn morris_trajectories(
    space: &ParameterSpace,
    trajectories: usize,
    levels: u32,
    seed: u64,
) -> Result<Vec<Vec<ParameterSet>>, SpaceError> {
    SamplePlan::new(
        SampleMethod::Morris {
            trajectories,
            levels,
        },
        seed,
    )
    .validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = levels / 2;
    let top = f64::from(levels - 1);
    let varying: Vec<usize> = (0..space.len())
        .filter(|&j| space.specs()[j].levels() > 1)
        .collect();

    let mut out = Vec::with_capacity(trajectories);
    for _ in 0..trajectories {
        // grid level of each coordinate at the start, and the level it jumps to
        let mut current = vec![0u32; space.len()];
        let mut target = vec![0u32; space.len()];
        for j in 0..space.len() {
            let base = rng.gen_range(0..half);
            if rng.gen::<bool>() {
                current[j] = base;
                target[j] = base + half;
            } else {
                current[j] = base + half;
                target[j] = base;
            }
        }
        let mut order = varying.clone();
        order.shuffle(&mut rng);

        let to_set = |grid: &[u32]| {
            ParameterSet(
                grid.iter()
                    .zip(space.specs())
                    .map(|(&g, s)| s.level_from_unit(f64::from(g) / top))
                    .collect(),
            )
        };
        let mut traj = Vec::with_capacity(order.len() + 1);
        traj.push(to_set(&current));
        for &j in &order {
            current[j] = target[j];
            traj.push(to_set(&current));
        }
        out.push(traj);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(name: &str, lo: f64, hi: f64, step: f64) -> ParameterSpec {
        ParameterSpec::grid(name, lo, hi, step, lo).unwrap()
    }

    #[test]
    fn table_grid_and_choices() {
        let space = ParameterSpace::parse(
            r#"[{"name": "B", "grid": [210, 240, 10], "default": 220},
                {"name": "FH", "choices": ["4-conn", "8-conn"], "default": "8-conn"}]"#,
        )
        .unwrap();
        let b = &space.specs()[0];
        assert_eq!(b.levels(), 4);
        let values: Vec<f64> = (0..4).map(|l| b.value(l).as_f64().unwrap()).collect();
        assert_eq!(values, vec![210.0, 220.0, 230.0, 240.0]);
        assert_eq!(b.default_level(), 1);
        assert_eq!(space.specs()[1].levels(), 2);
        assert_eq!(space.specs()[1].default_level(), 1);
    }

    #[test]
    fn degenerate_grid_has_one_point() {
        let s = ParameterSpec::grid("x", 5.0, 5.0, 1.0, 5.0).unwrap();
        assert_eq!(s.levels(), 1);
        assert_eq!(s.value(0), Value::Real(5.0));
    }

    #[test]
    fn parse_errors() {
        let cases = [
            r#"[{"name": "a", "grid": [0, 1, 0], "default": 0}]"#,
            r#"[{"name": "a", "grid": [2, 1, 1], "default": 1}]"#,
            r#"[{"name": "a", "choices": [], "default": "x"}]"#,
            r#"[{"name": "a", "choices": ["x", "x"], "default": "x"}]"#,
            r#"[{"name": "a", "grid": [0, 4, 2], "default": 1}]"#,
            r#"[{"name": "a", "grid": [0, 4, 2], "default": 6}]"#,
            r#"[{"name": "a", "choices": ["x"], "default": "y"}]"#,
            r#"[{"name": "a", "grid": [0, 1, 1], "default": 0}, {"name": "a", "grid": [0, 1, 1], "default": 0}]"#,
            r#"[{"name": "a", "default": 0}]"#,
            r#"{"nope": 1}"#,
        ];
        for text in cases {
            assert!(
                ParameterSpace::parse(text).is_err(),
                "{text} should be rejected"
            );
        }
        assert!(matches!(
            ParameterSpace::parse(
                r#"[{"name": "a", "grid": [0, 1, 1], "default": 0}, {"name": "a", "grid": [0, 1, 1], "default": 0}]"#
            ),
            Err(SpaceError::DuplicateName(_))
        ));
        assert!(matches!(
            ParameterSpace::parse(r#"[{"name": "a", "grid": [0, 4, 2], "default": 1}]"#),
            Err(SpaceError::DefaultOutsideDomain { .. })
        ));
    }

    #[test]
    fn cardinality_products() {
        let space =
            ParameterSpace::new(vec![grid("a", 0.0, 3.0, 1.0), grid("b", 0.0, 10.0, 1.0)]).unwrap();
        assert_eq!(space.cardinality(), 44);
        let single = ParameterSpace::new(vec![ParameterSpec::choices(
            "c",
            vec!["x".into(), "y".into()],
            "x",
        )
        .unwrap()])
        .unwrap();
        assert_eq!(single.cardinality(), 2);
        let huge = ParameterSpace::new(
            (0..40)
                .map(|i| grid(&format!("p{i}"), 0.0, 1000.0, 1.0))
                .collect(),
        )
        .unwrap();
        assert_eq!(huge.cardinality(), u64::MAX);
    }

    /// Independent oracle: write `index` in `base`, mirror the digit string,
    /// and read it back as an exact fraction.
    fn radical_inverse_oracle(index: u64, base: u64) -> f64 {
        let mut digits = Vec::new();
        let mut i = index;
        while i > 0 {
            digits.push(i % base);
            i /= base;
        }
        let (mut num, mut den) = (0u64, 1u64);
        for d in digits {
            num = num * base + d;
            den *= base;
        }
        num as f64 / den as f64
    }

    #[test]
    fn halton_values() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(3, 2), 0.75);
        // 5 = 12 in base 3 -> 0.21 in base 3 = 7/9
        assert_eq!(radical_inverse_oracle(5, 3), 7.0 / 9.0);
        assert!((halton(5, 3) - 7.0 / 9.0).abs() < 1e-15);
        for base in [2u32, 3, 5, 7, 11] {
            for i in 1..500u64 {
                assert!(
                    (halton(i, base) - radical_inverse_oracle(i, u64::from(base))).abs() < 1e-12
                );
            }
        }
    }

    #[test]
    fn halton_base_two_is_a_permutation_of_dyadics() {
        for m in 1..10u32 {
            let n = 1u64 << m;
            let mut got: Vec<u64> = (1..n).map(|i| (halton(i, 2) * n as f64) as u64).collect();
            got.sort_unstable();
            assert_eq!(got, (1..n).collect::<Vec<_>>());
            assert!((1..n).all(|i| (0.0..1.0).contains(&halton(i, 2))));
        }
    }

    #[test]
    fn snapping_rule() {
        let s = grid("x", 0.0, 1.0, 1.0);
        assert_eq!(s.level_from_unit(0.5), 0, "ties go toward lo");
        assert_eq!(s.level_from_unit(0.25), 0);
        assert_eq!(s.level_from_unit(0.75), 1);
        let t = grid("t", 2.5, 7.5, 0.5);
        for k in 0..t.levels() {
            let v = t.value(k).as_f64().unwrap();
            assert_eq!(t.snap(v), Some(k));
        }
        assert_eq!(t.snap(2.75), Some(0));
        assert_eq!(t.snap(2.76), Some(1));
        assert_eq!(t.snap(-100.0), Some(0));
        assert_eq!(t.snap(100.0), Some(10));
    }

    #[test]
    fn halton_sample_snaps_known_points() {
        let space = ParameterSpace::new(vec![grid("x", 0.0, 1.0, 1.0)]).unwrap();
        let plan = SamplePlan::new(SampleMethod::Halton { count: 2 }, 0);
        let sets = sample(&space, &plan).unwrap();
        // 0.5 is a tie and goes to lo; 0.25 is nearer lo
        assert_eq!(sets, vec![ParameterSet(vec![0]), ParameterSet(vec![0])]);
    }

    #[test]
    fn zero_count_is_empty() {
        let space = ParameterSpace::new(vec![grid("x", 0.0, 4.0, 1.0)]).unwrap();
        for method in [
            SampleMethod::MonteCarlo { count: 0 },
            SampleMethod::Lhs { count: 0 },
            SampleMethod::Halton { count: 0 },
        ] {
            assert!(sample(&space, &SamplePlan::new(method, 3))
                .unwrap()
                .is_empty());
        }
    }

    #[test]
    fn morris_shape() {
        let space = ParameterSpace::new(vec![
            grid("a", 0.0, 3.0, 1.0),
            grid("b", 0.0, 10.0, 1.0),
            ParameterSpec::choices("c", vec!["x".into(), "y".into(), "z".into()], "x").unwrap(),
        ])
        .unwrap();
        let plan = SamplePlan::new(
            SampleMethod::Morris {
                trajectories: 2,
                levels: 4,
            },
            11,
        );
        let sets = sample(&space, &plan).unwrap();
        assert_eq!(sets.len(), 8);
        for traj in sets.chunks(4) {
            let mut moved = vec![0; 3];
            for w in traj.windows(2) {
                let diff: Vec<usize> = (0..3).filter(|&j| w[0].level(j) != w[1].level(j)).collect();
                assert_eq!(diff.len(), 1);
                moved[diff[0]] += 1;
            }
            assert_eq!(moved, vec![1, 1, 1]);
        }
    }

    #[test]
    fn morris_rejects_odd_levels() {
        let space = ParameterSpace::new(vec![grid("a", 0.0, 3.0, 1.0)]).unwrap();
        let plan = SamplePlan::new(
            SampleMethod::Morris {
                trajectories: 2,
                levels: 3,
            },
            0,
        );
        assert!(sample(&space, &plan).is_err());
        let plan = SamplePlan::new(
            SampleMethod::Morris {
                trajectories: 0,
                levels: 4,
            },
            0,
        );
        assert!(sample(&space, &plan).is_err());
    }

    #[test]
    fn render_and_parse_sets() {
        let space = ParameterSpace::parse(
            r#"[{"name": "T1", "grid": [2.5, 7.5, 0.5], "default": 5},
                {"name": "FH", "choices": ["4-conn", "8-conn"], "default": "8-conn"}]"#,
        )
        .unwrap();
        let set = ParameterSet(vec![3, 0]);
        let line = space.render(&set);
        assert_eq!(line, "4,4-conn");
        let text = format!("{}\n{line}\n\n# comment\n", space.header());
        assert_eq!(space.parse_sets(&text).unwrap(), vec![set]);
        assert!(space.parse_sets("4.1,4-conn").is_err());
        assert!(space.parse_sets("4").is_err());
    }

    #[test]
    fn canonical_keys_distinguish_prefixes() {
        assert_eq!(canonical_key(&[1, 2]), canonical_key(&[1, 2]));
        assert_ne!(canonical_key(&[1, 2]), canonical_key(&[1, 3]));
        assert_ne!(canonical_key(&[1]), canonical_key(&[1, 0]));
        assert_ne!(canonical_key(&[]), canonical_key(&[0]));
    }
}
