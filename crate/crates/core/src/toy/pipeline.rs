//! Task templates, parameter spaces and executors for the toy pipeline.

use sha2::{Digest, Sha256};

use super::image::{ImageGrid, LabelMask};
use super::ops::{self, Connectivity};
use super::ToyError;
use crate::param_space::{ParameterSet, ParameterSpace, ParameterSpec, SpaceError, Value};
use crate::scheduler::TaskExecutor;
use crate::workflow::{StageTemplate, TaskTemplate, WorkflowError};

const TASKS: [(&str, &[&str], f64); 11] = [
    ("normalize", &[], 4.0),
    ("background", &["B", "G", "R"], 2.0),
    ("rbc", &["T1", "T2"], 2.0),
    ("candidate", &["G1", "G2"], 3.0),
    ("size", &["minS", "maxS"], 1.0),
    ("fill_holes", &["FH"], 2.0),
    ("morph_recon", &["RC"], 4.0),
    ("prewatershed", &["minSPL"], 1.0),
    ("watershed", &["WConn"], 5.0),
    ("final", &["minSS", "maxSS"], 1.0),
    ("dice", &[], 0.5),
];

/// Bytes of an intermediate object for a `width` x `height` image.
pub fn object_bytes(width: usize, height: usize) -> u64 {
    7 * (width * height) as u64
}

/// The eleven-task chain for images of the given size.
pub fn toy_template(
    space: &ParameterSpace,
    width: usize,
    height: usize,
) -> Result<StageTemplate, WorkflowError> {
    let mut prev: Option<&str> = None;
    let tasks = TASKS
        .iter()
        .map(|&(id, reads, cost)| {
            let inputs: Vec<&str> = prev.into_iter().collect();
            prev = Some(id);
            let out = if id == "dice" {
                8
            } else {
                object_bytes(width, height)
            };
            TaskTemplate::new(id, reads, &inputs, cost, out)
        })
        .collect();
    StageTemplate::new(tasks, space)
}

fn conn_choices() -> Vec<String> {
    vec!["4-conn".into(), "8-conn".into()]
}

/// The full application space: B/G/R 210..240 step 10, T1/T2 2.5..7.5 step
/// 0.5, G1 5..80 step 5, G2 2..40 step 2, minS 2..40 step 2, maxS
/// 900..1500, minSPL 5..80 step 5, minSS 2..40 step 2, maxSS 900..1500, and
/// the three connectivity choices. `area_step` is the step of the two
/// 900..1500 ranges.
pub fn full_space(area_step: f64) -> Result<ParameterSpace, SpaceError> {
    let g = ParameterSpec::grid;
    let c = |name: &str| ParameterSpec::choices(name, conn_choices(), "8-conn");
    ParameterSpace::new(vec![
        g("B", 210.0, 240.0, 10.0, 220.0)?,
        g("G", 210.0, 240.0, 10.0, 220.0)?,
        g("R", 210.0, 240.0, 10.0, 220.0)?,
        g("T1", 2.5, 7.5, 0.5, 4.0)?,
        g("T2", 2.5, 7.5, 0.5, 4.0)?,
        g("G1", 5.0, 80.0, 5.0, 30.0)?,
        g("G2", 2.0, 40.0, 2.0, 10.0)?,
        g("minS", 2.0, 40.0, 2.0, 10.0)?,
        g("maxS", 900.0, 1500.0, area_step, 1200.0)?,
        g("minSPL", 5.0, 80.0, 5.0, 20.0)?,
        g("minSS", 2.0, 40.0, 2.0, 10.0)?,
        g("maxSS", 900.0, 1500.0, area_step, 1200.0)?,
        c("FH")?,
        c("RC")?,
        c("WConn")?,
    ])
}

/// A small sub-grid of [`full_space`] (27648 points) that keeps the
/// defaults and still varies every task.
pub fn reduced_space() -> Result<ParameterSpace, SpaceError> {
    let g = ParameterSpec::grid;
    let c = |name: &str| ParameterSpec::choices(name, conn_choices(), "8-conn");
    ParameterSpace::new(vec![
        g("B", 220.0, 230.0, 10.0, 220.0)?,
        g("G", 220.0, 230.0, 10.0, 220.0)?,
        g("R", 220.0, 230.0, 10.0, 220.0)?,
        g("T1", 3.5, 4.5, 0.5, 4.0)?,
        g("T2", 3.5, 4.5, 0.5, 4.0)?,
        g("G1", 20.0, 40.0, 10.0, 30.0)?,
        g("G2", 6.0, 10.0, 4.0, 10.0)?,
        g("minS", 6.0, 10.0, 4.0, 10.0)?,
        g("maxS", 1200.0, 1200.0, 50.0, 1200.0)?,
        g("minSPL", 10.0, 20.0, 10.0, 20.0)?,
        g("minSS", 6.0, 10.0, 4.0, 10.0)?,
        g("maxSS", 1200.0, 1200.0, 50.0, 1200.0)?,
        c("FH")?,
        c("RC")?,
        c("WConn")?,
    ])
}

/// Score carried in the first eight bytes of a terminal object.
pub fn decode_score(bytes: &[u8]) -> Option<f64> {
    Some(f64::from_le_bytes(bytes.get(..8)?.try_into().ok()?))
}

fn encode(img: &ImageGrid, mask: &LabelMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.data().len() + 4 * mask.labels().len());
    out.extend_from_slice(img.data());
    for &l in mask.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

/// Segmentation of the fixture image with bound parameter values.
pub struct ToyPipeline {
    space: ParameterSpace,
    image: ImageGrid,
    reference: LabelMask,
}

impl ToyPipeline {
    /// Binds the pipeline to `space` (which must name every toy parameter)
    /// and computes the reference mask at the space's defaults.
    pub fn new(space: ParameterSpace, image: ImageGrid) -> Result<Self, ToyError> {
        let image = image.to_rgb();
        for (_, reads, _) in TASKS {
            for name in reads {
                if space.index_of(name).is_none() {
                    return Err(ToyError::Parameter(format!("space has no `{name}`")));
                }
            }
        }
        let mut p = ToyPipeline {
            reference: LabelMask::empty(image.width(), image.height()),
            space,
            image,
        };
        p.reference = p.segment(&p.space.default_set())?;
        Ok(p)
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn image(&self) -> &ImageGrid {
        &self.image
    }

    pub fn reference(&self) -> &LabelMask {
        &self.reference
    }

    pub fn template(&self) -> Result<StageTemplate, WorkflowError> {
        toy_template(&self.space, self.image.width(), self.image.height())
    }

    fn values<'a>(&'a self, reads: &[&str], levels: &[u32]) -> Result<Vec<Value<'a>>, ToyError> {
        if reads.len() != levels.len() {
            return Err(ToyError::Parameter(format!(
                "{} levels for {} parameters",
                levels.len(),
                reads.len()
            )));
        }
        reads
            .iter()
            .zip(levels)
            .map(|(name, &level)| {
                let i = self.space.index_of(name).expect("checked in new");
                if level >= self.space.specs()[i].levels() {
                    return Err(ToyError::Parameter(format!(
                        "level {level} out of range for `{name}`"
                    )));
                }
                Ok(self.space.value(i, level))
            })
            .collect()
    }

    /// Applies one segmentation task to the current mask.
    fn step(&self, task: &str, v: &[Value<'_>], mask: &LabelMask) -> Result<LabelMask, ToyError> {
        let num = |k: usize| {
            v[k].as_f64()
                .ok_or_else(|| ToyError::Parameter(format!("{task} expects a number")))
        };
        let conn = |k: usize| match v[k] {
            Value::Choice(c) => Connectivity::parse(c)
                .ok_or_else(|| ToyError::Parameter(format!("bad connectivity `{c}`"))),
            Value::Real(_) => Err(ToyError::Parameter(format!(
                "{task} expects a connectivity"
            ))),
        };
        let img = &self.image;
        Ok(match task {
            "normalize" => LabelMask::empty(img.width(), img.height()),
            "background" => ops::background_detect(img, num(0)?, num(1)?, num(2)?),
            "rbc" => ops::rbc_discard(img, mask, num(0)?, num(1)?)?,
            "candidate" => ops::candidate_nuclei(img, mask, num(0)?, num(1)?)?,
            "size" | "final" => ops::area_filter(mask, num(0)?, num(1)?),
            "fill_holes" => ops::fill_holes(mask, conn(0)?),
            "morph_recon" => ops::morph_recon(img, mask, conn(0)?)?,
            "prewatershed" => ops::prewatershed_filter(mask, num(0)?),
            "watershed" => ops::watershed_split(mask, conn(0)?),
            other => return Err(ToyError::UnknownTask(other.to_string())),
        })
    }

    /// Runs the chain directly (no engine) up to the final filter.
    pub fn segment(&self, set: &ParameterSet) -> Result<LabelMask, ToyError> {
        let mut mask = LabelMask::empty(self.image.width(), self.image.height());
        for (id, reads, _) in &TASKS[..TASKS.len() - 1] {
            let levels: Vec<u32> = reads
                .iter()
                .map(|n| set.level(self.space.index_of(n).expect("checked in new")))
                .collect();
            let v = self.values(reads, &levels)?;
            mask = self.step(id, &v, &mask)?;
        }
        Ok(mask)
    }

    /// Dice of `set`'s segmentation against the reference.
    pub fn evaluate(&self, set: &ParameterSet) -> Result<f64, ToyError> {
        ops::dice(&self.segment(set)?, &self.reference)
    }

    fn run_task(
        &self,
        task: &TaskTemplate,
        levels: &[u32],
        inputs: &[&[u8]],
    ) -> Result<Vec<u8>, ToyError> {
        let (w, h) = (self.image.width(), self.image.height());
        let reads: Vec<&str> = task.reads.iter().map(String::as_str).collect();
        let v = self.values(&reads, levels)?;
        let mask = match (task.id.as_str(), inputs) {
            ("normalize", []) => LabelMask::empty(w, h),
            (_, [input]) => {
                let expected = object_bytes(w, h) as usize;
                if input.len() != expected {
                    return Err(ToyError::Payload {
                        task: task.id.clone(),
                        got: input.len(),
                        expected,
                    });
                }
                let labels = input[3 * w * h..]
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                LabelMask::from_labels(w, h, labels)?
            }
            _ => {
                return Err(ToyError::Parameter(format!(
                    "task `{}` got {} inputs",
                    task.id,
                    inputs.len()
                )))
            }
        };
        if task.id == "dice" {
            return Ok(ops::dice(&mask, &self.reference)?.to_le_bytes().to_vec());
        }
        let out = self.step(&task.id, &v, &mask)?;
        Ok(encode(&self.image, &out))
    }
}

impl TaskExecutor for ToyPipeline {
    fn run(
        &self,
        task: &TaskTemplate,
        levels: &[u32],
        inputs: &[&[u8]],
    ) -> Result<Vec<u8>, String> {
        self.run_task(task, levels, inputs)
            .map_err(|e| e.to_string())
    }
}

/// Stand-in executor for any template: each output starts with a score in
/// `[0, 1)` derived from a digest of the task id, levels and input scores,
/// padded with zeros to the declared size.
#[derive(Clone, Copy, Debug, Default)]
pub struct SyntheticExecutor;

impl TaskExecutor for SyntheticExecutor {
    fn run(
        &self,
        task: &TaskTemplate,
        levels: &[u32],
        inputs: &[&[u8]],
    ) -> Result<Vec<u8>, String> {
        let mut h = Sha256::new();
        h.update(task.id.as_bytes());
        for l in levels {
            h.update(l.to_le_bytes());
        }
        for i in inputs {
            h.update(&i[..i.len().min(8)]);
        }
        let digest = h.finalize();
        let bits = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let score = (bits >> 11) as f64 / (1u64 << 53) as f64;
        let mut out = vec![0u8; task.out_bytes as usize];
        let n = out.len().min(8);
        out[..n].copy_from_slice(&score.to_le_bytes()[..n]);
        Ok(out)
    }
}
