//! Procedural datasets with fully known generative factors.

mod export;
mod factors;
mod render;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use export::{read_dataset, write_dataset, write_factor_csv, DatasetHeader};
pub use factors::{
    sample_index, ConditionalIndex, FactorSpec, FactorTable, JointFactorDistribution,
};
pub use render::{render_bar, render_bump, IMAGE_SIZE};

use crate::decomposition::EXACT_MAX_POINTS;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

/// Images, factors and the joint factor distribution. Index `n` is grid cell
/// `n` of the joint table.
#[derive(Clone, Debug)]
pub struct RenderedDataset {
    name: String,
    joint_tag: String,
    width: usize,
    height: usize,
    images: Tensor,
    table: FactorTable,
    joint: JointFactorDistribution,
}

impl RenderedDataset {
    /// Renders one image per grid cell. `render` receives the cell's factor
    /// values and must return `width * height` pixels in [0, 1].
    pub fn new(
        name: impl Into<String>,
        joint_tag: impl Into<String>,
        specs: Vec<FactorSpec>,
        joint: JointFactorDistribution,
        width: usize,
        height: usize,
        render: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let cards: Vec<usize> = specs.iter().map(FactorSpec::cardinality).collect();
        if cards != joint.cardinalities() {
            return Err(Error::Shape(format!(
                "factor cardinalities {cards:?} do not match joint table {:?}",
                joint.cardinalities()
            )));
        }
        let pixels = width * height;
        let levels: Vec<Vec<usize>> = (0..joint.len()).map(|c| joint.cell_levels(c)).collect();
        let table = FactorTable::new(specs, levels)?;
        let mut data = Vec::with_capacity(joint.len() * pixels);
        for n in 0..table.len() {
            let img = render(&table.values(n));
            if img.len() != pixels {
                return Err(Error::Shape(format!(
                    "renderer returned {} pixels, expected {pixels}",
                    img.len()
                )));
            }
            if img.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("rendered pixel outside [0, 1]"));
            }
            data.extend(img);
        }
        Ok(Self {
            name: name.into(),
            joint_tag: joint_tag.into(),
            width,
            height,
            images: Tensor::new(vec![table.len(), pixels], data)?,
            table,
            joint,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joint_tag(&self) -> &str {
        &self.joint_tag
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// N × pixels.
    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn image(&self, n: usize) -> &[f64] {
        self.images.row(n)
    }

    pub fn batch(&self, indices: &[usize]) -> Tensor {
        self.images.select_rows(indices)
    }

    pub fn factors(&self) -> &FactorTable {
        &self.table
    }

    pub fn joint(&self) -> &JointFactorDistribution {
        &self.joint
    }

    /// p(n) for every index.
    pub fn index_probs(&self) -> &[f64] {
        self.joint.probs()
    }

    pub fn sample_index(&self, rng: &mut RngStream) -> usize {
        self.joint.sample(rng)
    }

    /// p(n | v_k = level) over the indices with positive mass.
    pub fn conditional_by_level(&self, k: usize, level: usize) -> ConditionalIndex {
        let set = self.table.index_set(k, level);
        let (indices, mass): (Vec<usize>, Vec<f64>) = set
            .iter()
            .map(|&n| (n, self.joint.prob(n)))
            .filter(|&(_, p)| p > 0.0)
            .unzip();
        let total: f64 = mass.iter().sum();
        ConditionalIndex {
            indices,
            weights: mass.iter().map(|p| p / total).collect(),
        }
    }

    /// p(n | v_k = value); `value` must lie on the factor's grid.
    pub fn conditional_index_distribution(&self, k: usize, value: f64) -> Result<ConditionalIndex> {
        let spec = self
            .table
            .specs()
            .get(k)
            .ok_or_else(|| Error::invalid(format!("no factor {k}")))?;
        let level = spec.level_of(value).ok_or_else(|| {
            Error::invalid(format!("{value} is not on the grid of factor {}", spec.name()))
        })?;
        let cond = self.conditional_by_level(k, level);
        if cond.indices.is_empty() {
            return Err(Error::invalid(format!(
                "factor {} = {value} has zero probability",
                spec.name()
            )));
        }
        Ok(cond)
    }
}

/// Isotropic Gaussian bumps over a posX × posY × scale grid with a uniform
/// joint. Positions span pixels 1..15, scales 1..2.5.
pub fn make_bumps_dataset(pos_x: usize, pos_y: usize, scales: usize) -> Result<RenderedDataset> {
    if pos_x < 2 || pos_y < 2 || scales < 2 {
        return Err(Error::invalid(format!(
            "every factor needs at least two levels, got {pos_x}x{pos_y}x{scales}"
        )));
    }
    let total = pos_x
        .checked_mul(pos_y)
        .and_then(|v| v.checked_mul(scales))
        .unwrap_or(usize::MAX);
    if total > EXACT_MAX_POINTS {
        return Err(Error::invalid(format!(
            "grid of {total} points exceeds the exact-oracle limit of {EXACT_MAX_POINTS}"
        )));
    }
    let specs = vec![
        FactorSpec::linspace("posX", 1.0, 15.0, pos_x)?,
        FactorSpec::linspace("posY", 1.0, 15.0, pos_y)?,
        FactorSpec::linspace("scale", 1.0, 2.5, scales)?,
    ];
    let joint = JointFactorDistribution::uniform(vec![pos_x, pos_y, scales])?;
    RenderedDataset::new(
        "bumps",
        "uniform",
        specs,
        joint,
        IMAGE_SIZE,
        IMAGE_SIZE,
        |v| render_bump(v[0], v[1], v[2]),
    )
}

pub const POSE_LEVELS: usize = 16;

/// Joint distributions over (azimuth, elevation) for the pose dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoseConfig {
    /// Uniform and independent.
    A,
    /// Independent with non-uniform marginals.
    B,
    /// Uncorrelated but dependent.
    C,
    /// Correlated and dependent.
    D,
}

impl PoseConfig {
    pub const ALL: [PoseConfig; 4] = [PoseConfig::A, PoseConfig::B, PoseConfig::C, PoseConfig::D];

    /// Unnormalized weights, azimuth-major. B to D span exactly [1, 4].
    pub fn weights(self) -> Vec<f64> {
        let n = POSE_LEVELS;
        let last = (n - 1) as f64;
        let mut w = Vec::with_capacity(n * n);
        for a in 0..n {
            for e in 0..n {
                let (af, ef) = (a as f64, e as f64);
                w.push(match self {
                    PoseConfig::A => 1.0,
                    PoseConfig::B => (1.0 + af / last) * (2.0 - ef / last),
                    PoseConfig::C => {
                        // a band symmetric about the azimuth midpoint, flipped in the upper half
                        let inner = (af - last / 2.0).abs() < 4.0;
                        let upper = e >= n / 2;
                        if inner != upper {
                            4.0
                        } else {
                            1.0
                        }
                    }
                    PoseConfig::D => (-(af - ef).powi(2) / 18.0).exp(),
                });
            }
        }
        if self == PoseConfig::D {
            let max = w.iter().copied().fold(f64::MIN, f64::max);
            let min = w.iter().copied().fold(f64::MAX, f64::min);
            for v in &mut w {
                *v = 1.0 + 3.0 * (*v - min) / (max - min);
            }
        }
        w
    }

    pub fn joint(self) -> JointFactorDistribution {
        JointFactorDistribution::from_weights(vec![POSE_LEVELS, POSE_LEVELS], self.weights())
            .expect("pose tables are valid")
    }

    fn tag(self) -> &'static str {
        match self {
            PoseConfig::A => "A",
            PoseConfig::B => "B",
            PoseConfig::C => "C",
            PoseConfig::D => "D",
        }
    }
}

/// A bar rotated by azimuth (0 to 168.75 degrees) and shifted vertically by
/// elevation (rows 4 to 12).
pub fn make_pose_dataset(config: PoseConfig) -> Result<RenderedDataset> {
    let specs = vec![
        FactorSpec::linspace("azimuth", 0.0, 180.0 * 15.0 / 16.0, POSE_LEVELS)?,
        FactorSpec::linspace("elevation", 4.0, 12.0, POSE_LEVELS)?,
    ];
    RenderedDataset::new(
        "pose",
        config.tag(),
        specs,
        config.joint(),
        IMAGE_SIZE,
        IMAGE_SIZE,
        |v| render_bar(v[0], v[1]),
    )
}

/// Placeholder for dSprites ingestion, which this crate replaces with the
/// procedural bumps and pose datasets.
pub fn load_dsprites(path: impl AsRef<Path>) -> Result<RenderedDataset> {
    Err(Error::invalid(format!(
        "cannot load {}: dSprites files are not supported, use the bumps or pose datasets",
        path.as_ref().display()
    )))
}

/// Names a dataset: `bumps`, `bumps:XxYxS` or `pose-a` to `pose-d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DatasetSpec {
    Bumps { pos_x: usize, pos_y: usize, scales: usize },
    Pose(PoseConfig),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Bumps {
            pos_x: 8,
            pos_y: 8,
            scales: 4,
        }
    }
}

impl DatasetSpec {
    pub fn build(&self) -> Result<RenderedDataset> {
        match *self {
            DatasetSpec::Bumps {
                pos_x,
                pos_y,
                scales,
            } => make_bumps_dataset(pos_x, pos_y, scales),
            DatasetSpec::Pose(c) => make_pose_dataset(c),
        }
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Bumps {
                pos_x,
                pos_y,
                scales,
            } => write!(f, "bumps:{pos_x}x{pos_y}x{scales}"),
            DatasetSpec::Pose(c) => write!(f, "pose-{}", c.tag().to_lowercase()),
        }
    }
}

impl FromStr for DatasetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("unknown dataset {s:?} (expected bumps, bumps:XxYxS or pose-a..pose-d)"));
        if s == "bumps" {
            return Ok(Self::default());
        }
        if let Some(dims) = s.strip_prefix("bumps:") {
            let parts: Vec<usize> = dims
                .split('x')
                .map(|p| p.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            if let [pos_x, pos_y, scales] = parts[..] {
                return Ok(DatasetSpec::Bumps {
                    pos_x,
                    pos_y,
                    scales,
                });
            }
            return Err(bad());
        }
        let config = match s.to_ascii_lowercase().as_str() {
            "pose-a" => PoseConfig::A,
            "pose-b" => PoseConfig::B,
            "pose-c" => PoseConfig::C,
            "pose-d" => PoseConfig::D,
            _ => return Err(bad()),
        };
        Ok(DatasetSpec::Pose(config))
    }
}

impl TryFrom<String> for DatasetSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DatasetSpec> for String {
    fn from(d: DatasetSpec) -> String {
        d.to_string()
    }
}
