use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// One generative factor and its quantized value grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSpec {
    name: String,
    values: Vec<f64>,
}

impl FactorSpec {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "factor {name} needs at least two values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "factor {name} grid must be finite and strictly increasing"
            )));
        }
        Ok(Self { name, values })
    }

    /// `n` evenly spaced values from `lo` to `hi` inclusive.
    pub fn linspace(name: impl Into<String>, lo: f64, hi: f64, n: usize) -> Result<Self> {
        let values = if n < 2 {
            vec![lo; n]
        } else {
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Self::new(name, values)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, level: usize) -> f64 {
        self.values[level]
    }

    /// Grid level holding `v`, if `v` is on the grid.
    pub fn level_of(&self, v: f64) -> Option<usize> {
        let tol = 1e-9 * (1.0 + v.abs());
        self.values.iter().position(|&g| (g - v).abs() <= tol)
    }
}

/// Probability table over the full factor grid, row-major with the last
/// factor varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct JointFactorDistribution {
    cardinalities: Vec<usize>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl JointFactorDistribution {
    /// Normalizes non-negative `weights` into a probability table.
    pub fn from_weights(cardinalities: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if cardinalities.is_empty() || cardinalities.contains(&0) {
            return Err(Error::invalid("every factor needs a non-zero cardinality"));
        }
        let cells: usize = cardinalities.iter().product();
        if weights.len() != cells {
            return Err(Error::Shape(format!(
                "joint table has {} entries, grid has {cells} cells",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("joint weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("joint weights sum to zero"));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // pin the top of the CDF so a draw just below 1 never falls off the end
        if let Some(last) = probs.iter().rposition(|&p| p > 0.0) {
            for c in &mut cdf[last..] {
                *c = 1.0;
            }
        }
        Ok(Self {
            cardinalities,
            probs,
            cdf,
        })
    }

    pub fn uniform(cardinalities: Vec<usize>) -> Result<Self> {
        let cells = cardinalities.iter().product();
        Self::from_weights(cardinalities, vec![1.0; cells])
    }

    pub fn point_mass(cardinalities: Vec<usize>, cell: usize) -> Result<Self> {
        let cells: usize = cardinalities.iter().product();
        if cell >= cells {
            return Err(Error::invalid(format!("cell {cell} outside a grid of {cells}")));
        }
        let mut w = vec![0.0; cells];
        w[cell] = 1.0;
        Self::from_weights(cardinalities, w)
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn num_factors(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, cell: usize) -> f64 {
        self.probs[cell]
    }

    pub fn has_full_support(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    pub fn is_uniform(&self) -> bool {
        let first = self.probs[0];
        self.probs.iter().all(|&p| p == first)
    }

    /// Largest over smallest cell probability (infinite without full support).
    pub fn max_min_ratio(&self) -> f64 {
        let max = self.probs.iter().copied().fold(f64::MIN, f64::max);
        let min = self.probs.iter().copied().fold(f64::MAX, f64::min);
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn cell_levels(&self, mut cell: usize) -> Vec<usize> {
        let mut levels = vec![0; self.cardinalities.len()];
        for (k, &c) in self.cardinalities.iter().enumerate().rev() {
            levels[k] = cell % c;
            cell /= c;
        }
        levels
    }

    pub fn cell_index(&self, levels: &[usize]) -> usize {
        levels
            .iter()
            .zip(&self.cardinalities)
            .fold(0, |acc, (&l, &c)| acc * c + l)
    }

    pub fn marginal(&self, k: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.cardinalities[k]];
        for (cell, &p) in self.probs.iter().enumerate() {
            m[self.cell_levels(cell)[k]] += p;
        }
        m
    }

    /// Draws a cell by inverting the CDF.
    pub fn sample(&self, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        self.cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1)
    }
}

/// Draws a data index with probability equal to its cell mass.
pub fn sample_index(joint: &JointFactorDistribution, rng: &mut RngStream) -> usize {
    joint.sample(rng)
}

/// Factor assignment of every data index, plus the inverse index sets.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorTable {
    specs: Vec<FactorSpec>,
    levels: Vec<Vec<usize>>,
    index_sets: Vec<Vec<Vec<usize>>>,
}

impl FactorTable {
    pub fn new(specs: Vec<FactorSpec>, levels: Vec<Vec<usize>>) -> Result<Self> {
        let mut index_sets: Vec<Vec<Vec<usize>>> =
            specs.iter().map(|s| vec![Vec::new(); s.cardinality()]).collect();
        for (n, row) in levels.iter().enumerate() {
            if row.len() != specs.len() {
                return Err(Error::Shape(format!(
                    "index {n} has {} factor levels, expected {}",
                    row.len(),
                    specs.len()
                )));
            }
            for (k, &l) in row.iter().enumerate() {
                if l >= specs[k].cardinality() {
                    return Err(Error::invalid(format!(
                        "index {n}: level {l} out of range for factor {}",
                        specs[k].name()
                    )));
                }
                index_sets[k][l].push(n);
            }
        }
        Ok(Self {
            specs,
            levels,
            index_sets,
        })
    }

    pub fn specs(&self) -> &[FactorSpec] {
        &self.specs
    }

    pub fn num_factors(&self) -> usize {
        self.specs.len()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self, n: usize) -> &[usize] {
        &self.levels[n]
    }

    pub fn level(&self, n: usize, k: usize) -> usize {
        self.levels[n][k]
    }

    pub fn values(&self, n: usize) -> Vec<f64> {
        self.levels[n]
            .iter()
            .zip(&self.specs)
            .map(|(&l, s)| s.value(l))
            .collect()
    }

    /// X_{v_k}: the indices whose factor `k` sits at `level`.
    pub fn index_set(&self, k: usize, level: usize) -> &[usize] {
        &self.index_sets[k][level]
    }
}

/// p(n | v_k) restricted to its support.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalIndex {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}
