//! File format for the linear pyramid classifier used as the global baseline
//! and as the context score.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use epm_core::eval::{linear_score, spm_dim};
use epm_core::{spm_feature, FeatureTensor};

const MAGIC: &str = "EPMLIN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// Lattice points per axis of the tensors the weights apply to.
    pub grid: usize,
    pub levels: Vec<usize>,
    pub d: usize,
    pub weights: Vec<f64>,
}

impl LinearModel {
    pub fn score(&self, tensor: &FeatureTensor) -> Result<f64> {
        ensure!(
            tensor.d() == self.d && tensor.grid().s() == self.grid && tensor.grid().t() == self.grid,
            "tensor does not match the classifier (d {}, grid {})",
            self.d,
            self.grid
        );
        Ok(linear_score(&self.weights, &spm_feature(tensor, &self.levels)?))
    }

    pub fn to_text(&self) -> String {
        let levels: Vec<String> = self.levels.iter().map(usize::to_string).collect();
        let weights: Vec<String> = self.weights.iter().map(|w| format!("{w:.16e}")).collect();
        format!(
            "{MAGIC} {VERSION} {} {} {} {}\n{}\n",
            self.grid,
            levels.join(","),
            self.d,
            self.weights.len(),
            weights.join(" ")
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        if header.len() != 6 || header[0] != MAGIC {
            bail!("not a linear classifier file");
        }
        ensure!(header[1] == VERSION.to_string(), "unsupported classifier version {}", header[1]);
        let grid: usize = header[2].parse().context("bad grid")?;
        let levels = header[3].split(',').map(str::parse).collect::<Result<Vec<usize>, _>>().context("bad levels")?;
        let d: usize = header[4].parse().context("bad word count")?;
        let dim: usize = header[5].parse().context("bad dimension")?;
        ensure!(dim == spm_dim(&levels, d), "dimension {dim} does not match levels and word count");
        let weights = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<f64>, _>>()
            .context("bad weight")?;
        ensure!(weights.len() == dim, "expected {dim} weights, found {}", weights.len());
        Ok(Self { grid, levels, d, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
