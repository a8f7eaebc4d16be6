//! Experiment configuration (TOML, schema version 1).
//!
//! ```toml
//! schema_version = 1
//! pipeline = "verify-theorem1"   # optional; the CLI subcommand overrides it
//! seed = 42
//! replicates = 1000
//! p = 2.0
//!
//! [horizons]
//! n_max = 10      # largest n (or m) examined
//! proxy = 20      # proxy horizon N standing in for the limit
//!
//! [grid]
//! exponent = 10   # dyadic cells 2^exponent on [0,1] for interval-valued types
//!
//! [caps]
//! particles = 10000000
//! memory_mb = 4096        # optional; tightens the particle cap
//! kernel_dim = 16
//!
//! [model]
//! kind = "cascade"
//! spec = { kind = "uniform-split" }
//! ```
//!
//! Model kinds: `finite` (`outcomes`, `start`, `f`), `markov-chain`
//! (`transition`, `start`, `f`), `cascade` (`spec`), `kernel-products`
//! (`outcomes` of `{ prob, kernels }` with row-major matrices, `x`, `f`) and
//! `ifs` (`maps` of `{ a, b }`, `probs`, `weights`, `start`).

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{Outcome, DEFAULT_PARTICLE_CAP};
use crate::zoo::{AffineMap, CascadeSpec, KernelOutcome, DEFAULT_GRID_EXPONENT};

pub const SCHEMA_VERSION: u32 = 1;

/// Which analysis to run on the configured model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Simulate,
    Spectral,
    Certify,
    VerifyTheorem1,
    Llogl,
    Cascade,
    KernelProducts,
    Ifs,
    Lineage,
}

impl Pipeline {
    pub const ALL: [Pipeline; 9] = [
        Pipeline::Simulate,
        Pipeline::Spectral,
        Pipeline::Certify,
        Pipeline::VerifyTheorem1,
        Pipeline::Llogl,
        Pipeline::Cascade,
        Pipeline::KernelProducts,
        Pipeline::Ifs,
        Pipeline::Lineage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Simulate => "simulate",
            Pipeline::Spectral => "spectral",
            Pipeline::Certify => "certify",
            Pipeline::VerifyTheorem1 => "verify-theorem1",
            Pipeline::Llogl => "llogl",
            Pipeline::Cascade => "cascade",
            Pipeline::KernelProducts => "kernel-products",
            Pipeline::Ifs => "ifs",
            Pipeline::Lineage => "lineage",
        }
    }
}

/// One atom of a random-kernel distribution, matrices given row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixOutcome {
    pub prob: f64,
    pub kernels: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    /// Finitely many types; `outcomes[x]` is the offspring distribution of type `x`.
    Finite { outcomes: Vec<Vec<Outcome<usize>>>, start: usize, f: Vec<f64> },
    /// Single child of weight 1 moving by `transition`.
    MarkovChain { transition: Vec<Vec<f64>>, start: usize, f: Vec<f64> },
    Cascade { spec: CascadeSpec },
    KernelProducts { outcomes: Vec<MatrixOutcome>, x: usize, f: Vec<f64> },
    /// Observable is the identity on `[0,1]`.
    Ifs { maps: Vec<AffineMap>, probs: Vec<f64>, weights: CascadeSpec, start: f64 },
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Finite { .. } => "finite",
            ModelConfig::MarkovChain { .. } => "markov-chain",
            ModelConfig::Cascade { .. } => "cascade",
            ModelConfig::KernelProducts { .. } => "kernel-products",
            ModelConfig::Ifs { .. } => "ifs",
        }
    }

    /// Kernel outcomes as matrices; `None` for other model kinds.
    pub fn kernel_outcomes(&self) -> Option<Result<(usize, Vec<KernelOutcome>)>> {
        let ModelConfig::KernelProducts { outcomes, .. } = self else {
            return None;
        };
        Some((|| {
            let dim = outcomes
                .first()
                .and_then(|o| o.kernels.first())
                .map(|k| k.len())
                .ok_or_else(|| Error::Config("kernel-products needs at least one kernel".into()))?;
            let converted = outcomes
                .iter()
                .map(|o| {
                    let kernels = o
                        .kernels
                        .iter()
                        .map(|rows| {
                            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                                return Err(Error::Config(format!("kernels must be {dim}×{dim}")));
                            }
                            Ok(DMatrix::from_row_iterator(dim, dim, rows.iter().flatten().copied()))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(KernelOutcome { prob: o.prob, kernels })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((dim, converted))
        })())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizons {
    pub n_max: usize,
    pub proxy: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub exponent: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { exponent: DEFAULT_GRID_EXPONENT }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Caps {
    pub particles: usize,
    pub memory_mb: Option<u64>,
    pub kernel_dim: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Self { particles: DEFAULT_PARTICLE_CAP, memory_mb: None, kernel_dim: 16 }
    }
}

impl Caps {
    /// Particle cap after translating the memory cap with `bytes_per_particle`.
    pub fn particle_cap(&self, bytes_per_particle: usize) -> usize {
        match self.memory_mb {
            Some(mb) => {
                let by_memory = (mb as usize).saturating_mul(1 << 20) / bytes_per_particle.max(1);
                self.particles.min(by_memory)
            }
            None => self.particles,
        }
    }
}

/// Optional overrides of the certification inputs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    /// Weight `ψ_1` on the grid (default ≡ 1).
    pub psi1: Option<Vec<f64>>,
    /// Dispersion scale `ψ_2` on the grid (default ≡ 1).
    pub psi2: Option<Vec<f64>>,
    /// Progeny draws per grid point for `c_3` (default: `replicates`).
    pub budget: Option<usize>,
    /// `(m, n)` checkpoints (default `2, 4, …` up to `n_max`).
    pub checkpoints: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub pipeline: Option<Pipeline>,
    pub model: ModelConfig,
    pub horizons: Horizons,
    pub replicates: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_p() -> f64 {
    2.0
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.horizons.n_max > self.horizons.proxy {
            return bad(format!(
                "n_max = {} exceeds the proxy horizon {}",
                self.horizons.n_max, self.horizons.proxy
            ));
        }
        if !(self.p > 1.0 && self.p <= 2.0) {
            return bad(format!("p must lie in (1,2], got {}", self.p));
        }
        if self.caps.particles == 0 {
            return bad("particle cap must be positive".into());
        }
        if self.grid.exponent > 16 {
            return bad(format!("grid exponent {} is too fine (max 16)", self.grid.exponent));
        }
        match &self.model {
            ModelConfig::Finite { outcomes, start, f } => {
                if *start >= outcomes.len() || f.len() != outcomes.len() {
                    return bad("finite model: start and f must match the number of types".into());
                }
            }
            ModelConfig::MarkovChain { transition, start, f } => {
                if *start >= transition.len() || f.len() != transition.len() {
                    return bad("markov-chain model: start and f must match the number of states".into());
                }
            }
            ModelConfig::KernelProducts { x, f, .. } => {
                let (dim, _) = self.model.kernel_outcomes().expect("kernel model")?;
                if dim > self.caps.kernel_dim {
                    return bad(format!("kernel dimension {dim} exceeds the cap {}", self.caps.kernel_dim));
                }
                if *x >= dim || f.len() != dim {
                    return bad("kernel-products model: x and f must match the kernel dimension".into());
                }
            }
            ModelConfig::Ifs { start, .. } => {
                if !(0.0..=1.0).contains(start) {
                    return bad(format!("ifs start {start} outside [0,1]"));
                }
            }
            ModelConfig::Cascade { .. } => {}
        }
        Ok(())
    }

    /// The pipeline to run: the explicit choice, else the model's natural one.
    pub fn resolved_pipeline(&self) -> Pipeline {
        self.pipeline.unwrap_or(match self.model {
            ModelConfig::Cascade { .. } => Pipeline::Cascade,
            ModelConfig::KernelProducts { .. } => Pipeline::KernelProducts,
            ModelConfig::Ifs { .. } => Pipeline::Ifs,
            ModelConfig::MarkovChain { .. } => Pipeline::Lineage,
            ModelConfig::Finite { .. } => Pipeline::Simulate,
        })
    }

    /// `(m, n)` checkpoints for bound evaluation.
    pub fn checkpoints(&self) -> Vec<usize> {
        match &self.certify.checkpoints {
            Some(c) => c.clone(),
            None => (1..=self.horizons.n_max / 2).map(|k| 2 * k).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASCADE: &str = r#"
        seed = 7
        replicates = 100
        [horizons]
        n_max = 10
        proxy = 20
        [model]
        kind = "cascade"
        spec = { kind = "uniform-split" }
    "#;

    #[test]
    fn parses_minimal_cascade() {
        let cfg = ExperimentConfig::from_toml_str(CASCADE).unwrap();
        assert_eq!(cfg.model, ModelConfig::Cascade { spec: CascadeSpec::UniformSplit });
        assert_eq!(cfg.p, 2.0);
        assert_eq!(cfg.resolved_pipeline(), Pipeline::Cascade);
        assert_eq!(cfg.checkpoints(), vec![2, 4, 6, 8, 10]);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_invalid_settings() {
        for (from, to) in [
            ("replicates = 100", "replicates = 0"),
            ("n_max = 10", "n_max = 30"),
            ("seed = 7", "seed = 7\np = 2.5"),
            ("seed = 7", "seed = 7\nbogus = 1"),
        ] {
            let err = ExperimentConfig::from_toml_str(&CASCADE.replace(from, to)).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{to}: {err}");
        }
    }

    #[test]
    fn parses_finite_and_kernel_models() {
        let text = r#"
            replicates = 10
            [horizons]
            n_max = 4
            proxy = 4
            [model]
            kind = "finite"
            start = 0
            f = [1.0, 0.0]
            outcomes = [
                [{ prob = 1.0, children = [[1.0, 1]] }],
                [{ prob = 1.0, children = [[1.0, 0]] }],
            ]
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert!(matches!(cfg.model, ModelConfig::Finite { .. }));
        let kp = r#"
            replicates = 10
            [horizons]
            n_max = 4
            proxy = 4
            [model]
            kind = "kernel-products"
            x = 0
            f = [1.0, 2.0]
            outcomes = [{ prob = 1.0, kernels = [[[0.5, 0.0], [0.1, 0.2]]] }]
        "#;
        let cfg = ExperimentConfig::from_toml_str(kp).unwrap();
        let (dim, outs) = cfg.model.kernel_outcomes().unwrap().unwrap();
        assert_eq!(dim, 2);
        assert_eq!(outs[0].kernels[0][(1, 0)], 0.1);
    }

    #[test]
    fn memory_cap_tightens_particle_cap() {
        let caps = Caps { particles: 1_000_000, memory_mb: Some(1), kernel_dim: 4 };
        assert_eq!(caps.particle_cap(64), (1 << 20) / 64);
        assert_eq!(Caps::default().particle_cap(64), DEFAULT_PARTICLE_CAP);
    }
}
