use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generation::{Generation, Individual};
use super::label::Label;
use super::law::{check_discarded, check_weight, ReproductionLaw};
use crate::error::{Error, Result};

/// Default per-replicate particle cap.
pub const DEFAULT_PARTICLE_CAP: usize = 10_000_000;

/// Whether past generations are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageMode {
    /// Only the latest generation is kept; ancestry is discarded.
    #[default]
    GenerationOnly,
    /// Every generation is kept so that lineages can be rebuilt.
    TreeRetention,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub mode: StorageMode,
    pub particle_cap: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { mode: StorageMode::GenerationOnly, particle_cap: DEFAULT_PARTICLE_CAP }
    }
}

impl SimOptions {
    pub fn retained() -> Self {
        Self { mode: StorageMode::TreeRetention, ..Self::default() }
    }
}

/// Per-step bookkeeping returned alongside the new generation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub max_discarded_mass: f64,
}

/// Samples the next generation: every particle reproduces independently,
/// children get weight `w_e · u_{ei}`, and zero-weight children are dropped.
pub fn advance_generation<L: ReproductionLaw, R: Rng + ?Sized>(
    g: &Generation<L::Type>,
    law: &L,
    rng: &mut R,
    particle_cap: usize,
) -> Result<Generation<L::Type>> {
    advance_with_stats(g, law, rng, particle_cap).map(|(g, _)| g)
}

pub(crate) fn advance_with_stats<L: ReproductionLaw, R: Rng + ?Sized>(
    g: &Generation<L::Type>,
    law: &L,
    rng: &mut R,
    particle_cap: usize,
) -> Result<(Generation<L::Type>, StepStats)> {
    let policy = law.truncation();
    let mut stats = StepStats::default();
    let mut particles = Vec::with_capacity(g.particles.len());
    let mut buf = Vec::new();
    for (pi, parent) in g.particles.iter().enumerate() {
        buf.clear();
        let discarded = law.sample_into(&parent.typ, rng, &mut buf);
        check_discarded(discarded, policy)?;
        stats.max_discarded_mass = stats.max_discarded_mass.max(discarded);
        for (rank, (u, y)) in buf.drain(..).enumerate() {
            check_weight(u)?;
            let weight = parent.weight * u;
            if weight == 0.0 {
                continue;
            }
            if particles.len() >= particle_cap {
                return Err(Error::PopulationCap { attempted: particles.len() + 1, cap: particle_cap });
            }
            particles.push(Individual { parent: pi as u32, rank: rank as u32, weight, typ: y });
        }
    }
    Ok((Generation { index: g.index + 1, particles }, stats))
}

/// A simulated replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    mode: StorageMode,
    generations: Vec<Generation<T>>,
    sizes: Vec<usize>,
    max_discarded_mass: f64,
}

impl<T: Clone> Trajectory<T> {
    pub fn mode(&self) -> StorageMode {
        self.mode
    }

    /// Index of the latest generation.
    pub fn horizon(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn last(&self) -> &Generation<T> {
        self.generations.last().expect("trajectory holds at least one generation")
    }

    /// Retained generations (only the latest one in generation-only mode).
    pub fn generations(&self) -> &[Generation<T>] {
        &self.generations
    }

    pub fn generation(&self, n: usize) -> Result<&Generation<T>> {
        match self.mode {
            StorageMode::TreeRetention => self
                .generations
                .get(n)
                .ok_or_else(|| Error::InvalidArgument(format!("generation {n} beyond horizon"))),
            StorageMode::GenerationOnly if n == self.horizon() => Ok(self.last()),
            StorageMode::GenerationOnly => Err(Error::AncestryDiscarded),
        }
    }

    /// Particle count of every generation, in order.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total_particles(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn max_discarded_mass(&self) -> f64 {
        self.max_discarded_mass
    }

    fn require_retention(&self) -> Result<()> {
        if self.mode == StorageMode::TreeRetention {
            Ok(())
        } else {
            Err(Error::AncestryDiscarded)
        }
    }

    /// Indices of the ancestors of particle `idx` of generation `n`, from the
    /// root (position 0) to the particle itself (position `n`).
    pub fn ancestry(&self, n: usize, idx: usize) -> Result<Vec<usize>> {
        self.require_retention()?;
        let mut chain = vec![0; n + 1];
        let mut cur = idx;
        for k in (0..=n).rev() {
            let gen = self.generation(k)?;
            if cur >= gen.len() {
                return Err(Error::InvalidArgument(format!("no particle {cur} in generation {k}")));
            }
            chain[k] = cur;
            cur = gen.particles[cur].parent as usize;
        }
        Ok(chain)
    }

    /// Full Ulam-Harris word of particle `idx` of generation `n`.
    pub fn label(&self, n: usize, idx: usize) -> Result<Label> {
        let chain = self.ancestry(n, idx)?;
        let mut label = Label::root(chain[0] as u32);
        for (k, &i) in chain.iter().enumerate().skip(1) {
            label.path.push(self.generations[k].particles[i].rank);
        }
        Ok(label)
    }

    /// Locates the particle carrying `label`: returns (generation, index).
    pub fn find(&self, label: &Label) -> Result<(usize, usize)> {
        self.require_retention()?;
        let unknown = || Error::UnknownLabel(label.to_string());
        let n = label.generation();
        if n > self.horizon() || label.root as usize >= self.generations[0].len() {
            return Err(unknown());
        }
        let mut cur = label.root as usize;
        for (k, &rank) in label.path.iter().enumerate() {
            let gen = &self.generations[k + 1];
            // children are stored grouped by parent, in rank order
            let pos = gen
                .particles
                .binary_search_by(|p| (p.parent as usize, p.rank).cmp(&(cur, rank)))
                .map_err(|_| unknown())?;
            cur = pos;
        }
        Ok((n, cur))
    }

    /// `M_e`: uniform measure with mass `1/|e|` on the types of generations
    /// `1..=|e|` along the lineage of `e`.
    pub fn lineage_measure(&self, label: &Label) -> Result<Vec<(T, f64)>> {
        let (n, idx) = self.find(label)?;
        if n == 0 {
            return Err(Error::InvalidArgument("lineage measure of a root is undefined".into()));
        }
        let chain = self.ancestry(n, idx)?;
        let mass = 1.0 / n as f64;
        Ok(chain
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &i)| (self.generations[k].particles[i].typ.clone(), mass))
            .collect())
    }
}

/// Free-function form of [`Trajectory::lineage_measure`].
pub fn lineage_measure<T: Clone>(trajectory: &Trajectory<T>, label: &Label) -> Result<Vec<(T, f64)>> {
    trajectory.lineage_measure(label)
}

/// Runs `generations` steps from `g0`, calling `observe` on every generation
/// (including `g0`) as soon as it exists.
pub fn simulate<L, R, F>(
    law: &L,
    g0: Generation<L::Type>,
    generations: usize,
    rng: &mut R,
    options: SimOptions,
    mut observe: F,
) -> Result<Trajectory<L::Type>>
where
    L: ReproductionLaw,
    R: Rng + ?Sized,
    F: FnMut(&Generation<L::Type>),
{
    observe(&g0);
    let mut sizes = vec![g0.len()];
    let mut max_discarded_mass: f64 = 0.0;
    let mut history = vec![g0];
    for _ in 0..generations {
        let (next, stats) = advance_with_stats(history.last().unwrap(), law, rng, options.particle_cap)?;
        observe(&next);
        sizes.push(next.len());
        max_discarded_mass = max_discarded_mass.max(stats.max_discarded_mass);
        match options.mode {
            StorageMode::TreeRetention => history.push(next),
            StorageMode::GenerationOnly => history[0] = next,
        }
    }
    Ok(Trajectory { mode: options.mode, generations: history, sizes, max_discarded_mass })
}
