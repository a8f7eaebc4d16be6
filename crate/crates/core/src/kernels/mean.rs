use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{GridPoint, TypeGrid};
use crate::error::{Error, Result};
use crate::population::{MomentMeasure, ReproductionLaw};
use crate::stats::CompensatedSum;

/// Matrix of `δ_{x_i} Q^{(order)}({x_j})` on a grid; `order = 1` is the mean kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanKernel {
    matrix: DMatrix<f64>,
    grid: TypeGrid,
    order: f64,
    /// Per-entry standard errors when the kernel was estimated by Monte Carlo.
    stderr: Option<DMatrix<f64>>,
}

impl MeanKernel {
    pub fn from_matrix(matrix: DMatrix<f64>, grid: TypeGrid, order: f64) -> Result<Self> {
        if matrix.nrows() != grid.len() || matrix.ncols() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: matrix.nrows().max(matrix.ncols()) });
        }
        for i in 0..matrix.nrows() {
            let mut row = 0.0;
            for j in 0..matrix.ncols() {
                let v = matrix[(i, j)];
                if v < 0.0 {
                    return Err(Error::NegativeEntry { row: i, col: j });
                }
                row += v;
            }
            if !row.is_finite() {
                return Err(Error::NonFiniteRow { row: i });
            }
        }
        Ok(Self { matrix, grid, order, stderr: None })
    }

    /// Square matrix on the native finite grid of matching size.
    pub fn from_rows(rows: &[Vec<f64>], order: f64) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("kernel rows must form a square matrix".into()));
        }
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::from_matrix(m, TypeGrid::finite(n), order)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn grid(&self) -> &TypeGrid {
        &self.grid
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn stderr(&self) -> Option<&DMatrix<f64>> {
        self.stderr.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `Q f`.
    pub fn apply(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.matrix * f
    }

    /// `μ Q` for a row measure `μ`.
    pub fn apply_left(&self, mu: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(mu)
    }

    /// `δ_x Q(X)` for every grid point.
    pub fn row_masses(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.matrix.row_iter().map(|r| r.iter().copied().collect::<CompensatedSum>().value()),
        )
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|v| *v == 0.0)
    }
}

/// Builds `Q` (order 1) or `Q^{(p)}` from the law's exact moment measures:
/// the mass of each atom goes to the grid cell containing it.
pub fn build_mean_kernel<L>(law: &L, grid: &TypeGrid, order: f64) -> Result<MeanKernel>
where
    L: MomentMeasure,
    L::Type: GridPoint,
{
    let n = grid.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let x = L::Type::from_cell(grid, i);
        for (y, mass) in law.moment_atoms(&x, order) {
            let j = y.cell(grid).ok_or_else(|| Error::OffGrid(format!("{y:?}")))?;
            m[(i, j)] += mass;
        }
    }
    MeanKernel::from_matrix(m, *grid, order)
}

/// Monte Carlo fallback: averages `Σ u_i^order 1{Y_i ∈ cell j}` over `budget`
/// draws per grid point and records the per-entry standard error.
pub fn estimate_mean_kernel<L, R>(
    law: &L,
    grid: &TypeGrid,
    order: f64,
    budget: usize,
    rng: &mut R,
) -> Result<MeanKernel>
where
    L: ReproductionLaw,
    L::Type: GridPoint,
    R: Rng + ?Sized,
{
    if budget < 2 {
        return Err(Error::InvalidArgument("Monte Carlo kernel needs at least two draws".into()));
    }
    let n = grid.len();
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut sum_sq = DMatrix::<f64>::zeros(n, n);
    let mut buf = Vec::new();
    let mut row = vec![0.0; n];
    for i in 0..n {
        let x = L::Type::from_cell(grid, i);
        for _ in 0..budget {
            buf.clear();
            law.sample_into(&x, rng, &mut buf);
            row.iter_mut().for_each(|v| *v = 0.0);
            for (u, y) in buf.drain(..) {
                crate::population::check_weight(u)?;
                let j = y.cell(grid).ok_or_else(|| Error::OffGrid(format!("{y:?}")))?;
                row[j] += u.powf(order);
            }
            for (j, v) in row.iter().enumerate() {
                sum[(i, j)] += v;
                sum_sq[(i, j)] += v * v;
            }
        }
    }
    let b = budget as f64;
    let mean = &sum / b;
    let stderr = DMatrix::from_fn(n, n, |i, j| {
        let var = ((sum_sq[(i, j)] - b * mean[(i, j)] * mean[(i, j)]) / (b - 1.0)).max(0.0);
        (var / b).sqrt()
    });
    let mut k = MeanKernel::from_matrix(mean, *grid, order)?;
    k.stderr = Some(stderr);
    Ok(k)
}

/// `e^{log_scale} · values`, kept normalised to avoid floating overflow.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledVector {
    pub values: DVector<f64>,
    pub log_scale: f64,
}

impl ScaledVector {
    pub fn to_vector(&self) -> DVector<f64> {
        &self.values * self.log_scale.exp()
    }

    /// `log ‖·‖_∞`, or `-∞` for the zero vector.
    pub fn log_sup_norm(&self) -> f64 {
        self.values.amax().ln() + self.log_scale
    }
}

const RESCALE_HI: f64 = 1e150;
const RESCALE_LO: f64 = 1e-150;

fn renormalise(v: &mut DVector<f64>, log_scale: &mut f64) {
    let m = v.amax();
    if m > RESCALE_HI || (m > 0.0 && m < RESCALE_LO) {
        v.unscale_mut(m);
        *log_scale += m.ln();
    }
}

/// `Q^n f` by repeated products, with an internal log-scale factor.
pub fn kernel_power_apply(k: &MeanKernel, f: &DVector<f64>, n: usize) -> ScaledVector {
    let mut v = f.clone();
    let mut log_scale = 0.0;
    for _ in 0..n {
        v = k.apply(&v);
        renormalise(&mut v, &mut log_scale);
    }
    ScaledVector { values: v, log_scale }
}

/// Iterates `f, Qf, Q²f, …, Q^n f`, handing every iterate (scaled) to `visit`.
pub(crate) fn for_each_power<F: FnMut(usize, &ScaledVector)>(k: &MeanKernel, f: &DVector<f64>, n: usize, mut visit: F) {
    let mut sv = ScaledVector { values: f.clone(), log_scale: 0.0 };
    visit(0, &sv);
    for i in 1..=n {
        sv.values = k.apply(&sv.values);
        renormalise(&mut sv.values, &mut sv.log_scale);
        visit(i, &sv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::FiniteLaw;
    use crate::rng::derive_stream;

    #[test]
    fn identity_law_gives_identity_matrix() {
        let law = FiniteLaw::identity(2).unwrap();
        let k = build_mean_kernel(&law, &TypeGrid::finite(2), 1.0).unwrap();
        assert_eq!(k.matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn flip_law_first_and_second_moments() {
        // enumerated offspring list: two children of weight 1/2 of the other type
        let law = FiniteLaw::deterministic(vec![vec![(0.5, 1), (0.5, 1)], vec![(0.5, 0), (0.5, 0)]]).unwrap();
        let q = build_mean_kernel(&law, &TypeGrid::finite(2), 1.0).unwrap();
        assert_eq!(q.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let q2 = build_mean_kernel(&law, &TypeGrid::finite(2), 2.0).unwrap();
        assert_eq!(q2.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
    }

    #[test]
    fn power_apply_zero_steps_is_identity() {
        let k = MeanKernel::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]], 1.0).unwrap();
        let f = DVector::from_vec(vec![0.3, -1.0]);
        assert_eq!(kernel_power_apply(&k, &f, 0).to_vector(), f);
    }

    #[test]
    fn jordan_block_cube() {
        // Exact: [[2,1],[0,2]]^3 = [[8,12],[0,8]], applied to (1,1).
        let k = MeanKernel::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]], 1.0).unwrap();
        let v = kernel_power_apply(&k, &DVector::from_vec(vec![1.0, 1.0]), 3).to_vector();
        assert_eq!(v.as_slice(), &[20.0, 8.0]);
    }

    #[test]
    fn identity_kernel_power_is_identity() {
        let k = MeanKernel::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).unwrap();
        let f = DVector::from_vec(vec![4.0, 5.0]);
        assert_eq!(kernel_power_apply(&k, &f, 57).to_vector(), f);
    }

    #[test]
    fn large_powers_stay_finite_in_log_scale() {
        let k = MeanKernel::from_rows(&[vec![10.0]], 1.0).unwrap();
        let v = kernel_power_apply(&k, &DVector::from_vec(vec![1.0]), 1000);
        assert!(v.values[0].is_finite());
        assert!((v.log_sup_norm() - 1000.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn negative_entries_rejected() {
        assert!(matches!(
            MeanKernel::from_rows(&[vec![1.0, -1.0], vec![0.0, 1.0]], 1.0),
            Err(Error::NegativeEntry { row: 0, col: 1 })
        ));
    }

    #[test]
    fn non_finite_rows_rejected() {
        assert!(matches!(
            MeanKernel::from_rows(&[vec![f64::INFINITY]], 1.0),
            Err(Error::NonFiniteRow { row: 0 })
        ));
    }

    #[test]
    fn monte_carlo_kernel_agrees_with_exact_within_4se() {
        let law = FiniteLaw::new(vec![
            vec![
                crate::population::Outcome { prob: 0.3, children: vec![(0.5, 0), (1.5, 1)] },
                crate::population::Outcome { prob: 0.7, children: vec![(1.0, 1)] },
            ],
            vec![crate::population::Outcome { prob: 1.0, children: vec![(0.8, 0)] }],
        ])
        .unwrap();
        let grid = TypeGrid::finite(2);
        let exact = build_mean_kernel(&law, &grid, 1.0).unwrap();
        let mut rng = derive_stream(11, 0);
        let mc = estimate_mean_kernel(&law, &grid, 1.0, 20_000, &mut rng).unwrap();
        let se = mc.stderr().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let d = (mc.matrix()[(i, j)] - exact.matrix()[(i, j)]).abs();
                assert!(d <= 4.0 * se[(i, j)] + 1e-12, "entry ({i},{j}) off by {d}");
            }
        }
    }
}
