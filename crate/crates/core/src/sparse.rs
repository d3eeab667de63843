//! Dense sparse coding: the ℓ1-regularised least-squares objective, ISTA,
//! and the learned (LISTA) recursion it unrolls into.
//!
//! These are the non-convolutional counterparts of the network in
//! [`crate::model`], and serve as its reference behaviour.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "Matrix::new",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                expected: self.cols,
                found: other.rows,
            });
        }
        Ok(Matrix::from_fn(self.rows, other.cols, |i, j| {
            (0..self.cols)
                .map(|k| self.get(i, k) * other.get(k, j))
                .sum()
        }))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::DimensionMismatch {
                op: "Matrix::sub",
                expected: self.rows * self.cols,
                found: other.rows * other.cols,
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                op: "matvec",
                expected: self.cols,
                found: x.len(),
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `Aᵀ x`.
    pub fn t_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                op: "t_matvec",
                expected: self.rows,
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }
}

/// `min_z ½‖y − Dz‖² + λ‖z‖₁` with ISTA step constant `L`.
#[derive(Clone, Debug)]
pub struct SparseProblem {
    pub dictionary: Matrix,
    pub signal: Vec<f64>,
    pub lambda: f64,
    /// Step constant; ISTA descends monotonically when `L` is at least the
    /// largest eigenvalue of `DᵀD`.
    pub lipschitz: f64,
}

impl SparseProblem {
    pub fn new(dictionary: Matrix, signal: Vec<f64>, lambda: f64, lipschitz: f64) -> Result<Self> {
        if signal.len() != dictionary.rows() {
            return Err(Error::DimensionMismatch {
                op: "SparseProblem::new",
                expected: dictionary.rows(),
                found: signal.len(),
            });
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        if !(lipschitz > 0.0) || !lipschitz.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step constant L must be positive, got {lipschitz}"
            )));
        }
        Ok(SparseProblem {
            dictionary,
            signal,
            lambda,
            lipschitz,
        })
    }

    /// Builds a problem with `L` set from [`estimate_lipschitz`].
    pub fn with_estimated_step(dictionary: Matrix, signal: Vec<f64>, lambda: f64) -> Result<Self> {
        let l = estimate_lipschitz(&dictionary);
        Self::new(dictionary, signal, lambda, l)
    }

    pub fn code_len(&self) -> usize {
        self.dictionary.cols()
    }
}

/// Threshold argument of [`soft_threshold`].
#[derive(Clone, Copy, Debug)]
pub enum Threshold<'a> {
    Uniform(f64),
    PerEntry(&'a [f64]),
}

impl From<f64> for Threshold<'_> {
    fn from(v: f64) -> Self {
        Threshold::Uniform(v)
    }
}

impl<'a> From<&'a [f64]> for Threshold<'a> {
    fn from(v: &'a [f64]) -> Self {
        Threshold::PerEntry(v)
    }
}

impl<'a> From<&'a Vec<f64>> for Threshold<'a> {
    fn from(v: &'a Vec<f64>) -> Self {
        Threshold::PerEntry(v)
    }
}

impl Threshold<'_> {
    fn resolve(self, len: usize) -> Result<Vec<f64>> {
        let v = match self {
            Threshold::Uniform(t) => vec![t; len],
            Threshold::PerEntry(ts) => {
                if ts.len() != len {
                    return Err(Error::DimensionMismatch {
                        op: "threshold",
                        expected: len,
                        found: ts.len(),
                    });
                }
                ts.to_vec()
            }
        };
        if let Some(&t) = v.iter().find(|t| !(**t >= 0.0)) {
            return Err(Error::NegativeThreshold(t));
        }
        Ok(v)
    }
}

#[inline]
fn shrink(a: f64, t: f64) -> f64 {
    a.signum() * (a.abs() - t).max(0.0)
}

/// `sign(α)·max(|α| − θ, 0)` elementwise.
pub fn soft_threshold<'a>(alpha: &[f64], theta: impl Into<Threshold<'a>>) -> Result<Vec<f64>> {
    let t = theta.into().resolve(alpha.len())?;
    Ok(alpha.iter().zip(&t).map(|(&a, &t)| shrink(a, t)).collect())
}

/// `max(α − θ, 0)` elementwise; identical to `relu(α − θ)`.
pub fn nonneg_soft_threshold<'a>(
    alpha: &[f64],
    theta: impl Into<Threshold<'a>>,
) -> Result<Vec<f64>> {
    let t = theta.into().resolve(alpha.len())?;
    Ok(alpha
        .iter()
        .zip(&t)
        .map(|(&a, &t)| nonneg_shrink(a, t))
        .collect())
}

#[inline]
pub fn nonneg_shrink(a: f64, t: f64) -> f64 {
    let d = a - t;
    if d > 0.0 {
        d
    } else {
        0.0
    }
}

/// `½‖y − Dz‖₂² + λ‖z‖₁`.
pub fn sc_objective(p: &SparseProblem, z: &[f64]) -> Result<f64> {
    let dz = p.dictionary.matvec(z)?;
    let fit: f64 = p
        .signal
        .iter()
        .zip(&dz)
        .map(|(y, d)| (y - d) * (y - d))
        .sum();
    let l1: f64 = z.iter().map(|v| v.abs()).sum();
    Ok(0.5 * fit + p.lambda * l1)
}

/// Largest eigenvalue of `DᵀD` by power iteration (at most 50 steps,
/// relative tolerance 1e-6).
pub fn estimate_lipschitz(d: &Matrix) -> f64 {
    let m = d.cols();
    if m == 0 || d.rows() == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (m as f64).sqrt(); m];
    let mut estimate = 0.0;
    for _ in 0..50 {
        let w = d
            .t_matvec(&d.matvec(&v).expect("square by construction"))
            .expect("square by construction");
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w.into_iter().map(|x| x / norm).collect();
        let done = (next - estimate).abs() <= 1e-6 * next;
        estimate = next;
        if done {
            break;
        }
    }
    estimate
}

/// One ISTA update `h_{λ/L}(z + (1/L)Dᵀ(y − Dz))`.
pub fn ista_step(p: &SparseProblem, z: &[f64]) -> Result<Vec<f64>> {
    let dz = p.dictionary.matvec(z)?;
    let resid: Vec<f64> = p.signal.iter().zip(&dz).map(|(y, d)| y - d).collect();
    let grad = p.dictionary.t_matvec(&resid)?;
    let inv_l = 1.0 / p.lipschitz;
    let t = p.lambda * inv_l;
    Ok(z.iter()
        .zip(&grad)
        .map(|(&zi, &gi)| shrink(zi + inv_l * gi, t))
        .collect())
}

#[derive(Clone, Debug)]
pub struct IstaResult {
    pub code: Vec<f64>,
    /// Objective at `z_0 = 0` followed by one entry per iteration.
    pub objective_trace: Vec<f64>,
}

/// Runs `iters` ISTA iterations from `z_0 = 0`.
pub fn ista_solve(p: &SparseProblem, iters: usize) -> Result<IstaResult> {
    if iters == 0 {
        return Err(Error::InvalidArgument("ista_solve needs iters >= 1".into()));
    }
    let mut z = vec![0.0; p.code_len()];
    let mut trace = Vec::with_capacity(iters + 1);
    trace.push(sc_objective(p, &z)?);
    for k in 1..=iters {
        z = ista_step(p, &z)?;
        let obj = sc_objective(p, &z)?;
        if !obj.is_finite() || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "ista_solve".into(),
                step: k,
            });
        }
        trace.push(obj);
    }
    Ok(IstaResult {
        code: z,
        objective_trace: trace,
    })
}

/// Proximal gradient with backtracking line search, run for a fixed number
/// of iterations. Used as a reference minimiser that does not depend on a
/// caller-supplied step constant.
pub fn reference_minimum(p: &SparseProblem, iters: usize) -> Result<(Vec<f64>, f64)> {
    let d = &p.dictionary;
    let smooth = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let r: Vec<f64> = d
            .matvec(z)?
            .iter()
            .zip(&p.signal)
            .map(|(dz, y)| dz - y)
            .collect();
        let f = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
        Ok((f, d.t_matvec(&r)?))
    };
    let mut z = vec![0.0; p.code_len()];
    let mut step = 1.0;
    for _ in 0..iters {
        let (f, g) = smooth(&z)?;
        loop {
            let cand: Vec<f64> = z
                .iter()
                .zip(&g)
                .map(|(zi, gi)| shrink(zi - step * gi, step * p.lambda))
                .collect();
            let (fc, _) = smooth(&cand)?;
            let diff: Vec<f64> = cand.iter().zip(&z).map(|(a, b)| a - b).collect();
            let lin: f64 = g.iter().zip(&diff).map(|(a, b)| a * b).sum();
            let quad: f64 = diff.iter().map(|v| v * v).sum::<f64>() / (2.0 * step);
            if fc <= f + lin + quad + 1e-15 * f.abs() || step < 1e-12 {
                z = cand;
                break;
            }
            step *= 0.5;
        }
    }
    let obj = sc_objective(p, &z)?;
    Ok((z, obj))
}

/// A dense LISTA recursion `z_{k+1} = h_θ(W_e y + G z_k)`, `z_0 = 0`.
#[derive(Clone, Debug)]
pub struct ListaCell {
    /// `W_e`, m × n.
    pub encoder: Matrix,
    /// `G`, m × m.
    pub recurrence: Matrix,
    pub theta: Vec<f64>,
    pub steps: usize,
}

impl ListaCell {
    pub fn new(encoder: Matrix, recurrence: Matrix, theta: Vec<f64>, steps: usize) -> Result<Self> {
        let m = encoder.rows();
        if recurrence.rows() != m || recurrence.cols() != m {
            return Err(Error::DimensionMismatch {
                op: "ListaCell::new",
                expected: m,
                found: recurrence.rows(),
            });
        }
        if theta.len() != m {
            return Err(Error::DimensionMismatch {
                op: "ListaCell::new",
                expected: m,
                found: theta.len(),
            });
        }
        if let Some(&t) = theta.iter().find(|t| !(**t >= 0.0)) {
            return Err(Error::NegativeThreshold(t));
        }
        Ok(ListaCell {
            encoder,
            recurrence,
            theta,
            steps,
        })
    }

    /// The cell that reproduces ISTA on `p`: `W_e = Dᵀ/L`,
    /// `G = I − DᵀD/L`, `θ = λ/L`.
    pub fn from_ista(p: &SparseProblem, steps: usize) -> Result<Self> {
        let inv_l = 1.0 / p.lipschitz;
        let dt = p.dictionary.transpose();
        let gram = dt.matmul(&p.dictionary)?;
        let g = Matrix::identity(p.code_len()).sub(&gram.scale(inv_l))?;
        let theta = vec![p.lambda * inv_l; p.code_len()];
        Self::new(dt.scale(inv_l), g, theta, steps)
    }

    pub fn forward(&self, y: &[f64]) -> Result<Vec<f64>> {
        let drive = self.encoder.matvec(y)?;
        let mut z = vec![0.0; self.encoder.rows()];
        for _ in 0..self.steps {
            let gz = self.recurrence.matvec(&z)?;
            let pre: Vec<f64> = drive.iter().zip(&gz).map(|(a, b)| a + b).collect();
            z = soft_threshold(&pre, &self.theta)?;
        }
        Ok(z)
    }
}

pub fn lista_forward(cell: &ListaCell, y: &[f64]) -> Result<Vec<f64>> {
    cell.forward(y)
}

/// Seeded `n × m` problem: `D` entries `N(0, 1/n)`, `y` entries `N(0, 1)`,
/// `L` from power iteration.
pub fn random_problem(n: usize, m: usize, lambda: f64, seed: u64) -> Result<SparseProblem> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument(
            "problem sizes must be positive".into(),
        ));
    }
    let mut rng = stream(seed, Stream::Synthetic);
    let scale = 1.0 / (n as f64).sqrt();
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let d = Matrix::from_fn(n, m, |_, _| draw() * scale);
    let y = (0..n).map(|_| draw()).collect();
    SparseProblem::with_estimated_step(d, y, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize, lambda: f64) -> SparseProblem {
        let scale = 1.0 / (n as f64).sqrt();
        let d = Matrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0) * scale);
        let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        SparseProblem::with_estimated_step(d, y, lambda).unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        let out = soft_threshold(&[1.2, -1.2, 0.5, -0.5, 0.3, 0.0], 0.5).unwrap();
        let expected = [0.7, -0.7, 0.0, 0.0, 0.0, 0.0];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let alpha = [3.0, -2.0, 0.25];
        assert_eq!(soft_threshold(&alpha, 0.0).unwrap(), alpha);
        assert!(matches!(
            soft_threshold(&alpha, -0.1),
            Err(Error::NegativeThreshold(_))
        ));
    }

    #[test]
    fn nonneg_threshold_examples() {
        let out = nonneg_soft_threshold(&[1.2, -3.0], 0.5).unwrap();
        assert!((out[0] - 0.7).abs() < 1e-15);
        assert_eq!(out[1], 0.0);
        assert!(nonneg_soft_threshold(&[1.0], -1.0).is_err());
        assert!(nonneg_soft_threshold(&[1.0, 2.0], &[0.5][..]).is_err());
    }

    #[test]
    fn objective_examples() {
        let d = Matrix::identity(3);
        let p = SparseProblem::new(d.clone(), vec![0.0; 3], 1.0, 1.0).unwrap();
        assert_eq!(sc_objective(&p, &[1.0, 0.0, 0.0]).unwrap(), 1.5);
        let p = SparseProblem::new(d, vec![1.0, 2.0, -2.0], 0.3, 1.0).unwrap();
        assert_eq!(sc_objective(&p, &[0.0; 3]).unwrap(), 4.5);
        assert!(sc_objective(&p, &[0.0; 2]).is_err());
    }

    #[test]
    fn objective_matches_second_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 6, 9, 0.2);
            let z: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            // ½(yᵀy − 2 yᵀDz + zᵀDᵀDz) + λ Σ|z|
            let dz = p.dictionary.matvec(&z).unwrap();
            let yy: f64 = p.signal.iter().map(|v| v * v).sum();
            let ydz: f64 = p.signal.iter().zip(&dz).map(|(a, b)| a * b).sum();
            let dzdz: f64 = dz.iter().map(|v| v * v).sum();
            let l1: f64 = z.iter().map(|v| v.abs()).sum();
            let alt = 0.5 * (yy - 2.0 * ydz + dzdz) + p.lambda * l1;
            assert!((sc_objective(&p, &z).unwrap() - alt).abs() < 1e-12);
        }
    }

    #[test]
    fn ista_dead_zone_keeps_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = random_problem(&mut rng, 8, 16, 0.0);
        let dty = p.dictionary.t_matvec(&p.signal).unwrap();
        let max = dty.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        p.lambda = 1.01 * max;
        let res = ista_solve(&p, 25).unwrap();
        assert!(res.code.iter().all(|&v| v == 0.0));
        assert!(res.objective_trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn ista_orthonormal_one_step() {
        let y = vec![0.05, -0.4, 1.0, -0.08];
        let p = SparseProblem::new(Matrix::identity(4), y.clone(), 0.1, 1.0).unwrap();
        let res = ista_solve(&p, 1).unwrap();
        assert_eq!(res.code, soft_threshold(&y, 0.1).unwrap());
        let more = ista_solve(&p, 5).unwrap();
        assert_eq!(more.code, res.code);
        assert_eq!(res.objective_trace.len(), 2);
    }

    #[test]
    fn ista_rejects_zero_iterations() {
        let p = SparseProblem::new(Matrix::identity(2), vec![1.0, 1.0], 0.1, 1.0).unwrap();
        assert!(ista_solve(&p, 0).is_err());
    }

    #[test]
    fn ista_reports_non_finite_iterate() {
        let p =
            SparseProblem::new(Matrix::identity(2), vec![f64::INFINITY, 1.0], 0.1, 1.0).unwrap();
        match ista_solve(&p, 3) {
            Err(Error::NonFinite { step, .. }) => assert_eq!(step, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ista_fixed_point_after_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_problem(&mut rng, 8, 16, 0.1);
        let res = ista_solve(&p, 10_000).unwrap();
        let next = ista_step(&p, &res.code).unwrap();
        let moved = next
            .iter()
            .zip(&res.code)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(moved < 1e-8, "{moved}");
    }

    #[test]
    fn power_iteration_matches_diagonal() {
        let d = Matrix::from_fn(3, 3, |i, j| if i == j { [1.0, 3.0, 2.0][i] } else { 0.0 });
        assert!((estimate_lipschitz(&d) - 9.0).abs() < 1e-4);
    }

    #[test]
    fn lista_trivial_cases() {
        let we = Matrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.5);
        let y = [1.0, -2.0];
        let cell = ListaCell::new(we.clone(), Matrix::zeros(3, 3), vec![0.0; 3], 0).unwrap();
        assert_eq!(cell.forward(&y).unwrap(), vec![0.0; 3]);
        let cell = ListaCell::new(we.clone(), Matrix::zeros(3, 3), vec![0.0; 3], 4).unwrap();
        assert_eq!(cell.forward(&y).unwrap(), we.matvec(&y).unwrap());
        assert!(ListaCell::new(we.clone(), Matrix::zeros(3, 3), vec![-1.0; 3], 1).is_err());
        assert!(ListaCell::new(we, Matrix::zeros(2, 2), vec![0.0; 3], 1).is_err());
        assert!(cell.forward(&[1.0]).is_err());
    }

    #[test]
    fn lista_with_ista_weights_reproduces_ista() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_problem(&mut rng, 8, 16, 0.1);
        for k in [1, 2, 10, 50] {
            let cell = ListaCell::from_ista(&p, k).unwrap();
            let z = lista_forward(&cell, &p.signal).unwrap();
            let ista = ista_solve(&p, k).unwrap().code;
            for (a, b) in z.iter().zip(&ista) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
