//! Kernel estimators of the stationary covariance `V(x1, x2, lag)`, the
//! within-unit covariance `G` and the unit-level correlation `rho`.
//!
//! Each subject's unit pairs are kept once, unordered and sorted by absolute
//! lag, so a query touches only the pairs inside its kernel window. Both
//! orientations of a pair are folded into a single term, which makes the
//! symmetry identities of the estimators hold bit-for-bit rather than up to
//! roundoff.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::accum::CompensatedSum;
use crate::data::{center_residuals, Dataset, ResidualSet};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::pairs::{PairTable, UnitPair};

/// Relative threshold below which the `G` lower-triangle sum counts as zero.
pub const DEGENERATE_G_RTOL: f64 = 1e-12;

/// Kernel-weighted sums of one or more subjects at one lag.
#[derive(Debug, Clone, Copy, Default)]
pub struct LagSums {
    /// Sum of kernel weights over ordered pairs.
    pub weight: CompensatedSum,
    /// Sum of kernel-weighted lower-triangle products over ordered pairs.
    pub lower: CompensatedSum,
    pub lower_abs: CompensatedSum,
}

impl LagSums {
    pub fn merge(&mut self, other: &LagSums) {
        self.weight.merge(&other.weight);
        self.lower.merge(&other.lower);
        self.lower_abs.merge(&other.lower_abs);
    }

    /// `sum_{x2 <= x1} V~(x1, x2, lag)`, or `None` without support.
    pub fn lower_mean(&self) -> Option<f64> {
        let w = self.weight.value();
        (w > 0.0).then(|| self.lower.value() / w)
    }

    fn lower_abs_mean(&self) -> f64 {
        let w = self.weight.value();
        if w > 0.0 {
            self.lower_abs.value() / w
        } else {
            0.0
        }
    }
}

/// Kernel-weighted `m x m` product sums of one or more subjects at one lag.
#[derive(Debug, Clone)]
pub struct MatrixSums {
    pub weight: CompensatedSum,
    /// Row-major `m x m`.
    pub products: Vec<CompensatedSum>,
}

impl MatrixSums {
    fn zeros(m: usize) -> Self {
        Self {
            weight: CompensatedSum::ZERO,
            products: vec![CompensatedSum::ZERO; m * m],
        }
    }

    pub fn merge(&mut self, other: &MatrixSums) {
        self.weight.merge(&other.weight);
        for (a, b) in self.products.iter_mut().zip(&other.products) {
            a.merge(b);
        }
    }

    pub fn to_matrix(&self, m: usize) -> Option<DMatrix<f64>> {
        let w = self.weight.value();
        (w > 0.0).then(|| DMatrix::from_fn(m, m, |j, l| self.products[j * m + l].value() / w))
    }
}

/// A fitted symmetrized covariance estimator over a residual set.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    residuals: ResidualSet,
    kernel: KernelSpec,
    tables: Vec<PairTable>,
    cap: f64,
}

impl CovarianceEstimate {
    /// Indexes every unit pair.
    pub fn new(residuals: ResidualSet, kernel: KernelSpec) -> Self {
        Self::build(residuals, kernel, None)
    }

    /// Indexes only pairs with `|lag| <= cap`; queries needing farther pairs fail.
    pub fn with_lag_cap(residuals: ResidualSet, kernel: KernelSpec, cap: f64) -> Self {
        Self::build(residuals, kernel, Some(cap))
    }

    /// Cap that supports every lag in `grid`.
    pub fn cap_for_grid(grid: &[f64], kernel: &KernelSpec) -> f64 {
        grid.iter().fold(0.0f64, |a, d| a.max(d.abs())) + kernel.bandwidth.max()
    }

    fn build(residuals: ResidualSet, kernel: KernelSpec, cap: Option<f64>) -> Self {
        let m = residuals.n_subunits();
        let tables = residuals
            .subjects()
            .iter()
            .map(|s| PairTable::build(s, m, cap))
            .collect();
        Self {
            residuals,
            kernel,
            tables,
            cap: cap.unwrap_or(f64::INFINITY),
        }
    }

    pub fn from_dataset(data: &Dataset, kernel: KernelSpec, cap: Option<f64>) -> Result<Self> {
        Ok(Self::build(center_residuals(data)?, kernel, cap))
    }

    pub fn residuals(&self) -> &ResidualSet {
        &self.residuals
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// Swaps the kernel; pair tables are bandwidth-independent.
    pub fn set_kernel(&mut self, kernel: KernelSpec) {
        self.kernel = kernel;
    }

    pub fn n_subjects(&self) -> usize {
        self.tables.len()
    }

    pub fn n_subunits(&self) -> usize {
        self.residuals.n_subunits()
    }

    pub fn tables(&self) -> &[PairTable] {
        &self.tables
    }

    fn bandwidth_checked(&self, delta: f64) -> Result<f64> {
        if !delta.is_finite() {
            return Err(Error::invalid(format!("lag must be finite, got {delta}")));
        }
        let h = self.kernel.bandwidth_at(delta);
        if delta.abs() + h > self.cap {
            return Err(Error::LagBeyondCap {
                delta,
                bandwidth: h,
                cap: self.cap,
            });
        }
        Ok(h)
    }

    fn check_index(&self, x1: usize, x2: usize) -> Result<()> {
        let m = self.n_subunits();
        if x1 >= m || x2 >= m {
            return Err(Error::invalid(format!(
                "subunit index ({x1}, {x2}) out of range for m = {m}"
            )));
        }
        Ok(())
    }

    #[inline]
    fn sym_weight(&self, p: &UnitPair, delta_abs: f64, h: f64) -> f64 {
        self.kernel.scaled(p.abs_lag - delta_abs, h)
    }

    /// Lower-triangle sums of subject `r` at `|delta|`.
    pub fn subject_lag_sums(&self, r: usize, delta: f64) -> Result<LagSums> {
        let h = self.bandwidth_checked(delta)?;
        Ok(self.subject_lag_sums_unchecked(r, delta.abs(), h))
    }

    fn subject_lag_sums_unchecked(&self, r: usize, delta_abs: f64, h: f64) -> LagSums {
        let mut s = LagSums::default();
        for p in self.tables[r].window(delta_abs, h) {
            let k = self.sym_weight(p, delta_abs, h);
            // each unordered pair stands for both orientations
            s.weight.add(2.0 * k);
            s.lower.add(k * p.lower);
            s.lower_abs.add(k * p.lower_abs);
        }
        s
    }

    /// Lower-triangle sums over all subjects except `skip`.
    pub fn lag_sums(&self, delta: f64, skip: Option<usize>) -> Result<LagSums> {
        let h = self.bandwidth_checked(delta)?;
        let mut total = LagSums::default();
        for r in (0..self.tables.len()).filter(|&r| Some(r) != skip) {
            total.merge(&self.subject_lag_sums_unchecked(r, delta.abs(), h));
        }
        Ok(total)
    }

    /// Full `m x m` symmetrized sums of subject `r` at `|delta|`.
    pub fn subject_matrix_sums(&self, r: usize, delta: f64) -> Result<MatrixSums> {
        let h = self.bandwidth_checked(delta)?;
        Ok(self.subject_matrix_sums_unchecked(r, delta.abs(), h))
    }

    fn subject_matrix_sums_unchecked(&self, r: usize, delta_abs: f64, h: f64) -> MatrixSums {
        let m = self.n_subunits();
        let subj = &self.residuals.subjects()[r];
        let mut s = MatrixSums::zeros(m);
        for p in self.tables[r].window(delta_abs, h) {
            let k = self.sym_weight(p, delta_abs, h);
            s.weight.add(2.0 * k);
            let ea = subj.row(p.a as usize, m);
            let eb = subj.row(p.b as usize, m);
            for j in 0..m {
                for l in 0..m {
                    s.products[j * m + l].add(k * (ea[j] * eb[l] + eb[j] * ea[l]));
                }
            }
        }
        s
    }

    /// Full symmetrized sums over all subjects except `skip`.
    pub fn matrix_sums(&self, delta: f64, skip: Option<usize>) -> Result<MatrixSums> {
        let h = self.bandwidth_checked(delta)?;
        let mut total = MatrixSums::zeros(self.n_subunits());
        for r in (0..self.tables.len()).filter(|&r| Some(r) != skip) {
            total.merge(&self.subject_matrix_sums_unchecked(r, delta.abs(), h));
        }
        Ok(total)
    }

    /// The raw (unsymmetrized) estimator `V^(x1, x2, delta)`.
    pub fn raw(&self, x1: usize, x2: usize, delta: f64) -> Result<f64> {
        self.check_index(x1, x2)?;
        let h = self.bandwidth_checked(delta)?;
        let m = self.n_subunits();
        let mut num = CompensatedSum::ZERO;
        let mut den = CompensatedSum::ZERO;
        for (subj, table) in self.residuals.subjects().iter().zip(&self.tables) {
            for p in table.window(delta.abs(), h) {
                // orientation (a, b) has lag d, orientation (b, a) has lag -d
                let k_ab = self.kernel.scaled(p.lag - delta, h);
                let k_ba = self.kernel.scaled(-p.lag - delta, h);
                if k_ab == 0.0 && k_ba == 0.0 {
                    continue;
                }
                let ea = subj.row(p.a as usize, m);
                let eb = subj.row(p.b as usize, m);
                num.add(k_ab * (ea[x1] * eb[x2]) + k_ba * (eb[x1] * ea[x2]));
                den.add(k_ab + k_ba);
            }
        }
        let w = den.value();
        if w > 0.0 {
            Ok(num.value() / w)
        } else {
            Err(Error::NoSupportAtLag { delta, bandwidth: h })
        }
    }

    /// The symmetrized estimator `V~(x1, x2, delta)`; even in `delta`.
    pub fn sym(&self, x1: usize, x2: usize, delta: f64) -> Result<f64> {
        self.check_index(x1, x2)?;
        let h = self.bandwidth_checked(delta)?;
        let d = delta.abs();
        let m = self.n_subunits();
        let mut num = CompensatedSum::ZERO;
        let mut den = CompensatedSum::ZERO;
        for (subj, table) in self.residuals.subjects().iter().zip(&self.tables) {
            for p in table.window(d, h) {
                let k = self.sym_weight(p, d, h);
                let ea = subj.row(p.a as usize, m);
                let eb = subj.row(p.b as usize, m);
                num.add(k * (ea[x1] * eb[x2] + eb[x1] * ea[x2]));
                den.add(2.0 * k);
            }
        }
        let w = den.value();
        if w > 0.0 {
            Ok(num.value() / w)
        } else {
            Err(Error::NoSupportAtLag { delta, bandwidth: h })
        }
    }

    /// `m x m` matrix of `V~(., ., delta)`.
    pub fn sym_matrix(&self, delta: f64) -> Result<DMatrix<f64>> {
        let h = self.kernel.bandwidth_at(delta);
        self.matrix_sums(delta, None)?
            .to_matrix(self.n_subunits())
            .ok_or(Error::NoSupportAtLag { delta, bandwidth: h })
    }

    /// `G^ = V~(., ., 0)`.
    pub fn g_hat(&self) -> Result<DMatrix<f64>> {
        self.sym_matrix(0.0)
    }

    /// `rho^(delta)`, optionally leaving subject `skip` out.
    pub fn rho_hat_excluding(&self, delta: f64, skip: Option<usize>) -> Result<f64> {
        let zero = self.lag_sums(0.0, skip)?;
        let den = zero.lower_mean().ok_or(Error::NoSupportAtLag {
            delta: 0.0,
            bandwidth: self.kernel.bandwidth_at(0.0),
        })?;
        check_g_sum(den, zero.lower_abs_mean())?;
        let at = self.lag_sums(delta, skip)?;
        let num = at.lower_mean().ok_or(Error::NoSupportAtLag {
            delta,
            bandwidth: self.kernel.bandwidth_at(delta),
        })?;
        Ok(num / den)
    }

    pub fn rho_hat(&self, delta: f64) -> Result<f64> {
        self.rho_hat_excluding(delta, None)
    }

    /// `A(delta)`: total kernel weight of ordered pairs at signed lag `delta`.
    pub fn pair_weight(&self, delta: f64) -> Result<f64> {
        let h = self.bandwidth_checked(delta)?;
        let mut total = CompensatedSum::ZERO;
        for table in &self.tables {
            for p in table.window(delta.abs(), h) {
                total.add(self.kernel.scaled(p.lag - delta, h));
                total.add(self.kernel.scaled(-p.lag - delta, h));
            }
        }
        Ok(total.value())
    }

    /// Renders `V~` on a lag grid; unsupported lags are left missing.
    pub fn render_surface(&self, delta_grid: &[f64]) -> Result<CovarianceSurface> {
        if delta_grid.is_empty() {
            return Err(Error::invalid("lag grid is empty"));
        }
        let m = self.n_subunits();
        let rendered: Vec<(Option<Vec<f64>>, f64)> = delta_grid
            .par_iter()
            .map(|&d| {
                let values = self
                    .matrix_sums(d, None)?
                    .to_matrix(m)
                    .map(|g| g.transpose().as_slice().to_vec());
                Ok((values, self.pair_weight(d)?))
            })
            .collect::<Result<_>>()?;
        let (values, effective_weight) = rendered.into_iter().unzip();
        Ok(CovarianceSurface {
            delta_grid: delta_grid.to_vec(),
            m,
            values,
            effective_weight,
        })
    }

    /// `rho^` and `G^` on a lag grid; unsupported lags are left missing.
    pub fn correlation_curve(&self, delta_grid: &[f64]) -> Result<CorrelationCurve> {
        let g_hat = self.g_hat()?;
        let rho = delta_grid
            .par_iter()
            .map(|&d| match self.rho_hat(d) {
                Ok(v) => Ok(Some(v)),
                Err(Error::NoSupportAtLag { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CorrelationCurve {
            delta_grid: delta_grid.to_vec(),
            rho,
            g_hat,
            sd: None,
            adjusted: None,
        })
    }
}

fn check_g_sum(sum: f64, scale: f64) -> Result<()> {
    if sum.abs() <= DEGENERATE_G_RTOL * scale || sum == 0.0 {
        Err(Error::DegenerateG { sum })
    } else {
        Ok(())
    }
}

/// `V~` tabulated on a lag grid.
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceSurface {
    pub delta_grid: Vec<f64>,
    pub m: usize,
    /// Per lag: row-major `m x m` values, `None` where unsupported.
    pub values: Vec<Option<Vec<f64>>>,
    /// `A(delta)` per grid point.
    pub effective_weight: Vec<f64>,
}

impl CovarianceSurface {
    pub fn get(&self, x1: usize, x2: usize, k: usize) -> Option<f64> {
        self.values[k].as_ref().map(|v| v[x1 * self.m + x2])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationCurve {
    pub delta_grid: Vec<f64>,
    pub rho: Vec<Option<f64>>,
    #[serde(skip)]
    pub g_hat: DMatrix<f64>,
    pub sd: Option<Vec<Option<f64>>>,
    pub adjusted: Option<Vec<f64>>,
}

pub fn raw_covariance(
    residuals: &ResidualSet,
    kernel: &KernelSpec,
    x1: usize,
    x2: usize,
    delta: f64,
) -> Result<f64> {
    CovarianceEstimate::new(residuals.clone(), *kernel).raw(x1, x2, delta)
}

pub fn sym_covariance(
    residuals: &ResidualSet,
    kernel: &KernelSpec,
    x1: usize,
    x2: usize,
    delta: f64,
) -> Result<f64> {
    CovarianceEstimate::new(residuals.clone(), *kernel).sym(x1, x2, delta)
}

pub fn g_hat(residuals: &ResidualSet, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let cap = kernel.bandwidth_at(0.0);
    CovarianceEstimate::with_lag_cap(residuals.clone(), *kernel, cap).g_hat()
}

pub fn rho_hat(residuals: &ResidualSet, kernel: &KernelSpec, delta: f64) -> Result<f64> {
    CovarianceEstimate::new(residuals.clone(), *kernel).rho_hat(delta)
}

/// `A(delta)` from unit locations alone; zero when no pair is in the window.
pub fn pair_weight_a(data: &Dataset, kernel: &KernelSpec, delta: f64) -> f64 {
    let h = kernel.bandwidth_at(delta);
    let mut total = CompensatedSum::ZERO;
    for s in data.subjects() {
        let locs = s.unit_locations();
        for (i, &si) in locs.iter().enumerate() {
            for (k, &sk) in locs.iter().enumerate() {
                if i != k {
                    total.add(kernel.scaled(si - sk - delta, h));
                }
            }
        }
    }
    total.value()
}

pub fn render_surface(
    residuals: &ResidualSet,
    kernel: &KernelSpec,
    delta_grid: &[f64],
) -> Result<CovarianceSurface> {
    let cap = CovarianceEstimate::cap_for_grid(delta_grid, kernel);
    CovarianceEstimate::with_lag_cap(residuals.clone(), *kernel, cap).render_surface(delta_grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;
    use crate::kernel::KernelFamily;

    fn epan(h: f64) -> KernelSpec {
        KernelSpec::global(KernelFamily::Epanechnikov, h).unwrap()
    }

    fn two_units() -> Dataset {
        let s = Subject::from_rows("a", vec![0.0, 100.0], &[vec![2.0], vec![4.0]]).unwrap();
        Dataset::new(vec![s], vec![0.0], 1000.0).unwrap()
    }

    fn fit(d: &Dataset, h: f64) -> CovarianceEstimate {
        CovarianceEstimate::from_dataset(d, epan(h), None).unwrap()
    }

    #[test]
    fn raw_two_units_hand_computed() {
        let est = fit(&two_units(), 10.0);
        assert_eq!(est.raw(0, 0, 100.0).unwrap(), -1.0);
        assert_eq!(est.raw(0, 0, -100.0).unwrap(), -1.0);
        for h in [1.0, 37.0, 500.0] {
            assert_eq!(fit(&two_units(), h).raw(0, 0, 100.0).unwrap(), -1.0);
        }
    }

    #[test]
    fn sym_two_units_hand_computed() {
        let est = fit(&two_units(), 10.0);
        assert_eq!(est.sym(0, 0, 100.0).unwrap(), -1.0);
        assert_eq!(est.sym(0, 0, -100.0).unwrap(), -1.0);
    }

    #[test]
    fn unsupported_lag_reports_delta_and_bandwidth() {
        let est = fit(&two_units(), 10.0);
        match est.sym(0, 0, 50.0) {
            Err(Error::NoSupportAtLag { delta, bandwidth }) => {
                assert_eq!(delta, 50.0);
                assert_eq!(bandwidth, 10.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(est.raw(0, 0, 0.0), Err(Error::NoSupportAtLag { .. })));
    }

    #[test]
    fn constant_responses_give_zero_covariance() {
        let s = Subject::from_rows(
            "a",
            vec![0.0, 10.0, 25.0],
            &[vec![3.0, 1.0], vec![3.0, 1.0], vec![3.0, 1.0]],
        )
        .unwrap();
        let d = Dataset::new(vec![s], vec![0.0, 1.0], 100.0).unwrap();
        let est = fit(&d, 20.0);
        for delta in [0.0, 10.0, 15.0, -25.0] {
            assert_eq!(est.sym(0, 1, delta).unwrap(), 0.0);
            assert_eq!(est.raw(1, 0, delta).unwrap(), 0.0);
        }
        assert!(est.g_hat().unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(est.rho_hat(10.0), Err(Error::DegenerateG { .. })));
    }

    #[test]
    fn pair_weight_hand_computed() {
        let d = two_units();
        let k = epan(50.0);
        assert!((pair_weight_a(&d, &k, 100.0) - 0.015).abs() < 1e-15);
        assert_eq!(pair_weight_a(&d, &k, 0.0), 0.0);
        assert_eq!(pair_weight_a(&d, &k, 400.0), 0.0);
        let est = CovarianceEstimate::from_dataset(&d, k, None).unwrap();
        assert_eq!(est.pair_weight(100.0).unwrap(), pair_weight_a(&d, &k, 100.0));
    }

    #[test]
    fn lag_cap_is_enforced() {
        let d = two_units();
        let est = CovarianceEstimate::from_dataset(&d, epan(10.0), Some(50.0)).unwrap();
        assert!(matches!(est.sym(0, 0, 45.0), Err(Error::LagBeyondCap { .. })));
    }

    #[test]
    fn surface_missing_beyond_support_and_matches_g_hat() {
        let s = Subject::from_rows(
            "a",
            vec![0.0, 7.0, 30.0, 31.0],
            &[vec![1.0, 0.5], vec![-1.0, 2.0], vec![0.25, -1.0], vec![3.0, 0.0]],
        )
        .unwrap();
        let d = Dataset::new(vec![s], vec![0.0, 1.0], 100.0).unwrap();
        let r = center_residuals(&d).unwrap();
        let k = epan(5.0);
        let far = render_surface(&r, &k, &[100.0, 200.0]).unwrap();
        assert!(far.values.iter().all(Option::is_none));
        let at0 = render_surface(&r, &k, &[0.0]).unwrap();
        let g = g_hat(&r, &k).unwrap();
        for j in 0..2 {
            for l in 0..2 {
                assert_eq!(at0.get(j, l, 0).unwrap(), g[(j, l)]);
            }
        }
    }

    #[test]
    fn rho_hat_is_one_at_zero() {
        let s = Subject::from_rows(
            "a",
            vec![0.0, 3.0, 9.0, 10.0],
            &[vec![1.0, 2.0], vec![-2.0, 0.5], vec![0.3, 0.3], vec![4.0, -1.0]],
        )
        .unwrap();
        let d = Dataset::new(vec![s], vec![0.0, 1.0], 100.0).unwrap();
        let est = fit(&d, 8.0);
        assert_eq!(est.rho_hat(0.0).unwrap(), 1.0);
        assert_eq!(est.rho_hat(-0.0).unwrap(), 1.0);
    }
}
