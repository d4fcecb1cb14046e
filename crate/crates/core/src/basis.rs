//! Cubic B-spline bases, second-derivative penalties and the design rows used
//! by scalar-coefficient and function-on-function model terms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdgrid::quadrature_weights;

const DEGREE: usize = 3;
/// Penalty quadrature resolution: subintervals per knot span.
const PENALTY_REFINEMENT: usize = 10;

/// Basis settings as they appear in model configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    #[serde(rename = "L")]
    pub size: usize,
    #[serde(default = "default_kind")]
    pub kind: BasisKind,
    #[serde(default = "default_penalty_order")]
    pub penalty_order: u8,
}

fn default_kind() -> BasisKind {
    BasisKind::BsplineCubic
}

fn default_penalty_order() -> u8 {
    2
}

impl BasisConfig {
    pub fn cubic(size: usize) -> Self {
        Self {
            size,
            kind: BasisKind::BsplineCubic,
            penalty_order: 2,
        }
    }

    pub fn build(&self, lo: f64, hi: f64) -> Result<BSplineBasis> {
        if self.penalty_order != 2 {
            return Err(Error::InvalidBasis(format!(
                "only second-derivative penalties are supported, got order {}",
                self.penalty_order
            )));
        }
        BSplineBasis::new(lo, hi, self.size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    #[serde(rename = "bspline-cubic")]
    BsplineCubic,
}

/// Clamped cubic B-spline basis with equally spaced interior knots.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    lo: f64,
    hi: f64,
    size: usize,
    knots: Vec<f64>,
}

/// Serialized form: the domain and the basis size determine the knots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisDescriptor {
    pub lo: f64,
    pub hi: f64,
    #[serde(rename = "L")]
    pub size: usize,
}

impl BSplineBasis {
    pub fn new(lo: f64, hi: f64, size: usize) -> Result<Self> {
        if size < DEGREE + 1 {
            return Err(Error::InvalidBasis(format!(
                "cubic basis needs at least 4 functions, got {size}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidBasis(format!("bad domain [{lo}, {hi}]")));
        }
        let spans = size - DEGREE;
        let step = (hi - lo) / spans as f64;
        let mut knots = Vec::with_capacity(size + DEGREE + 1);
        knots.extend(std::iter::repeat_n(lo, DEGREE + 1));
        knots.extend((1..spans).map(|k| lo + step * k as f64));
        knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
        Ok(Self { lo, hi, size, knots })
    }

    pub fn from_descriptor(desc: &BasisDescriptor) -> Result<Self> {
        Self::new(desc.lo, desc.hi, desc.size)
    }

    pub fn descriptor(&self) -> BasisDescriptor {
        BasisDescriptor {
            lo: self.lo,
            hi: self.hi,
            size: self.size,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Greville abscissae; coefficients equal to `f(greville)` reproduce any
    /// affine `f` exactly.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.size)
            .map(|i| self.knots[i + 1..=i + DEGREE].iter().sum::<f64>() / DEGREE as f64)
            .collect()
    }

    fn clamp_point(&self, x: f64) -> Result<f64> {
        let tol = 1e-10 * (self.hi - self.lo);
        if !x.is_finite() || x < self.lo - tol || x > self.hi + tol {
            return Err(Error::Domain {
                point: x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(x.clamp(self.lo, self.hi))
    }

    fn find_span(&self, x: f64) -> usize {
        let last = self.size - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        // knots[DEGREE..=last+1] is increasing over the active region
        let mut low = DEGREE;
        let mut high = last + 1;
        while high - low > 1 {
            let mid = (low + high) / 2;
            if x < self.knots[mid] {
                high = mid;
            } else {
                low = mid;
            }
        }
        low
    }

    /// Nonzero basis values and derivatives up to `order` at `x`.
    ///
    /// Returns the index of the first nonzero function and a table
    /// `ders[k][j]` holding the k-th derivative of basis function `first + j`.
    fn local_derivatives(&self, x: f64, order: usize) -> (usize, Vec<[f64; DEGREE + 1]>) {
        let p = DEGREE;
        let span = self.find_span(x);
        let u = &self.knots;
        let mut ndu = [[0.0f64; DEGREE + 1]; DEGREE + 1];
        let mut left = [0.0f64; DEGREE + 1];
        let mut right = [0.0f64; DEGREE + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let n = order.min(p);
        let mut ders = vec![[0.0f64; DEGREE + 1]; order + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let p_i = p as isize;
        for r in 0..=p_i {
            let mut a = [[0.0f64; DEGREE + 1]; 2];
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n as isize {
                let mut d = 0.0;
                let rk = r - k;
                let pk = p_i - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk as usize];
                }
                let j1 = if rk >= -1 { 1 } else { -rk };
                let j2 = if r - 1 <= pk { k - 1 } else { p_i - r };
                for j in j1..=j2 {
                    let (ju, rkj) = (j as usize, (rk + j) as usize);
                    a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[(pk + 1) as usize][rkj];
                    d += a[s2][ju] * ndu[rkj][pk as usize];
                }
                if r <= pk {
                    let ku = k as usize;
                    a[s2][ku] = -a[s1][ku - 1] / ndu[(pk + 1) as usize][r as usize];
                    d += a[s2][ku] * ndu[r as usize][pk as usize];
                }
                ders[k as usize][r as usize] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for (k, row) in ders.iter_mut().enumerate().skip(1).take(n) {
            for v in row.iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        (span - p, ders)
    }

    /// Row of all `L` basis values at `x`.
    pub fn eval_point(&self, x: f64) -> Result<Vec<f64>> {
        self.eval_derivative_point(x, 0)
    }

    /// Row of the `order`-th derivatives of all basis functions at `x`.
    pub fn eval_derivative_point(&self, x: f64, order: usize) -> Result<Vec<f64>> {
        let x = self.clamp_point(x)?;
        let (first, ders) = self.local_derivatives(x, order);
        let mut row = vec![0.0; self.size];
        row[first..first + DEGREE + 1].copy_from_slice(&ders[order]);
        Ok(row)
    }

    /// `|points| x L` matrix of basis values.
    pub fn eval(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        self.eval_derivative(points, 0)
    }

    pub fn eval_derivative(&self, points: &[f64], order: usize) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(points.len(), self.size);
        for (i, &x) in points.iter().enumerate() {
            let x = self.clamp_point(x)?;
            let (first, ders) = self.local_derivatives(x, order);
            for (j, v) in ders[order].iter().enumerate() {
                out[(i, first + j)] = *v;
            }
        }
        Ok(out)
    }

    /// Evaluates `sum_l coef[l] B_l(t)` at each point.
    pub fn expand(&self, coefficients: &[f64], points: &[f64]) -> Result<Vec<f64>> {
        if coefficients.len() != self.size {
            return Err(Error::Dimension(format!(
                "{} coefficients for a basis of size {}",
                coefficients.len(),
                self.size
            )));
        }
        let basis = self.eval(points)?;
        Ok((basis * DVector::from_column_slice(coefficients))
            .iter()
            .copied()
            .collect())
    }

    /// Roughness penalty `D = int B''(t) B''(t)^T dt` by trapezoid quadrature
    /// on a uniform grid with ten subintervals per knot span.
    pub fn penalty_matrix(&self) -> DMatrix<f64> {
        let spans = self.size - DEGREE;
        let count = spans * PENALTY_REFINEMENT + 1;
        let step = (self.hi - self.lo) / (count - 1) as f64;
        let points: Vec<f64> = (0..count)
            .map(|q| {
                if q == count - 1 {
                    self.hi
                } else {
                    self.lo + step * q as f64
                }
            })
            .collect();
        let weights = quadrature_weights(&points).expect("refined grid is valid");
        let mut penalty = DMatrix::zeros(self.size, self.size);
        for (&x, &w) in points.iter().zip(&weights) {
            let (first, ders) = self.local_derivatives(x, 2);
            let d2 = &ders[2];
            for a in 0..=DEGREE {
                for b in 0..=DEGREE {
                    penalty[(first + a, first + b)] += w * d2[a] * d2[b];
                }
            }
        }
        penalty
    }
}

/// Tensor-product basis `U(s, t) = Bs(s) (x) Bt(t)` for bivariate surfaces.
///
/// Coefficients are ordered with the `s` index major and `t` index minor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBasis {
    pub s: BSplineBasis,
    pub t: BSplineBasis,
}

impl TensorBasis {
    pub fn new(s: BSplineBasis, t: BSplineBasis) -> Self {
        Self { s, t }
    }

    pub fn size(&self) -> usize {
        self.s.size() * self.t.size()
    }

    /// Isotropic penalty `Ds (x) I + I (x) Dt` sharing one smoothing parameter.
    pub fn penalty_matrix(&self) -> DMatrix<f64> {
        let ds = self.s.penalty_matrix();
        let dt = self.t.penalty_matrix();
        let is = DMatrix::identity(self.s.size(), self.s.size());
        let it = DMatrix::identity(self.t.size(), self.t.size());
        ds.kronecker(&it) + is.kronecker(&dt)
    }

    /// Rows `Bs(s_i) (x) Bt(t_i)` for paired points.
    pub fn eval_pairs(&self, s: &[f64], t: &[f64]) -> Result<DMatrix<f64>> {
        if s.len() != t.len() {
            return Err(Error::Dimension("s and t point counts differ".into()));
        }
        let bs = self.s.eval(s)?;
        let bt = self.t.eval(t)?;
        let (ls, lt) = (self.s.size(), self.t.size());
        let mut out = DMatrix::zeros(s.len(), ls * lt);
        for i in 0..s.len() {
            for a in 0..ls {
                let va = bs[(i, a)];
                if va == 0.0 {
                    continue;
                }
                for b in 0..lt {
                    out[(i, a * lt + b)] = va * bt[(i, b)];
                }
            }
        }
        Ok(out)
    }
}

/// Weighted projection `sum_d w_d X(s_d) Bs(s_d)` of one predictor curve.
pub fn ff_projection(
    x_values: &[f64],
    weights: &[f64],
    s_points: &[f64],
    bs: &BSplineBasis,
) -> Result<DVector<f64>> {
    if x_values.len() != weights.len() || s_points.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "predictor curve ({}), weights ({}) and s-grid ({}) lengths differ",
            x_values.len(),
            weights.len(),
            s_points.len()
        )));
    }
    let basis = bs.eval(s_points)?;
    let scaled = DVector::from_iterator(x_values.len(), x_values.iter().zip(weights).map(|(x, w)| x * w));
    Ok(basis.tr_mul(&scaled))
}

/// Design rows of a function-on-function term for one subject: the row at `t`
/// is `(sum_d w_d X(s_d) Bs(s_d)) (x) Bt(t)`.
pub fn ff_design_rows(
    x_values: &[f64],
    weights: &[f64],
    s_points: &[f64],
    basis: &TensorBasis,
    t_eval: &[f64],
) -> Result<DMatrix<f64>> {
    let proj = ff_projection(x_values, weights, s_points, &basis.s)?;
    let bt = basis.t.eval(t_eval)?;
    let (ls, lt) = (basis.s.size(), basis.t.size());
    let mut out = DMatrix::zeros(t_eval.len(), ls * lt);
    for r in 0..t_eval.len() {
        for a in 0..ls {
            for b in 0..lt {
                out[(r, a * lt + b)] = proj[a] * bt[(r, b)];
            }
        }
    }
    Ok(out)
}

/// Eigenvectors and eigenvalues of a PSD matrix with numerically null
/// eigenvalues set to exactly zero.
pub(crate) fn psd_eigen(matrix: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let eig = matrix.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = max * 1e-9 * matrix.nrows() as f64;
    let values = eig
        .eigenvalues
        .iter()
        .map(|&v| if v > tol { v } else { 0.0 })
        .collect();
    (eig.eigenvectors, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdgrid::Grid;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Cox-de Boor recursion, kept separate from the evaluation path above.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64, last: usize) -> f64 {
        if p == 0 {
            let (a, b) = (knots[i], knots[i + 1]);
            // right endpoint belongs to the last non-degenerate interval
            return if (a <= x && x < b) || (i == last && x == b && a < b) {
                1.0
            } else {
                0.0
            };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x, last);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x, last);
        }
        v
    }

    #[test]
    fn matches_recursive_definition() {
        let basis = BSplineBasis::new(0.0, 10.0, 9).unwrap();
        let last = basis.size() - 1;
        for &x in &[0.0, 0.3, 1.4285, 5.0, 7.77, 9.99, 10.0] {
            let row = basis.eval_point(x).unwrap();
            for (i, v) in row.iter().enumerate() {
                let expect = cox_de_boor(basis.knots(), i, DEGREE, x, last);
                assert_abs_diff_eq!(*v, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let basis = BSplineBasis::new(-1.0, 2.0, 12).unwrap();
        let h = 1e-5;
        for &x in &[-0.7, 0.1, 0.55, 1.3, 1.9] {
            let d1 = basis.eval_derivative_point(x, 1).unwrap();
            let d2 = basis.eval_derivative_point(x, 2).unwrap();
            let up = basis.eval_point(x + h).unwrap();
            let mid = basis.eval_point(x).unwrap();
            let down = basis.eval_point(x - h).unwrap();
            for l in 0..basis.size() {
                assert_abs_diff_eq!(d1[l], (up[l] - down[l]) / (2.0 * h), epsilon = 1e-6);
                let fd2 = (up[l] - 2.0 * mid[l] + down[l]) / (h * h);
                assert_abs_diff_eq!(d2[l], fd2, epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn partition_of_unity_and_range() {
        let basis = BSplineBasis::new(0.0, 10.0, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..=10.0)).collect();
        let m = basis.eval(&points).unwrap();
        for i in 0..points.len() {
            let row = m.row(i);
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn clamped_endpoint() {
        let basis = BSplineBasis::new(0.0, 10.0, 10).unwrap();
        let row = basis.eval_point(0.0).unwrap();
        assert_eq!(row[0], 1.0);
        assert!(row[1..].iter().all(|&v| v == 0.0));
        let row = basis.eval_point(10.0).unwrap();
        assert_eq!(row[9], 1.0);
    }

    #[test]
    fn local_support() {
        let basis = BSplineBasis::new(0.0, 10.0, 10).unwrap();
        let row = basis.eval_point(5.0).unwrap();
        assert!(row.iter().filter(|v| **v != 0.0).count() <= 4);
    }

    #[test]
    fn out_of_domain_rejected() {
        let basis = BSplineBasis::new(0.0, 1.0, 6).unwrap();
        assert!(matches!(basis.eval_point(1.5), Err(Error::Domain { .. })));
        assert!(basis.eval_point(1.0 + 1e-13).is_ok());
        assert!(BSplineBasis::new(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn penalty_null_space_and_psd() {
        let basis = BSplineBasis::new(0.0, 10.0, 20).unwrap();
        let d = basis.penalty_matrix();
        assert_abs_diff_eq!((&d - d.transpose()).abs().max(), 0.0, epsilon = 1e-12);

        let ones = DVector::from_element(20, 3.5);
        assert!((ones.transpose() * &d * &ones)[(0, 0)].abs() < 1e-10);
        let line = DVector::from_vec(basis.greville());
        assert!((line.transpose() * &d * &line)[(0, 0)].abs() < 1e-8);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let c = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
            assert!((c.transpose() * &d * &c)[(0, 0)] >= 0.0);
        }

        let mut eig: Vec<f64> = d.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(eig[0].abs() < 1e-8 && eig[1].abs() < 1e-8);
        assert!(eig[2] > 1e-6);
        assert_eq!(psd_eigen(&d).1.iter().filter(|v| **v > 0.0).count(), 18);
    }

    #[test]
    fn greville_reproduces_affine() {
        let basis = BSplineBasis::new(0.0, 10.0, 11).unwrap();
        let coef: Vec<f64> = basis.greville().iter().map(|g| 2.0 - 0.5 * g).collect();
        let pts = [0.0, 1.1, 4.4, 9.9, 10.0];
        let vals = basis.expand(&coef, &pts).unwrap();
        for (v, t) in vals.iter().zip(pts) {
            assert_abs_diff_eq!(*v, 2.0 - 0.5 * t, epsilon = 1e-12);
        }
    }

    #[test]
    fn ff_rows_examples() {
        let grid = Grid::uniform(0.0, 10.0, 101).unwrap();
        let w = grid.weights();
        let tb = TensorBasis::new(
            BSplineBasis::new(0.0, 10.0, 8).unwrap(),
            BSplineBasis::new(0.0, 10.0, 8).unwrap(),
        );
        let zero = ff_design_rows(&vec![0.0; 101], &w, grid.points(), &tb, grid.points()).unwrap();
        assert_eq!(zero.ncols(), 64);
        assert_eq!(zero.abs().max(), 0.0);

        // constant surface c: all tensor coefficients equal c
        let c = 0.7;
        let rows = ff_design_rows(&vec![1.0; 101], &w, grid.points(), &tb, grid.points()).unwrap();
        let fitted = rows * DVector::from_element(64, c);
        for v in fitted.iter() {
            assert_abs_diff_eq!(*v, c * 10.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn ff_rows_linear_in_predictor() {
        let grid = Grid::uniform(0.0, 1.0, 31).unwrap();
        let w = grid.weights();
        let tb = TensorBasis::new(
            BSplineBasis::new(0.0, 1.0, 5).unwrap(),
            BSplineBasis::new(0.0, 1.0, 6).unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x1: Vec<f64> = (0..31).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..31).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (1.7, -0.4);
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect();
        let t = [0.0, 0.25, 0.8];
        let r1 = ff_design_rows(&x1, &w, grid.points(), &tb, &t).unwrap();
        let r2 = ff_design_rows(&x2, &w, grid.points(), &tb, &t).unwrap();
        let rm = ff_design_rows(&mix, &w, grid.points(), &tb, &t).unwrap();
        assert!((rm - (r1 * a + r2 * b)).abs().max() < 1e-12);
    }

    #[test]
    fn tensor_penalty_null_space() {
        let tb = TensorBasis::new(
            BSplineBasis::new(0.0, 1.0, 5).unwrap(),
            BSplineBasis::new(0.0, 1.0, 6).unwrap(),
        );
        let d = tb.penalty_matrix();
        let ones = DVector::from_element(30, 1.0);
        assert!((ones.transpose() * &d * &ones)[(0, 0)].abs() < 1e-9);
    }

    #[test]
    fn config_parses() {
        let cfg: BasisConfig =
            serde_json::from_str(r#"{ "L": 20, "kind": "bspline-cubic", "penalty_order": 2 }"#).unwrap();
        assert_eq!(cfg, BasisConfig::cubic(20));
        let bad = BasisConfig {
            penalty_order: 3,
            ..cfg
        };
        assert!(bad.build(0.0, 1.0).is_err());
    }
}
