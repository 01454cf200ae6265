//! Latent-source sampling, the perturbed linear mixing `x = As + eta h(s)`
//! with decorrelated nonlinearities, Jacobian evaluation, and Monte Carlo
//! estimation of the non-isometry functional Theta_p.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, tag};

/// Per-coordinate latent distribution, standardized to mean 0 and variance 1.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceFamily {
    /// Laplace with scale 1/sqrt(2).
    Laplace,
    /// Uniform on [-sqrt(3), sqrt(3)].
    Uniform,
    /// Standard normal. Degenerate for ICA (alpha = 0); kept as the control
    /// case for non-degeneracy diagnostics.
    Gaussian,
    /// Discrete distribution on standardized atoms; moments come straight
    /// from the table.
    Custom { points: Vec<f64>, weights: Vec<f64> },
}

const LAPLACE_B: f64 = std::f64::consts::FRAC_1_SQRT_2;
const UNIFORM_HALF_WIDTH: f64 = 1.732_050_807_568_877_2; // sqrt(3)

impl SourceFamily {
    /// Discrete family from raw atoms; shifts and scales them to mean 0,
    /// variance 1 and normalizes the weights.
    pub fn custom(points: &[f64], weights: &[f64]) -> Result<Self> {
        if points.len() != weights.len() || points.len() < 2 {
            return Err(Error::InvalidParameter {
                context: "custom family needs >= 2 weighted atoms".into(),
            });
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter {
                context: "custom family weights must be positive and finite".into(),
            });
        }
        let total: f64 = weights.iter().sum();
        let w: Vec<f64> = weights.iter().map(|v| v / total).collect();
        let mean: f64 = points.iter().zip(&w).map(|(p, q)| p * q).sum();
        let var: f64 = points.iter().zip(&w).map(|(p, q)| (p - mean) * (p - mean) * q).sum();
        if var <= 0.0 {
            return Err(Error::InvalidParameter {
                context: "custom family has zero variance".into(),
            });
        }
        let sd = var.sqrt();
        let pts: Vec<f64> = points.iter().map(|p| (p - mean) / sd).collect();
        Ok(SourceFamily::Custom { points: pts, weights: w })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SourceFamily::Laplace => "laplace",
            SourceFamily::Uniform => "uniform",
            SourceFamily::Gaussian => "gaussian",
            SourceFamily::Custom { .. } => "custom",
        }
    }

    /// One standardized draw.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            SourceFamily::Laplace => {
                let mut u: f64 = rng.gen();
                while u == 0.0 {
                    u = rng.gen();
                }
                let t = u - 0.5;
                -LAPLACE_B * t.signum() * (1.0 - 2.0 * t.abs()).ln()
            }
            SourceFamily::Uniform => (rng.gen::<f64>() - 0.5) * 2.0 * UNIFORM_HALF_WIDTH,
            SourceFamily::Gaussian => rng.sample(StandardNormal),
            SourceFamily::Custom { points, weights } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (p, w) in points.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return *p;
                    }
                }
                *points.last().unwrap()
            }
        }
    }

    /// Raw moment E S^k, exact.
    pub fn moment(&self, k: u32) -> f64 {
        match self {
            SourceFamily::Laplace => {
                if k % 2 == 1 {
                    0.0
                } else {
                    // k! * b^k with b^2 = 1/2 exactly
                    (1..=k as u64).product::<u64>() as f64 * 0.5f64.powi((k / 2) as i32)
                }
            }
            SourceFamily::Uniform => {
                if k % 2 == 1 {
                    0.0
                } else {
                    UNIFORM_HALF_WIDTH.powi(k as i32) / (k as f64 + 1.0)
                }
            }
            SourceFamily::Gaussian => {
                if k % 2 == 1 {
                    0.0
                } else {
                    // double factorial (k-1)!!
                    (1..=k as u64).step_by(2).product::<u64>() as f64
                }
            }
            SourceFamily::Custom { points, weights } => points
                .iter()
                .zip(weights)
                .map(|(p, w)| p.powi(k as i32) * w)
                .sum(),
        }
    }

    /// Expectation E f(S) by composite Simpson quadrature against the family
    /// density (exact atom sum for discrete families).
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self {
            SourceFamily::Laplace => {
                let density = |s: f64| (-(s.abs()) / LAPLACE_B).exp() / (2.0 * LAPLACE_B);
                let l = 45.0 * LAPLACE_B;
                // split at the density kink
                simpson(|s| f(s) * density(s), -l, 0.0, 20_000)
                    + simpson(|s| f(s) * density(s), 0.0, l, 20_000)
            }
            SourceFamily::Uniform => {
                let w = UNIFORM_HALF_WIDTH;
                simpson(|s| f(s) / (2.0 * w), -w, w, 20_000)
            }
            SourceFamily::Gaussian => {
                let density =
                    |s: f64| (-(s * s) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
                simpson(|s| f(s) * density(s), -12.0, 12.0, 20_000)
            }
            SourceFamily::Custom { points, weights } => {
                points.iter().zip(weights).map(|(p, w)| f(*p) * w).sum()
            }
        }
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n_half: usize) -> f64 {
    let n = 2 * n_half;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

/// Independent latent sources: dimension, per-coordinate family, RNG seed.
#[derive(Debug, Clone)]
pub struct SourceSpec {
    pub dim: usize,
    pub families: Vec<SourceFamily>,
    pub seed: u64,
}

impl SourceSpec {
    /// All coordinates share one family.
    pub fn iid(dim: usize, family: SourceFamily, seed: u64) -> Self {
        SourceSpec {
            dim,
            families: vec![family; dim],
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SourceSpec {
            seed,
            ..self.clone()
        }
    }
}

/// Draw an n x d block of i.i.d. source rows; deterministic given the seed.
pub fn sample_sources(spec: &SourceSpec, n: usize) -> Array2<f64> {
    let mut r = rng::stream_for(spec.seed, &[tag::SOURCES]);
    let mut x = Array2::zeros((n, spec.dim));
    for i in 0..n {
        for j in 0..spec.dim {
            x[[i, j]] = spec.families[j].sample(&mut r);
        }
    }
    x
}

/// Coefficients of the decorrelated cubic `h_i(s) = scale_i (s^3 - beta_i s - shift_i)`.
#[derive(Debug, Clone)]
pub struct CubicCoeffs {
    pub beta: Vec<f64>,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Coefficients of the smooth bounded perturbation
/// `h_i(s) = scale_i (tanh(slope_i s + shift_i) - lin_i s - offset_i)`;
/// its Jacobian diagonal is a smooth bump. `lin`/`offset` remove the linear
/// and constant parts so that E h_i = 0 and E h_i S_i = 0.
#[derive(Debug, Clone)]
pub struct BumpCoeffs {
    pub slope: Vec<f64>,
    pub shift: Vec<f64>,
    pub lin: Vec<f64>,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Structured nonlinear perturbation of the mixing.
#[derive(Debug, Clone)]
pub enum Perturbation {
    None,
    Cubic(CubicCoeffs),
    SmoothBump(BumpCoeffs),
}

/// Build the decorrelated cubic from exact family moments:
/// `beta_i = E S^4 / E S^2`, `shift_i = E(S^3 - beta_i S)`, and `scale_i`
/// normalizes `E h_i^2 = 1`.
pub fn make_cubic_perturbation(spec: &SourceSpec) -> Result<CubicCoeffs> {
    let mut beta = Vec::with_capacity(spec.dim);
    let mut shift = Vec::with_capacity(spec.dim);
    let mut scale = Vec::with_capacity(spec.dim);
    for fam in &spec.families {
        let m1 = fam.moment(1);
        let m2 = fam.moment(2);
        let m3 = fam.moment(3);
        let m4 = fam.moment(4);
        let m6 = fam.moment(6);
        if !m6.is_finite() {
            return Err(Error::InfiniteMoment {
                family: fam.name().into(),
            });
        }
        let b = m4 / m2;
        let c = m3 - b * m1;
        let var = fam.expect(|s| {
            let v = s * s * s - b * s - c;
            v * v
        });
        if var <= 0.0 {
            return Err(Error::InvalidParameter {
                context: format!("cubic perturbation degenerates for family {}", fam.name()),
            });
        }
        beta.push(b);
        shift.push(c);
        scale.push(1.0 / var.sqrt());
    }
    Ok(CubicCoeffs { beta, shift, scale })
}

/// Build the smooth bounded perturbation; `lin`, `offset`, `scale` come from
/// quadrature against each family density so population decorrelation is
/// exact.
pub fn make_smooth_bump(spec: &SourceSpec, slopes: &[f64], shifts: &[f64]) -> Result<BumpCoeffs> {
    if slopes.len() != spec.dim || shifts.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            context: "smooth bump slopes/shifts must match spec.dim".into(),
        });
    }
    let mut lin = Vec::with_capacity(spec.dim);
    let mut offset = Vec::with_capacity(spec.dim);
    let mut scale = Vec::with_capacity(spec.dim);
    for (j, fam) in spec.families.iter().enumerate() {
        let a = slopes[j];
        let b = shifts[j];
        let m2 = fam.moment(2);
        let g = fam.expect(|s| (a * s + b).tanh() * s) / m2;
        let c = fam.expect(|s| (a * s + b).tanh() - g * s);
        let var = fam.expect(|s| {
            let v = (a * s + b).tanh() - g * s - c;
            v * v
        });
        if var <= 1e-14 {
            return Err(Error::InvalidParameter {
                context: format!("smooth bump degenerates for family {}", fam.name()),
            });
        }
        lin.push(g);
        offset.push(c);
        scale.push(1.0 / var.sqrt());
    }
    Ok(BumpCoeffs {
        slope: slopes.to_vec(),
        shift: shifts.to_vec(),
        lin,
        offset,
        scale,
    })
}

/// The perturbed linear mixing `x = A s + eta h(s)`.
#[derive(Debug, Clone)]
pub struct MixingModel {
    pub a: Array2<f64>,
    pub eta: f64,
    pub perturbation: Perturbation,
}

impl MixingModel {
    pub fn new(a: Array2<f64>, eta: f64, perturbation: Perturbation) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::NonSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let det = linalg::determinant(&a)?;
        if det == 0.0 || !det.is_finite() {
            return Err(Error::SingularMatrix);
        }
        if eta < 0.0 {
            return Err(Error::InvalidParameter {
                context: format!("eta must be non-negative, got {eta}"),
            });
        }
        Ok(MixingModel { a, eta, perturbation })
    }

    pub fn linear(a: Array2<f64>) -> Result<Self> {
        Self::new(a, 0.0, Perturbation::None)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn h_scalar(&self, j: usize, s: f64) -> f64 {
        match &self.perturbation {
            Perturbation::None => 0.0,
            Perturbation::Cubic(c) => c.scale[j] * (s * s * s - c.beta[j] * s - c.shift[j]),
            Perturbation::SmoothBump(b) => {
                b.scale[j] * ((b.slope[j] * s + b.shift[j]).tanh() - b.lin[j] * s - b.offset[j])
            }
        }
    }

    fn dh_scalar(&self, j: usize, s: f64) -> f64 {
        match &self.perturbation {
            Perturbation::None => 0.0,
            Perturbation::Cubic(c) => c.scale[j] * (3.0 * s * s - c.beta[j]),
            Perturbation::SmoothBump(b) => {
                let t = (b.slope[j] * s + b.shift[j]).tanh();
                b.scale[j] * (b.slope[j] * (1.0 - t * t) - b.lin[j])
            }
        }
    }

    /// Coordinatewise nonlinearity evaluated row-wise on a sample block.
    pub fn apply_h(&self, sources: &Array2<f64>) -> Array2<f64> {
        let (n, d) = sources.dim();
        let mut h = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                h[[i, j]] = self.h_scalar(j, sources[[i, j]]);
            }
        }
        h
    }

    /// `f(s) = A s + eta h(s)` for one latent point.
    pub fn map_row(&self, s: ArrayView1<f64>) -> Array1<f64> {
        let mut out = self.a.dot(&s);
        for j in 0..self.dim() {
            out[j] += self.eta * self.h_scalar(j, s[j]);
        }
        out
    }

    /// Analytic Jacobian `Df(s) = A + eta Dh(s)`; `Dh` is diagonal because
    /// the perturbation acts coordinatewise.
    pub fn jacobian_row(&self, s: ArrayView1<f64>) -> Array2<f64> {
        let mut j = self.a.clone();
        for k in 0..self.dim() {
            j[[k, k]] += self.eta * self.dh_scalar(k, s[k]);
        }
        j
    }
}

/// Observed block `X = S A^T + eta h(S)`, row-wise.
pub fn mix(model: &MixingModel, sources: &Array2<f64>) -> Result<Array2<f64>> {
    if sources.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "sources have {} columns, mixing is {}-dimensional",
                sources.ncols(),
                model.dim()
            ),
        });
    }
    let mut x = sources.dot(&model.a.t());
    if model.eta != 0.0 {
        if let Perturbation::None = model.perturbation {
        } else {
            let h = model.apply_h(sources);
            x.scaled_add(model.eta, &h);
        }
    }
    Ok(x)
}

/// Sample decorrelation diagnostics for a perturbation on a source block.
#[derive(Debug, Clone, Copy)]
pub struct PerturbationDiagnostics {
    /// max_i |mean h_i|
    pub max_abs_mean: f64,
    /// max_{i,j} |mean h_i(S) S_j|
    pub max_abs_cross: f64,
    /// max_i |mean h_i^2 - 1|
    pub max_var_dev: f64,
}

/// Measure how well the decorrelation constraints hold on a sample.
pub fn perturbation_diagnostics(model: &MixingModel, sources: &Array2<f64>) -> PerturbationDiagnostics {
    let h = model.apply_h(sources);
    let n = sources.nrows() as f64;
    let d = sources.ncols();
    let mut max_abs_mean: f64 = 0.0;
    let mut max_abs_cross: f64 = 0.0;
    let mut max_var_dev: f64 = 0.0;
    for i in 0..d {
        let hi = h.column(i);
        let mean = hi.sum() / n;
        max_abs_mean = max_abs_mean.max(mean.abs());
        let var = hi.iter().map(|v| v * v).sum::<f64>() / n;
        max_var_dev = max_var_dev.max((var - 1.0).abs());
        for j in 0..d {
            let cross = hi
                .iter()
                .zip(sources.column(j))
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n;
            max_abs_cross = max_abs_cross.max(cross.abs());
        }
    }
    PerturbationDiagnostics {
        max_abs_mean,
        max_abs_cross,
        max_var_dev,
    }
}

/// Random mixing matrix with i.i.d. N(0, 1/d) entries, resampled until
/// `|det| >= 1e-6` and condition number `<= 1e3` (at most 100 attempts).
pub fn random_mixing_matrix(d: usize, seed: u64) -> Result<Array2<f64>> {
    if d < 2 {
        return Err(Error::InvalidParameter {
            context: format!("mixing dimension must be >= 2, got {d}"),
        });
    }
    let mut r = rng::stream_for(seed, &[tag::MIXING]);
    let sd = (1.0 / d as f64).sqrt();
    let max_attempts = 100usize;
    for attempt in 0..max_attempts {
        let mut a = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                let g: f64 = r.sample(StandardNormal);
                a[[i, j]] = g * sd;
            }
        }
        let det = linalg::determinant(&a)?;
        let f = linalg::svd(&a);
        let cond = f.sigma[0] / f.sigma[d - 1];
        if det.abs() >= 1e-6 && cond <= 1e3 {
            if attempt > 0 {
                log::debug!("random_mixing_matrix: accepted after {} resamples", attempt);
            }
            return Ok(a);
        }
    }
    Err(Error::MixingResampleExhausted {
        attempts: max_attempts,
    })
}

/// Random rotation: project a Gaussian matrix with fixed orientation onto SO(d).
pub fn random_rotation(d: usize, seed: u64) -> Result<Array2<f64>> {
    let mut r = rng::stream_for(seed, &[tag::ROTATION]);
    for _ in 0..100 {
        let mut g = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                g[[i, j]] = r.sample::<f64, _>(StandardNormal);
            }
        }
        let g = linalg::fix_orientation(&g)?;
        if let Ok(q) = linalg::project_to_so(&g) {
            return Ok(q);
        }
    }
    Err(Error::MixingResampleExhausted { attempts: 100 })
}

/// How the Jacobian of a mixing is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

/// Pointwise Jacobian evaluator for a mixing model.
#[derive(Debug, Clone)]
pub struct JacobianField {
    pub model: MixingModel,
    pub mode: JacobianMode,
}

/// Analytic Jacobian field of a mixing.
pub fn jacobian_of_mixing(model: &MixingModel) -> JacobianField {
    JacobianField {
        model: model.clone(),
        mode: JacobianMode::Analytic,
    }
}

/// Central-difference Jacobian field (step `1e-5 (1 + |s|)`), the oracle
/// counterpart of the analytic mode.
pub fn jacobian_of_mixing_fd(model: &MixingModel) -> JacobianField {
    JacobianField {
        model: model.clone(),
        mode: JacobianMode::FiniteDifference,
    }
}

impl JacobianField {
    pub fn eval(&self, s: ArrayView1<f64>) -> Array2<f64> {
        match self.mode {
            JacobianMode::Analytic => self.model.jacobian_row(s),
            JacobianMode::FiniteDifference => {
                let d = self.model.dim();
                let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                let step = 1e-5 * (1.0 + norm);
                let mut j = Array2::zeros((d, d));
                let mut splus = s.to_owned();
                let mut sminus = s.to_owned();
                for col in 0..d {
                    splus[col] += step;
                    sminus[col] -= step;
                    let fp = self.model.map_row(splus.view());
                    let fm = self.model.map_row(sminus.view());
                    for row in 0..d {
                        j[[row, col]] = (fp[row] - fm[row]) / (2.0 * step);
                    }
                    splus[col] = s[col];
                    sminus[col] = s[col];
                }
                j
            }
        }
    }
}

/// Monte Carlo estimate of the non-isometry functional Theta_p.
#[derive(Debug, Clone, Copy)]
pub struct ThetaEstimate {
    pub p: f64,
    pub value: f64,
    pub mc_points: usize,
    pub std_error: f64,
}

/// Sigma floor for Jacobians entering the Theta estimator.
pub const JACOBIAN_SIGMA_MIN: f64 = 1e-8;

/// Aggregate `dist((J^T J)^{1/2}, SO)^p + dist((J^T J)^{-1/2}, SO)^p` over
/// Jacobian samples; both terms come from one SVD per sample. The domain
/// measure is normalized (vol = 1).
pub fn theta_from_jacobians<I>(jacobians: I, p: f64) -> Result<ThetaEstimate>
where
    I: IntoIterator<Item = Array2<f64>>,
{
    if p <= 1.0 {
        return Err(Error::InvalidParameter {
            context: format!("theta exponent must satisfy p > 1, got {p}"),
        });
    }
    let mut n = 0usize;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for j in jacobians {
        let f = linalg::svd(&j);
        let sigma_min = f.sigma[f.sigma.len() - 1];
        if sigma_min < JACOBIAN_SIGMA_MIN {
            return Err(Error::RankDeficient { sigma_min });
        }
        let fwd = linalg::so_defect(&f.sigma);
        let inv = linalg::so_defect(&f.sigma.mapv(|s| 1.0 / s));
        let integrand = fwd.powf(p) + inv.powf(p);
        // Welford accumulation keeps the variance pass single-shot.
        n += 1;
        let delta = integrand - mean;
        mean += delta / n as f64;
        m2 += delta * (integrand - mean);
    }
    if n == 0 {
        return Err(Error::TooFewSamples {
            required: 1,
            actual: 0,
        });
    }
    let value = if mean <= 0.0 { 0.0 } else { mean.powf(1.0 / p) };
    let se_mean = if n > 1 {
        (m2 / ((n - 1) as f64 * n as f64)).sqrt()
    } else {
        0.0
    };
    let std_error = if mean > 0.0 {
        se_mean * mean.powf(1.0 / p - 1.0) / p
    } else {
        0.0
    };
    Ok(ThetaEstimate {
        p,
        value,
        mc_points: n,
        std_error,
    })
}

/// Theta_p of a Jacobian field over Monte Carlo points drawn from the
/// (normalized) domain measure.
pub fn estimate_theta(field: &JacobianField, points: &Array2<f64>, p: f64) -> Result<ThetaEstimate> {
    if points.nrows() < 100 {
        return Err(Error::TooFewSamples {
            required: 100,
            actual: points.nrows(),
        });
    }
    if points.ncols() != field.model.dim() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "theta points have {} columns, field is {}-dimensional",
                points.ncols(),
                field.model.dim()
            ),
        });
    }
    theta_from_jacobians(points.rows().into_iter().map(|s| field.eval(s)), p)
}

/// `mc_points` matrices of shape `big_d x d` with i.i.d. N(0,1) entries,
/// scaled by `1/sqrt(big_d)`.
pub fn random_gaussian_jacobians(
    d: usize,
    big_d: usize,
    mc_points: usize,
    seed: u64,
) -> Result<impl Iterator<Item = Array2<f64>>> {
    if big_d < d {
        return Err(Error::DimensionMismatch {
            context: format!("need big_d >= d, got big_d = {big_d}, d = {d}"),
        });
    }
    let mut r = rng::stream_for(seed, &[tag::JACOBIANS]);
    let inv_sqrt_d = 1.0 / (big_d as f64).sqrt();
    Ok((0..mc_points).map(move |_| {
        let mut j = Array2::zeros((big_d, d));
        for row in 0..big_d {
            for col in 0..d {
                let g: f64 = r.sample(StandardNormal);
                j[[row, col]] = g * inv_sqrt_d;
            }
        }
        j
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn column_moment(x: &Array2<f64>, col: usize, k: i32) -> f64 {
        x.column(col).iter().map(|v| v.powi(k)).sum::<f64>() / x.nrows() as f64
    }

    #[test]
    fn family_moments_match_closed_forms() {
        assert_eq!(SourceFamily::Laplace.moment(2), 1.0);
        assert_eq!(SourceFamily::Laplace.moment(4), 6.0);
        assert_eq!(SourceFamily::Laplace.moment(6), 90.0);
        assert!((SourceFamily::Uniform.moment(2) - 1.0).abs() < 1e-14);
        assert!((SourceFamily::Uniform.moment(4) - 1.8).abs() < 1e-14);
        assert!((SourceFamily::Uniform.moment(6) - 27.0 / 7.0).abs() < 1e-13);
        assert_eq!(SourceFamily::Gaussian.moment(4), 3.0);
        assert_eq!(SourceFamily::Gaussian.moment(6), 15.0);
    }

    #[test]
    fn quadrature_agrees_with_moments() {
        for fam in [
            SourceFamily::Laplace,
            SourceFamily::Uniform,
            SourceFamily::Gaussian,
        ] {
            for k in [2u32, 4, 6] {
                let q = fam.expect(|s| s.powi(k as i32));
                assert!(
                    (q - fam.moment(k)).abs() < 1e-9 * (1.0 + fam.moment(k)),
                    "family {} moment {k}: quadrature {q} vs exact {}",
                    fam.name(),
                    fam.moment(k)
                );
            }
        }
    }

    #[test]
    fn sampling_is_standardized_and_deterministic() {
        let n = 200_000;
        let spec = SourceSpec {
            dim: 3,
            families: vec![
                SourceFamily::Laplace,
                SourceFamily::Uniform,
                SourceFamily::custom(&[-2.0, 0.5, 3.0], &[0.3, 0.5, 0.2]).unwrap(),
            ],
            seed: 11,
        };
        let x = sample_sources(&spec, n);
        let bound_mean = 4.0 / (n as f64).sqrt();
        let bound_var = 8.0 / (n as f64).sqrt();
        for j in 0..3 {
            assert!(column_moment(&x, j, 1).abs() <= bound_mean, "column {j} mean");
            assert!((column_moment(&x, j, 2) - 1.0).abs() <= bound_var, "column {j} var");
        }
        let y = sample_sources(&spec, n);
        assert_eq!(x, y);
    }

    #[test]
    fn cubic_coefficients_laplace_gaussian_uniform() {
        let lap = SourceSpec::iid(2, SourceFamily::Laplace, 0);
        let c = make_cubic_perturbation(&lap).unwrap();
        assert!((c.beta[0] - 6.0).abs() < 1e-12);
        assert!(c.shift[0].abs() < 1e-12);
        assert!((c.scale[0] - 1.0 / 54.0f64.sqrt()).abs() < 1e-9);

        let gauss = SourceSpec::iid(1, SourceFamily::Gaussian, 0);
        let c = make_cubic_perturbation(&gauss).unwrap();
        assert!((c.beta[0] - 3.0).abs() < 1e-12);
        assert!(c.shift[0].abs() < 1e-12);
        assert!((c.scale[0] - 1.0 / 6.0f64.sqrt()).abs() < 1e-9);

        let uni = SourceSpec::iid(1, SourceFamily::Uniform, 0);
        let c = make_cubic_perturbation(&uni).unwrap();
        assert!(c.shift[0].abs() < 1e-12);
    }

    #[test]
    fn mix_reduces_to_sources_for_identity() {
        let spec = SourceSpec::iid(2, SourceFamily::Laplace, 5);
        let s = sample_sources(&spec, 500);
        let model = MixingModel::linear(Array2::eye(2)).unwrap();
        let x = mix(&model, &s).unwrap();
        assert_eq!(x, s);
    }

    #[test]
    fn smooth_bump_is_population_decorrelated() {
        let spec = SourceSpec::iid(2, SourceFamily::Laplace, 3);
        let bump = make_smooth_bump(&spec, &[1.0, 1.4], &[0.0, 0.3]).unwrap();
        let model = MixingModel::new(Array2::eye(2), 1.0, Perturbation::SmoothBump(bump)).unwrap();
        // quadrature check per coordinate: mean, correlation with s, unit power
        for j in 0..2 {
            let fam = &spec.families[j];
            let mean = fam.expect(|s| model.h_scalar(j, s));
            let cross = fam.expect(|s| model.h_scalar(j, s) * s);
            let power = fam.expect(|s| model.h_scalar(j, s).powi(2));
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!(cross.abs() < 1e-9, "cross {cross}");
            assert!((power - 1.0).abs() < 1e-8, "power {power}");
        }
    }

    #[test]
    fn random_mixing_matrix_contract() {
        let a = random_mixing_matrix(5, 7).unwrap();
        let b = random_mixing_matrix(5, 7).unwrap();
        assert_eq!(a, b);
        assert!(linalg::determinant(&a).unwrap().abs() > 1e-6);

        // mean squared Frobenius norm ~ d over 1000 draws, 10% tolerance
        let draws = 1000;
        let mut acc = 0.0;
        for k in 0..draws {
            let m = random_mixing_matrix(5, 900 + k).unwrap();
            acc += m.iter().map(|v| v * v).sum::<f64>();
        }
        let mean = acc / draws as f64;
        assert!((mean - 5.0).abs() < 0.5, "mean |A|_F^2 = {mean}");

        // Gaussian tails: no entry beyond 8/sqrt(d) in 1000 draws at d=2
        let bound = 8.0 / 2.0f64.sqrt();
        for k in 0..1000u64 {
            let m = random_mixing_matrix(2, 40_000 + k).unwrap();
            assert!(m.iter().all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn jacobian_analytic_examples() {
        let spec = SourceSpec::iid(1, SourceFamily::Laplace, 0);
        let cubic = make_cubic_perturbation(&spec).unwrap();
        let scale = cubic.scale[0];
        let beta = cubic.beta[0];
        let eta = 0.2;
        let model = MixingModel::new(array![[1.0]], eta, Perturbation::Cubic(cubic)).unwrap();
        let j = model.jacobian_row(array![0.0].view());
        assert!((j[[0, 0]] - (1.0 - eta * scale * beta)).abs() < 1e-12);

        let lin = MixingModel::linear(array![[1.0, 0.4], [0.0, 2.0]]).unwrap();
        let j = lin.jacobian_row(array![3.0, -1.0].view());
        assert_eq!(j, lin.a);
    }

    #[test]
    fn finite_difference_matches_analytic() {
        let spec = SourceSpec::iid(3, SourceFamily::Laplace, 21);
        let cubic = make_cubic_perturbation(&spec).unwrap();
        let a = random_mixing_matrix(3, 21).unwrap();
        let norm_a = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let model = MixingModel::new(a, 0.3, Perturbation::Cubic(cubic)).unwrap();
        let analytic = jacobian_of_mixing(&model);
        let fd = jacobian_of_mixing_fd(&model);
        let pts = sample_sources(&spec, 100);
        let mut max_gap: f64 = 0.0;
        for s in pts.rows() {
            let ja = analytic.eval(s);
            let jf = fd.eval(s);
            for (x, y) in ja.iter().zip(jf.iter()) {
                max_gap = max_gap.max((x - y).abs());
            }
        }
        assert!(max_gap <= 1e-6 * (1.0 + norm_a), "max gap {max_gap}");
    }

    #[test]
    fn theta_of_rotation_field_is_zero() {
        let q = random_rotation(3, 17).unwrap();
        let model = MixingModel::linear(q).unwrap();
        let field = jacobian_of_mixing(&model);
        let pts = sample_sources(&SourceSpec::iid(3, SourceFamily::Laplace, 2), 200);
        let est = estimate_theta(&field, &pts, 2.0).unwrap();
        assert!(est.value < 1e-9);
        assert!(est.std_error < 1e-9);
    }

    #[test]
    fn theta_constant_diagonal_field() {
        // dist(diag(2,1), SO)^2 = 1, dist(diag(1/2,1), SO)^2 = 1/4
        let model = MixingModel::linear(array![[2.0, 0.0], [0.0, 1.0]]).unwrap();
        let field = jacobian_of_mixing(&model);
        let pts = sample_sources(&SourceSpec::iid(2, SourceFamily::Uniform, 4), 150);
        let est = estimate_theta(&field, &pts, 2.0).unwrap();
        assert!((est.value - 1.25f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn theta_invariant_under_left_rotation() {
        let q = random_rotation(4, 3).unwrap();
        let jacs: Vec<Array2<f64>> = random_gaussian_jacobians(4, 4, 300, 9)
            .unwrap()
            .filter(|j| {
                let f = linalg::svd(j);
                f.sigma[3] > 1e-3
            })
            .collect();
        let t0 = theta_from_jacobians(jacs.iter().cloned(), 2.0).unwrap();
        let t1 = theta_from_jacobians(jacs.iter().map(|j| q.dot(j)), 2.0).unwrap();
        assert!((t0.value - t1.value).abs() < 1e-9);
    }

    #[test]
    fn gaussian_jacobian_chi_square_moments() {
        // d = 1: the 1x1 Gram entry is a mean of D squared normals
        let big_d = 50;
        let draws: Vec<f64> = random_gaussian_jacobians(1, big_d, 4000, 123)
            .unwrap()
            .map(|j| j.iter().map(|v| v * v).sum::<f64>())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / draws.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        let expected_var = 2.0 / big_d as f64;
        assert!((var - expected_var).abs() < 0.3 * expected_var, "var {var}");
    }

    #[test]
    fn gaussian_jacobian_gram_deviation() {
        // E |(1/D) Df^T Df - Id|_F^2 = (d^2 + d) / D
        let (d, big_d, mc) = (5usize, 100usize, 4000usize);
        let mut acc = 0.0;
        for j in random_gaussian_jacobians(d, big_d, mc, 77).unwrap() {
            let gram = j.t().dot(&j);
            let dev = &gram - &Array2::<f64>::eye(d);
            acc += dev.iter().map(|v| v * v).sum::<f64>();
        }
        let mean = acc / mc as f64;
        let expected = (d * d + d) as f64 / big_d as f64;
        assert!((mean - expected).abs() < 0.15 * expected, "mean {mean} vs {expected}");
    }

    #[test]
    fn theta_estimator_rejects_bad_input() {
        let model = MixingModel::linear(Array2::eye(2)).unwrap();
        let field = jacobian_of_mixing(&model);
        let pts = Array2::zeros((10, 2));
        assert!(matches!(
            estimate_theta(&field, &pts, 2.0),
            Err(Error::TooFewSamples { .. })
        ));
        let pts = Array2::zeros((200, 2));
        assert!(estimate_theta(&field, &pts, 1.0).is_err());

        let singular = MixingModel::linear(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let mut bad_field = jacobian_of_mixing(&singular);
        bad_field.model.a[[1, 1]] = 0.0;
        assert!(matches!(
            estimate_theta(&bad_field, &pts, 2.0),
            Err(Error::RankDeficient { .. })
        ));
    }
}
