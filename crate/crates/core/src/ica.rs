//! Contrast functions, the sphere objective `H(w) = E G(w^T z)`, the
//! fixed-point and projected-gradient extremum searches, and the reference
//! vectors: the exact unperturbed extremum `w_bar` and its second-order
//! correction `w_tilde`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{MixingModel, Perturbation, SourceSpec};
use crate::rng::{self, tag};

/// Guard below which the non-degeneracy statistic is treated as vanishing.
pub const ALPHA_GUARD: f64 = 0.05;

/// Even contrast nonlinearity with derivatives and growth data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastFunction {
    /// `G = ln cosh`; growth exponent 1.
    LogCosh,
    /// `G = s^4`; growth exponent 4.
    Quartic,
}

impl ContrastFunction {
    pub fn name(&self) -> &'static str {
        match self {
            ContrastFunction::LogCosh => "logcosh",
            ContrastFunction::Quartic => "quartic",
        }
    }

    /// G itself.
    pub fn g0(&self, x: f64) -> f64 {
        match self {
            // |x| - ln 2 + ln(1 + e^{-2|x|}) is stable for large |x| and
            // exactly even.
            ContrastFunction::LogCosh => {
                let a = x.abs();
                a - std::f64::consts::LN_2 + (-2.0 * a).exp().ln_1p()
            }
            ContrastFunction::Quartic => {
                let x2 = x * x;
                x2 * x2
            }
        }
    }

    /// g = G'.
    pub fn g(&self, x: f64) -> f64 {
        match self {
            ContrastFunction::LogCosh => x.tanh(),
            ContrastFunction::Quartic => 4.0 * x * x * x,
        }
    }

    /// g' = G''.
    pub fn g_prime(&self, x: f64) -> f64 {
        match self {
            ContrastFunction::LogCosh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ContrastFunction::Quartic => 12.0 * x * x,
        }
    }

    /// Growth exponent d_g in `|G^(k)(x)| <= C_g (1 + |x|)^{max(d_g - k, 0)}`.
    pub fn growth_exponent(&self) -> u32 {
        match self {
            ContrastFunction::LogCosh => 1,
            ContrastFunction::Quartic => 4,
        }
    }

    /// Bound constant C_g for the growth inequality (k <= 3).
    pub fn bound_constant(&self) -> f64 {
        match self {
            ContrastFunction::LogCosh => 1.0,
            ContrastFunction::Quartic => 24.0,
        }
    }

    /// q = max(d_g, 3), the moment order the theory requires of sources.
    pub fn moment_order(&self) -> u32 {
        self.growth_exponent().max(3)
    }
}

fn ensure_unit(w: &Array1<f64>) -> Result<Array1<f64>> {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NonUnitVector { norm });
    }
    Ok(w / norm)
}

/// Sample objective `H(w) = mean G(w^T z)` over whitened rows.
pub fn objective_h(contrast: ContrastFunction, whitened: &Array2<f64>, w: &Array1<f64>) -> Result<f64> {
    let w = ensure_unit(w)?;
    if whitened.ncols() != w.len() {
        return Err(Error::DimensionMismatch {
            context: "objective weight length must match data columns".into(),
        });
    }
    let p = whitened.dot(&w);
    Ok(p.iter().map(|&x| contrast.g0(x)).sum::<f64>() / p.len() as f64)
}

/// Monte Carlo estimate of the non-degeneracy statistic
/// `alpha_i = E(S_i g(S_i) - g'(S_i))`.
pub fn alpha_statistic(
    contrast: ContrastFunction,
    spec: &SourceSpec,
    coordinate: usize,
    n: usize,
) -> Result<f64> {
    if coordinate >= spec.dim {
        return Err(Error::InvalidParameter {
            context: format!("coordinate {coordinate} out of range for dim {}", spec.dim),
        });
    }
    if n < 100_000 {
        return Err(Error::TooFewSamples {
            required: 100_000,
            actual: n,
        });
    }
    let fam = &spec.families[coordinate];
    let mut r = rng::stream_for(spec.seed, &[tag::REFERENCE_MC, coordinate as u64]);
    let mut acc = 0.0;
    for _ in 0..n {
        let s = fam.sample(&mut r);
        acc += s * contrast.g(s) - contrast.g_prime(s);
    }
    Ok(acc / n as f64)
}

/// Exact alpha by quadrature against the family density.
pub fn alpha_population(contrast: ContrastFunction, spec: &SourceSpec, coordinate: usize) -> f64 {
    spec.families[coordinate].expect(|s| s * contrast.g(s) - contrast.g_prime(s))
}

/// Rows `w_bar_i = (A A^T)^{1/2} A^{-T} e_i`, each normalized. These are the
/// exact extremum directions of the unperturbed (eta = 0) model.
pub fn reference_wbar(a: &Array2<f64>) -> Result<Array2<f64>> {
    let aat = a.dot(&a.t());
    let m = linalg::sqrt_spd(&aat)?;
    let a_inv = linalg::inverse(a)?;
    // rows w_bar_i are the rows of A^{-1} (A A^T)^{1/2}
    let mut wbar = a_inv.dot(&m);
    normalize_rows(&mut wbar);
    Ok(wbar)
}

fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
}

/// Reference vectors for one mixing: `w_bar`, the second-order prediction
/// `w_tilde`, the per-row correction vectors `v`, and the alpha statistics.
#[derive(Debug, Clone)]
pub struct ReferenceVectors {
    pub w_bar: Array2<f64>,
    pub w_tilde: Array2<f64>,
    /// Correction vector for row i: entries j != i in ascending j order.
    pub v_vectors: Vec<Array1<f64>>,
    pub alpha: Vec<f64>,
}

/// Second-order predicted extremum rows
/// `w_tilde_i = normalize(Sigma_X^{1/2} A^{-T} u_i)` with `u_i = e_i +
/// (eta / alpha_i) sum_{j != i} v^{(i)}_j e_j` and
/// `v^{(i)}_j = E((A^{-1}h)_i g'(S_i) S_j + (A^{-1}h)_j g(S_i))`.
///
/// `Sigma_X = A A^T + eta^2 Omega` is the population covariance; `v` and
/// `alpha` are Monte Carlo estimates over `mc` draws (`mc >= 10^6` whenever
/// the perturbation is active).
pub fn reference_wtilde(
    a: &Array2<f64>,
    contrast: ContrastFunction,
    model: &MixingModel,
    spec: &SourceSpec,
    mc: usize,
) -> Result<(Array2<f64>, Vec<Array1<f64>>, Vec<f64>)> {
    let d = a.nrows();
    if model.dim() != d || spec.dim != d {
        return Err(Error::DimensionMismatch {
            context: "reference_wtilde: mixing, model and spec dimensions differ".into(),
        });
    }
    let trivial = model.eta == 0.0 || matches!(model.perturbation, Perturbation::None);

    // population Sigma_X = A A^T + eta^2 Omega with Omega = E h h^T diagonal
    let mut sigma_x = a.dot(&a.t());
    if !trivial {
        for j in 0..d {
            let fam = &spec.families[j];
            let power = fam.expect(|s| {
                let mut h = 0.0;
                if let Perturbation::Cubic(c) = &model.perturbation {
                    h = c.scale[j] * (s * s * s - c.beta[j] * s - c.shift[j]);
                } else if let Perturbation::SmoothBump(b) = &model.perturbation {
                    h = b.scale[j]
                        * ((b.slope[j] * s + b.shift[j]).tanh() - b.lin[j] * s - b.offset[j]);
                }
                h * h
            });
            sigma_x[[j, j]] += model.eta * model.eta * power;
        }
    }
    let sigma_sqrt = linalg::sqrt_spd(&sigma_x)?;
    let a_inv_t = linalg::inverse(a)?.t().to_owned();
    let chart = sigma_sqrt.dot(&a_inv_t);

    if trivial {
        let mut w_tilde = chart.t().to_owned(); // rows = chart columns
        normalize_rows(&mut w_tilde);
        let v = (0..d).map(|_| Array1::zeros(d.saturating_sub(1))).collect();
        let alpha = (0..d).map(|i| alpha_population(contrast, spec, i)).collect();
        return Ok((w_tilde, v, alpha));
    }

    if mc < 1_000_000 {
        return Err(Error::TooFewSamples {
            required: 1_000_000,
            actual: mc,
        });
    }

    let mc_spec = spec.with_seed(rng::mix(spec.seed, &[tag::REFERENCE_MC]));
    let s = crate::model::sample_sources(&mc_spec, mc);
    let h = model.apply_h(&s);
    let b = linalg::inverse(a)?;
    let bh = h.dot(&b.t()); // rows (A^{-1} h)(s)

    let mut w_tilde = Array2::zeros((d, d));
    let mut v_vectors = Vec::with_capacity(d);
    let mut alphas = Vec::with_capacity(d);
    let inv_n = 1.0 / mc as f64;
    for i in 0..d {
        let si = s.column(i);
        let g: Vec<f64> = si.iter().map(|&x| contrast.g(x)).collect();
        let gp: Vec<f64> = si.iter().map(|&x| contrast.g_prime(x)).collect();
        let alpha = si
            .iter()
            .zip(&g)
            .zip(&gp)
            .map(|((s, g), gp)| s * g - gp)
            .sum::<f64>()
            * inv_n;
        if alpha.abs() < ALPHA_GUARD {
            return Err(Error::DegenerateAlpha {
                index: i,
                alpha,
                guard: ALPHA_GUARD,
            });
        }
        let bhi = bh.column(i);
        let mut u = Array1::zeros(d);
        u[i] = 1.0;
        let mut v = Array1::zeros(d - 1);
        let mut slot = 0;
        for j in 0..d {
            if j == i {
                continue;
            }
            let sj = s.column(j);
            let bhj = bh.column(j);
            let mut acc = 0.0;
            for k in 0..mc {
                acc += bhi[k] * gp[k] * sj[k] + bhj[k] * g[k];
            }
            let vj = acc * inv_n;
            v[slot] = vj;
            slot += 1;
            u[j] = model.eta * vj / alpha;
        }
        let wt = chart.dot(&u);
        let norm = wt.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..d {
            w_tilde[[i, j]] = wt[j] / norm;
        }
        v_vectors.push(v);
        alphas.push(alpha);
    }
    Ok((w_tilde, v_vectors, alphas))
}

/// Exact second-order prediction for coordinatewise decorrelated
/// perturbations.
///
/// Independence plus decorrelation collapse the correction expectations to
/// one-dimensional integrals: `E((A^{-1}h)_i g'(S_i) S_j)` vanishes
/// termwise, and `E((A^{-1}h)_j g(S_i)) = (A^{-1})_{ji} E(h_i(S_i) g(S_i))`,
/// so `v^{(i)}_j = (A^{-1})_{ji} Gamma_i` with `Gamma_i = E(h_i g(S_i))`
/// computed by quadrature. No Monte Carlo enters; `reference_wtilde` keeps
/// the sampling estimator and serves as the cross-check.
pub fn reference_wtilde_exact(
    a: &Array2<f64>,
    contrast: ContrastFunction,
    model: &MixingModel,
    spec: &SourceSpec,
) -> Result<(Array2<f64>, Vec<Array1<f64>>, Vec<f64>)> {
    let d = a.nrows();
    if model.dim() != d || spec.dim != d {
        return Err(Error::DimensionMismatch {
            context: "reference_wtilde_exact: mixing, model and spec dimensions differ".into(),
        });
    }
    let trivial = model.eta == 0.0 || matches!(model.perturbation, Perturbation::None);
    let mut sigma_x = a.dot(&a.t());
    let mut gamma = vec![0.0; d];
    if !trivial {
        for j in 0..d {
            let fam = &spec.families[j];
            let h_at = |s: f64| match &model.perturbation {
                Perturbation::None => 0.0,
                Perturbation::Cubic(c) => c.scale[j] * (s * s * s - c.beta[j] * s - c.shift[j]),
                Perturbation::SmoothBump(b) => {
                    b.scale[j]
                        * ((b.slope[j] * s + b.shift[j]).tanh() - b.lin[j] * s - b.offset[j])
                }
            };
            let power = fam.expect(|s| h_at(s) * h_at(s));
            sigma_x[[j, j]] += model.eta * model.eta * power;
            gamma[j] = fam.expect(|s| h_at(s) * contrast.g(s));
        }
    }
    let sigma_sqrt = linalg::sqrt_spd(&sigma_x)?;
    let a_inv = linalg::inverse(a)?;
    let chart = sigma_sqrt.dot(&a_inv.t());

    let alphas: Vec<f64> = (0..d).map(|i| alpha_population(contrast, spec, i)).collect();
    let mut w_tilde = Array2::zeros((d, d));
    let mut v_vectors = Vec::with_capacity(d);
    for i in 0..d {
        if !trivial && alphas[i].abs() < ALPHA_GUARD {
            return Err(Error::DegenerateAlpha {
                index: i,
                alpha: alphas[i],
                guard: ALPHA_GUARD,
            });
        }
        let mut u = Array1::zeros(d);
        u[i] = 1.0;
        let mut v = Array1::zeros(d.saturating_sub(1));
        let mut slot = 0;
        for j in 0..d {
            if j == i {
                continue;
            }
            let vj = if trivial { 0.0 } else { a_inv[[j, i]] * gamma[i] };
            v[slot] = vj;
            slot += 1;
            if !trivial {
                u[j] = model.eta * vj / alphas[i];
            }
        }
        let wt = chart.dot(&u);
        let norm = wt.iter().map(|x| x * x).sum::<f64>().sqrt();
        for j in 0..d {
            w_tilde[[i, j]] = wt[j] / norm;
        }
        v_vectors.push(v);
    }
    Ok((w_tilde, v_vectors, alphas))
}

/// Assemble both reference matrices for a mixing.
pub fn references(
    a: &Array2<f64>,
    contrast: ContrastFunction,
    model: &MixingModel,
    spec: &SourceSpec,
    mc: usize,
) -> Result<ReferenceVectors> {
    let w_bar = reference_wbar(a)?;
    let (w_tilde, v_vectors, alpha) = reference_wtilde(a, contrast, model, spec, mc)?;
    Ok(ReferenceVectors {
        w_bar,
        w_tilde,
        v_vectors,
        alpha,
    })
}

/// Result of a one-row extremum search.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub w: Array1<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// One FastICA fixed-point update `w+ = mean(z g(w^T z)) - mean(g'(w^T z)) w`.
fn fastica_update(contrast: ContrastFunction, whitened: &Array2<f64>, w: &Array1<f64>) -> Array1<f64> {
    let n = whitened.nrows() as f64;
    let p = whitened.dot(w);
    let gp: Array1<f64> = p.mapv(|x| contrast.g(x));
    let mean_gprime = p.iter().map(|&x| contrast.g_prime(x)).sum::<f64>() / n;
    let mut w_new = whitened.t().dot(&gp) / n;
    w_new.scaled_add(-mean_gprime, w);
    w_new
}

/// FastICA fixed point from `w0`; stops when `1 - |<w+, w>| < tol` and
/// returns the iterate whose update residual met the tolerance.
pub fn fastica_fixed_point(
    contrast: ContrastFunction,
    whitened: &Array2<f64>,
    w0: &Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SolveOutcome> {
    if !(tol > 0.0 && tol <= 1e-4) {
        return Err(Error::InvalidParameter {
            context: format!("fastica tol must lie in (0, 1e-4], got {tol}"),
        });
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter {
            context: "max_iter must be >= 1".into(),
        });
    }
    let mut w = ensure_unit(w0)?;
    for it in 1..=max_iter {
        let raw = fastica_update(contrast, whitened, &w);
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            // degenerate update direction; cannot proceed
            return Ok(SolveOutcome {
                w,
                converged: false,
                iterations: it,
            });
        }
        let w_new = raw / norm;
        let residual = 1.0 - w_new.dot(&w).abs();
        if residual < tol {
            return Ok(SolveOutcome {
                w,
                converged: true,
                iterations: it,
            });
        }
        w = w_new;
    }
    Ok(SolveOutcome {
        w,
        converged: false,
        iterations: max_iter,
    })
}

/// Projected gradient ascent (`sign = +1`) or descent (`sign = -1`) on the
/// sphere; stops when the tangent gradient norm drops below `tol`. Aborts
/// when the objective moves against the requested direction for 10
/// consecutive iterations, which indicates a wrong `sign(alpha)`.
pub fn gradient_extremum(
    contrast: ContrastFunction,
    whitened: &Array2<f64>,
    w0: &Array1<f64>,
    sign: f64,
    step: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolveOutcome> {
    if sign != 1.0 && sign != -1.0 {
        return Err(Error::InvalidParameter {
            context: format!("sign must be +1 or -1, got {sign}"),
        });
    }
    if !(step > 0.0 && step <= 0.1) {
        return Err(Error::InvalidParameter {
            context: format!("step must lie in (0, 0.1], got {step}"),
        });
    }
    let n = whitened.nrows() as f64;
    let mut w = ensure_unit(w0)?;
    let mut h_prev = objective_h(contrast, whitened, &w)?;
    let mut declines = 0usize;
    for it in 1..=max_iter {
        let p = whitened.dot(&w);
        let gp: Array1<f64> = p.mapv(|x| contrast.g(x));
        let grad = whitened.t().dot(&gp) / n;
        let radial = grad.dot(&w);
        let tangent_norm = grad
            .iter()
            .zip(w.iter())
            .map(|(g, wi)| {
                let t = g - radial * wi;
                t * t
            })
            .sum::<f64>()
            .sqrt();
        if tangent_norm < tol {
            return Ok(SolveOutcome {
                w,
                converged: true,
                iterations: it,
            });
        }
        let mut w_new = w.clone();
        w_new.scaled_add(sign * step, &grad);
        let norm = w_new.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Ok(SolveOutcome {
                w,
                converged: false,
                iterations: it,
            });
        }
        let w_new = w_new / norm;
        let h_new = objective_h(contrast, whitened, &w_new)?;
        if sign * (h_new - h_prev) < -1e-14 * (1.0 + h_prev.abs()) {
            declines += 1;
            if declines >= 10 {
                return Err(Error::WrongExtremumSign { iters: declines });
            }
        } else {
            declines = 0;
        }
        w = w_new;
        h_prev = h_new;
    }
    Ok(SolveOutcome {
        w,
        converged: false,
        iterations: max_iter,
    })
}

/// Which extremum search `run_ica` applies per row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    FastIca,
    Gradient,
}

/// Options shared by the per-row solvers.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Gradient step size (gradient solver only).
    pub step: f64,
    /// Ascent (+1) / descent (-1) per row; required by the gradient solver.
    pub ascent_signs: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 500,
            step: 0.05,
            ascent_signs: None,
        }
    }
}

/// Per-row ICA estimate: unit-norm rows, convergence diagnostics, objective
/// values, and optionally the whitener the data went through.
#[derive(Debug, Clone)]
pub struct IcaEstimate {
    pub w_rows: Array2<f64>,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
    pub objective_values: Vec<f64>,
    pub whitener: Option<crate::whiten::Whitener>,
}

impl IcaEstimate {
    pub fn with_whitener(mut self, w: crate::whiten::Whitener) -> Self {
        self.whitener = Some(w);
        self
    }

    /// Recovered sources `S_hat = Z W^T` for whitened data `Z`.
    pub fn unmix(&self, whitened: &Array2<f64>) -> Array2<f64> {
        whitened.dot(&self.w_rows.t())
    }
}

/// Solve every row independently from its own initialization (parallel
/// scheme, no deflation). Non-convergence is reported per row, never
/// silently.
pub fn run_ica(
    contrast: ContrastFunction,
    whitened: &Array2<f64>,
    init: &Array2<f64>,
    solver: SolverKind,
    options: &SolveOptions,
) -> Result<IcaEstimate> {
    let d = init.nrows();
    if init.ncols() != whitened.ncols() {
        return Err(Error::DimensionMismatch {
            context: "init rows must match data dimension".into(),
        });
    }
    if solver == SolverKind::Gradient {
        match &options.ascent_signs {
            Some(s) if s.len() == d => {}
            _ => {
                return Err(Error::InvalidParameter {
                    context: "gradient solver needs one ascent sign per row".into(),
                })
            }
        }
    }
    let mut w_rows = Array2::zeros((d, whitened.ncols()));
    let mut converged = Vec::with_capacity(d);
    let mut iterations = Vec::with_capacity(d);
    let mut objective_values = Vec::with_capacity(d);
    for i in 0..d {
        let w0 = init.row(i).to_owned();
        let outcome = match solver {
            SolverKind::FastIca => {
                fastica_fixed_point(contrast, whitened, &w0, options.tol, options.max_iter)?
            }
            SolverKind::Gradient => gradient_extremum(
                contrast,
                whitened,
                &w0,
                options.ascent_signs.as_ref().unwrap()[i],
                options.step,
                options.tol.max(1e-8),
                options.max_iter,
            )?,
        };
        let norm = outcome.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..whitened.ncols() {
            w_rows[[i, j]] = outcome.w[j] / norm;
        }
        objective_values.push(objective_h(contrast, whitened, &w_rows.row(i).to_owned())?);
        converged.push(outcome.converged);
        iterations.push(outcome.iterations);
    }
    Ok(IcaEstimate {
        w_rows,
        converged,
        iterations,
        objective_values,
        whitener: None,
    })
}

/// `min(|w - r|, |w + r|)`: distances to references are sign-blind because
/// H is even.
pub fn sign_aligned_distance(w: &Array1<f64>, r: &Array1<f64>) -> f64 {
    let mut plus = 0.0;
    let mut minus = 0.0;
    for (a, b) in w.iter().zip(r.iter()) {
        plus += (a - b) * (a - b);
        minus += (a + b) * (a + b);
    }
    plus.min(minus).sqrt()
}
