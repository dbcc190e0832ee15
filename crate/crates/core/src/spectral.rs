//! Spectrum location and resolvent bounds of `A_h`.

use faer::linalg::solvers::Solve;
use faer::{c64, Mat, Side};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coercivity::{ComplexFrequency, PhysicalParams};
use crate::error::{Error, Result};
use crate::generator::{assemble, GeneratorMatrix};
use crate::grid::{GridSpec, ThetaBc};

/// Relative zero-mode tolerance: `|λ| < ZERO_TOL_REL · ρ(A_h)` counts as zero.
pub const ZERO_TOL_REL: f64 = 1e-8;

/// `σ_min < SINGULAR_TOL · ‖A‖_∞` flags a resolvent sample as singular.
pub const SINGULAR_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<Complex64>,
    /// Largest real part among the retained eigenvalues.
    pub abscissa: f64,
    pub zero_modes_removed: usize,
    pub removed: Option<Complex64>,
    pub zero_tol: f64,
    pub grid: Option<(usize, usize)>,
    pub params: Option<PhysicalParams>,
}

/// Full spectrum of the dense generator.
pub fn eigenvalues(a: &GeneratorMatrix) -> Result<Vec<Complex64>> {
    let dense = a.to_dense()?;
    dense.eigenvalues().map_err(|_| Error::EigenNonConvergence)
}

pub fn spectral_radius(eigs: &[Complex64]) -> f64 {
    eigs.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Deflated abscissa. At most one eigenvalue with `|λ| < zero_tol` is set
/// aside when `deflate_zero`; more than one candidate is an error.
pub fn spectral_abscissa(eigs: &[Complex64], deflate_zero: bool, zero_tol: f64) -> Result<SpectrumReport> {
    if !(zero_tol > 0.0) {
        return Err(Error::param("zero_tol", "must be > 0"));
    }
    let mut removed = None;
    let mut removed_index = None;
    if deflate_zero {
        let candidates: Vec<usize> = (0..eigs.len()).filter(|&i| eigs[i].norm() < zero_tol).collect();
        match candidates.len() {
            0 => {}
            1 => {
                removed_index = Some(candidates[0]);
                removed = Some(eigs[candidates[0]]);
            }
            count => return Err(Error::MultipleZeroModes { count, tol: zero_tol }),
        }
    }
    let abscissa = eigs
        .iter()
        .enumerate()
        .filter(|&(i, _)| Some(i) != removed_index)
        .map(|(_, z)| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectrumReport {
        eigenvalues: eigs.to_vec(),
        abscissa,
        zero_modes_removed: removed.is_some() as usize,
        removed,
        zero_tol,
        grid: None,
        params: None,
    })
}

/// Eigensolve plus deflation with the default tolerance
/// `ZERO_TOL_REL · spectral radius`.
pub fn spectrum(a: &GeneratorMatrix, deflate_zero: bool) -> Result<SpectrumReport> {
    let eigs = eigenvalues(a)?;
    let tol = ZERO_TOL_REL * spectral_radius(&eigs).max(f64::MIN_POSITIVE);
    let mut report = spectral_abscissa(&eigs, deflate_zero, tol)?;
    report.grid = Some((a.grid().n_cells, a.grid().n_rho));
    report.params = Some(*a.params());
    Ok(report)
}

/// Largest mismatch between the spectrum and its complex conjugate,
/// pairing each eigenvalue with the nearest conjugate.
pub fn conjugate_mismatch(eigs: &[Complex64]) -> f64 {
    eigs.iter()
        .map(|z| eigs.iter().map(|w| (w - z.conj()).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Resolvent norms at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolventNorm {
    /// `1/σ_min(λI − A_h)` in the Euclidean metric of the flat layout.
    pub euclid: f64,
    /// The same in the energy metric.
    pub weighted: f64,
}

/// Precomputed dense data for repeated resolvent-norm evaluations.
///
/// The energy metric is `‖U‖_ℋ = ‖Gᵀ U‖₂` with `G Gᵀ` the Gram matrix of the
/// inner product; `A_ℋ = Gᵀ A_h G⁻ᵀ` is `A_h` written in an orthonormal basis.
pub struct ResolventNormer {
    dense: Mat<f64>,
    weighted: Mat<f64>,
    norm_inf: f64,
    norm_inf_weighted: f64,
}

fn norm_inf(a: &Mat<f64>) -> f64 {
    (0..a.nrows())
        .map(|r| (0..a.ncols()).map(|c| a[(r, c)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Upper-triangular `Gᵀ` with `Gᵀᵀ Gᵀ` equal to the energy Gram matrix.
pub fn energy_factor(p: &PhysicalParams, g: &GridSpec) -> Result<Mat<f64>> {
    let l = g.layout();
    let ni = g.n_cells - 1;
    let inv_h2 = 1.0 / (g.h * g.h);
    // α·h·DᵀD on interior nodes: tridiagonal (2, −1)/h²
    let gram_u = Mat::<f64>::from_fn(ni, ni, |i, j| {
        let d = if i == j {
            2.0 * inv_h2
        } else if i.abs_diff(j) == 1 {
            -inv_h2
        } else {
            0.0
        };
        p.alpha * g.h * d
    });
    let llt = gram_u
        .llt(Side::Lower)
        .map_err(|_| Error::param("alpha", "energy Gram matrix not positive definite"))?;
    let lower = llt.L();
    let mut factor = Mat::<f64>::zeros(l.dim(), l.dim());
    for i in 0..ni {
        for j in 0..=i {
            factor[(j, i)] = lower[(i, j)];
        }
    }
    let sv = g.h.sqrt();
    let sz = (p.xi() * g.h * g.d_rho).sqrt();
    for i in l.v()..l.z() {
        factor[(i, i)] = sv;
    }
    for i in l.z()..l.theta() {
        factor[(i, i)] = sz;
    }
    for i in l.theta()..l.dim() {
        factor[(i, i)] = sv;
    }
    Ok(factor)
}

impl ResolventNormer {
    pub fn new(a: &GeneratorMatrix) -> Result<Self> {
        let dense = a.to_dense()?;
        let gt = energy_factor(a.params(), a.grid())?;
        let gt_inv = gt.partial_piv_lu().solve(Mat::<f64>::identity(a.dim(), a.dim()));
        let weighted = &gt * (&dense * &gt_inv);
        Ok(Self {
            norm_inf: norm_inf(&dense),
            norm_inf_weighted: norm_inf(&weighted),
            dense,
            weighted,
        })
    }

    fn inverse_smallest(mat: &Mat<f64>, lam: Complex64, scale: f64) -> Result<f64> {
        let n = mat.nrows();
        let shifted = Mat::<c64>::from_fn(n, n, |i, j| {
            let d = if i == j { lam } else { Complex64::new(0.0, 0.0) };
            d - mat[(i, j)]
        });
        let sv = shifted.singular_values().map_err(|_| Error::EigenNonConvergence)?;
        let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if smallest < SINGULAR_TOL * scale {
            return Err(Error::Singular {
                re: lam.re,
                im: lam.im,
                pivot_ratio: smallest / scale,
            });
        }
        Ok(1.0 / smallest)
    }

    pub fn norm(&self, lam: ComplexFrequency) -> Result<ResolventNorm> {
        let l = lam.to_complex();
        Ok(ResolventNorm {
            euclid: Self::inverse_smallest(&self.dense, l, self.norm_inf)?,
            weighted: Self::inverse_smallest(&self.weighted, l, self.norm_inf_weighted)?,
        })
    }

    /// The generator in the orthonormal energy basis.
    pub fn weighted_matrix(&self) -> &Mat<f64> {
        &self.weighted
    }
}

/// `‖(λI − A_h)⁻¹‖` in both metrics.
pub fn resolvent_norm(a: &GeneratorMatrix, lam: ComplexFrequency) -> Result<ResolventNorm> {
    ResolventNormer::new(a)?.norm(lam)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventSample {
    pub b: f64,
    pub norm: Option<ResolventNorm>,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventScan {
    pub line_real_part: f64,
    pub samples: Vec<ResolventSample>,
    /// Largest energy-metric norm over the finite samples.
    pub sup_norm: Option<f64>,
    pub argmax_b: Option<f64>,
    pub sup_norm_euclid: Option<f64>,
}

/// Resolvent norms along the vertical line `Re λ = s`.
pub fn resolvent_scan(a: &GeneratorMatrix, s: f64, b_values: &[f64]) -> Result<ResolventScan> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::param("s", format!("must be > 0, got {s}")));
    }
    let normer = ResolventNormer::new(a)?;
    let results: Vec<Result<ResolventNorm>> = b_values
        .par_iter()
        .map(|&b| normer.norm(ComplexFrequency::new(s, b)))
        .collect();
    let mut samples = Vec::with_capacity(b_values.len());
    for (&b, r) in b_values.iter().zip(results) {
        match r {
            Ok(norm) => samples.push(ResolventSample {
                b,
                norm: Some(norm),
                singular: false,
            }),
            Err(Error::Singular { .. }) => samples.push(ResolventSample {
                b,
                norm: None,
                singular: true,
            }),
            Err(e) => return Err(e),
        }
    }
    let mut sup: Option<(f64, f64)> = None;
    let mut sup_euclid: Option<f64> = None;
    for sample in &samples {
        if let Some(n) = sample.norm {
            if sup.is_none_or(|(v, _)| n.weighted > v) {
                sup = Some((n.weighted, sample.b));
            }
            sup_euclid = Some(sup_euclid.map_or(n.euclid, |v: f64| v.max(n.euclid)));
        }
    }
    Ok(ResolventScan {
        line_real_part: s,
        samples,
        sup_norm: sup.map(|(v, _)| v),
        argmax_b: sup.map(|(_, b)| b),
        sup_norm_euclid: sup_euclid,
    })
}

/// `count` frequencies log-spaced in `[b_min, b_max]`; with `symmetric`, half
/// of them mirrored to negative values (`count` must then be even). Sorted
/// ascending.
pub fn log_spaced_b(b_min: f64, b_max: f64, count: usize, symmetric: bool) -> Result<Vec<f64>> {
    if !(b_min > 0.0 && b_max >= b_min && b_max.is_finite()) {
        return Err(Error::param("b_range", "log spacing needs 0 < b_min <= b_max"));
    }
    if symmetric && !count.is_multiple_of(2) {
        return Err(Error::param("b_count", "must be even for a symmetric scan"));
    }
    let n = if symmetric { count / 2 } else { count };
    let (lo, hi) = (b_min.ln(), b_max.ln());
    let mags: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => b_min,
            _ if i + 1 == n => b_max,
            _ => (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect();
    let mut out: Vec<f64> = if symmetric {
        mags.iter().rev().map(|b| -b).chain(mags.iter().copied()).collect()
    } else {
        mags
    };
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Beta,
    Gamma,
    Kappa,
    Tau,
    /// `β = value · ατ`
    Ratio,
}

impl SweepParam {
    pub fn apply(self, base: &PhysicalParams, value: f64) -> PhysicalParams {
        let mut p = *base;
        match self {
            SweepParam::Alpha => p.alpha = value,
            SweepParam::Beta => p.beta = value,
            SweepParam::Gamma => p.gamma = value,
            SweepParam::Kappa => p.kappa = value,
            SweepParam::Tau => p.tau = value,
            SweepParam::Ratio => p.beta = value * p.alpha * p.tau,
        }
        p
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::Gamma => "gamma",
            SweepParam::Kappa => "kappa",
            SweepParam::Tau => "tau",
            SweepParam::Ratio => "ratio",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "alpha" => Self::Alpha,
            "beta" => Self::Beta,
            "gamma" => Self::Gamma,
            "kappa" => Self::Kappa,
            "tau" => Self::Tau,
            "ratio" => Self::Ratio,
            other => return Err(format!("unknown sweep parameter `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub abscissa: Option<f64>,
    pub stability_condition: bool,
    pub status: String,
}

/// Deflated abscissa for each value of one parameter, sorted by value.
pub fn stability_sweep(
    base: &PhysicalParams,
    param: SweepParam,
    values: &[f64],
    n_cells: usize,
    n_rho: usize,
    theta_bc: ThetaBc,
    deflate: bool,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::param("axis", "needs at least one value"));
    }
    let mut rows: Vec<SweepRow> = values
        .par_iter()
        .map(|&value| {
            let p = param.apply(base, value);
            let point = || -> Result<f64> {
                p.validate()?;
                let g = GridSpec::new(n_cells, n_rho, p.ell)?;
                let a = assemble(&p, &g, theta_bc)?;
                Ok(spectrum(&a, deflate)?.abscissa)
            };
            match point() {
                Ok(abscissa) => SweepRow {
                    value,
                    abscissa: Some(abscissa),
                    stability_condition: crate::coercivity::stability_condition(&p),
                    status: "ok".into(),
                },
                Err(e) => SweepRow {
                    value,
                    abscissa: None,
                    stability_condition: crate::coercivity::stability_condition(&p),
                    status: e.to_string(),
                },
            }
        })
        .collect();
    rows.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(rows)
}
