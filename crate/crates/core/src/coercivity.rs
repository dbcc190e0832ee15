//! Physical constants and the scalar coercivity function
//!
//! `Φ(λ) = α·Re(λ̄·e^{−λτ}) + |λ|²β` decides whether the reduced resolvent
//! form is coercive at frequency `λ`. Everything here is exact scalar
//! arithmetic; no discretization is involved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Material and geometry constants of the delayed thermoelastic system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Elastic coefficient acting on the delayed strain.
    pub alpha: f64,
    /// Kelvin–Voigt damping.
    pub beta: f64,
    /// Thermal coupling.
    pub gamma: f64,
    /// Heat conductivity.
    pub kappa: f64,
    /// Delay.
    pub tau: f64,
    /// Length of the rod.
    pub ell: f64,
}

impl PhysicalParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, kappa: f64, tau: f64, ell: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            gamma,
            kappa,
            tau,
            ell,
        };
        p.validate()?;
        Ok(p)
    }

    /// Reference stable set used throughout the tests and the CLI defaults.
    pub fn reference() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.5,
            kappa: 1.0,
            tau: 0.5,
            ell: std::f64::consts::PI,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::param(
                "gamma",
                format!("must be finite and >= 0, got {}", self.gamma),
            ));
        }
        let fields = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("kappa", self.kappa),
            ("tau", self.tau),
            ("ell", self.ell),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::param(name, format!("must be finite and > 0, got {value}")));
            }
        }
        let (xi, m) = derived_constants(self);
        if !(xi.is_finite() && xi > 0.0 && m.is_finite() && m > 0.0) {
            return Err(Error::param("beta", "derived constants xi and m overflow"));
        }
        Ok(())
    }

    /// Weight `ξ = 2τα²/β` of the delay component in the energy.
    pub fn xi(&self) -> f64 {
        derived_constants(self).0
    }

    /// Shift `m = 2α²/β` in the dissipation inequality.
    pub fn m(&self) -> f64 {
        derived_constants(self).1
    }
}

/// `(ξ, m) = (2τα²/β, 2α²/β)`.
pub fn derived_constants(p: &PhysicalParams) -> (f64, f64) {
    let a2 = p.alpha * p.alpha;
    (2.0 * p.tau * a2 / p.beta, 2.0 * a2 / p.beta)
}

/// The sufficient condition `ατ ≤ β` for exponential stability.
pub fn stability_condition(p: &PhysicalParams) -> bool {
    p.alpha * p.tau <= p.beta
}

/// A point `λ = a + ib` of the complex plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexFrequency {
    pub a: f64,
    pub b: f64,
}

impl ComplexFrequency {
    pub const fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn norm(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn to_complex(self) -> num_complex::Complex64 {
        num_complex::Complex64::new(self.a, self.b)
    }
}

impl From<num_complex::Complex64> for ComplexFrequency {
    fn from(z: num_complex::Complex64) -> Self {
        Self { a: z.re, b: z.im }
    }
}

/// `Φ(λ) = α e^{−aτ}(a cos bτ − b sin bτ) + (a² + b²)β`.
pub fn coercivity_value(lam: ComplexFrequency, p: &PhysicalParams) -> f64 {
    let ComplexFrequency { a, b } = lam;
    let bt = b * p.tau;
    p.alpha * (-a * p.tau).exp() * (a * bt.cos() - b * bt.sin()) + (a * a + b * b) * p.beta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `|λ| ≥ α/β`
    LargeLambda,
    /// `|λ| < α/β`
    SmallLambda,
}

/// Lower bound for `Φ(λ)` on the open right half-plane, split at `|λ| = α/β`.
///
/// The boundary itself goes to the large branch.
pub fn coercivity_lower_bound(lam: ComplexFrequency, p: &PhysicalParams) -> Result<(f64, Branch)> {
    let ComplexFrequency { a, b } = lam;
    if !(a > 0.0) {
        return Err(Error::param("lambda.re", format!("must be > 0, got {a}")));
    }
    let modulus = lam.norm();
    let decay = (-a * p.tau).exp();
    if modulus >= p.alpha / p.beta {
        Ok((modulus * (modulus * p.beta - p.alpha * decay), Branch::LargeLambda))
    } else {
        let bound =
            p.alpha * decay * a * (b * p.tau).cos() + (p.beta - p.alpha * p.tau * decay) * b * b + a * a * p.beta;
        Ok((bound, Branch::SmallLambda))
    }
}

/// Scale used to decide whether a sample of `Φ` is "nonpositive": values
/// below `-1e-12 · (α + |λ|²β)` count.
pub fn violation_threshold(lam: ComplexFrequency, p: &PhysicalParams) -> f64 {
    -1e-12 * (p.alpha + (lam.a * lam.a + lam.b * lam.b) * p.beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub min_value: f64,
    pub argmin: ComplexFrequency,
    pub samples: usize,
    /// Samples with `Φ ≤ 0`, in grid order.
    pub nonpositive: Vec<(ComplexFrequency, f64)>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> + Clone {
    (0..n).map(move |i| {
        if n == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    })
}

/// Per-row minimum, its column and the nonpositive samples of that row.
type RowMin = (f64, usize, Vec<(ComplexFrequency, f64)>);

/// Evaluates `Φ` on the tensor grid `a_range × b_range` (`n_a × n_b` points,
/// endpoints included; a single point sits at the lower end).
pub fn coercivity_scan(
    p: &PhysicalParams,
    a_range: (f64, f64),
    b_range: (f64, f64),
    n_a: usize,
    n_b: usize,
) -> Result<ScanReport> {
    if !(a_range.0 > 0.0 && a_range.1 >= a_range.0 && a_range.1.is_finite()) {
        return Err(Error::param("a_range", "must satisfy 0 < a_min <= a_max < inf"));
    }
    if !(b_range.1 >= b_range.0 && b_range.0.is_finite() && b_range.1.is_finite()) {
        return Err(Error::param("b_range", "must satisfy b_min <= b_max, both finite"));
    }
    if n_a == 0 || n_b == 0 {
        return Err(Error::param("n_a/n_b", "grid counts must be >= 1"));
    }
    let a_values: Vec<f64> = linspace(a_range.0, a_range.1, n_a).collect();
    let b_values: Vec<f64> = linspace(b_range.0, b_range.1, n_b).collect();

    // One row per a; rows are reduced in index order so ties resolve to the
    // lowest linear index regardless of scheduling.
    let rows: Vec<RowMin> = a_values
        .par_iter()
        .map(|&a| {
            let mut best = (f64::INFINITY, 0usize);
            let mut bad = Vec::new();
            for (jb, &b) in b_values.iter().enumerate() {
                let lam = ComplexFrequency::new(a, b);
                let v = coercivity_value(lam, p);
                if v < best.0 {
                    best = (v, jb);
                }
                if v <= 0.0 {
                    bad.push((lam, v));
                }
            }
            (best.0, best.1, bad)
        })
        .collect();

    let mut min_value = f64::INFINITY;
    let mut argmin = ComplexFrequency::new(a_values[0], b_values[0]);
    let mut nonpositive = Vec::new();
    for (ia, (v, jb, bad)) in rows.into_iter().enumerate() {
        if v < min_value {
            min_value = v;
            argmin = ComplexFrequency::new(a_values[ia], b_values[jb]);
        }
        nonpositive.extend(bad);
    }
    Ok(ScanReport {
        min_value,
        argmin,
        samples: n_a * n_b,
        nonpositive,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomAudit {
    pub samples: usize,
    /// Draws where `Φ` fell below [`violation_threshold`].
    pub value_violations: usize,
    /// Draws where a branch bound exceeded `Φ` beyond rounding.
    pub bound_violations: usize,
    pub small_branch_samples: usize,
    /// Smallest `Φ / (α + |λ|²β)` seen.
    pub min_scaled_value: f64,
}

/// Draws parameter sets with `ατ ≤ β` and frequencies with `Re λ ∈ (0, 10]`,
/// `|Im λ| ≤ 1000`, and checks positivity of `Φ` together with both branch
/// bounds.
pub fn coercivity_random_audit(samples: usize, seed: u64) -> RandomAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut audit = RandomAudit {
        samples,
        value_violations: 0,
        bound_violations: 0,
        small_branch_samples: 0,
        min_scaled_value: f64::INFINITY,
    };
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.gen_range(lo.ln()..hi.ln())).exp();
    for i in 0..samples {
        let alpha = log_uniform(&mut rng, 1e-2, 1e2);
        let tau = log_uniform(&mut rng, 1e-3, 1e1);
        // Every tenth draw sits exactly on ατ = β.
        let beta = if i % 10 == 0 {
            alpha * tau
        } else {
            alpha * tau * (1.0 + log_uniform(&mut rng, 1e-6, 1e2))
        };
        let p = PhysicalParams {
            alpha,
            beta,
            gamma: 1.0,
            kappa: 1.0,
            tau,
            ell: 1.0,
        };
        let lam = if rng.gen_bool(0.5) {
            // Uniform over the stated box.
            ComplexFrequency::new(10.0 * (1.0 - rng.gen::<f64>()), rng.gen_range(-1e3..=1e3))
        } else {
            // Concentrated near the origin, where the small branch lives.
            let a = log_uniform(&mut rng, 1e-8, 10.0);
            let b = log_uniform(&mut rng, 1e-8, 1e3) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            ComplexFrequency::new(a, b)
        };
        let value = coercivity_value(lam, &p);
        let scale = p.alpha + (lam.a * lam.a + lam.b * lam.b) * p.beta;
        audit.min_scaled_value = audit.min_scaled_value.min(value / scale);
        if value <= violation_threshold(lam, &p) {
            audit.value_violations += 1;
        }
        let (bound, branch) = coercivity_lower_bound(lam, &p).expect("a > 0 by construction");
        if branch == Branch::SmallLambda {
            audit.small_branch_samples += 1;
        }
        let slack = 1e-12 * scale.max(1.0);
        if bound > value + slack {
            audit.bound_violations += 1;
        }
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn unit() -> PhysicalParams {
        PhysicalParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn with(alpha: f64, beta: f64, tau: f64) -> PhysicalParams {
        PhysicalParams::new(alpha, beta, 1.0, 1.0, tau, 1.0).unwrap()
    }

    /// Complex-arithmetic evaluation of `α Re(λ̄ e^{−λτ}) + |λ|²β`.
    fn phi_complex(lam: ComplexFrequency, p: &PhysicalParams) -> f64 {
        let l = Complex64::new(lam.a, lam.b);
        (p.alpha * l.conj() * (-l * p.tau).exp()).re + l.norm_sqr() * p.beta
    }

    #[test]
    fn derived_constant_examples() {
        assert_eq!(derived_constants(&with(1.0, 2.0, 1.0)), (1.0, 1.0));
        assert_eq!(derived_constants(&with(2.0, 1.0, 0.5)), (4.0, 8.0));
        assert_eq!(derived_constants(&with(1.0, 1.0, 1.0)), (2.0, 2.0));
    }

    #[test]
    fn stability_condition_examples() {
        assert!(stability_condition(&with(1.0, 1.0, 0.5)));
        assert!(!stability_condition(&with(2.0, 1.0, 1.0)));
        assert!(stability_condition(&with(1.0, 1.0, 1.0)));
    }

    #[test]
    fn rejects_nonpositive_fields() {
        let err = PhysicalParams::new(1.0, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { field: "beta", .. }));
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, f64::NAN, 1.0, 1.0).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, 1.0, 1.0, -2.0).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, -0.5, 1.0, 1.0, 1.0).is_err());
        // The uncoupled limit is allowed.
        assert!(PhysicalParams::new(1.0, 1.0, 0.0, 1.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn coercivity_value_examples() {
        let p = unit();
        // 30-digit reference values
        let v = coercivity_value(ComplexFrequency::new(1.0, 0.0), &p);
        assert!((v - 1.367_879_441_171_442_3).abs() < 1e-15);
        let v = coercivity_value(ComplexFrequency::new(0.0, 1.0), &p);
        assert!((v - 0.158_529_015_192_103_5).abs() < 1e-15);
        assert_eq!(coercivity_value(ComplexFrequency::new(0.0, 0.0), &p), 0.0);
    }

    #[test]
    fn lower_bound_examples() {
        let p = unit();
        let lam = ComplexFrequency::new(2.0, 0.0);
        let (bound, branch) = coercivity_lower_bound(lam, &p).unwrap();
        assert_eq!(branch, Branch::LargeLambda);
        assert!((bound - 3.729_329_433_526_775).abs() < 1e-14);
        assert!((coercivity_value(lam, &p) - 4.270_670_566_473_226).abs() < 1e-14);
        assert!(bound <= coercivity_value(lam, &p));

        let lam = ComplexFrequency::new(0.1, 0.1);
        let (bound, branch) = coercivity_lower_bound(lam, &p).unwrap();
        assert_eq!(branch, Branch::SmallLambda);
        assert!((bound - 0.100_983_325_804_159_81).abs() < 1e-15);
        assert!(bound <= coercivity_value(lam, &p));

        // |λ| = α/β exactly: large branch
        let lam = ComplexFrequency::new(1.0, 0.0);
        let (bound, branch) = coercivity_lower_bound(lam, &p).unwrap();
        assert_eq!(branch, Branch::LargeLambda);
        assert!((bound - 0.632_120_558_828_557_7).abs() < 1e-15);
        assert!(bound <= coercivity_value(lam, &p));
    }

    #[test]
    fn lower_bound_rejects_closed_left_half_plane() {
        let p = unit();
        assert!(coercivity_lower_bound(ComplexFrequency::new(0.0, 1.0), &p).is_err());
        assert!(coercivity_lower_bound(ComplexFrequency::new(-1.0, 0.0), &p).is_err());
        assert!(coercivity_lower_bound(ComplexFrequency::new(0.0, 0.0), &p).is_err());
    }

    #[test]
    fn scan_examples() {
        let p = unit();
        let report = coercivity_scan(&p, (0.01, 5.0), (-50.0, 50.0), 100, 1000).unwrap();
        assert_eq!(report.samples, 100_000);
        assert!(report.nonpositive.is_empty());
        assert!(report.min_value > 0.0);

        let single = coercivity_scan(&p, (1.0, 1.0), (0.0, 0.0), 1, 1).unwrap();
        assert!((single.min_value - 1.367_879_441_171_442_3).abs() < 1e-15);
        assert_eq!(single.argmin, ComplexFrequency::new(1.0, 0.0));

        // violated condition: only reports
        let loose = with(1.0, 1.0, 2.0);
        let report = coercivity_scan(&loose, (0.01, 5.0), (-50.0, 50.0), 100, 1000).unwrap();
        assert_eq!(report.samples, 100_000);
    }

    #[test]
    fn scan_rejects_bad_ranges() {
        let p = unit();
        assert!(coercivity_scan(&p, (0.0, 1.0), (0.0, 1.0), 2, 2).is_err());
        assert!(coercivity_scan(&p, (2.0, 1.0), (0.0, 1.0), 2, 2).is_err());
        assert!(coercivity_scan(&p, (0.1, 1.0), (1.0, 0.0), 2, 2).is_err());
        assert!(coercivity_scan(&p, (0.1, 1.0), (0.0, 1.0), 0, 2).is_err());
    }

    #[test]
    fn scan_matches_sequential_reduction() {
        let p = with(1.0, 1.0, 3.0);
        let (na, nb) = (17, 31);
        let report = coercivity_scan(&p, (0.05, 2.0), (-6.0, 6.0), na, nb).unwrap();
        let mut best = (f64::INFINITY, ComplexFrequency::new(0.0, 0.0));
        let mut count = 0;
        for a in linspace(0.05, 2.0, na) {
            for b in linspace(-6.0, 6.0, nb) {
                let lam = ComplexFrequency::new(a, b);
                let v = coercivity_value(lam, &p);
                if v < best.0 {
                    best = (v, lam);
                }
                count += (v <= 0.0) as usize;
            }
        }
        assert_eq!(report.min_value, best.0);
        assert_eq!(report.argmin, best.1);
        assert_eq!(report.nonpositive.len(), count);
    }

    #[test]
    fn pure_imaginary_closed_form() {
        for (alpha, beta, tau) in [(1.0, 1.0, 1.0), (2.0, 1.0, 0.5), (0.3, 2.0, 4.0)] {
            let p = with(alpha, beta, tau);
            for i in 0..=20_000 {
                let b = i as f64 * 0.05;
                let v = coercivity_value(ComplexFrequency::new(0.0, b), &p);
                let closed = b * b * beta - alpha * b * (b * tau).sin();
                assert!((v - closed).abs() <= 1e-12 * (1.0 + b * b * beta));
                assert!(v >= b * b * (beta - alpha * tau) - 1e-12 * (1.0 + b * b * beta));
            }
        }
    }

    #[test]
    fn homogeneous_in_alpha_beta() {
        let p = with(0.7, 1.3, 0.4);
        let (xi, m) = derived_constants(&p);
        for c in [0.25, 2.0, 8.0, 1024.0] {
            let q = with(c * p.alpha, c * p.beta, p.tau);
            assert_eq!(derived_constants(&q), (c * xi, c * m));
        }
    }

    proptest! {
        #[test]
        fn expanded_form_matches_complex_form(
            a in -5.0f64..10.0, b in -1e3f64..1e3,
            alpha in 0.01f64..10.0, beta in 0.01f64..10.0, tau in 0.01f64..5.0,
        ) {
            let p = with(alpha, beta, tau);
            let lam = ComplexFrequency::new(a, b);
            let scale = alpha * (-a * tau).exp() * lam.norm() + lam.norm().powi(2) * beta;
            prop_assert!((coercivity_value(lam, &p) - phi_complex(lam, &p)).abs() <= 1e-12 * scale.max(1.0));
        }

        #[test]
        fn branch_bounds_hold(
            a in 1e-6f64..10.0, b in -1e3f64..1e3,
            alpha in 0.01f64..10.0, tau in 0.01f64..5.0, slack in 0.0f64..10.0,
        ) {
            let p = with(alpha, alpha * tau * (1.0 + slack), tau);
            let lam = ComplexFrequency::new(a, b);
            let (bound, branch) = coercivity_lower_bound(lam, &p).unwrap();
            let v = coercivity_value(lam, &p);
            prop_assert!(bound <= v + 1e-12 * (lam.norm().powi(2) * p.beta).max(1.0));
            if branch == Branch::SmallLambda {
                prop_assert!((b * tau).abs() <= 1.0 + 1e-15);
                prop_assert!((b * tau).cos() > 0.0);
            }
        }
    }

    #[test]
    fn random_audit_is_clean_and_reproducible() {
        let audit = coercivity_random_audit(20_000, 7);
        assert_eq!(audit.value_violations, 0);
        assert_eq!(audit.bound_violations, 0);
        assert!(audit.small_branch_samples > 0);
        assert_eq!(audit, coercivity_random_audit(20_000, 7));
    }
}
