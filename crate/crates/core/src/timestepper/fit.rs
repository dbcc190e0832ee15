use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};

/// Fewest positive samples accepted by [`fit_decay`].
pub const MIN_FIT_SAMPLES: usize = 10;

/// Envelope `‖U(t)‖ ≈ C e^{−wt}` fitted to sampled energies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c_fit: f64,
    pub w_fit: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Least-squares line through `ln E` on `[T/2, t_last_positive]`.
///
/// `E` is the squared norm, so `w = −slope/2` and `C = exp(intercept/2)`.
pub fn fit_decay(traj: &Trajectory) -> Result<DecayFit> {
    fit_decay_from(traj, None)
}

/// As [`fit_decay`] with an explicit window start.
pub fn fit_decay_from(traj: &Trajectory, t_start: Option<f64>) -> Result<DecayFit> {
    if traj.times.len() != traj.energies.len() {
        return Err(Error::DimensionMismatch {
            expected: traj.times.len(),
            found: traj.energies.len(),
        });
    }
    let Some(last) = traj.energies.iter().rposition(|&e| e > 0.0) else {
        return Err(Error::NoDecayData);
    };
    let t_end = traj.times[last];
    let t0 = t_start.unwrap_or(0.5 * traj.times.last().copied().unwrap_or(0.0));
    let pts: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.energies)
        .filter(|&(&t, &e)| t >= t0 && t <= t_end && e > 0.0)
        .map(|(&t, &e)| (t, e.ln()))
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            found: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, y) in &pts {
        stt += (t - tm) * (t - tm);
        sty += (t - tm) * (y - ym);
        syy += (y - ym) * (y - ym);
    }
    let slope = sty / stt;
    let intercept = ym - slope * tm;
    let ss_res: f64 = pts.iter().map(|&(t, y)| (y - intercept - slope * t).powi(2)).sum();
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(DecayFit {
        c_fit: (0.5 * intercept).exp(),
        w_fit: -0.5 * slope,
        r_squared,
        window: (pts[0].0, pts[pts.len() - 1].0),
        samples: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn synthetic(f: impl Fn(f64) -> f64, count: usize, t_final: f64) -> Trajectory {
        let times: Vec<f64> = (0..count).map(|i| t_final * i as f64 / (count - 1) as f64).collect();
        Trajectory {
            energies: times.iter().map(|&t| f(t)).collect(),
            times,
            states: Vec::new(),
        }
    }

    #[test]
    fn exact_exponential() {
        let fit = fit_decay(&synthetic(|t| 4.0 * (-3.0 * t).exp(), 101, 4.0)).unwrap();
        assert!((fit.w_fit - 1.5).abs() < 1e-10 * 1.5);
        assert!((fit.c_fit - 2.0).abs() < 1e-10 * 2.0);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.window, (2.0, 4.0));
    }

    #[test]
    fn constant_energy_has_zero_rate() {
        let fit = fit_decay(&synthetic(|_| 0.7, 40, 1.0)).unwrap();
        assert!(fit.w_fit.abs() < 1e-14);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            fit_decay(&synthetic(|_| 0.0, 40, 1.0)),
            Err(Error::NoDecayData)
        ));
        assert!(matches!(
            fit_decay(&synthetic(|t| (-t).exp(), 12, 1.0)),
            Err(Error::InsufficientSamples { found: 6, .. })
        ));
    }

    #[test]
    fn trailing_zeros_are_excluded() {
        let traj = synthetic(|t| if t > 3.0 { 0.0 } else { (-2.0 * t).exp() }, 81, 4.0);
        let fit = fit_decay(&traj).unwrap();
        assert!((fit.w_fit - 1.0).abs() < 1e-10);
        assert_eq!(fit.window.1, 3.0);
    }

    proptest! {
        #[test]
        fn recovers_envelope(c in 0.1f64..10.0, w in -1.0f64..5.0, t_final in 1.0f64..20.0) {
            let fit = fit_decay(&synthetic(|t| c * c * (-2.0 * w * t).exp(), 64, t_final)).unwrap();
            prop_assert!((fit.w_fit - w).abs() <= 1e-10 * w.abs().max(1.0));
            prop_assert!((fit.c_fit - c).abs() <= 1e-10 * c * (1.0 + w.abs() * t_final));
        }
    }
}
