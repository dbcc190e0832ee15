//! Direct integration of the delayed form, with `u_x(·, t − τ)` read from a
//! ring buffer of past strains instead of a transport variable.

use std::collections::VecDeque;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use num_complex::Complex64;

use super::{energy, InitialData, Scheme, SimulationOptions, Trajectory};
use crate::coercivity::PhysicalParams;
use crate::error::{Error, Result};
use crate::generator::PIVOT_TOL;
use crate::grid::{diff_node_to_mid, div_mid_to_node, theta_flux, GridSpec, StateVector, ThetaBc};

/// Number of past strain fields kept, `⌈τ/dt⌉`.
pub fn history_slots(tau: f64, dt: f64) -> usize {
    (tau / dt - 1e-9).ceil().max(1.0) as usize
}

/// Snaps step positions that are within rounding of an integer.
fn snap(pos: f64) -> f64 {
    let r = pos.round();
    if (pos - r).abs() < 1e-9 {
        r
    } else {
        pos
    }
}

/// Semi-implicit Euler for the delayed system.
///
/// Damping, coupling and conduction are implicit; the delayed stress
/// `α u_x(t − τ)` is explicit. Each step solves one fixed real system for
/// `(v⁺, θ⁺)` and then sets `u⁺ = u + dt·v⁺`.
pub struct HistoryIntegrator {
    params: PhysicalParams,
    grid: GridSpec,
    theta_bc: ThetaBc,
    dt: f64,
    delay_steps: f64,
    slots: usize,
    lu: PartialPivLu<f64>,
    /// `Du` at step indices `oldest, oldest + 1, …, step`.
    strains: VecDeque<Vec<f64>>,
    oldest: i64,
    step: i64,
    u: Vec<f64>,
    v: Vec<f64>,
    theta: Vec<f64>,
}

impl HistoryIntegrator {
    pub fn new(p: &PhysicalParams, g: &GridSpec, theta_bc: ThetaBc, init: &InitialData, dt: f64) -> Result<Self> {
        p.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be > 0, got {dt}")));
        }
        let s = init.state(g)?;
        let real = |x: &[Complex64]| x.iter().map(|c| c.re).collect::<Vec<f64>>();
        let (u, v, theta) = (real(s.u()), real(s.v()), real(s.theta()));

        let slots = history_slots(p.tau, dt);
        let f0 = init.history(g, p.tau)?;
        let mut strains = VecDeque::with_capacity(slots + 2);
        for i in -(slots as i64)..0 {
            strains.push_back(f0(i as f64 * dt));
        }
        strains.push_back(diff_node_to_mid(&u, g)?);

        let lu = Self::factor(p, g, theta_bc, dt)?;
        Ok(Self {
            params: *p,
            grid: *g,
            theta_bc,
            dt,
            delay_steps: p.tau / dt,
            slots,
            lu,
            strains,
            oldest: -(slots as i64),
            step: 0,
            u,
            v,
            theta,
        })
    }

    fn factor(p: &PhysicalParams, g: &GridSpec, bc: ThetaBc, dt: f64) -> Result<PartialPivLu<f64>> {
        let n = g.n_cells;
        let ni = n - 1;
        let dim = ni + n;
        let mut mat = Mat::<f64>::identity(dim, dim);
        let mut unit = vec![0.0; ni];
        for col in 0..ni {
            unit[col] = 1.0;
            let dv = diff_node_to_mid(&unit, g)?;
            let visc: Vec<f64> = dv.iter().map(|x| x * p.beta).collect();
            let div = div_mid_to_node(&visc, g)?;
            for i in 0..ni {
                mat[(i, col)] -= dt * div[i];
            }
            for j in 0..n {
                mat[(ni + j, col)] += dt * p.gamma * dv[j];
            }
            unit[col] = 0.0;
        }
        let mut unit = vec![0.0; n];
        for col in 0..n {
            unit[col] = 1.0;
            let q = theta_flux(&unit, bc, g)?;
            for i in 0..ni {
                mat[(i, ni + col)] += dt * p.gamma * q[i + 1];
            }
            for j in 0..n {
                mat[(ni + j, ni + col)] -= dt * p.kappa * (q[j + 1] - q[j]) / g.h;
            }
            unit[col] = 0.0;
        }
        let lu = mat.partial_piv_lu();
        let u = lu.U();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..dim {
            lo = lo.min(u[(i, i)].abs());
            hi = hi.max(u[(i, i)].abs());
        }
        let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
        if !(ratio >= PIVOT_TOL) {
            return Err(Error::Singular {
                re: 1.0 / dt,
                im: 0.0,
                pivot_ratio: ratio,
            });
        }
        Ok(lu)
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// `Du` at fractional step position `pos`, linear between stored steps.
    fn strain_at(&self, pos: f64) -> Vec<f64> {
        let pos = snap(pos);
        let lo = pos.floor() as i64;
        let frac = pos - lo as f64;
        let idx = |k: i64| (k - self.oldest).clamp(0, self.strains.len() as i64 - 1) as usize;
        let a = &self.strains[idx(lo)];
        if frac == 0.0 {
            return a.clone();
        }
        let b = &self.strains[idx(lo + 1)];
        a.iter().zip(b).map(|(x, y)| (1.0 - frac) * x + frac * y).collect()
    }

    /// Right-hand side of the velocity equation for the next step,
    /// `v + dt·div(α u_x(t_{n+1} − τ))`.
    pub fn velocity_rhs(&self) -> Result<Vec<f64>> {
        let delayed = self.strain_at((self.step + 1) as f64 - self.delay_steps);
        let stress: Vec<f64> = delayed.iter().map(|x| x * self.params.alpha).collect();
        let div = div_mid_to_node(&stress, &self.grid)?;
        Ok(self.v.iter().zip(&div).map(|(v, d)| v + self.dt * d).collect())
    }

    pub fn advance(&mut self) -> Result<()> {
        let ni = self.grid.n_cells - 1;
        let mut rhs = self.velocity_rhs()?;
        rhs.extend_from_slice(&self.theta);
        let b = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        for i in 0..ni {
            self.v[i] = x[(i, 0)];
            self.u[i] += self.dt * self.v[i];
        }
        for j in 0..self.grid.n_cells {
            self.theta[j] = x[(ni + j, 0)];
        }
        self.step += 1;
        self.strains.push_back(diff_node_to_mid(&self.u, &self.grid)?);
        let keep = self.slots + 1;
        while self.strains.len() > keep {
            self.strains.pop_front();
            self.oldest += 1;
        }
        Ok(())
    }

    /// Current state in transport form, with `z(·, ρ_k) = u_x(·, t − τρ_k)`.
    pub fn state(&self) -> StateVector {
        let g = &self.grid;
        let mut s = StateVector::zeros(g.layout());
        let c = |x: &f64| Complex64::new(*x, 0.0);
        s.u_mut().iter_mut().zip(&self.u).for_each(|(d, x)| *d = c(x));
        s.v_mut().iter_mut().zip(&self.v).for_each(|(d, x)| *d = c(x));
        s.theta_mut().iter_mut().zip(&self.theta).for_each(|(d, x)| *d = c(x));
        let m = g.n_rho;
        for k in 1..=m {
            let pos = self.step as f64 - self.delay_steps * k as f64 / m as f64;
            let strain = self.strain_at(pos);
            for (j, x) in strain.iter().enumerate() {
                s.z_mut()[j * m + k - 1] = c(x);
            }
        }
        s
    }

    pub fn theta_bc(&self) -> ThetaBc {
        self.theta_bc
    }
}

/// Integrates the delayed form; energies are measured on the reconstructed
/// transport state, so they compare directly with [`super::simulate`].
pub fn simulate_history(
    p: &PhysicalParams,
    g: &GridSpec,
    theta_bc: ThetaBc,
    init: &InitialData,
    opts: &SimulationOptions,
) -> Result<Trajectory> {
    if opts.scheme != Scheme::ImplicitEuler {
        return Err(Error::param("scheme", "the history integrator is implicit Euler only"));
    }
    let steps = opts.steps()?;
    let mut it = HistoryIntegrator::new(p, g, theta_bc, init, opts.dt)?;
    let mut traj = Trajectory::default();
    let record = |it: &HistoryIntegrator, traj: &mut Trajectory| -> Result<()> {
        let s = it.state();
        traj.times.push(it.time());
        traj.energies.push(energy(&s, p, g)?);
        if opts.keep_states {
            traj.states.push(s);
        }
        Ok(())
    };
    record(&it, &mut traj)?;
    for n in 1..=steps {
        it.advance()?;
        if n % opts.sample_stride == 0 || n == steps {
            record(&it, &mut traj)?;
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::h_norm;
    use crate::timestepper::simulate;

    fn reference(n: usize, m: usize) -> (PhysicalParams, GridSpec) {
        let p = PhysicalParams::reference();
        (p, GridSpec::new(n, m, p.ell).unwrap())
    }

    #[test]
    fn slot_count() {
        assert_eq!(history_slots(0.5, 1e-3), 500);
        assert_eq!(history_slots(0.5, 0.3), 2);
        let (p, g) = reference(8, 4);
        let it = HistoryIntegrator::new(&p, &g, ThetaBc::Neumann, &InitialData::SineMode(1), 1e-3).unwrap();
        assert_eq!(it.slots(), 500);
        assert_eq!(it.strains.len(), 501);
        let mut it = it;
        for _ in 0..700 {
            it.advance().unwrap();
        }
        assert_eq!(it.strains.len(), 501);
        assert_eq!(it.oldest, 200);
    }

    #[test]
    fn first_step_rhs_by_hand() {
        let (p, g) = reference(16, 4);
        let dt = 1e-3;
        let it = HistoryIntegrator::new(&p, &g, ThetaBc::Neumann, &InitialData::SineMode(1), dt).unwrap();
        let u: Vec<f64> = (1..16).map(|i| g.node(i).sin()).collect();
        let at = |i: usize| if i == 0 || i == 16 { 0.0 } else { u[i - 1] };
        let rhs = it.velocity_rhs().unwrap();
        for i in 1..16 {
            let lap = (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (g.h * g.h);
            assert!((rhs[i - 1] - dt * p.alpha * lap).abs() < 1e-14, "{i}");
        }
    }

    #[test]
    fn initial_state_matches_transport_form() {
        let (p, g) = reference(16, 8);
        for init in [InitialData::SineMode(1), InitialData::RandomSmooth(5)] {
            let it = HistoryIntegrator::new(&p, &g, ThetaBc::Neumann, &init, 1e-2).unwrap();
            let d = it.state().sub(&init.state(&g).unwrap());
            assert!(h_norm(&d, &p, &g).unwrap() < 1e-14);
        }
    }

    #[test]
    fn misaligned_step_interpolates() {
        let (p, g) = reference(8, 4);
        let mut it = HistoryIntegrator::new(&p, &g, ThetaBc::Neumann, &InitialData::SineMode(1), 0.03).unwrap();
        for _ in 0..40 {
            it.advance().unwrap();
        }
        let s = it.state();
        assert!(s.as_slice().iter().all(|x| x.re.is_finite()));
    }

    #[test]
    fn rejects_trapezoidal() {
        let (p, g) = reference(8, 4);
        let opts = SimulationOptions::new(1.0, 0.01, Scheme::Trapezoidal);
        assert!(simulate_history(&p, &g, ThetaBc::Neumann, &InitialData::SineMode(1), &opts).is_err());
    }

    #[test]
    fn agrees_with_transport_form_on_short_run() {
        let (p, g) = reference(16, 32);
        let mut opts = SimulationOptions::new(1.0, 1e-3, Scheme::ImplicitEuler);
        opts.keep_states = true;
        opts.sample_stride = 100;
        let a = simulate(&p, &g, ThetaBc::Neumann, &InitialData::SineMode(1), &opts).unwrap();
        let b = simulate_history(&p, &g, ThetaBc::Neumann, &InitialData::SineMode(1), &opts).unwrap();
        assert_eq!(a.times.len(), b.times.len());
        for (sa, sb) in a.states.iter().zip(&b.states) {
            let rel = h_norm(&sa.sub(sb), &p, &g).unwrap() / h_norm(sb, &p, &g).unwrap();
            assert!(rel < 0.1, "{rel}");
        }
    }
}
