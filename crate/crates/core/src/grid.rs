//! Staggered grid on `(0, ℓ) × (0, 1]`.
//!
//! Displacement and velocity live at the `N − 1` interior nodes `x_j = j·h`
//! (zero at both walls), temperature and strains at the `N` midpoints
//! `x_{j+1/2}`, and the delay variable at midpoints times the `M` delay
//! levels `ρ_k = k/M`, `k = 1..M`. The level `k = 0` is not stored; it is the
//! inflow value `z(·, 0) = u_x`.

use std::ops::{Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coercivity::PhysicalParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_cells: usize,
    pub n_rho: usize,
    pub ell: f64,
    pub h: f64,
    pub d_rho: f64,
}

impl GridSpec {
    pub fn new(n_cells: usize, n_rho: usize, ell: f64) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::param("n_cells", format!("must be >= 2, got {n_cells}")));
        }
        if n_rho < 1 {
            return Err(Error::param("n_rho", "must be >= 1"));
        }
        if !(ell.is_finite() && ell > 0.0) {
            return Err(Error::param("ell", format!("must be finite and > 0, got {ell}")));
        }
        Ok(Self {
            n_cells,
            n_rho,
            ell,
            h: ell / n_cells as f64,
            d_rho: 1.0 / n_rho as f64,
        })
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.n_cells, self.n_rho)
    }
}

/// Index map of the flat state `[u | v | z (j-major, k-minor) | θ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_cells: usize,
    pub n_rho: usize,
}

impl Layout {
    pub const VERSION: u32 = 1;

    pub const fn new(n_cells: usize, n_rho: usize) -> Self {
        Self { n_cells, n_rho }
    }

    pub const fn n_interior(&self) -> usize {
        self.n_cells - 1
    }

    pub const fn u(&self) -> usize {
        0
    }

    pub const fn v(&self) -> usize {
        self.n_cells - 1
    }

    pub const fn z(&self) -> usize {
        2 * (self.n_cells - 1)
    }

    pub const fn theta(&self) -> usize {
        self.z() + self.n_cells * self.n_rho
    }

    /// Flat index of `z[j][k]`, `k = 1..=M`.
    pub const fn z_index(&self, j: usize, k: usize) -> usize {
        self.z() + j * self.n_rho + (k - 1)
    }

    pub const fn dim(&self) -> usize {
        2 * (self.n_cells - 1) + self.n_cells * self.n_rho + self.n_cells
    }
}

/// Discrete `(u, v, z, θ)` in the fixed flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    layout: Layout,
    data: Vec<Complex64>,
}

impl StateVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            layout,
            data: vec![Complex64::new(0.0, 0.0); layout.dim()],
        }
    }

    pub fn from_vec(layout: Layout, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                found: data.len(),
            });
        }
        Ok(Self { layout, data })
    }

    pub fn from_real(layout: Layout, data: &[f64]) -> Result<Self> {
        Self::from_vec(layout, data.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn u(&self) -> &[Complex64] {
        &self.data[self.layout.u()..self.layout.v()]
    }

    pub fn v(&self) -> &[Complex64] {
        &self.data[self.layout.v()..self.layout.z()]
    }

    /// All delay levels, `j`-major.
    pub fn z(&self) -> &[Complex64] {
        &self.data[self.layout.z()..self.layout.theta()]
    }

    pub fn theta(&self) -> &[Complex64] {
        &self.data[self.layout.theta()..]
    }

    pub fn u_mut(&mut self) -> &mut [Complex64] {
        let (a, b) = (self.layout.u(), self.layout.v());
        &mut self.data[a..b]
    }

    pub fn v_mut(&mut self) -> &mut [Complex64] {
        let (a, b) = (self.layout.v(), self.layout.z());
        &mut self.data[a..b]
    }

    pub fn z_mut(&mut self) -> &mut [Complex64] {
        let (a, b) = (self.layout.z(), self.layout.theta());
        &mut self.data[a..b]
    }

    pub fn theta_mut(&mut self) -> &mut [Complex64] {
        let a = self.layout.theta();
        &mut self.data[a..]
    }

    pub fn z_at(&self, j: usize, k: usize) -> Complex64 {
        self.data[self.layout.z_index(j, k)]
    }

    /// The top delay level `z[·][M] ≈ z(·, 1)`.
    pub fn z_top(&self) -> Vec<Complex64> {
        let m = self.layout.n_rho;
        (0..self.layout.n_cells).map(|j| self.z_at(j, m)).collect()
    }

    pub fn is_real(&self) -> bool {
        self.data.iter().all(|c| c.im == 0.0)
    }

    pub fn scale(&mut self, s: Complex64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn axpy(&mut self, a: Complex64, other: &StateVector) {
        debug_assert_eq!(self.layout, other.layout);
        self.data.iter_mut().zip(&other.data).for_each(|(x, y)| *x += a * y);
    }

    pub fn sub(&self, other: &StateVector) -> StateVector {
        let mut out = self.clone();
        out.axpy(Complex64::new(-1.0, 0.0), other);
        out
    }

    fn check_same(&self, other: &StateVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

/// Forward difference from interior nodes (zero walls) to midpoints.
pub fn diff_node_to_mid<T>(w: &[T], g: &GridSpec) -> Result<Vec<T>>
where
    T: Copy + Default + Sub<Output = T> + Mul<f64, Output = T>,
{
    check_len(w.len(), g.n_cells - 1)?;
    let n = g.n_cells;
    let inv_h = 1.0 / g.h;
    let at = |i: usize| if i == 0 || i == n { T::default() } else { w[i - 1] };
    Ok((0..n).map(|j| (at(j + 1) - at(j)) * inv_h).collect())
}

/// Backward difference from midpoints to interior nodes.
pub fn div_mid_to_node<T>(sigma: &[T], g: &GridSpec) -> Result<Vec<T>>
where
    T: Copy + Sub<Output = T> + Mul<f64, Output = T>,
{
    check_len(sigma.len(), g.n_cells)?;
    let inv_h = 1.0 / g.h;
    Ok((1..g.n_cells).map(|i| (sigma[i] - sigma[i - 1]) * inv_h).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThetaBc {
    #[default]
    Neumann,
    Dirichlet,
}

impl std::str::FromStr for ThetaBc {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "neumann" => Ok(Self::Neumann),
            "dirichlet" => Ok(Self::Dirichlet),
            other => Err(format!("unknown theta boundary condition `{other}`")),
        }
    }
}

/// Temperature gradient at all `N + 1` nodes, walls included.
///
/// Dirichlet walls use a ghost value of zero half a cell away.
pub fn theta_flux<T>(theta: &[T], bc: ThetaBc, g: &GridSpec) -> Result<Vec<T>>
where
    T: Copy + Default + Sub<Output = T> + Mul<f64, Output = T>,
{
    check_len(theta.len(), g.n_cells)?;
    let n = g.n_cells;
    let inv_h = 1.0 / g.h;
    let mut flux = Vec::with_capacity(n + 1);
    match bc {
        ThetaBc::Neumann => flux.push(T::default()),
        ThetaBc::Dirichlet => flux.push((theta[0] - T::default()) * (2.0 * inv_h)),
    }
    for i in 1..n {
        flux.push((theta[i] - theta[i - 1]) * inv_h);
    }
    match bc {
        ThetaBc::Neumann => flux.push(T::default()),
        ThetaBc::Dirichlet => flux.push((T::default() - theta[n - 1]) * (2.0 * inv_h)),
    }
    Ok(flux)
}

/// `h·Σ ω_i |q_i|²` over the `N + 1` node values, with half weight at the walls.
///
/// This is the norm under which `h·Σ_j (q_{j+1} − q_j)/h · θ̄_j = −‖q‖²` holds
/// exactly for `q = theta_flux(θ)` in both boundary modes.
pub fn flux_norm_sq(flux: &[Complex64], g: &GridSpec) -> f64 {
    let n = flux.len();
    let interior: f64 = flux[1..n - 1].iter().map(|q| q.norm_sqr()).sum();
    g.h * (interior + 0.5 * (flux[0].norm_sqr() + flux[n - 1].norm_sqr()))
}

/// `h·Σ |w|²`.
pub fn l2_sq(w: &[Complex64], g: &GridSpec) -> f64 {
    g.h * w.iter().map(|x| x.norm_sqr()).sum::<f64>()
}

/// `h·Σ a·b̄`.
pub fn l2_inner(a: &[Complex64], b: &[Complex64], g: &GridSpec) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum::<Complex64>() * g.h
}

/// Discrete energy inner product
/// `h·Σ α Du₁·conj(Du₂) + h·Σ v₁v̄₂ + h·Σ θ₁θ̄₂ + ξ·h·Δρ·Σ z₁z̄₂`.
pub fn h_inner(u1: &StateVector, u2: &StateVector, p: &PhysicalParams, g: &GridSpec) -> Result<Complex64> {
    u1.check_same(u2)?;
    if u1.layout() != g.layout() {
        return Err(Error::DimensionMismatch {
            expected: g.layout().dim(),
            found: u1.dim(),
        });
    }
    let du1 = diff_node_to_mid(u1.u(), g)?;
    let du2 = diff_node_to_mid(u2.u(), g)?;
    let strain = l2_inner(&du1, &du2, g) * p.alpha;
    let velocity = l2_inner(u1.v(), u2.v(), g);
    let heat = l2_inner(u1.theta(), u2.theta(), g);
    let delay = l2_inner(u1.z(), u2.z(), g) * (p.xi() * g.d_rho);
    Ok(strain + velocity + heat + delay)
}

/// `‖U‖_ℋ`.
pub fn h_norm(u: &StateVector, p: &PhysicalParams, g: &GridSpec) -> Result<f64> {
    Ok(h_inner(u, u, p, g)?.re.max(0.0).sqrt())
}

fn check_len(found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
