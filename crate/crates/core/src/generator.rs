//! Finite-dimensional generator `A_h` and its resolvent.
//!
//! Row blocks, in layout order:
//!
//! ```text
//! u̇ = v
//! v̇ = div(α z[·][M] + β Dv) − γ θ_x
//! ż[j][k] = −(z[j][k] − z[j][k−1]) / (τ Δρ),   z[j][0] = (Du)[j]
//! θ̇ = κ div(q(θ)) − γ Dv
//! ```

use std::collections::BTreeMap;
use std::io::Write;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{c64, Mat};
use num_complex::Complex64;

use crate::coercivity::{ComplexFrequency, PhysicalParams};
use crate::error::{Error, Result};
use crate::grid::{diff_node_to_mid, div_mid_to_node, theta_flux, GridSpec, Layout, StateVector, ThetaBc};

/// Largest dimension for which dense matrices are formed.
pub const DENSE_LIMIT: usize = 6000;

/// Pivot ratio `min|U_ii| / max|U_ii|` below which an LU factorization is
/// reported as singular.
pub const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    params: PhysicalParams,
    grid: GridSpec,
    theta_bc: ThetaBc,
    layout: Layout,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

struct RowBuilder {
    rows: Vec<BTreeMap<usize, f64>>,
}

impl RowBuilder {
    fn add(&mut self, row: usize, col: usize, val: f64) {
        *self.rows[row].entry(col).or_insert(0.0) += val;
    }
}

/// Assembles `A_h` in compressed-row form.
pub fn assemble(p: &PhysicalParams, g: &GridSpec, theta_bc: ThetaBc) -> Result<GeneratorMatrix> {
    p.validate()?;
    if (g.ell - p.ell).abs() > 1e-12 * p.ell {
        return Err(Error::param("ell", "grid length differs from params.ell"));
    }
    let l = g.layout();
    let n = g.n_cells;
    let m = g.n_rho;
    let inv_h = 1.0 / g.h;
    let c = 1.0 / (p.tau * g.d_rho);
    let mut b = RowBuilder {
        rows: vec![BTreeMap::new(); l.dim()],
    };

    // Interior node i (1..n) sits at flat offset i - 1 inside the u and v blocks.
    let u_idx = |i: usize| (i >= 1 && i < n).then(|| l.u() + i - 1);
    let v_idx = |i: usize| (i >= 1 && i < n).then(|| l.v() + i - 1);
    let theta_idx = |j: usize| l.theta() + j;

    for i in 1..n {
        let row = l.u() + i - 1;
        b.add(row, l.v() + i - 1, 1.0);
    }

    for i in 1..n {
        let row = l.v() + i - 1;
        // stress at midpoints i (sign +) and i - 1 (sign -)
        for (mid, sign) in [(i, 1.0), (i - 1, -1.0)] {
            let w = sign * inv_h;
            b.add(row, l.z_index(mid, m), w * p.alpha);
            if let Some(col) = v_idx(mid + 1) {
                b.add(row, col, w * p.beta * inv_h);
            }
            if let Some(col) = v_idx(mid) {
                b.add(row, col, -w * p.beta * inv_h);
            }
        }
        b.add(row, theta_idx(i), -p.gamma * inv_h);
        b.add(row, theta_idx(i - 1), p.gamma * inv_h);
    }

    for j in 0..n {
        for k in 1..=m {
            let row = l.z_index(j, k);
            b.add(row, row, -c);
            if k == 1 {
                if let Some(col) = u_idx(j + 1) {
                    b.add(row, col, c * inv_h);
                }
                if let Some(col) = u_idx(j) {
                    b.add(row, col, -c * inv_h);
                }
            } else {
                b.add(row, l.z_index(j, k - 1), c);
            }
        }
    }

    // Flux at node i as coefficients on θ; walls depend on the boundary mode.
    let flux = |i: usize| -> Vec<(usize, f64)> {
        if i == 0 {
            match theta_bc {
                ThetaBc::Neumann => vec![],
                ThetaBc::Dirichlet => vec![(0, 2.0 * inv_h)],
            }
        } else if i == n {
            match theta_bc {
                ThetaBc::Neumann => vec![],
                ThetaBc::Dirichlet => vec![(n - 1, -2.0 * inv_h)],
            }
        } else {
            vec![(i, inv_h), (i - 1, -inv_h)]
        }
    };
    for j in 0..n {
        let row = theta_idx(j);
        for (col, w) in flux(j + 1) {
            b.add(row, theta_idx(col), p.kappa * inv_h * w);
        }
        for (col, w) in flux(j) {
            b.add(row, theta_idx(col), -p.kappa * inv_h * w);
        }
        if let Some(col) = v_idx(j + 1) {
            b.add(row, col, -p.gamma * inv_h);
        }
        if let Some(col) = v_idx(j) {
            b.add(row, col, p.gamma * inv_h);
        }
    }

    let mut row_ptr = Vec::with_capacity(l.dim() + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for row in b.rows {
        for (col, val) in row {
            if val != 0.0 {
                cols.push(col);
                vals.push(val);
            }
        }
        row_ptr.push(cols.len());
    }
    Ok(GeneratorMatrix {
        params: *p,
        grid: *g,
        theta_bc,
        layout: l,
        row_ptr,
        cols,
        vals,
    })
}

impl GeneratorMatrix {
    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn theta_bc(&self) -> ThetaBc {
        self.theta_bc
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Nonzeros of `row` as `(col, value)`.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[row]..self.row_ptr[row + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.row(row).find(|&(c, _)| c == col).map_or(0.0, |(_, v)| v)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim())
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `A_h · U` with the assembled entries.
    pub fn apply(&self, u: &StateVector) -> Result<StateVector> {
        self.check_layout(u)?;
        let x = u.as_slice();
        let out = (0..self.dim())
            .map(|r| self.row(r).map(|(c, v)| x[c] * v).sum::<Complex64>())
            .collect();
        StateVector::from_vec(self.layout, out)
    }

    /// `A_h · U` straight from the stencils, without the stored matrix.
    pub fn apply_matrix_free(&self, u: &StateVector) -> Result<StateVector> {
        self.check_layout(u)?;
        apply_matrix_free(&self.params, &self.grid, self.theta_bc, u)
    }

    /// Dense copy of `A_h`.
    pub fn to_dense(&self) -> Result<Mat<f64>> {
        self.dense_guard()?;
        let mut a = Mat::<f64>::zeros(self.dim(), self.dim());
        for r in 0..self.dim() {
            for (c, v) in self.row(r) {
                a[(r, c)] = v;
            }
        }
        Ok(a)
    }

    /// Dense copy of the square sub-block on the given index range.
    pub fn sub_block(&self, range: std::ops::Range<usize>) -> Mat<f64> {
        let n = range.len();
        let mut a = Mat::<f64>::zeros(n, n);
        for (ri, r) in range.clone().enumerate() {
            for (c, v) in self.row(r) {
                if range.contains(&c) {
                    a[(ri, c - range.start)] = v;
                }
            }
        }
        a
    }

    /// The θ–θ block.
    pub fn theta_block(&self) -> Mat<f64> {
        self.sub_block(self.layout.theta()..self.dim())
    }

    /// The z–z block (pure transport, inflow coupling dropped).
    pub fn transport_block(&self) -> Mat<f64> {
        self.sub_block(self.layout.z()..self.layout.theta())
    }

    pub(crate) fn dense_guard(&self) -> Result<()> {
        if self.dim() > DENSE_LIMIT {
            return Err(Error::DimensionGuard {
                dim: self.dim(),
                limit: DENSE_LIMIT,
            });
        }
        Ok(())
    }

    fn check_layout(&self, u: &StateVector) -> Result<()> {
        if u.layout() != self.layout {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: u.dim(),
            });
        }
        Ok(())
    }

    /// Coordinate dump, one `row col value` triple per line (0-based, 17
    /// significant digits), preceded by a `#` header with dimension and nnz.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# dim {} nnz {}", self.dim(), self.nnz())?;
        for r in 0..self.dim() {
            for (c, v) in self.row(r) {
                writeln!(w, "{r} {c} {v:.16e}")?;
            }
        }
        Ok(())
    }
}

pub fn apply_matrix_free(p: &PhysicalParams, g: &GridSpec, theta_bc: ThetaBc, u: &StateVector) -> Result<StateVector> {
    let l = g.layout();
    if u.layout() != l {
        return Err(Error::DimensionMismatch {
            expected: l.dim(),
            found: u.dim(),
        });
    }
    let n = g.n_cells;
    let m = g.n_rho;
    let c = 1.0 / (p.tau * g.d_rho);
    let mut out = StateVector::zeros(l);

    out.u_mut().copy_from_slice(u.v());

    let dv = diff_node_to_mid(u.v(), g)?;
    let z_top = u.z_top();
    let stress: Vec<Complex64> = (0..n).map(|j| z_top[j] * p.alpha + dv[j] * p.beta).collect();
    let q = theta_flux(u.theta(), theta_bc, g)?;
    let div = div_mid_to_node(&stress, g)?;
    for (i, slot) in out.v_mut().iter_mut().enumerate() {
        *slot = div[i] - q[i + 1] * p.gamma;
    }

    let du = diff_node_to_mid(u.u(), g)?;
    {
        let z = u.z();
        let dz = out.z_mut();
        for j in 0..n {
            for k in 0..m {
                let prev = if k == 0 { du[j] } else { z[j * m + k - 1] };
                dz[j * m + k] = (z[j * m + k] - prev) * (-c);
            }
        }
    }

    for (j, slot) in out.theta_mut().iter_mut().enumerate() {
        *slot = (q[j + 1] - q[j]) * (p.kappa / g.h) - dv[j] * p.gamma;
    }
    Ok(out)
}

fn pivot_ratio(lu: &PartialPivLu<c64>) -> f64 {
    let u = lu.U();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..u.nrows() {
        let d = u[(i, i)].norm();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

fn singular(lam: Complex64, pivot_ratio: f64) -> Error {
    Error::Singular {
        re: lam.re,
        im: lam.im,
        pivot_ratio,
    }
}

fn column(x: &[Complex64]) -> Mat<c64> {
    Mat::from_fn(x.len(), 1, |i, _| x[i])
}

/// Solves `(λI − A_h)U = F` by dense LU with partial pivoting.
///
/// Above [`DENSE_LIMIT`] the structured elimination of [`ResolventFactor`]
/// is used instead.
pub fn resolvent_solve(a: &GeneratorMatrix, lam: ComplexFrequency, f: &StateVector) -> Result<StateVector> {
    a.check_layout(f)?;
    if a.dim() > DENSE_LIMIT {
        return ResolventFactor::new(a, lam)?.solve(f);
    }
    DenseResolvent::new(a, lam)?.solve(f)
}

/// Dense LU of `λI − A_h`, reusable across right-hand sides.
pub struct DenseResolvent {
    layout: Layout,
    lu: PartialPivLu<c64>,
    pivot_ratio: f64,
}

impl DenseResolvent {
    pub fn new(a: &GeneratorMatrix, lam: ComplexFrequency) -> Result<Self> {
        a.dense_guard()?;
        let lam = lam.to_complex();
        let n = a.dim();
        let mut mat = Mat::<c64>::zeros(n, n);
        for r in 0..n {
            mat[(r, r)] = lam;
            for (c, v) in a.row(r) {
                mat[(r, c)] -= v;
            }
        }
        let lu = mat.partial_piv_lu();
        let ratio = pivot_ratio(&lu);
        if !(ratio >= PIVOT_TOL) {
            return Err(singular(lam, ratio));
        }
        Ok(Self {
            layout: a.layout(),
            lu,
            pivot_ratio: ratio,
        })
    }

    pub fn pivot_ratio(&self) -> f64 {
        self.pivot_ratio
    }

    pub fn solve(&self, f: &StateVector) -> Result<StateVector> {
        let x = self.lu.solve(column(f.as_slice()));
        StateVector::from_vec(self.layout, (0..x.nrows()).map(|i| x[(i, 0)]).collect())
    }
}

/// Forward substitution for the upwind transport resolvent
/// `(λ + c) z[j][k] − c z[j][k−1] = p[j][k]`, `c = 1/(τΔρ)`, `z[j][0] = inflow[j]`.
///
/// `rhs_p` and the result are `j`-major `N × M` arrays (levels `1..=M`).
pub fn transport_resolvent(
    lam: ComplexFrequency,
    inflow: &[Complex64],
    rhs_p: &[Complex64],
    g: &GridSpec,
    tau: f64,
) -> Result<Vec<Complex64>> {
    let (n, m) = (g.n_cells, g.n_rho);
    if inflow.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: inflow.len(),
        });
    }
    if rhs_p.len() != n * m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            found: rhs_p.len(),
        });
    }
    let c = 1.0 / (tau * g.d_rho);
    let s = lam.to_complex() + c;
    if s.norm() == 0.0 {
        return Err(singular(lam.to_complex(), 0.0));
    }
    let inv_s = s.inv();
    let ratio = Complex64::new(c, 0.0) / s;
    let mut z = vec![Complex64::new(0.0, 0.0); n * m];
    for j in 0..n {
        let mut prev = inflow[j];
        for k in 0..m {
            prev = rhs_p[j * m + k] * inv_s + prev * ratio;
            z[j * m + k] = prev;
        }
    }
    Ok(z)
}

/// Continuous transport resolvent at `ρ` for a constant source `p`:
/// `e^{−λτρ} w + p (1 − e^{−λτρ}) / λ` (the limit `τρp` at `λ = 0`).
pub fn transport_closed_form(lam: ComplexFrequency, tau: f64, inflow: Complex64, p: Complex64, rho: f64) -> Complex64 {
    let l = lam.to_complex();
    let decay = (-l * tau * rho).exp();
    let source = if l.norm() == 0.0 {
        p * (tau * rho)
    } else {
        p * (Complex64::new(1.0, 0.0) - decay) / l
    };
    decay * inflow + source
}

/// `(λI − A_h)⁻¹` by elimination: `v = λu − f`, the delay levels through
/// [`transport_resolvent`], and a dense solve of the remaining `(u, θ)`
/// system
///
/// ```text
/// λ²u − div((α r^M + βλ) Du) + γ θ_x = g + λf + div(α z₀ − β Df)
/// λθ − κ div q(θ) + γλ Du            = h + γ Df
/// ```
///
/// with `r = 1/(1 + λτΔρ)` and `z₀` the top level of the transport solve
/// driven by `p` alone.
pub struct ResolventFactor {
    params: PhysicalParams,
    grid: GridSpec,
    theta_bc: ThetaBc,
    lam: ComplexFrequency,
    lu: PartialPivLu<c64>,
    pivot_ratio: f64,
}

impl ResolventFactor {
    pub fn new(a: &GeneratorMatrix, lam: ComplexFrequency) -> Result<Self> {
        Self::from_parts(a.params(), a.grid(), a.theta_bc(), lam)
    }

    pub fn from_parts(p: &PhysicalParams, g: &GridSpec, theta_bc: ThetaBc, lam: ComplexFrequency) -> Result<Self> {
        let l = lam.to_complex();
        let n = g.n_cells;
        let ni = n - 1;
        let c = 1.0 / (p.tau * g.d_rho);
        let s = l + c;
        if s.norm() == 0.0 {
            return Err(singular(l, 0.0));
        }
        let r_m = (s.inv() * c).powu(g.n_rho as u32);
        let stiffness = r_m * p.alpha + l * p.beta;
        let zero = Complex64::new(0.0, 0.0);

        let dim = ni + n;
        let mut mat = Mat::<c64>::zeros(dim, dim);
        let mut unit_u = vec![zero; ni];
        for col in 0..ni {
            unit_u[col] = Complex64::new(1.0, 0.0);
            let du = diff_node_to_mid(&unit_u, g)?;
            let stress: Vec<Complex64> = du.iter().map(|&x| x * stiffness).collect();
            let div = div_mid_to_node(&stress, g)?;
            for i in 0..ni {
                mat[(i, col)] = -div[i];
            }
            mat[(col, col)] += l * l;
            for j in 0..n {
                mat[(ni + j, col)] = du[j] * l * p.gamma;
            }
            unit_u[col] = zero;
        }
        let mut unit_t = vec![zero; n];
        for col in 0..n {
            unit_t[col] = Complex64::new(1.0, 0.0);
            let q = theta_flux(&unit_t, theta_bc, g)?;
            for i in 0..ni {
                mat[(i, ni + col)] = q[i + 1] * p.gamma;
            }
            for j in 0..n {
                mat[(ni + j, ni + col)] = -(q[j + 1] - q[j]) * (p.kappa / g.h);
            }
            mat[(ni + col, ni + col)] += l;
            unit_t[col] = zero;
        }
        let lu = mat.partial_piv_lu();
        let ratio = pivot_ratio(&lu);
        if !(ratio >= PIVOT_TOL) {
            return Err(singular(l, ratio));
        }
        Ok(Self {
            params: *p,
            grid: *g,
            theta_bc,
            lam,
            lu,
            pivot_ratio: ratio,
        })
    }

    pub fn lambda(&self) -> ComplexFrequency {
        self.lam
    }

    pub fn pivot_ratio(&self) -> f64 {
        self.pivot_ratio
    }

    pub fn solve(&self, f: &StateVector) -> Result<StateVector> {
        let (p, g) = (&self.params, &self.grid);
        let layout = g.layout();
        if f.layout() != layout {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                found: f.dim(),
            });
        }
        let l = self.lam.to_complex();
        let n = g.n_cells;
        let ni = n - 1;
        let zero = Complex64::new(0.0, 0.0);

        let z_source = transport_resolvent(self.lam, &vec![zero; n], f.z(), g, p.tau)?;
        let z0: Vec<Complex64> = (0..n).map(|j| z_source[j * g.n_rho + g.n_rho - 1]).collect();
        let df = diff_node_to_mid(f.u(), g)?;
        let extra: Vec<Complex64> = (0..n).map(|j| z0[j] * p.alpha - df[j] * p.beta).collect();
        let div_extra = div_mid_to_node(&extra, g)?;

        let mut rhs = vec![zero; ni + n];
        for i in 0..ni {
            rhs[i] = f.v()[i] + l * f.u()[i] + div_extra[i];
        }
        for j in 0..n {
            rhs[ni + j] = f.theta()[j] + df[j] * p.gamma;
        }
        let x = self.lu.solve(column(&rhs));

        let mut out = StateVector::zeros(layout);
        for i in 0..ni {
            out.u_mut()[i] = x[(i, 0)];
        }
        for j in 0..n {
            out.theta_mut()[j] = x[(ni + j, 0)];
        }
        let v: Vec<Complex64> = (0..ni).map(|i| l * out.u()[i] - f.u()[i]).collect();
        out.v_mut().copy_from_slice(&v);
        let du = diff_node_to_mid(out.u(), g)?;
        let z = transport_resolvent(self.lam, &du, f.z(), g, p.tau)?;
        out.z_mut().copy_from_slice(&z);
        Ok(out)
    }

    pub fn theta_bc(&self) -> ThetaBc {
        self.theta_bc
    }
}

/// Structured resolvent solve, restricted to `Re λ > 0`.
pub fn resolvent_solve_reduced(a: &GeneratorMatrix, lam: ComplexFrequency, f: &StateVector) -> Result<StateVector> {
    if !(lam.a > 0.0) {
        return Err(Error::param(
            "lambda.re",
            format!("reduced solve needs Re(lambda) > 0, got {}", lam.a),
        ));
    }
    a.check_layout(f)?;
    ResolventFactor::new(a, lam)?.solve(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::h_norm;
    use crate::grid::tests::random_state;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn reference(n: usize, m: usize) -> (PhysicalParams, GridSpec) {
        let p = PhysicalParams::reference();
        (p, GridSpec::new(n, m, p.ell).unwrap())
    }

    fn theta_const(l: Layout, value: f64) -> StateVector {
        let mut s = StateVector::zeros(l);
        s.theta_mut().iter_mut().for_each(|x| *x = Complex64::new(value, 0.0));
        s
    }

    /// `(λI − A)U` by the stored entries.
    fn shifted_apply(a: &GeneratorMatrix, lam: ComplexFrequency, u: &StateVector) -> StateVector {
        let mut out = u.clone();
        out.scale(lam.to_complex());
        out.axpy(Complex64::new(-1.0, 0.0), &a.apply(u).unwrap());
        out
    }

    #[test]
    fn dimension_and_transport_block() {
        let (p, _) = reference(8, 10);
        let p = PhysicalParams { tau: 1.0, ..p };
        let g = GridSpec::new(8, 10, p.ell).unwrap();
        let a = assemble(&p, &g, ThetaBc::Neumann).unwrap();
        assert_eq!(a.dim(), 2 * 7 + 80 + 8);
        let t = a.transport_block();
        for r in 0..t.nrows() {
            for c in 0..t.ncols() {
                let expected = if r == c {
                    -10.0
                } else if c + 1 == r && r % 10 != 0 {
                    10.0
                } else {
                    0.0
                };
                assert!((t[(r, c)] - expected).abs() < 1e-12, "({r},{c})");
            }
        }
    }

    #[test]
    fn constant_theta_is_annihilated() {
        let (p, g) = reference(16, 4);
        let a = assemble(&p, &g, ThetaBc::Neumann).unwrap();
        let s = theta_const(g.layout(), 3.7);
        assert!(a.apply(&s).unwrap().as_slice().iter().all(|x| x.norm() < 1e-12));
        assert!(a
            .apply_matrix_free(&s)
            .unwrap()
            .as_slice()
            .iter()
            .all(|x| x.norm() < 1e-12));
        assert!(a
            .apply(&StateVector::zeros(g.layout()))
            .unwrap()
            .as_slice()
            .iter()
            .all(|x| x.norm() == 0.0));
    }

    #[test]
    fn theta_mean_is_conserved_by_rows() {
        let (p, g) = reference(16, 4);
        let a = assemble(&p, &g, ThetaBc::Neumann).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let u = random_state(g.layout(), &mut rng);
            let au = a.apply(&u).unwrap();
            let sum: Complex64 = au.theta().iter().sum();
            assert!(sum.norm() < 1e-10);
        }
    }

    #[test]
    fn assembled_and_matrix_free_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for bc in [ThetaBc::Neumann, ThetaBc::Dirichlet] {
            let p = PhysicalParams::new(1.3, 0.7, 0.9, 1.1, 0.8, 2.0).unwrap();
            let g = GridSpec::new(20, 7, p.ell).unwrap();
            let a = assemble(&p, &g, bc).unwrap();
            for _ in 0..10 {
                let u = random_state(g.layout(), &mut rng);
                let d = a.apply(&u).unwrap().sub(&a.apply_matrix_free(&u).unwrap());
                let scale = h_norm(&a.apply(&u).unwrap(), &p, &g).unwrap();
                assert!(h_norm(&d, &p, &g).unwrap() <= 1e-13 * scale);
            }
        }
    }

    #[test]
    fn decoupled_heat_block_matches_cosine_spectrum() {
        let p = PhysicalParams::new(1.0, 1.0, 1.0, 1.0, 0.5, PI).unwrap();
        let g = GridSpec::new(64, 2, PI).unwrap();
        let a = assemble(&p, &g, ThetaBc::Neumann).unwrap();
        let mut eigs: Vec<f64> = a.theta_block().eigenvalues().unwrap().iter().map(|z| z.re).collect();
        eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
        assert!(eigs[0].abs() < 1e-10);
        for (k, &eig) in eigs.iter().enumerate().take(4).skip(1) {
            let exact = -(4.0 / (g.h * g.h)) * (k as f64 * g.h / 2.0).sin().powi(2);
            assert!((eig - exact).abs() < 1e-9 * exact.abs());
        }
    }

    #[test]
    fn coordinate_dump_lists_every_entry() {
        let (p, g) = reference(3, 2);
        let a = assemble(&p, &g, ThetaBc::Neumann).unwrap();
        let mut buf = Vec::new();
        a.write_coordinate(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), a.nnz() + 1);
        let parts: Vec<&str> = lines[1].split(' ').collect();
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[2].parse::<f64>().unwrap(), a.get(0, parts[1].parse().unwrap()));
    }

    #[test]
    fn resolvent_round_trip() {
        let (p, g) = reference(12, 6);
        let a = assemble(&p, &g, ThetaBc::Neumann).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u0 = random_state(g.layout(), &mut rng);
        let lam = ComplexFrequency::new(1.0, 1.0);
        let f = shifted_apply(&a, lam, &u0);
        let u = resolvent_solve(&a, lam, &f).unwrap();
        let err = h_norm(&u.sub(&u0), &p, &g).unwrap() / h_norm(&u0, &p, &g).unwrap();
        assert!(err < 1e-9, "{err}");
        let zero = resolvent_solve(&a, lam, &StateVector::zeros(g.layout())).unwrap();
        assert!(zero.as_slice().iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn resolvent_at_zero_is_singular_for_neumann() {
        let (p, g) = reference(12, 6);
        let a = assemble(&p, &g, ThetaBc::Neumann).unwrap();
        let f = theta_const(g.layout(), 1.0);
        let err = resolvent_solve(&a, ComplexFrequency::new(0.0, 0.0), &f).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
        let err = ResolventFactor::new(&a, ComplexFrequency::new(0.0, 0.0)).err().unwrap();
        assert!(matches!(err, Error::Singular { .. }));
        // Dirichlet walls remove the kernel
        let a = assemble(&p, &g, ThetaBc::Dirichlet).unwrap();
        assert!(resolvent_solve(&a, ComplexFrequency::new(0.0, 0.0), &f).is_ok());
    }

    #[test]
    fn transport_recurrence_closed_form() {
        let g = GridSpec::new(3, 16, 1.0).unwrap();
        let tau = 0.7;
        let lam = ComplexFrequency::new(0.4, -2.0);
        let w = vec![
            Complex64::new(1.0, 0.5),
            Complex64::new(-2.0, 0.0),
            Complex64::new(0.0, 3.0),
        ];
        let zero = vec![Complex64::new(0.0, 0.0); 3 * 16];
        let z = transport_resolvent(lam, &w, &zero, &g, tau).unwrap();
        let factor = Complex64::new(1.0, 0.0) + lam.to_complex() * tau * g.d_rho;
        for j in 0..3 {
            for k in 1..=16 {
                let expected = w[j] * factor.powi(-(k as i32));
                assert!((z[j * 16 + k - 1] - expected).norm() < 1e-13);
            }
        }
        let copy = transport_resolvent(ComplexFrequency::new(0.0, 0.0), &w, &zero, &g, tau).unwrap();
        for j in 0..3 {
            assert!(copy[j * 16..(j + 1) * 16].iter().all(|&x| x == w[j]));
        }
    }

    fn transport_top_error(m: usize) -> f64 {
        let g = GridSpec::new(2, m, 1.0).unwrap();
        let lam = ComplexFrequency::new(1.0, 0.0);
        let one = vec![Complex64::new(1.0, 0.0); 2];
        let z = transport_resolvent(lam, &one, &vec![Complex64::new(0.0, 0.0); 2 * m], &g, 1.0).unwrap();
        let exact = transport_closed_form(lam, 1.0, one[0], Complex64::new(0.0, 0.0), 1.0);
        (z[m - 1] - exact).norm() / exact.norm()
    }

    #[test]
    fn transport_converges_first_order() {
        let (e1, e2) = (transport_top_error(64), transport_top_error(128));
        assert!(e1 < 1.0 / 64.0);
        let order = (e1 / e2).log2();
        assert!((order - 1.0).abs() < 0.05, "order {order}");
    }

    #[test]
    fn transport_with_constant_source_converges() {
        let m = 512;
        let g = GridSpec::new(2, m, 1.0).unwrap();
        let lam = ComplexFrequency::new(0.5, 3.0);
        let w = vec![Complex64::new(1.0, 0.0); 2];
        let src = Complex64::new(0.3, -0.2);
        let z = transport_resolvent(lam, &w, &vec![src; 2 * m], &g, 0.8).unwrap();
        let exact = transport_closed_form(lam, 0.8, w[0], src, 1.0);
        assert!((z[m - 1] - exact).norm() < 1e-2 * exact.norm());
    }

    #[test]
    fn reduced_matches_full_solve() {
        let p = PhysicalParams::new(1.0, 1.0, 1.0, 1.0, 0.5, PI).unwrap();
        let g = GridSpec::new(32, 16, p.ell).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for bc in [ThetaBc::Neumann, ThetaBc::Dirichlet] {
            let a = assemble(&p, &g, bc).unwrap();
            let lam = ComplexFrequency::new(2.0, 3.0);
            let f = random_state(g.layout(), &mut rng);
            let full = resolvent_solve(&a, lam, &f).unwrap();
            let reduced = resolvent_solve_reduced(&a, lam, &f).unwrap();
            let err = h_norm(&full.sub(&reduced), &p, &g).unwrap() / h_norm(&full, &p, &g).unwrap();
            assert!(err < 1e-9, "{err}");

            // only the delay block forced
            let mut fz = StateVector::zeros(g.layout());
            fz.z_mut().copy_from_slice(f.z());
            let full = resolvent_solve(&a, lam, &fz).unwrap();
            let reduced = resolvent_solve_reduced(&a, lam, &fz).unwrap();
            let err = h_norm(&full.sub(&reduced), &p, &g).unwrap() / h_norm(&full, &p, &g).unwrap();
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn reduced_rejects_left_half_plane_and_zero_rhs() {
        let (p, g) = reference(8, 4);
        let a = assemble(&p, &g, ThetaBc::Neumann).unwrap();
        let f = StateVector::zeros(g.layout());
        assert!(resolvent_solve_reduced(&a, ComplexFrequency::new(0.0, 2.0), &f).is_err());
        let u = resolvent_solve_reduced(&a, ComplexFrequency::new(0.5, 2.0), &f).unwrap();
        assert!(u.as_slice().iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn dense_guard_applies() {
        let (p, g) = reference(200, 40);
        let a = assemble(&p, &g, ThetaBc::Neumann).unwrap();
        assert!(a.dim() > DENSE_LIMIT);
        assert!(matches!(a.to_dense(), Err(Error::DimensionGuard { .. })));
        // large systems still solve through the structured path
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u0 = random_state(g.layout(), &mut rng);
        let lam = ComplexFrequency::new(0.3, 4.0);
        let f = shifted_apply(&a, lam, &u0);
        let u = resolvent_solve(&a, lam, &f).unwrap();
        assert!(h_norm(&u.sub(&u0), &p, &g).unwrap() < 1e-8 * h_norm(&u0, &p, &g).unwrap());
    }
}
