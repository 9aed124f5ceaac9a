//! Second-order finite differences as a baseline: the `(2n+1)`-point stencil's
//! discretization error, the resulting solution error, a disc solver used to
//! confirm both, and the point-count/time extrapolation to higher dimensions.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::jets::{eval_field_jet, AxisJet4, Expression};
use crate::problems::{ProblemSpec, Variant};

/// Leading truncation error `ε = (h²/12) Σ_j ∂⁴u/∂x_j⁴` of the stencil
/// Laplacian at a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilEstimate {
    pub h: f64,
    pub per_point: Vec<f64>,
    pub max_abs: f64,
    /// `|ε(0)| / h²`, the constant of the usual `ε ≈ C·h²` estimate.
    pub leading_constant: f64,
}

fn fourth_derivative_sum(spec: &ProblemSpec, x: &[f64]) -> f64 {
    let field = Expression::Solution(*spec);
    let zero = vec![0.0; x.len()];
    (0..x.len())
        .map(|j| {
            let b: AxisJet4 = eval_field_jet(&field, x, Some(j), &zero);
            b.derivative(4, 0)
        })
        .sum()
}

pub fn stencil_error(spec: &ProblemSpec, h: f64, points: &PointCloud) -> StencilEstimate {
    let k = h * h / 12.0;
    let per_point: Vec<f64> = points
        .iter()
        .map(|x| k * fourth_derivative_sum(spec, x))
        .collect();
    let max_abs = per_point.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let origin = vec![0.0; spec.dim()];
    StencilEstimate {
        h,
        per_point,
        max_abs,
        leading_constant: (fourth_derivative_sum(spec, &origin) / 12.0).abs(),
    }
}

/// Leading error of the first-order terms `4x_j ∂v/∂x_j` of the substituted
/// equation under central differences: `(4h²/6)·max |∂³v/∂x_j³|` over the
/// points and axes.
pub fn first_derivative_error(spec: &ProblemSpec, h: f64, points: &PointCloud) -> f64 {
    let field = Expression::Inner(*spec);
    let zero = vec![0.0; spec.dim()];
    let max3 = points
        .iter()
        .flat_map(|x| {
            let zero = &zero;
            let field = &field;
            (0..x.len()).map(move |j| {
                let b: AxisJet4 = eval_field_jet(field, x, Some(j), zero);
                b.derivative(3, 0).abs()
            })
        })
        .fold(0.0f64, f64::max);
    4.0 * h * h / 6.0 * max3
}

/// `max|u − ũ|` for a constant stencil error `ε`: the solution of `ΔΨ = ε`
/// vanishing on the unit sphere is `Ψ = −ε(1 − r²)/(2n)`.
pub fn psi_bound(n: usize, eps: f64) -> f64 {
    eps.abs() / (2 * n) as f64
}

/// Finite-difference solution on the interior lattice nodes of the unit disc.
#[derive(Debug, Clone, PartialEq)]
pub struct FdSolution {
    pub h: f64,
    /// Node coordinates.
    pub nodes: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `‖Aũ − g‖/‖g‖`.
    pub residual: f64,
    /// Always `"shortley-weller"`: unequal arms at the circle, `ũ = 0` there.
    pub boundary: &'static str,
}

impl FdSolution {
    pub fn max_error(&self, exact: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.values)
            .map(|(p, v)| (exact(p) - v).abs())
            .fold(0.0, f64::max)
    }
}

/// Sparse matrix in row-compressed form.
struct Csr {
    start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (self.start[i]..self.start[i + 1])
                .map(|k| self.vals[k] * x[self.cols[k]])
                .sum();
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.start.len() - 1)
            .map(|i| {
                (self.start[i]..self.start[i + 1])
                    .find(|&k| self.cols[k] == i)
                    .map_or(1.0, |k| self.vals[k])
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned BiCGSTAB. Returns `(x, iterations, relative residual)`.
fn bicgstab(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize, f64)> {
    let n = b.len();
    let bn = norm(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let dinv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&dinv).map(|(a, b)| a * b).collect() };
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut rel = 1.0;
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = precond(&p);
        a.mul(&ph, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bn <= tol {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Ok((x, it, norm(&s) / bn));
        }
        let sh = precond(&s);
        a.mul(&sh, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm(&r) / bn;
        if rel <= tol {
            return Ok((x, it, rel));
        }
        if !rel.is_finite() || omega == 0.0 {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: rel,
    })
}

/// Solves `Δũ = g` on the unit disc with `ũ = 0` on the circle, using the
/// five-point stencil with Shortley–Weller arms next to the boundary.
pub fn fd_solve_disc_with(h: f64, g: impl Fn(&[f64]) -> f64) -> Result<FdSolution> {
    if !(h > 0.0 && h <= 0.125) {
        return Err(Error::config("h", "spacing must lie in (0, 1/8]"));
    }
    let m = (1.0 / h).ceil() as i64;
    let inside = |i: i64, j: i64| {
        let (x, y) = (i as f64 * h, j as f64 * h);
        x * x + y * y < 1.0
    };
    let mut index = std::collections::HashMap::new();
    let mut nodes = Vec::new();
    for j in -m..=m {
        for i in -m..=m {
            if inside(i, j) {
                index.insert((i, j), nodes.len());
                nodes.push([i as f64 * h, j as f64 * h]);
            }
        }
    }

    let mut start = vec![0];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut rhs = Vec::with_capacity(nodes.len());
    for (row, p) in nodes.iter().enumerate() {
        let (i, j) = ((p[0] / h).round() as i64, (p[1] / h).round() as i64);
        let mut diag = 0.0;
        // per axis: arms (minus, plus) and neighbor indices
        for axis in 0..2 {
            let (c, o) = (p[axis], p[1 - axis]);
            let edge = (1.0 - o * o).max(0.0).sqrt();
            let mut arms = [h, h];
            let mut nbr = [None, None];
            for (k, step) in [-1i64, 1].into_iter().enumerate() {
                let key = if axis == 0 { (i + step, j) } else { (i, j + step) };
                match index.get(&key) {
                    Some(&q) => nbr[k] = Some(q),
                    None => arms[k] = (edge - step as f64 * c).min(h),
                }
            }
            let [hm, hp] = arms;
            let wm = 2.0 / (hm * (hm + hp));
            let wp = 2.0 / (hp * (hm + hp));
            diag -= wm + wp;
            for (w, q) in [(wm, nbr[0]), (wp, nbr[1])] {
                if let Some(q) = q {
                    cols.push(q);
                    vals.push(w);
                }
            }
        }
        cols.push(row);
        vals.push(diag);
        start.push(cols.len());
        rhs.push(g(p));
    }
    let a = Csr { start, cols, vals };
    let (values, iterations, residual) = bicgstab(&a, &rhs, 1e-12, 20 * nodes.len() + 1000)?;
    Ok(FdSolution {
        h,
        nodes,
        values,
        iterations,
        residual,
        boundary: "shortley-weller",
    })
}

/// Disc solve for a 2D linear problem with source `g = Δu_a`.
pub fn fd_solve_disc(spec: &ProblemSpec, h: f64) -> Result<FdSolution> {
    if spec.dim() != 2 {
        return Err(Error::Dimension(spec.dim()));
    }
    let field = Expression::Solution(*spec);
    let zero = [0.0; 2];
    fd_solve_disc_with(h, |x| {
        (0..2)
            .map(|j| {
                let b: AxisJet4 = eval_field_jet(&field, x, Some(j), &zero);
                b.derivative(2, 0)
            })
            .sum()
    })
}

/// One refinement level of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub h: f64,
    pub max_error: f64,
    /// `max|ε|/(2n)` from the stencil estimate at the same nodes.
    pub predicted: f64,
}

pub fn convergence_study(spec: &ProblemSpec, hs: &[f64]) -> Result<Vec<ConvergencePoint>> {
    hs.iter()
        .map(|&h| {
            let sol = fd_solve_disc(spec, h)?;
            let max_error = sol.max_error(|x| spec.solution(x));
            let nodes: Vec<Vec<f64>> = sol.nodes.iter().map(|p| p.to_vec()).collect();
            let cloud = PointCloud::from_points(2, &nodes, crate::geometry::PointKind::Interior);
            let est = stencil_error(spec, h, &cloud);
            Ok(ConvergencePoint {
                h,
                max_error,
                predicted: psi_bound(2, est.max_abs),
            })
        })
        .collect()
}

pub fn convergence_csv(points: &[ConvergencePoint]) -> String {
    let mut s = String::from("h,max_error,predicted\n");
    for p in points {
        writeln!(s, "{},{:e},{:e}", p.h, p.max_error, p.predicted).unwrap();
    }
    s
}

/// Inputs of the point-count and time extrapolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModelConfig {
    /// Target maximum error.
    pub delta: f64,
    /// Constant `C` in `ε ≈ C·h²`.
    pub eps_coefficient: f64,
    /// Dimension whose `h = √(2n·δ/C)` is used for every dimension.
    pub reference_dim: usize,
    /// Round `h` to one significant figure.
    pub round_h: bool,
    /// Ratio of compute power between the reference and target hardware.
    pub hardware_ratio: f64,
    /// Reference solve: `seconds` for `unknowns` unknowns.
    pub reference_seconds: f64,
    pub reference_unknowns: f64,
}

impl Default for CostModelConfig {
    fn default() -> Self {
        CostModelConfig {
            delta: 1e-5,
            eps_coefficient: 1.6,
            reference_dim: 5,
            round_h: true,
            hardware_ratio: 18.0,
            reference_seconds: 0.34,
            reference_unknowns: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionCost {
    pub n: usize,
    pub interior: f64,
    pub surface: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModelReport {
    pub config: CostModelConfig,
    /// Spacing before rounding.
    pub h_exact: f64,
    pub h: f64,
    pub dims: Vec<DimensionCost>,
}

/// Volume of the unit n-ball.
pub fn ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / n as f64 * ball_volume(n - 2),
    }
}

/// Area of the unit sphere `S^{n−1}` bounding the n-ball.
pub fn sphere_area(n: usize) -> f64 {
    n as f64 * ball_volume(n)
}

fn round_sig1(x: f64) -> f64 {
    let p = 10f64.powf(x.abs().log10().floor());
    (x / p).round() * p
}

pub fn cost_model(config: &CostModelConfig) -> Result<CostModelReport> {
    if !(config.delta > 0.0) {
        return Err(Error::config("delta", "must be positive"));
    }
    if !(config.eps_coefficient > 0.0 && config.hardware_ratio > 0.0) {
        return Err(Error::config("cost_model", "coefficients must be positive"));
    }
    let h_exact = (2.0 * config.reference_dim as f64 * config.delta / config.eps_coefficient).sqrt();
    let h = if config.round_h { round_sig1(h_exact) } else { h_exact };
    let dims = (2..=5)
        .map(|n| {
            let interior = (1.0 / h).powi(n as i32) * ball_volume(n);
            let surface = (1.0 / h).powi(n as i32 - 1) * sphere_area(n);
            DimensionCost {
                n,
                interior,
                surface,
                seconds: config.reference_seconds / config.hardware_ratio * interior
                    / config.reference_unknowns,
            }
        })
        .collect();
    Ok(CostModelReport {
        config: *config,
        h_exact,
        h,
        dims,
    })
}

impl CostModelReport {
    pub fn dim(&self, n: usize) -> Option<&DimensionCost> {
        self.dims.iter().find(|d| d.n == n)
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        writeln!(s, "delta = {}", c.delta).unwrap();
        writeln!(s, "eps_coefficient = {}", c.eps_coefficient).unwrap();
        writeln!(s, "hardware_ratio = {}", c.hardware_ratio).unwrap();
        writeln!(s, "reference = {} s for {} unknowns", c.reference_seconds, c.reference_unknowns).unwrap();
        writeln!(s, "h_exact = {:.6}", self.h_exact).unwrap();
        writeln!(s, "h = {}", self.h).unwrap();
        for d in &self.dims {
            writeln!(
                s,
                "{}D: interior = {:.4e}, surface = {:.4e}, seconds = {:.4e}",
                d.n, d.interior, d.surface, d.seconds
            )
            .unwrap();
        }
        s
    }

    /// Dimension against solve time, for plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dimension,h,interior,surface,seconds,log10_seconds\n");
        for d in &self.dims {
            writeln!(
                s,
                "{},{},{:e},{:e},{:e},{:.4}",
                d.n,
                self.h,
                d.interior,
                d.surface,
                d.seconds,
                d.seconds.log10()
            )
            .unwrap();
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("cost_model.txt"), self.to_text())?;
        std::fs::write(dir.join("cost_model.csv"), self.to_csv())?;
        Ok(())
    }
}

/// Ratio between the first-derivative errors of the `cubic_x3` variant and
/// the default solution at the same points.
pub fn cubic_variant_ratio(n: usize, h: f64, points: &PointCloud) -> Result<f64> {
    let base = ProblemSpec::new(crate::problems::ProblemKind::Linear, n, Variant::Default)?;
    let cubic = ProblemSpec::new(crate::problems::ProblemKind::Linear, n, Variant::CubicX3)?;
    Ok(first_derivative_error(&cubic, h, points) / first_derivative_error(&base, h, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ball_sample, PointKind};

    /// The printed closed form of the 5D stencil error divided by `h²`.
    fn printed_eps_5d(x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        7.0 / 108.0
            * (-24.0 - 8.0 * x[3] * x[4] * x[4].sin() + 8.0 * x[1] * x[1].cos()
                - (r2 - 13.0) * (x[1].sin() + x[3] * x[4].cos()))
    }

    #[test]
    fn stencil_error_matches_closed_form_5d() {
        let pts = ball_sample(5, 40, 1);
        let est = stencil_error(&ProblemSpec::linear(5), 1.0, &pts);
        for (x, e) in pts.iter().zip(&est.per_point) {
            let p = printed_eps_5d(x);
            assert!((e - p).abs() < 1e-12 * p.abs().max(1.0), "{e} vs {p}");
        }
        assert!((est.leading_constant - 7.0 * 24.0 / 108.0).abs() < 1e-12);
    }

    #[test]
    fn stencil_error_scales_as_h_squared() {
        let pts = ball_sample(3, 30, 2);
        let spec = ProblemSpec::linear(3);
        let a = stencil_error(&spec, 0.02, &pts);
        let b = stencil_error(&spec, 0.01, &pts);
        assert!((a.max_abs / b.max_abs - 4.0).abs() < 0.04);
    }

    #[test]
    fn psi_bound_values() {
        assert_eq!(psi_bound(5, 1.0), 0.1);
        assert_eq!(psi_bound(2, 1.0), 0.25);
        assert_eq!(psi_bound(3, 0.0), 0.0);
    }

    #[test]
    fn cubic_variant_triples_first_derivative_error() {
        let mut pts = ball_sample(5, 200, 3);
        pts.push(&[0.0; 5], PointKind::Interior);
        let r = cubic_variant_ratio(5, 0.008, &pts).unwrap();
        assert!((2.5..=3.5).contains(&r), "{r}");
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let sol = fd_solve_disc_with(0.125, |_| 0.0).unwrap();
        assert!(sol.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_solution_is_exact() {
        // u = 1 − r² has zero fourth derivatives; Shortley–Weller is exact
        let sol = fd_solve_disc_with(0.125, |_| -4.0).unwrap();
        let err = sol.max_error(|p| 1.0 - p[0] * p[0] - p[1] * p[1]);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn reflection_symmetry() {
        let g = |p: &[f64]| p[0] + 2.0 * p[1] * p[1] + p[0] * p[1];
        let a = fd_solve_disc_with(0.0625, g).unwrap();
        let b = fd_solve_disc_with(0.0625, |p: &[f64]| g(&[-p[0], p[1]])).unwrap();
        let lookup: std::collections::HashMap<(i64, i64), f64> = b
            .nodes
            .iter()
            .zip(&b.values)
            .map(|(p, v)| (((p[0] * 16.0).round() as i64, (p[1] * 16.0).round() as i64), *v))
            .collect();
        for (p, v) in a.nodes.iter().zip(&a.values) {
            let key = ((-p[0] * 16.0).round() as i64, (p[1] * 16.0).round() as i64);
            assert!((lookup[&key] - v).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_coarse_spacing() {
        assert!(fd_solve_disc_with(0.2, |_| 1.0).is_err());
        assert!(fd_solve_disc(&ProblemSpec::linear(3), 0.1).is_err());
    }

    #[test]
    fn ball_measures() {
        assert!((ball_volume(5) - 8.0 * PI * PI / 15.0).abs() < 1e-12);
        assert!((sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-12);
        assert!((ball_volume(2) - PI).abs() < 1e-12);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn cost_model_defaults() {
        let r = cost_model(&CostModelConfig::default()).unwrap();
        assert_eq!(r.h, 0.008);
        let d5 = r.dim(5).unwrap();
        assert!((d5.interior / 1.6e11 - 1.0).abs() < 0.05);
        assert!((d5.surface / 6.4e9 - 1.0).abs() < 0.05);
        assert!((d5.seconds / 3000.0 - 1.0).abs() < 0.05);
        assert!(cost_model(&CostModelConfig { delta: 0.0, ..Default::default() }).is_err());
        assert_eq!(r.to_csv().lines().count(), 5);
    }

    #[test]
    fn round_to_one_figure() {
        assert_eq!(round_sig1(0.0079057), 0.008);
        assert_eq!(round_sig1(0.00049), 0.0005);
        assert_eq!(round_sig1(123.0), 100.0);
    }
}
