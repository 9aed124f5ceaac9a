//! Truncated Taylor arithmetic.
//!
//! All jets store *normalized* coefficients: entry `m` is the `m`-th
//! derivative divided by `m!` (for [`BiJetN`], entry `[p][q]` is the mixed
//! derivative divided by `p!·q!`). Products are then plain truncated
//! convolutions. Use [`Jet4::from_derivatives`] / [`Jet4::derivatives`] and
//! [`BiJetN::derivative`] to move between conventions.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

const FACT: [f64; 8] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0];

/// `k!` for the small orders used throughout the crate.
pub fn factorial(k: usize) -> f64 {
    FACT.get(k)
        .copied()
        .unwrap_or_else(|| (1..=k).map(|i| i as f64).product())
}

/// Scalars that closed-form expressions can be evaluated over: plain `f64`
/// and every jet type in this module.
pub trait JetScalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    fn scale(self, k: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;

    fn powi(self, k: u32) -> Self {
        let mut acc = Self::constant(1.0);
        for _ in 0..k {
            acc = acc * self;
        }
        acc
    }
}

impl JetScalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn powi(self, k: u32) -> Self {
        f64::powi(self, k as i32)
    }
}

// ---------------------------------------------------------------------------
// Jet4

/// Order-4 univariate jet along one direction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet4 {
    pub c: [f64; 5],
}

impl Jet4 {
    pub const ORDER: usize = 4;

    pub fn new(c: [f64; 5]) -> Self {
        Jet4 { c }
    }

    pub fn constant(v: f64) -> Self {
        Jet4 {
            c: [v, 0.0, 0.0, 0.0, 0.0],
        }
    }

    /// The jet of `x0 + slope·t`.
    pub fn linear(x0: f64, slope: f64) -> Self {
        Jet4 {
            c: [x0, slope, 0.0, 0.0, 0.0],
        }
    }

    /// Builds a jet from raw derivatives `f, f', f'', ...`.
    pub fn from_derivatives(d: [f64; 5]) -> Self {
        let mut c = d;
        for (m, v) in c.iter_mut().enumerate() {
            *v /= FACT[m];
        }
        Jet4 { c }
    }

    /// Raw derivatives `f, f', ..., f''''`.
    pub fn derivatives(&self) -> [f64; 5] {
        let mut d = self.c;
        for (m, v) in d.iter_mut().enumerate() {
            *v *= FACT[m];
        }
        d
    }

    pub fn scale(self, k: f64) -> Self {
        let mut c = self.c;
        c.iter_mut().for_each(|v| *v *= k);
        Jet4 { c }
    }

    /// `self / rhs`, failing when `rhs` has a zero constant term.
    pub fn checked_div(self, rhs: Jet4) -> Result<Jet4> {
        let b0 = rhs.c[0];
        if b0 == 0.0 {
            return Err(Error::SingularJet);
        }
        let mut q = [0.0; 5];
        for k in 0..5 {
            let mut acc = self.c[k];
            for j in 1..=k {
                acc -= rhs.c[j] * q[k - j];
            }
            q[k] = acc / b0;
        }
        Ok(Jet4 { c: q })
    }

    /// `(sin, cos)` of the jet, propagated jointly.
    pub fn sin_cos(self) -> (Jet4, Jet4) {
        let (s0, c0) = self.c[0].sin_cos();
        let mut s = [s0, 0.0, 0.0, 0.0, 0.0];
        let mut c = [c0, 0.0, 0.0, 0.0, 0.0];
        for k in 1..5 {
            let mut ds = 0.0;
            let mut dc = 0.0;
            for j in 1..=k {
                let ja = j as f64 * self.c[j];
                ds += ja * c[k - j];
                dc -= ja * s[k - j];
            }
            s[k] = ds / k as f64;
            c[k] = dc / k as f64;
        }
        (Jet4 { c: s }, Jet4 { c })
    }

    /// Adjoint of `c = a·b` with respect to `b`, for fixed `a`:
    /// `b̄_k = Σ_{m≥k} c̄_m a_{m−k}`.
    pub fn mul_adjoint(a: &Jet4, c_bar: &[f64; 5]) -> [f64; 5] {
        let mut b_bar = [0.0; 5];
        for (k, bb) in b_bar.iter_mut().enumerate() {
            for m in k..5 {
                *bb += c_bar[m] * a.c[m - k];
            }
        }
        b_bar
    }
}

impl Add for Jet4 {
    type Output = Jet4;
    fn add(self, rhs: Jet4) -> Jet4 {
        let mut c = self.c;
        c.iter_mut().zip(rhs.c).for_each(|(a, b)| *a += b);
        Jet4 { c }
    }
}

impl Sub for Jet4 {
    type Output = Jet4;
    fn sub(self, rhs: Jet4) -> Jet4 {
        let mut c = self.c;
        c.iter_mut().zip(rhs.c).for_each(|(a, b)| *a -= b);
        Jet4 { c }
    }
}

impl Neg for Jet4 {
    type Output = Jet4;
    fn neg(self) -> Jet4 {
        self.scale(-1.0)
    }
}

impl Mul for Jet4 {
    type Output = Jet4;
    fn mul(self, rhs: Jet4) -> Jet4 {
        let mut c = [0.0; 5];
        for (m, cm) in c.iter_mut().enumerate() {
            for i in 0..=m {
                *cm += self.c[i] * rhs.c[m - i];
            }
        }
        Jet4 { c }
    }
}

impl JetScalar for Jet4 {
    fn constant(v: f64) -> Self {
        Jet4::constant(v)
    }
    fn value(&self) -> f64 {
        self.c[0]
    }
    fn scale(self, k: f64) -> Self {
        Jet4::scale(self, k)
    }
    fn sin(self) -> Self {
        self.sin_cos().0
    }
    fn cos(self) -> Self {
        self.sin_cos().1
    }
    fn exp(self) -> Self {
        let mut e = [self.c[0].exp(), 0.0, 0.0, 0.0, 0.0];
        for k in 1..5 {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * self.c[j] * e[k - j];
            }
            e[k] = acc / k as f64;
        }
        Jet4 { c: e }
    }
}

// ---------------------------------------------------------------------------
// BiJet

/// Bivariate jet in `(s, t)` truncated to `p < P`, `q < Q`. `s` runs along a
/// coordinate axis, `t` along a direction vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiJetN<const P: usize, const Q: usize> {
    pub c: [[f64; Q]; P],
}

/// Coordinate order ≤ 2, directional order ≤ 4.
pub type BiJet = BiJetN<3, 5>;

/// Coordinate order ≤ 4 along one axis only; used for stencil errors.
pub type AxisJet4 = BiJetN<5, 1>;

impl<const P: usize, const Q: usize> Default for BiJetN<P, Q> {
    fn default() -> Self {
        BiJetN { c: [[0.0; Q]; P] }
    }
}

impl<const P: usize, const Q: usize> BiJetN<P, Q> {
    pub fn constant(v: f64) -> Self {
        let mut j = Self::default();
        j.c[0][0] = v;
        j
    }

    /// `x0 + ds·s + dt·t`.
    pub fn linear(x0: f64, ds: f64, dt: f64) -> Self {
        let mut j = Self::constant(x0);
        if P > 1 {
            j.c[1][0] = ds;
        }
        if Q > 1 {
            j.c[0][1] = dt;
        }
        j
    }

    /// Raw mixed derivative `∂^{p+q} / ∂s^p ∂t^q` at the origin.
    pub fn derivative(&self, p: usize, q: usize) -> f64 {
        self.c[p][q] * factorial(p) * factorial(q)
    }

    /// Normalized coefficients along `t` at fixed coordinate order `p`.
    pub fn t_series(&self, p: usize) -> [f64; Q] {
        self.c[p]
    }

    fn max_total_order() -> usize {
        P + Q - 2
    }

    /// `f(a)` given `f(a₀), f'(a₀), ...` (enough derivatives for the
    /// truncation): the nilpotent part is raised to successive powers.
    fn compose(self, derivs: &[f64]) -> Self {
        let mut delta = self;
        delta.c[0][0] = 0.0;
        let mut out = Self::constant(derivs[0]);
        let mut power = Self::constant(1.0);
        for (k, dk) in derivs.iter().enumerate().skip(1) {
            power = power * delta;
            let w = dk / factorial(k);
            for p in 0..P {
                for q in 0..Q {
                    out.c[p][q] += w * power.c[p][q];
                }
            }
        }
        out
    }
}

impl<const P: usize, const Q: usize> Add for BiJetN<P, Q> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for p in 0..P {
            for q in 0..Q {
                self.c[p][q] += rhs.c[p][q];
            }
        }
        self
    }
}

impl<const P: usize, const Q: usize> Sub for BiJetN<P, Q> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for p in 0..P {
            for q in 0..Q {
                self.c[p][q] -= rhs.c[p][q];
            }
        }
        self
    }
}

impl<const P: usize, const Q: usize> Neg for BiJetN<P, Q> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const P: usize, const Q: usize> Mul for BiJetN<P, Q> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::default();
        for p in 0..P {
            for q in 0..Q {
                let mut acc = 0.0;
                for i in 0..=p {
                    for j in 0..=q {
                        acc += self.c[i][j] * rhs.c[p - i][q - j];
                    }
                }
                out.c[p][q] = acc;
            }
        }
        out
    }
}

impl<const P: usize, const Q: usize> JetScalar for BiJetN<P, Q> {
    fn constant(v: f64) -> Self {
        BiJetN::constant(v)
    }
    fn value(&self) -> f64 {
        self.c[0][0]
    }
    fn scale(mut self, k: f64) -> Self {
        for row in self.c.iter_mut() {
            row.iter_mut().for_each(|v| *v *= k);
        }
        self
    }
    fn sin(self) -> Self {
        let (s, c) = self.c[0][0].sin_cos();
        let cycle = [s, c, -s, -c];
        let d: Vec<f64> = (0..=Self::max_total_order()).map(|k| cycle[k % 4]).collect();
        self.compose(&d)
    }
    fn cos(self) -> Self {
        let (s, c) = self.c[0][0].sin_cos();
        let cycle = [c, -s, -c, s];
        let d: Vec<f64> = (0..=Self::max_total_order()).map(|k| cycle[k % 4]).collect();
        self.compose(&d)
    }
    fn exp(self) -> Self {
        let e = self.c[0][0].exp();
        let d = vec![e; Self::max_total_order() + 1];
        self.compose(&d)
    }
}

/// Lifts a point into jet space: coordinate `i` becomes
/// `x_i + [i == axis]·s + direction_i·t`.
pub fn lift_point<const P: usize, const Q: usize>(
    point: &[f64],
    axis: Option<usize>,
    direction: &[f64],
) -> Vec<BiJetN<P, Q>> {
    point
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let ds = if axis == Some(i) { 1.0 } else { 0.0 };
            let dt = direction.get(i).copied().unwrap_or(0.0);
            BiJetN::linear(x, ds, dt)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Expressions

/// A closed-form scalar field that can be evaluated over any [`JetScalar`].
pub trait ScalarField {
    fn dim(&self) -> usize;
    fn eval<T: JetScalar>(&self, x: &[T]) -> T;
}

/// Evaluates `field` at `point + s·e_axis + t·direction` as a jet in `(s, t)`.
pub fn eval_field_jet<F: ScalarField, const P: usize, const Q: usize>(
    field: &F,
    point: &[f64],
    axis: Option<usize>,
    direction: &[f64],
) -> BiJetN<P, Q> {
    let x = lift_point::<P, Q>(point, axis, direction);
    field.eval(&x)
}

/// Built-in closed-form expressions.
#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    /// `x_j`.
    Coordinate { dim: usize, axis: usize },
    /// `r² = Σ x_j²`.
    RadiusSquared { dim: usize },
    /// The analytic solution `u_a` of a problem.
    Solution(crate::problems::ProblemSpec),
    /// `v_a = u_a / (1 − r²)`.
    Inner(crate::problems::ProblemSpec),
}

impl ScalarField for Expression {
    fn dim(&self) -> usize {
        match self {
            Expression::Coordinate { dim, .. } | Expression::RadiusSquared { dim } => *dim,
            Expression::Solution(p) | Expression::Inner(p) => p.dim(),
        }
    }

    fn eval<T: JetScalar>(&self, x: &[T]) -> T {
        match self {
            Expression::Coordinate { axis, .. } => x[*axis],
            Expression::RadiusSquared { .. } => x
                .iter()
                .fold(T::constant(0.0), |acc, &xi| acc + xi * xi),
            Expression::Solution(p) => p.solution(x),
            Expression::Inner(p) => p.inner(x),
        }
    }
}

/// Handle returned by [`ExpressionRegistry::register`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExpressionHandle(usize);

#[derive(Debug, Clone, Default)]
pub struct ExpressionRegistry {
    entries: Vec<Expression>,
}

impl ExpressionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, expr: Expression) -> ExpressionHandle {
        self.entries.push(expr);
        ExpressionHandle(self.entries.len() - 1)
    }

    pub fn get(&self, handle: ExpressionHandle) -> Result<&Expression> {
        self.entries
            .get(handle.0)
            .ok_or(Error::UnknownExpression(handle.0))
    }
}

/// Evaluates a registered expression at `point + s·e_axis + t·direction` as a
/// [`BiJet`] in `(s, t)`.
pub fn eval_expression_jet(
    registry: &ExpressionRegistry,
    handle: ExpressionHandle,
    point: &[f64],
    axis: Option<usize>,
    direction: &[f64],
) -> Result<BiJet> {
    let expr = registry.get(handle)?;
    if point.len() != expr.dim() || direction.len() != expr.dim() {
        return Err(Error::Shape(format!(
            "expression of dimension {} evaluated at a point of dimension {}",
            expr.dim(),
            point.len()
        )));
    }
    Ok(eval_field_jet(expr, point, axis, direction))
}
