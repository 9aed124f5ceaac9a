//! Boundary value problems on the unit n-ball after the substitution
//! `u = v·(1 − r²)`.
//!
//! With `φ = 1 − r²` we have `Δu = φΔv − 4x·∇v − 2n·v`, so the linear
//! problem `Δu = g` becomes
//!
//! ```text
//! (1 − r²)Δv − 4 Σ x_j ∂v/∂x_j − 2n·v = g
//! ```
//!
//! and the nonlinear problem `Δu + u² = h` gains the term `+(1 − r²)²v²` on
//! the left. Sources are obtained from the closed-form solutions by jet
//! differentiation: `g = Δu_a`, `h = Δu_a + u_a²`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{ball_sample, DirectionField, PointCloud};
use crate::jets::{eval_field_jet, factorial, BiJet, Expression, Jet4, JetScalar};
use crate::real::Real;
use crate::slotnet::{
    evaluate, CoordOp, CostFunctional, DirOp, Direction, EvalOptions, OutputSlots, SlotSet,
    WeightSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    #[default]
    Default,
    /// `x₃²` in the solution replaced by `x₃³/2`.
    CubicX3,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Linear => "linear",
            ProblemKind::Nonlinear => "nonlinear",
        })
    }
}

impl FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(ProblemKind::Linear),
            "nonlinear" => Ok(ProblemKind::Nonlinear),
            other => Err(Error::config("problem", format!("unknown kind `{other}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Default => "default",
            Variant::CubicX3 => "cubic_x3",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "default" => Ok(Variant::Default),
            "cubic_x3" => Ok(Variant::CubicX3),
            other => Err(Error::config("variant", format!("unknown variant `{other}`"))),
        }
    }
}

/// One of the boundary value problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProblemSpec {
    kind: ProblemKind,
    n: usize,
    variant: Variant,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, n: usize, variant: Variant) -> Result<Self> {
        if !(2..=5).contains(&n) {
            return Err(Error::Dimension(n));
        }
        if variant == Variant::CubicX3 && n < 3 {
            return Err(Error::config("variant", "cubic_x3 needs dimension ≥ 3"));
        }
        Ok(ProblemSpec { kind, n, variant })
    }

    pub fn linear(n: usize) -> Self {
        Self::new(ProblemKind::Linear, n, Variant::Default).expect("valid dimension")
    }

    pub fn nonlinear(n: usize) -> Self {
        Self::new(ProblemKind::Nonlinear, n, Variant::Default).expect("valid dimension")
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Scale chosen so that `u_max − u_min ≈ 1`.
    pub fn prefactor(&self) -> f64 {
        match self.n {
            2 => 10.0 / 17.0,
            3 => 3.0 / 5.0,
            _ => 7.0 / 9.0,
        }
    }

    /// `v_a = u_a / (1 − r²)`.
    pub fn inner<T: JetScalar>(&self, x: &[T]) -> T {
        let third = |x3: T| match self.variant {
            Variant::Default => x3 * x3,
            Variant::CubicX3 => (x3 * x3 * x3).scale(0.5),
        };
        let body = match self.n {
            2 => x[0] + x[1].sin() + x[0] * x[0] + x[1] * x[0].cos(),
            3 => x[0] + x[1].sin() + third(x[2]) + x[1] * x[0].cos(),
            4 => x[0] + x[1].sin() + third(x[2]) + x[3] * x[3].cos(),
            5 => x[0] + x[1].sin() + third(x[2]) + x[3] * x[4].cos(),
            _ => unreachable!("dimension checked at construction"),
        };
        body.scale(self.prefactor())
    }

    /// `φ = 1 − r²`.
    pub fn phi<T: JetScalar>(&self, x: &[T]) -> T {
        x.iter()
            .fold(T::constant(1.0), |acc, &xi| acc - xi * xi)
    }

    /// `u_a = φ·v_a`.
    pub fn solution<T: JetScalar>(&self, x: &[T]) -> T {
        self.phi(x) * self.inner(x)
    }

    fn nonlinear_coefficient(&self) -> f64 {
        match self.kind {
            ProblemKind::Linear => 0.0,
            ProblemKind::Nonlinear => 1.0,
        }
    }
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}D {}", self.n, self.kind)?;
        if self.variant != Variant::Default {
            write!(f, " ({})", self.variant)?;
        }
        Ok(())
    }
}

pub fn analytic_solution(spec: &ProblemSpec, point: &[f64]) -> f64 {
    spec.solution(point)
}

/// Jet of the source (`g` for linear, `h` for nonlinear problems) at `point`
/// along `direction`; coefficient `m` is `∂^m/∂ξ^m` divided by `m!`.
pub fn source_jet(spec: &ProblemSpec, point: &[f64], direction: &[f64]) -> Jet4 {
    let field = Expression::Solution(*spec);
    let mut lap = Jet4::default();
    let mut u = Jet4::default();
    for j in 0..spec.dim() {
        let b: BiJet = eval_field_jet(&field, point, Some(j), direction);
        // c[2][q] = ∂²_s ∂^q_t / (2!·q!)
        for q in 0..5 {
            lap.c[q] += 2.0 * b.c[2][q];
        }
        if j == 0 {
            u.c = b.c[0];
        }
    }
    match spec.kind {
        ProblemKind::Linear => lap,
        ProblemKind::Nonlinear => lap + u * u,
    }
}

/// Source jets along ξ and ζ for every collocation point.
#[derive(Debug, Clone)]
pub struct SourceCache {
    pub xi: Vec<Jet4>,
    pub zeta: Vec<Jet4>,
}

impl SourceCache {
    pub fn build(spec: &ProblemSpec, points: &PointCloud, dirs: &DirectionField) -> Self {
        let xi = (0..points.len())
            .map(|i| source_jet(spec, points.point(i), dirs.xi(i)))
            .collect();
        let zeta = (0..points.len())
            .map(|i| source_jet(spec, points.point(i), dirs.zeta(i)))
            .collect();
        SourceCache { xi, zeta }
    }

    pub fn get(&self, d: Direction, i: usize) -> &Jet4 {
        match d {
            Direction::Xi => &self.xi[i],
            Direction::Zeta => &self.zeta[i],
        }
    }
}

/// Residual jets of one point. Coefficient `m` (normalized) of `xi` is
/// `∂^mV/∂ξ^m / m!`; both jets share coefficient 0, the residual `V` itself.
/// Coefficients above the active cost order are not meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualJets {
    pub xi: Jet4,
    pub zeta: Jet4,
}

impl ResidualJets {
    pub fn value(&self) -> f64 {
        self.xi.c[0]
    }

    /// Raw derivative `∂^mV/∂d^m`.
    pub fn derivative(&self, d: Direction, m: usize) -> f64 {
        let j = match d {
            Direction::Xi => &self.xi,
            Direction::Zeta => &self.zeta,
        };
        j.c[m] * factorial(m)
    }
}

/// Slot positions needed to assemble the residual along one direction.
#[derive(Debug, Clone)]
struct DirIndex {
    value: [Option<usize>; 5],
    first: Vec<[Option<usize>; 5]>,
    second: Vec<[Option<usize>; 5]>,
}

impl DirIndex {
    fn new(slots: &SlotSet, d: Direction) -> Self {
        let dir = |m: usize| {
            if m == 0 {
                DirOp::Identity
            } else {
                DirOp::Along(d, m)
            }
        };
        let row = |c: CoordOp| {
            let mut r = [None; 5];
            for (m, slot) in r.iter_mut().enumerate().take(slots.order() + 1) {
                *slot = slots.index(crate::slotnet::SlotLabel::new(c, dir(m)));
            }
            r
        };
        let n = slots.dim();
        DirIndex {
            value: row(CoordOp::Identity),
            first: (0..n).map(|j| row(CoordOp::First(j))).collect(),
            second: (0..n).map(|j| row(CoordOp::Second(j))).collect(),
        }
    }
}

fn gather(vals: &[f64], idx: &[Option<usize>; 5]) -> Jet4 {
    let mut c = [0.0; 5];
    for (m, k) in idx.iter().enumerate() {
        if let Some(k) = k {
            c[m] = vals[*k] / factorial(m);
        }
    }
    Jet4::new(c)
}

fn scatter(grad: &mut [f64], idx: &[Option<usize>; 5], bar: &[f64; 5]) {
    for (m, k) in idx.iter().enumerate() {
        if let Some(k) = k {
            grad[*k] += bar[m] / factorial(m);
        }
    }
}

/// Inputs of the residual along one direction, kept for the adjoint.
struct Assembly {
    coords: Vec<Jet4>,
    phi: Jet4,
    value: Jet4,
    residual: Jet4,
}

/// Builds the residual jet along direction `a` from the output slots of one
/// point. `nl` multiplies the `(1 − r²)²v²` term.
fn assemble(
    x: &[f64],
    a: &[f64],
    vals: &[f64],
    idx: &DirIndex,
    source: &Jet4,
    nl: f64,
) -> Assembly {
    let n = x.len();
    let coords: Vec<Jet4> = x.iter().zip(a).map(|(&xi, &ai)| Jet4::linear(xi, ai)).collect();
    let phi = coords
        .iter()
        .fold(Jet4::constant(1.0), |acc, &c| acc - c * c);
    let lap = idx
        .second
        .iter()
        .fold(Jet4::default(), |acc, r| acc + gather(vals, r));
    let grad_term = idx
        .first
        .iter()
        .zip(&coords)
        .fold(Jet4::default(), |acc, (r, &c)| acc + c * gather(vals, r));
    let value = gather(vals, &idx.value);
    let mut residual = phi * lap - grad_term.scale(4.0) - value.scale(2.0 * n as f64) - *source;
    if nl != 0.0 {
        residual = residual + (phi * phi * value * value).scale(nl);
    }
    Assembly {
        coords,
        phi,
        value,
        residual,
    }
}

/// Accumulates `∂/∂slots` of a scalar with gradient `rbar` w.r.t. the
/// residual jet's normalized coefficients.
fn assemble_adjoint(asm: &Assembly, idx: &DirIndex, nl: f64, rbar: &[f64; 5], grad: &mut [f64]) {
    let n = asm.coords.len();
    let lap_bar = Jet4::mul_adjoint(&asm.phi, rbar);
    for r in &idx.second {
        scatter(grad, r, &lap_bar);
    }
    let g_bar = rbar.map(|v| -4.0 * v);
    for (r, c) in idx.first.iter().zip(&asm.coords) {
        scatter(grad, r, &Jet4::mul_adjoint(c, &g_bar));
    }
    let mut p_bar = rbar.map(|v| -2.0 * n as f64 * v);
    if nl != 0.0 {
        let phi2 = asm.phi * asm.phi;
        let q_bar = rbar.map(|v| nl * v);
        let sq_bar = Jet4::mul_adjoint(&phi2, &q_bar);
        let extra = Jet4::mul_adjoint(&asm.value, &sq_bar);
        for (p, e) in p_bar.iter_mut().zip(extra) {
            *p += 2.0 * e;
        }
    }
    scatter(grad, &idx.value, &p_bar);
}

/// Residual jets at every point from the network's output slots.
pub fn residual_jets(
    spec: &ProblemSpec,
    outputs: &OutputSlots,
    slots: &SlotSet,
    points: &PointCloud,
    dirs: &DirectionField,
    sources: &SourceCache,
) -> Result<Vec<ResidualJets>> {
    check_slots(spec, outputs, slots, points)?;
    let ix = DirIndex::new(slots, Direction::Xi);
    let iz = DirIndex::new(slots, Direction::Zeta);
    let nl = spec.nonlinear_coefficient();
    Ok((0..points.len())
        .map(|i| {
            let vals = outputs.point_values(i);
            let x = points.point(i);
            ResidualJets {
                xi: assemble(x, dirs.xi(i), &vals, &ix, &sources.xi[i], nl).residual,
                zeta: assemble(x, dirs.zeta(i), &vals, &iz, &sources.zeta[i], nl).residual,
            }
        })
        .collect())
}

fn check_slots(spec: &ProblemSpec, outputs: &OutputSlots, slots: &SlotSet, points: &PointCloud) -> Result<()> {
    if slots.dim() != spec.dim() || points.dim() != spec.dim() {
        return Err(Error::config(
            "slots",
            format!("slot set of dimension {} for a {}D problem", slots.dim(), spec.dim()),
        ));
    }
    if outputs.n_slots() != slots.len() || outputs.n_points() != points.len() {
        return Err(Error::config(
            "slots",
            format!(
                "output has {} slots × {} points, expected {} × {}",
                outputs.n_slots(),
                outputs.n_points(),
                slots.len(),
                points.len()
            ),
        ));
    }
    Ok(())
}

/// Aggregated cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    /// `terms[0]` = mean V², `terms[j]` = mean (V_{ξ^j}² + V_{ζ^j}²).
    pub terms: [f64; 5],
    /// `e_s = Σ_{j≤s} terms[j]`.
    pub total: f64,
    /// Root mean square of `V` over the grid.
    pub rms_v0: f64,
    pub n: usize,
}

/// `e_s` and its components for cost order `s ∈ 2..=4`.
pub fn cost(residuals: &[ResidualJets], s: usize) -> Result<CostBreakdown> {
    if !(2..=4).contains(&s) {
        return Err(Error::CostOrder(s));
    }
    if residuals.is_empty() {
        return Err(Error::EmptyCost);
    }
    let n = residuals.len() as f64;
    let mut terms = [0.0; 5];
    for r in residuals {
        terms[0] += r.value().powi(2);
        for (m, t) in terms.iter_mut().enumerate().take(s + 1).skip(1) {
            *t += r.derivative(Direction::Xi, m).powi(2) + r.derivative(Direction::Zeta, m).powi(2);
        }
    }
    terms.iter_mut().for_each(|t| *t /= n);
    Ok(CostBreakdown {
        terms,
        total: terms[..=s].iter().sum(),
        rms_v0: terms[0].sqrt(),
        n: residuals.len(),
    })
}

/// The training cost `e_s` as a per-point functional of the output slots.
pub struct ResidualCost<'a> {
    spec: ProblemSpec,
    order: usize,
    points: &'a PointCloud,
    dirs: &'a DirectionField,
    sources: &'a SourceCache,
    ix: DirIndex,
    iz: DirIndex,
}

impl<'a> ResidualCost<'a> {
    pub fn new(
        spec: ProblemSpec,
        slots: &SlotSet,
        points: &'a PointCloud,
        dirs: &'a DirectionField,
        sources: &'a SourceCache,
    ) -> Result<Self> {
        if slots.dim() != spec.dim() {
            return Err(Error::config("slots", "slot set dimension differs from problem"));
        }
        Ok(ResidualCost {
            spec,
            order: slots.order(),
            points,
            dirs,
            sources,
            ix: DirIndex::new(slots, Direction::Xi),
            iz: DirIndex::new(slots, Direction::Zeta),
        })
    }
}

impl CostFunctional for ResidualCost<'_> {
    fn point_cost(&self, i: usize, vals: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let x = self.points.point(i);
        let nl = self.spec.nonlinear_coefficient();
        let ax = assemble(x, self.dirs.xi(i), vals, &self.ix, &self.sources.xi[i], nl);
        let az = assemble(x, self.dirs.zeta(i), vals, &self.iz, &self.sources.zeta[i], nl);
        let (rx, rz) = (ax.residual.c, az.residual.c);
        let mut c = rx[0] * rx[0];
        for m in 1..=self.order {
            let f2 = factorial(m).powi(2);
            c += f2 * (rx[m] * rx[m] + rz[m] * rz[m]);
        }
        if let Some(g) = grad {
            g.fill(0.0);
            let mut bx = [0.0; 5];
            let mut bz = [0.0; 5];
            bx[0] = 2.0 * rx[0];
            for m in 1..=self.order {
                let f2 = factorial(m).powi(2);
                bx[m] = 2.0 * f2 * rx[m];
                bz[m] = 2.0 * f2 * rz[m];
            }
            assemble_adjoint(&ax, &self.ix, nl, &bx, g);
            assemble_adjoint(&az, &self.iz, nl, &bz, g);
        }
        c
    }
}

/// Output slots of the exact inner function `v_a`, computed from its closed
/// form. Used as an oracle for the residual assembly.
pub fn exact_output_slots(
    spec: &ProblemSpec,
    points: &PointCloud,
    dirs: &DirectionField,
    slots: &SlotSet,
) -> OutputSlots {
    let field = Expression::Inner(*spec);
    let mut out = OutputSlots::new(slots.len(), points.len());
    for i in 0..points.len() {
        for (k, label) in slots.labels().iter().enumerate() {
            let d = label.dir.direction().unwrap_or(Direction::Xi);
            let b: BiJet = eval_field_jet(&field, points.point(i), label.coord.axis(), dirs.get(d, i));
            out.set(k, i, b.derivative(label.coord.order(), label.dir.order()));
        }
    }
    out
}

/// Accuracy of a trained network against the closed-form solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub problem: ProblemKind,
    pub dimension: usize,
    pub variant: Variant,
    pub n_test: usize,
    pub seed: u64,
    pub eps_max: f64,
    pub eps_median: f64,
    pub rms_v0_final: Option<f64>,
}

impl ValidationReport {
    pub fn to_text(&self) -> String {
        let rms = self
            .rms_v0_final
            .map(|v| format!("{v:e}"))
            .unwrap_or_else(|| "none".into());
        format!(
            "problem = {}\ndimension = {}\nvariant = {}\nn_test = {}\nseed = {}\neps_max = {:e}\neps_median = {:e}\nrms_V0_final = {}\n",
            self.problem, self.dimension, self.variant, self.n_test, self.seed, self.eps_max, self.eps_median, rms
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad report line `{line}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("report lacks `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad number for `{k}`")))
        };
        let rms = get("rms_V0_final")?;
        Ok(ValidationReport {
            problem: get("problem")?.parse()?,
            dimension: num("dimension")? as usize,
            variant: get("variant")?.parse()?,
            n_test: num("n_test")? as usize,
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::Format("bad seed".into()))?,
            eps_max: num("eps_max")?,
            eps_median: num("eps_median")?,
            rms_v0_final: if rms == "none" {
                None
            } else {
                Some(rms.parse().map_err(|_| Error::Format("bad rms".into()))?)
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// `|u − u_a|` at `points` for `u = v·(1 − r²)`.
pub fn pointwise_errors<T: Real>(
    spec: &ProblemSpec,
    weights: &WeightSet<T>,
    points: &PointCloud,
    opts: EvalOptions,
) -> Result<Vec<f64>> {
    let v = evaluate(weights, points, opts)?;
    Ok(points
        .iter()
        .zip(v)
        .map(|(p, vi)| {
            let u = vi * spec.phi(p);
            (u - spec.solution(p)).abs()
        })
        .collect())
}

/// Maximum and median error on `count` uniform samples of the ball.
pub fn validate<T: Real>(
    spec: &ProblemSpec,
    weights: &WeightSet<T>,
    count: usize,
    seed: u64,
    opts: EvalOptions,
) -> Result<ValidationReport> {
    let pts = ball_sample(spec.dim(), count, seed);
    let mut errs = pointwise_errors(spec, weights, &pts, opts)?;
    errs.sort_by(f64::total_cmp);
    let eps_max = errs.last().copied().unwrap_or(0.0);
    let eps_median = if errs.is_empty() {
        0.0
    } else if errs.len() % 2 == 1 {
        errs[errs.len() / 2]
    } else {
        0.5 * (errs[errs.len() / 2 - 1] + errs[errs.len() / 2])
    };
    Ok(ValidationReport {
        problem: spec.kind(),
        dimension: spec.dim(),
        variant: spec.variant(),
        n_test: count,
        seed,
        eps_max,
        eps_median,
        rms_v0_final: None,
    })
}
