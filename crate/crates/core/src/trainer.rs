//! Full-batch RProp training with phase schedules.
//!
//! A run consists of phases with decreasing cost order `s`. Each phase is a
//! list of intervals; within an interval the collocation directions are
//! renormalized every `r_int` epochs and, where flagged, the RProp steps are
//! reset to the phase's initial value when the interval ends.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{Precision, RunConfig};
use crate::error::{Error, Result};
use crate::geometry::{collocation_grid, direction_pairs, renormalize, DirectionField, PointCloud};
use crate::problems::{
    cost, residual_jets, validate, ProblemSpec, ResidualCost, SourceCache, ValidationReport,
};
use crate::real::Real;
use crate::slotnet::{
    cost_gradient, forward, init_weights, parse_header, EvalOptions, SlotSet, Topology, WeightSet,
};

/// How a sign change of the gradient is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RPropVariant {
    /// On a sign change the step shrinks and the parameter is left alone for
    /// this epoch; the stored sign is cleared so the next epoch never counts
    /// as another change.
    #[default]
    IRpropMinus,
    /// On a sign change the step shrinks and the parameter still moves by
    /// the shrunken step.
    RpropMinus,
}

impl std::fmt::Display for RPropVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RPropVariant::IRpropMinus => "irprop-",
            RPropVariant::RpropMinus => "rprop-",
        })
    }
}

impl std::str::FromStr for RPropVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "irprop-" => Ok(RPropVariant::IRpropMinus),
            "rprop-" => Ok(RPropVariant::RpropMinus),
            other => Err(Error::config("rprop_variant", format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RPropConfig {
    pub eta_plus: f64,
    pub eta_minus: f64,
    /// Parameters are clamped to `[−weight_clamp, weight_clamp]`.
    pub weight_clamp: f64,
    /// Whether the clamp also applies to thresholds.
    pub clamp_thresholds: bool,
    pub variant: RPropVariant,
}

impl Default for RPropConfig {
    fn default() -> Self {
        RPropConfig {
            eta_plus: 1.2,
            eta_minus: 0.5,
            weight_clamp: 20.0,
            clamp_thresholds: true,
            variant: RPropVariant::default(),
        }
    }
}

impl RPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_plus > 1.0) {
            return Err(Error::config("eta_plus", "must exceed 1"));
        }
        if !(self.eta_minus > 0.0 && self.eta_minus < 1.0) {
            return Err(Error::config("eta_minus", "must lie in (0, 1)"));
        }
        if !(self.weight_clamp > 0.0) {
            return Err(Error::config("weight_clamp", "must be positive"));
        }
        Ok(())
    }
}

/// Per-parameter steps and the sign of the previous gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct RPropState<T> {
    steps: WeightSet<T>,
    prev_sign: Vec<i8>,
}

fn sign<T: Real>(v: T) -> i8 {
    if v > T::zero() {
        1
    } else if v < T::zero() {
        -1
    } else {
        0
    }
}

impl<T: Real> RPropState<T> {
    pub fn new(topology: &Topology, delta0: f64) -> Self {
        let steps = WeightSet::filled(topology, T::from_f64(delta0));
        let prev_sign = vec![0; steps.n_params()];
        RPropState { steps, prev_sign }
    }

    pub fn steps(&self) -> &WeightSet<T> {
        &self.steps
    }

    /// Sets every step back to `delta0`. Gradient signs are kept.
    pub fn reset(&mut self, delta0: f64) {
        let d = T::from_f64(delta0);
        self.steps.iter_mut().for_each(|s| *s = d);
    }

    /// One RProp update. On a NaN gradient nothing is modified.
    pub fn step(
        &mut self,
        weights: &mut WeightSet<T>,
        gradient: &WeightSet<T>,
        config: &RPropConfig,
        epoch: usize,
    ) -> Result<()> {
        if gradient.n_params() != weights.n_params() || self.prev_sign.len() != weights.n_params() {
            return Err(Error::Shape("gradient, weights and steps differ in size".into()));
        }
        if let Some(index) = gradient.iter().position(|g| g.is_nan()) {
            return Err(Error::NanGradient { epoch, index });
        }
        let up = T::from_f64(config.eta_plus);
        let down = T::from_f64(config.eta_minus);
        let clamp = T::from_f64(config.weight_clamp);

        let rule = Rule { up, down, clamp, variant: config.variant };
        let mut idx = 0;
        for ((layer, grad), steps) in weights
            .layers
            .iter_mut()
            .zip(&gradient.layers)
            .zip(self.steps.layers.iter_mut())
        {
            let signs = &mut self.prev_sign[idx..];
            let k = rule.apply(layer.w.iter_mut(), grad.w.iter(), steps.w.iter_mut(), signs, true);
            idx += k;
            let signs = &mut self.prev_sign[idx..];
            idx += rule.apply(
                layer.b.iter_mut(),
                grad.b.iter(),
                steps.b.iter_mut(),
                signs,
                config.clamp_thresholds,
            );
        }
        Ok(())
    }
}

struct Rule<T> {
    up: T,
    down: T,
    clamp: T,
    variant: RPropVariant,
}

impl<T: Real> Rule<T> {
    /// Updates consecutive parameters; returns how many were visited.
    fn apply<'a>(
        &self,
        ws: impl Iterator<Item = &'a mut T>,
        gs: impl Iterator<Item = &'a T>,
        ss: impl Iterator<Item = &'a mut T>,
        prev_sign: &mut [i8],
        clamped: bool,
    ) -> usize {
        let mut count = 0;
        for (((w, &g), s), prev) in ws.zip(gs).zip(ss).zip(prev_sign.iter_mut()) {
            count += 1;
            let sg = sign(g);
            if sg == 0 {
                continue;
            }
            let mut moving = sg;
            let before = *s;
            match *prev * sg {
                1 => *s *= self.up,
                -1 => {
                    *s *= self.down;
                    if self.variant == RPropVariant::IRpropMinus {
                        moving = 0;
                    }
                }
                _ => {}
            }
            *prev = moving;
            if moving != 0 {
                let mut next = if moving > 0 { *w - *s } else { *w + *s };
                if clamped && next.abs() > self.clamp {
                    next = next.max(-self.clamp).min(self.clamp);
                    // A weight pinned at the bound would otherwise grow its
                    // step without limit and later jump across the range.
                    *s = before;
                }
                *w = next;
            }
        }
        count
    }
}

/// A run of epochs inside a phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub epochs: usize,
    /// Renormalization cadence; 0 disables it.
    pub r_int: usize,
    /// Reset steps to the phase's `Δ₀` when the interval ends.
    pub reset: bool,
}

impl Interval {
    pub fn new(epochs: usize, r_int: usize, reset: bool) -> Self {
        Interval { epochs, r_int, reset }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    /// Cost order `s`.
    pub order: usize,
    pub delta0: f64,
    pub intervals: Vec<Interval>,
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.order) {
            return Err(Error::config("phase.order", format!("{} is not in 2..=4", self.order)));
        }
        if !(self.delta0 > 0.0) {
            return Err(Error::config("phase.delta0", "must be positive"));
        }
        if self.intervals.is_empty() {
            return Err(Error::config("phase.intervals", "at least one interval required"));
        }
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.intervals.iter().map(|i| i.epochs).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    /// Global epoch number, starting at 1.
    pub epoch: usize,
    pub phase: usize,
    pub interval: usize,
    /// `e_s` before the step of this epoch.
    pub cost: f64,
    /// Root mean square of `V` before the step.
    pub rms_v0: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub fn push(&mut self, r: LogRecord) {
        debug_assert!(self.records.last().is_none_or(|p| p.epoch < r.epoch));
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Last record of each phase, in phase order.
    pub fn phase_ends(&self) -> Vec<LogRecord> {
        let mut out: Vec<LogRecord> = Vec::new();
        for r in &self.records {
            match out.last_mut() {
                Some(last) if last.phase == r.phase => *last = *r,
                _ => out.push(*r),
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,phase,interval,cost,rms_v0,seconds\n");
        for r in &self.records {
            writeln!(
                s,
                "{},{},{},{:e},{:e},{:.3}",
                r.epoch, r.phase, r.interval, r.cost, r.rms_v0, r.seconds
            )
            .unwrap();
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Weights plus RProp steps, written after each phase and on failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub weights: WeightSet<T>,
    pub steps: WeightSet<T>,
}

const STEPS_MARKER: &str = "rprop steps";

impl<T: Real> Checkpoint<T> {
    pub fn to_text(&self) -> String {
        let mut s = self.weights.to_text();
        s.push_str(STEPS_MARKER);
        s.push('\n');
        for v in self.steps.iter() {
            writeln!(s, "{v}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (head, tail) = text
            .split_once(&format!("{STEPS_MARKER}\n"))
            .ok_or_else(|| Error::Format("checkpoint lacks a step block".into()))?;
        let weights = WeightSet::from_text(head)?;
        let (topology, _) = parse_header(head.lines().next().unwrap_or_default())?;
        let steps = WeightSet::read_values(&topology, &mut tail.lines())?;
        Ok(Checkpoint { weights, steps })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Callback receiving every log record as it is produced.
pub type Observer = Box<dyn FnMut(&LogRecord) + Send>;

/// Everything a phase needs besides the network.
pub struct TrainContext {
    pub spec: ProblemSpec,
    pub points: PointCloud,
    pub directions: DirectionField,
    pub renorm_threshold: f64,
    pub opts: EvalOptions,
    /// Record zero wall time so that logs are comparable bit for bit.
    pub reproducible: bool,
    /// Called with every log record as it is produced.
    pub observer: Option<Observer>,
    sources: SourceCache,
    epoch: usize,
    start: Instant,
}

impl TrainContext {
    pub fn new(spec: ProblemSpec, points: PointCloud, directions: DirectionField) -> Result<Self> {
        if points.dim() != spec.dim() || directions.dim() != spec.dim() {
            return Err(Error::config("grid", "dimension differs from the problem"));
        }
        if points.len() != directions.len() {
            return Err(Error::Shape("one direction pair per point required".into()));
        }
        let sources = SourceCache::build(&spec, &points, &directions);
        Ok(TrainContext {
            spec,
            points,
            directions,
            renorm_threshold: 4.0,
            opts: EvalOptions::default(),
            reproducible: false,
            observer: None,
            sources,
            epoch: 0,
            start: Instant::now(),
        })
    }

    /// Epochs run so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// `e_s` and its breakdown for the current directions.
    pub fn evaluate_cost<T: Real>(&self, weights: &WeightSet<T>, order: usize) -> Result<crate::problems::CostBreakdown> {
        let slots = SlotSet::build(self.spec.dim(), order);
        let out = forward(&self.points, &self.directions, weights, &slots, self.opts)?;
        let res = residual_jets(&self.spec, &out, &slots, &self.points, &self.directions, &self.sources)?;
        cost(&res, order)
    }

    fn renormalize<T: Real>(&mut self, weights: &WeightSet<T>, slots: &SlotSet) -> Result<()> {
        let out = forward(&self.points, &self.directions, weights, slots, self.opts)?;
        let stats = renormalize(&mut self.directions, &out, slots, self.renorm_threshold);
        if stats.xi_scaled + stats.zeta_scaled > 0 {
            self.sources = SourceCache::build(&self.spec, &self.points, &self.directions);
        }
        Ok(())
    }
}

/// Runs one phase with a fresh RProp state. On error `weights` holds the last
/// parameters for which the cost was finite and `state` the matching steps.
pub fn run_phase<T: Real>(
    ctx: &mut TrainContext,
    phase: &PhaseConfig,
    phase_index: usize,
    weights: &mut WeightSet<T>,
    rprop: &RPropConfig,
    log: &mut TrainingLog,
) -> Result<RPropState<T>> {
    phase.validate()?;
    let slots = SlotSet::build(ctx.spec.dim(), phase.order);
    let mut state = RPropState::new(&weights.topology(), phase.delta0);
    for (ii, interval) in phase.intervals.iter().enumerate() {
        for e in 1..=interval.epochs {
            if interval.r_int > 0 && e % interval.r_int == 0 {
                ctx.renormalize(weights, &slots)?;
            }
            ctx.epoch += 1;
            let cost_fn = ResidualCost::new(ctx.spec, &slots, &ctx.points, &ctx.directions, &ctx.sources)?;
            let cg = cost_gradient(&ctx.points, &ctx.directions, weights, &slots, &cost_fn, ctx.opts)?;
            if !cg.cost.is_finite() || !cg.outputs.all_finite() {
                return Err(Error::NanCost { epoch: ctx.epoch });
            }
            let res = residual_jets(&ctx.spec, &cg.outputs, &slots, &ctx.points, &ctx.directions, &ctx.sources)?;
            let rms_v0 = (res.iter().map(|r| r.value().powi(2)).sum::<f64>() / res.len() as f64).sqrt();
            let record = LogRecord {
                epoch: ctx.epoch,
                phase: phase_index,
                interval: ii,
                cost: cg.cost,
                rms_v0,
                seconds: if ctx.reproducible {
                    0.0
                } else {
                    ctx.start.elapsed().as_secs_f64()
                },
            };
            if let Some(f) = ctx.observer.as_mut() {
                f(&record);
            }
            log.push(record);
            state.step(weights, &cg.gradient, rprop, ctx.epoch)?;
        }
        if interval.reset {
            state.reset(phase.delta0);
        }
    }
    Ok(state)
}

/// Artifacts of a finished run.
#[derive(Debug, Clone)]
pub struct Experiment<T> {
    pub weights: WeightSet<T>,
    pub log: TrainingLog,
    pub report: ValidationReport,
    pub surface_points: usize,
    pub interior_points: usize,
}

/// File names used inside an output directory.
pub mod artifacts {
    pub const WEIGHTS: &str = "weights.txt";
    pub const LOG: &str = "training_log.csv";
    pub const REPORT: &str = "validation.txt";
    pub const CHECKPOINT: &str = "checkpoint.txt";
    pub const LAST_GOOD: &str = "last_good_checkpoint.txt";
    pub const GRID: &str = "grid.csv";
    pub const CONFIG: &str = "resolved_config.txt";
}

/// Builds grid, directions and network from `config`, trains through every
/// phase, validates and, if `out` is given, writes all artifacts there.
/// On a numerical failure the last good checkpoint is written before the
/// error is returned.
pub fn run_experiment<T: Real>(config: &RunConfig, out: Option<&Path>) -> Result<Experiment<T>> {
    run_experiment_observed(config, out, None)
}

/// [`run_experiment`] with a callback receiving every log record.
pub fn run_experiment_observed<T: Real>(
    config: &RunConfig,
    out: Option<&Path>,
    observer: Option<Observer>,
) -> Result<Experiment<T>> {
    config.validate()?;
    let expected = match config.precision {
        Precision::F32 => 32,
        Precision::F64 => 64,
    };
    if T::BITS != expected {
        return Err(Error::config("precision", "does not match the scalar type"));
    }
    let spec = config.spec;
    let grid = collocation_grid(&config.grid_spec());
    let dirs = direction_pairs(grid.len(), spec.dim(), config.seeds.directions);
    let surface_points = grid.count(crate::geometry::PointKind::Surface);
    let interior_points = grid.len() - surface_points;
    let path = |name: &str| -> Option<PathBuf> { out.map(|d| d.join(name)) };
    if let Some(p) = path(artifacts::GRID) {
        grid.write_csv(std::io::BufWriter::new(std::fs::File::create(p)?))?;
    }
    if let Some(p) = path(artifacts::CONFIG) {
        std::fs::write(p, config.to_text())?;
    }

    let mut ctx = TrainContext::new(spec, grid, dirs)?;
    ctx.renorm_threshold = config.renorm_threshold;
    ctx.reproducible = config.reproducible;
    ctx.opts = config.eval_options();
    ctx.observer = observer;

    let mut weights: WeightSet<T> = init_weights(&config.topology, config.seeds.weights);
    let mut log = TrainingLog::default();
    for (pi, phase) in config.phases.iter().enumerate() {
        match run_phase(&mut ctx, phase, pi, &mut weights, &config.rprop, &mut log) {
            Ok(state) => {
                if let Some(p) = path(artifacts::CHECKPOINT) {
                    Checkpoint { weights: weights.clone(), steps: state.steps().clone() }.save(&p)?;
                }
            }
            Err(e) => {
                if let Some(p) = path(artifacts::LAST_GOOD) {
                    let steps = WeightSet::zeros(&config.topology);
                    Checkpoint { weights: weights.clone(), steps }.save(&p)?;
                }
                if let Some(p) = path(artifacts::LOG) {
                    log.save(&p)?;
                }
                return Err(e);
            }
        }
    }

    let mut report = validate(&spec, &weights, config.n_test, config.seeds.validation, ctx.opts)?;
    report.rms_v0_final = log.records.last().map(|r| r.rms_v0);
    if let Some(dir) = out {
        weights.save(&dir.join(artifacts::WEIGHTS))?;
        log.save(&dir.join(artifacts::LOG))?;
        report.save(&dir.join(artifacts::REPORT))?;
    }
    Ok(Experiment {
        weights,
        log,
        report,
        surface_points,
        interior_points,
    })
}

/// Analytic gradient of `e_s` against central finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub order: usize,
    pub n_params: usize,
    /// `max_k |g_k − fd_k| / max(|g_k|, |fd_k|, floor)`, with the floor
    /// `1e-3·max_k |fd_k|` keeping parameters with negligible gradient from
    /// measuring only difference noise.
    pub max_rel_error: f64,
    /// `‖g − fd‖_∞ / ‖fd‖_∞`.
    pub normwise_error: f64,
}

/// Compares [`cost_gradient`] with central differences of step `step` for
/// every parameter.
pub fn gradient_check<T: Real>(
    spec: &ProblemSpec,
    weights: &WeightSet<T>,
    points: &PointCloud,
    directions: &DirectionField,
    order: usize,
    step: f64,
) -> Result<GradCheck> {
    let slots = SlotSet::build(spec.dim(), order);
    let sources = SourceCache::build(spec, points, directions);
    let cost_fn = ResidualCost::new(*spec, &slots, points, directions, &sources)?;
    let opts = EvalOptions::sequential();
    let analytic = cost_gradient(points, directions, weights, &slots, &cost_fn, opts)?;
    let value = |w: &WeightSet<T>| -> Result<f64> {
        let out = forward(points, directions, w, &slots, opts)?;
        let res = residual_jets(spec, &out, &slots, points, directions, &sources)?;
        Ok(cost(&res, order)?.total)
    };
    let mut fd = Vec::with_capacity(weights.n_params());
    let mut probe = weights.clone();
    for k in 0..weights.n_params() {
        let w0 = *probe.param_mut(k);
        *probe.param_mut(k) = w0 + T::from_f64(step);
        let plus = value(&probe)?;
        *probe.param_mut(k) = w0 - T::from_f64(step);
        let minus = value(&probe)?;
        *probe.param_mut(k) = w0;
        fd.push((plus - minus) / (2.0 * step));
    }
    let g: Vec<f64> = analytic.gradient.iter().map(|v| v.as_f64()).collect();
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-3 * scale;
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    for (a, b) in g.iter().zip(&fd) {
        let d = (a - b).abs();
        max_abs = max_abs.max(d);
        max_rel = max_rel.max(d / a.abs().max(b.abs()).max(floor).max(f64::MIN_POSITIVE));
    }
    Ok(GradCheck {
        order,
        n_params: g.len(),
        max_rel_error: max_rel,
        normwise_error: if scale > 0.0 { max_abs / scale } else { max_abs },
    })
}

/// Writes `e_s` medians over consecutive windows of `window` epochs within
/// each phase; used to judge the descent tendency of a run.
pub fn window_medians(log: &TrainingLog, window: usize) -> Vec<Vec<f64>> {
    let mut phases: Vec<Vec<f64>> = Vec::new();
    let mut current = usize::MAX;
    for r in &log.records {
        if r.phase != current {
            phases.push(Vec::new());
            current = r.phase;
        }
        phases.last_mut().unwrap().push(r.cost);
    }
    phases
        .into_iter()
        .map(|costs| {
            costs
                .chunks(window)
                .filter(|c| c.len() == window)
                .map(|c| {
                    let mut v = c.to_vec();
                    v.sort_by(f64::total_cmp);
                    0.5 * (v[(window - 1) / 2] + v[window / 2])
                })
                .collect()
        })
        .collect()
}

/// Appends a line to a writer, used by the CLI to echo progress.
pub fn write_phase_summary(mut w: impl std::io::Write, log: &TrainingLog) -> Result<()> {
    for r in log.phase_ends() {
        writeln!(w, "phase {}: epoch {} e_s = {:.3e} rms V0 = {:.3e}", r.phase + 1, r.epoch, r.cost, r.rms_v0)?;
    }
    Ok(())
}
