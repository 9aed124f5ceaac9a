//! Run configuration: built-in presets for the six reference experiments and
//! a flat `key = value` text format with repeated `[phase]` blocks.
//!
//! ```text
//! preset = 2d-linear        # optional; later keys override it
//! seed_weights = 3
//!
//! [phase]
//! order = 4
//! delta0 = 2e-4
//! interval = 1000, 200, reset
//! interval = 1000, 200
//! ```
//!
//! If any `[phase]` block is present it replaces the preset's schedule.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::exec::{Exec, DEFAULT_CHUNK};
use crate::geometry::GridSpec;
use crate::problems::{ProblemKind, ProblemSpec, Variant};
use crate::slotnet::{EvalOptions, Topology};
use crate::trainer::{Interval, PhaseConfig, RPropConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            other => Err(Error::config("precision", format!("{other} is not 32 or 64"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub weights: u64,
    pub grid: u64,
    pub directions: u64,
    pub validation: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: ProblemSpec,
    pub topology: Topology,
    /// Surface angular spacing.
    pub theta: f64,
    /// Interior lattice spacing.
    pub lambda: f64,
    pub phases: Vec<PhaseConfig>,
    pub rprop: RPropConfig,
    pub renorm_threshold: f64,
    pub seeds: Seeds,
    pub precision: Precision,
    pub n_test: usize,
    pub reproducible: bool,
    pub parallel: bool,
    /// Points per evaluation chunk.
    pub chunk: usize,
    pub out_dir: Option<PathBuf>,
}

/// Names of the built-in presets.
pub const PRESETS: &[&str] = &[
    "2d-linear",
    "2d-nonlinear",
    "3d-linear",
    "3d-nonlinear",
    "4d-linear",
    "4d-nonlinear",
    "5d-linear",
    "5d-nonlinear",
    "5d-linear-cubic",
];

const DELTA0: f64 = 2e-4;
const DELTA0_LATE: f64 = 2e-5;

fn late_phases() -> Vec<PhaseConfig> {
    vec![
        PhaseConfig {
            order: 3,
            delta0: DELTA0_LATE,
            intervals: vec![Interval::new(2000, 200, false)],
        },
        PhaseConfig {
            order: 2,
            delta0: DELTA0_LATE,
            intervals: vec![Interval::new(2000, 200, false)],
        },
    ]
}

/// Three-phase schedule of the linear problems.
pub fn linear_schedule() -> Vec<PhaseConfig> {
    let mut p = vec![PhaseConfig {
        order: 4,
        delta0: DELTA0,
        intervals: vec![Interval::new(1000, 200, true), Interval::new(1000, 200, false)],
    }];
    p.extend(late_phases());
    p
}

/// Schedule of the nonlinear problems: phase 1 split into five intervals.
pub fn nonlinear_schedule() -> Vec<PhaseConfig> {
    let mut p = vec![PhaseConfig {
        order: 4,
        delta0: DELTA0,
        intervals: vec![
            Interval::new(160, 15, true),
            Interval::new(340, 50, true),
            Interval::new(500, 50, true),
            Interval::new(1000, 50, true),
            Interval::new(1000, 100, false),
        ],
    }];
    p.extend(late_phases());
    p
}

/// Schedule used with the `cubic_x3` solution.
pub fn cubic_schedule() -> Vec<PhaseConfig> {
    let mut p = vec![PhaseConfig {
        order: 4,
        delta0: DELTA0,
        intervals: vec![Interval::new(1000, 20, true), Interval::new(1500, 200, false)],
    }];
    p.extend(late_phases());
    p
}

/// Grid seeds chosen so each preset grid has the reference point count
/// (closest achievable count in 4D and 5D).
fn preset_grid_seed(kind: ProblemKind, n: usize) -> u64 {
    match (kind, n) {
        (ProblemKind::Linear, 2) => 1,
        (ProblemKind::Nonlinear, 2) => 1,
        (ProblemKind::Linear, 3) => 4,
        (ProblemKind::Nonlinear, 3) => 40,
        (ProblemKind::Linear, 4) => 232,
        (ProblemKind::Nonlinear, 4) => 235,
        (ProblemKind::Linear, _) => 269,
        (ProblemKind::Nonlinear, _) => 222,
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (n, kind, variant) = match name {
            "2d-linear" => (2, ProblemKind::Linear, Variant::Default),
            "2d-nonlinear" => (2, ProblemKind::Nonlinear, Variant::Default),
            "3d-linear" => (3, ProblemKind::Linear, Variant::Default),
            "3d-nonlinear" => (3, ProblemKind::Nonlinear, Variant::Default),
            "4d-linear" => (4, ProblemKind::Linear, Variant::Default),
            "4d-nonlinear" => (4, ProblemKind::Nonlinear, Variant::Default),
            "5d-linear" => (5, ProblemKind::Linear, Variant::Default),
            "5d-nonlinear" => (5, ProblemKind::Nonlinear, Variant::Default),
            "5d-linear-cubic" => (5, ProblemKind::Linear, Variant::CubicX3),
            other => return Err(Error::config("preset", format!("unknown preset `{other}`"))),
        };
        let spec = ProblemSpec::new(kind, n, variant)?;
        let width = match n {
            2 | 3 => 96,
            4 => 148,
            _ => 160,
        };
        let (theta, lambda) = match kind {
            ProblemKind::Linear => (PI / 6.0, 1.0 / 3.0),
            ProblemKind::Nonlinear => (PI / 8.0, 1.0 / 4.0),
        };
        let phases = match (kind, variant) {
            (_, Variant::CubicX3) => cubic_schedule(),
            (ProblemKind::Linear, _) => linear_schedule(),
            (ProblemKind::Nonlinear, _) => nonlinear_schedule(),
        };
        let n_test = match n {
            2 => 4000,
            3 => 35_000,
            4 => 500_000,
            _ => 5_000_000,
        };
        Ok(RunConfig {
            spec,
            topology: Topology::uniform(n, width, 6),
            theta,
            lambda,
            phases,
            rprop: RPropConfig::default(),
            renorm_threshold: 4.0,
            seeds: Seeds {
                weights: 1,
                grid: preset_grid_seed(kind, n),
                directions: 2,
                validation: 3,
            },
            precision: Precision::F64,
            n_test,
            reproducible: false,
            parallel: true,
            chunk: DEFAULT_CHUNK,
            out_dir: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.topology.input() != self.spec.dim() {
            return Err(Error::config(
                "topology",
                format!("input width {} differs from dimension {}", self.topology.input(), self.spec.dim()),
            ));
        }
        if !(self.theta > 0.0 && self.theta < PI) {
            return Err(Error::config("theta", "must lie in (0, π)"));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::config("lambda", "must lie in (0, 1]"));
        }
        if !(self.renorm_threshold > 0.0) {
            return Err(Error::config("renorm_threshold", "must be positive"));
        }
        if self.chunk == 0 {
            return Err(Error::config("chunk", "must be positive"));
        }
        self.rprop.validate()?;
        for p in &self.phases {
            p.validate()?;
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            n: self.spec.dim(),
            theta: self.theta,
            lambda: self.lambda,
            seed: self.seeds.grid,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            exec: if self.parallel { Exec::Parallel } else { Exec::Sequential },
            chunk: self.chunk,
        }
    }

    /// Total epochs over all phases.
    pub fn epochs(&self) -> usize {
        self.phases.iter().map(PhaseConfig::epochs).sum()
    }

    /// Fully resolved configuration in the text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = &self.rprop;
        let kv: Vec<(&str, String)> = vec![
            ("problem", self.spec.kind().to_string()),
            ("dimension", self.spec.dim().to_string()),
            ("variant", self.spec.variant().to_string()),
            ("topology", self.topology.to_string()),
            ("theta", self.theta.to_string()),
            ("lambda", self.lambda.to_string()),
            ("renorm_threshold", self.renorm_threshold.to_string()),
            ("seed_weights", self.seeds.weights.to_string()),
            ("seed_grid", self.seeds.grid.to_string()),
            ("seed_directions", self.seeds.directions.to_string()),
            ("seed_validation", self.seeds.validation.to_string()),
            ("precision", self.precision.bits().to_string()),
            ("n_test", self.n_test.to_string()),
            ("reproducible", self.reproducible.to_string()),
            ("parallel", self.parallel.to_string()),
            ("chunk", self.chunk.to_string()),
            ("eta_plus", r.eta_plus.to_string()),
            ("eta_minus", r.eta_minus.to_string()),
            ("weight_clamp", r.weight_clamp.to_string()),
            ("clamp_thresholds", r.clamp_thresholds.to_string()),
            ("rprop_variant", r.variant.to_string()),
        ];
        for (k, v) in kv {
            writeln!(s, "{k} = {v}").unwrap();
        }
        if let Some(d) = &self.out_dir {
            writeln!(s, "out = {}", d.display()).unwrap();
        }
        for p in &self.phases {
            writeln!(s, "\n[phase]\norder = {}\ndelta0 = {}", p.order, p.delta0).unwrap();
            for i in &p.intervals {
                let flag = if i.reset { ", reset" } else { "" };
                writeln!(s, "interval = {}, {}{flag}", i.epochs, i.r_int).unwrap();
            }
        }
        s
    }

    /// Parses the text format. Keys not given keep the values of `preset`
    /// (or of `2d-linear` when no preset key is present).
    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let base = lines
            .iter()
            .find_map(|(_, l)| {
                let (k, v) = l.split_once('=')?;
                (k.trim() == "preset").then(|| v.trim().to_string())
            })
            .unwrap_or_else(|| "2d-linear".into());
        let mut cfg = RunConfig::preset(&base)?;

        let mut kind = cfg.spec.kind();
        let mut dim = cfg.spec.dim();
        let mut variant = cfg.spec.variant();
        let mut topology: Option<Topology> = None;
        let mut phases: Vec<PhaseConfig> = Vec::new();
        let mut in_phase = false;

        for (no, line) in lines {
            if line == "[phase]" {
                phases.push(PhaseConfig {
                    order: 4,
                    delta0: DELTA0,
                    intervals: Vec::new(),
                });
                in_phase = true;
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {no}"), format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if in_phase {
                let p = phases.last_mut().unwrap();
                match k {
                    "order" => p.order = parse(k, v)?,
                    "delta0" => p.delta0 = parse(k, v)?,
                    "interval" => p.intervals.push(parse_interval(v)?),
                    other => return Err(Error::config(other, "unknown key inside [phase]")),
                }
                continue;
            }
            match k {
                "preset" => {}
                "problem" => kind = v.parse()?,
                "dimension" => dim = parse(k, v)?,
                "variant" => variant = v.parse()?,
                "topology" => topology = Some(Topology::parse(v)?),
                "theta" => cfg.theta = parse_angle(k, v)?,
                "lambda" => cfg.lambda = parse(k, v)?,
                "renorm_threshold" => cfg.renorm_threshold = parse(k, v)?,
                "seed_weights" => cfg.seeds.weights = parse(k, v)?,
                "seed_grid" => cfg.seeds.grid = parse(k, v)?,
                "seed_directions" => cfg.seeds.directions = parse(k, v)?,
                "seed_validation" => cfg.seeds.validation = parse(k, v)?,
                "precision" => cfg.precision = Precision::from_bits(parse(k, v)?)?,
                "n_test" => cfg.n_test = parse(k, v)?,
                "reproducible" => cfg.reproducible = parse(k, v)?,
                "parallel" => cfg.parallel = parse(k, v)?,
                "chunk" => cfg.chunk = parse(k, v)?,
                "eta_plus" => cfg.rprop.eta_plus = parse(k, v)?,
                "eta_minus" => cfg.rprop.eta_minus = parse(k, v)?,
                "weight_clamp" => cfg.rprop.weight_clamp = parse(k, v)?,
                "clamp_thresholds" => cfg.rprop.clamp_thresholds = parse(k, v)?,
                "rprop_variant" => cfg.rprop.variant = v.parse()?,
                "out" => cfg.out_dir = Some(PathBuf::from(v)),
                other => return Err(Error::config(other, "unknown key")),
            }
        }
        cfg.spec = ProblemSpec::new(kind, dim, variant)?;
        if let Some(t) = topology {
            cfg.topology = t;
        } else if cfg.topology.input() != dim {
            let hidden = &cfg.topology.widths()[1..cfg.topology.widths().len() - 1];
            cfg.topology = Topology::uniform(dim, hidden[0], hidden.len());
        }
        if !phases.is_empty() {
            cfg.phases = phases;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

/// Accepts plain numbers and `pi/K`.
fn parse_angle(key: &str, v: &str) -> Result<f64> {
    if let Some(d) = v.strip_prefix("pi/") {
        let d: f64 = parse(key, d.trim())?;
        return Ok(PI / d);
    }
    parse(key, v)
}

fn parse_interval(v: &str) -> Result<Interval> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [e, r] => Ok(Interval::new(parse("interval", e)?, parse("interval", r)?, false)),
        [e, r, "reset"] => Ok(Interval::new(parse("interval", e)?, parse("interval", r)?, true)),
        _ => Err(Error::config("interval", format!("expected `epochs, r_int[, reset]`, got `{v}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(c.topology.input(), c.spec.dim());
        }
        assert!(RunConfig::preset("6d-linear").is_err());
    }

    #[test]
    fn reference_topologies() {
        assert_eq!(RunConfig::preset("2d-linear").unwrap().topology.to_string(), "2,96,96,96,96,96,96,1");
        assert_eq!(RunConfig::preset("4d-nonlinear").unwrap().topology.widths()[1], 148);
        assert_eq!(RunConfig::preset("5d-linear").unwrap().topology.widths()[3], 160);
    }

    #[test]
    fn schedules() {
        let l = linear_schedule();
        assert_eq!(l.iter().map(|p| p.order).collect::<Vec<_>>(), vec![4, 3, 2]);
        assert_eq!(l.iter().map(PhaseConfig::epochs).sum::<usize>(), 6000);
        let nl = nonlinear_schedule();
        assert_eq!(nl[0].intervals.len(), 5);
        assert!(nl[0].intervals[..4].iter().all(|i| i.reset));
        assert!(!nl[0].intervals[4].reset);
        assert_eq!(nl[0].epochs(), 3000);
        assert_eq!(cubic_schedule()[0].epochs(), 2500);
    }

    #[test]
    fn text_roundtrip_of_every_preset() {
        for name in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c, "{name}");
        }
    }

    #[test]
    fn overrides_and_phase_blocks() {
        let text = "preset = 3d-nonlinear\nseed_weights = 9\ntheta = pi/4  # coarser\n\n[phase]\norder = 2\ndelta0 = 1e-3\ninterval = 50, 10, reset\ninterval = 20, 0\n";
        let c = RunConfig::from_text(text).unwrap();
        assert_eq!(c.spec, ProblemSpec::nonlinear(3));
        assert_eq!(c.seeds.weights, 9);
        assert!((c.theta - PI / 4.0).abs() < 1e-15);
        assert_eq!(c.phases.len(), 1);
        assert_eq!(c.phases[0].intervals, vec![Interval::new(50, 10, true), Interval::new(20, 0, false)]);
    }

    #[test]
    fn dimension_change_adapts_topology() {
        let c = RunConfig::from_text("dimension = 3\n").unwrap();
        assert_eq!(c.topology.to_string(), "3,96,96,96,96,96,96,1");
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_text("theta = abc\n").unwrap_err().to_string();
        assert!(e.contains("theta"), "{e}");
        let e = RunConfig::from_text("topology = 3,8,1\n").unwrap_err().to_string();
        assert!(e.contains("topology"), "{e}");
        assert!(RunConfig::from_text("bogus = 1\n").is_err());
        assert!(RunConfig::from_text("[phase]\norder = 7\ninterval = 1, 1\n").is_err());
        assert!(RunConfig::from_text("[phase]\norder = 2\n").is_err());
        assert!(RunConfig::from_text("precision = 16\n").is_err());
    }
}
