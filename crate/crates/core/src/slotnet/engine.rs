//! Extended forward pass and its adjoint.
//!
//! A [`SlotBatch`] stores every slot table of one layer for a chunk of points
//! in a single row-major matrix of shape `(slots · points) × width`: slot `k`
//! occupies rows `k·points .. (k+1)·points`. The affine step is then one
//! matrix product for all slots at once, and the activation step works on
//! contiguous per-slot blocks.

use std::ops::Range;

use ndarray::{s, Array2, Axis};

use super::sigmoid::SigmoidPolys;
use super::slots::{CoordOp, DirOp, Direction, SlotSet};
use super::weights::{Layer, WeightSet};
use crate::error::{Error, Result};
use crate::exec::{chunk_ranges, Exec, DEFAULT_CHUNK};
use crate::geometry::{DirectionField, PointCloud};
use crate::real::Real;

/// Slot tables of one layer for a contiguous set of points.
#[derive(Debug, Clone)]
pub struct SlotBatch<T> {
    n_slots: usize,
    n_points: usize,
    data: Array2<T>,
}

impl<T: Real> SlotBatch<T> {
    pub fn zeros(n_slots: usize, n_points: usize, width: usize) -> Self {
        SlotBatch {
            n_slots,
            n_points,
            data: Array2::zeros((n_slots * n_points, width)),
        }
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    /// Table of slot `k`, one row per point.
    pub fn table(&self, k: usize) -> ndarray::ArrayView2<'_, T> {
        self.data
            .slice(s![k * self.n_points..(k + 1) * self.n_points, ..])
    }

    pub fn table_mut(&mut self, k: usize) -> ndarray::ArrayViewMut2<'_, T> {
        let np = self.n_points;
        self.data.slice_mut(s![k * np..(k + 1) * np, ..])
    }

    pub fn get(&self, slot: usize, point: usize, unit: usize) -> T {
        self.data[(slot * self.n_points + point, unit)]
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    fn block(&self, k: usize) -> &[T] {
        let len = self.n_points * self.width();
        &self.data.as_slice().expect("standard layout")[k * len..(k + 1) * len]
    }
}

/// Builds the input-layer slots for `points[range]`.
///
/// The value slot holds the coordinates, `∂/∂x_j` holds the unit vector
/// `e_j`, `∂/∂ξ` and `∂/∂ζ` hold the per-point directions; every slot of
/// total order two or more is zero.
pub fn init_input_slots<T: Real>(
    points: &PointCloud,
    directions: &DirectionField,
    slots: &SlotSet,
    range: Range<usize>,
) -> Result<SlotBatch<T>> {
    let n = points.dim();
    if directions.len() != points.len() || directions.dim() != n {
        return Err(Error::Shape(format!(
            "{} points of dimension {n} but {} directions of dimension {}",
            points.len(),
            directions.len(),
            directions.dim()
        )));
    }
    if slots.dim() != n {
        return Err(Error::Shape(format!(
            "slot set for dimension {} used with {n}-dimensional points",
            slots.dim()
        )));
    }
    let np = range.len();
    let mut batch = SlotBatch::zeros(slots.len(), np, n);
    for (k, label) in slots.labels().iter().enumerate() {
        let mut table = batch.table_mut(k);
        match (label.coord, label.dir) {
            (CoordOp::Identity, DirOp::Identity) => {
                for (row, i) in range.clone().enumerate() {
                    for (c, &x) in points.point(i).iter().enumerate() {
                        table[(row, c)] = T::from_f64(x);
                    }
                }
            }
            (CoordOp::First(j), DirOp::Identity) => {
                table.column_mut(j).fill(T::one());
            }
            (CoordOp::Identity, DirOp::Along(d, 1)) => {
                for (row, i) in range.clone().enumerate() {
                    let v = match d {
                        Direction::Xi => directions.xi(i),
                        Direction::Zeta => directions.zeta(i),
                    };
                    for (c, &x) in v.iter().enumerate() {
                        table[(row, c)] = T::from_f64(x);
                    }
                }
            }
            _ => {}
        }
    }
    Ok(batch)
}

/// Applies `W·table` to every slot and adds the thresholds to the value slot
/// only.
pub fn affine_propagate<T: Real>(input: &SlotBatch<T>, layer: &Layer<T>) -> Result<SlotBatch<T>> {
    if layer.w.ncols() != input.width() {
        return Err(Error::Shape(format!(
            "layer expects width {}, slots have {}",
            layer.w.ncols(),
            input.width()
        )));
    }
    let mut data = input.data.dot(&layer.w.t());
    data.slice_mut(s![0..input.n_points, ..])
        .rows_mut()
        .into_iter()
        .for_each(|mut row| row += &layer.b);
    Ok(SlotBatch {
        n_slots: input.n_slots,
        n_points: input.n_points,
        data,
    })
}

/// `σ^(k)` of the value slot for `k = 0..orders`.
fn sigma_table<T: Real>(pre: &SlotBatch<T>, polys: &SigmoidPolys, orders: usize) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new(); orders];
    polys.table(pre.block(0), &mut out);
    out
}

/// Applies the sigmoid elementwise and propagates every slot by the
/// higher-order chain rule using the slot set's precomputed expansion.
pub fn activation_propagate<T: Real>(
    pre: &SlotBatch<T>,
    slots: &SlotSet,
    polys: &SigmoidPolys,
) -> SlotBatch<T> {
    let sig = sigma_table(pre, polys, slots.max_order() + 1);
    activate(pre, &sig, slots)
}

/// Elements processed together by the activation kernels; small enough that
/// every slot's slice of a tile stays in cache.
const TILE: usize = 256;

/// `out[e] += c · a[e] · b[e] · Π_q ins[q][e]` (`b` optional) in one pass.
fn accumulate<T: Real>(out: &mut [T], c: T, a: &[T], b: Option<&[T]>, ins: &[&[T]]) {
    fn fixed<T: Real, const M: usize>(out: &mut [T], c: T, a: &[T], b: Option<&[T]>, ins: &[&[T]]) {
        let n = out.len();
        let a = &a[..n];
        let ins: [&[T]; M] = std::array::from_fn(|q| &ins[q][..n]);
        match b {
            Some(b) => {
                let b = &b[..n];
                for e in 0..n {
                    let mut p = c * a[e] * b[e];
                    for x in &ins {
                        p *= x[e];
                    }
                    out[e] += p;
                }
            }
            None => {
                for e in 0..n {
                    let mut p = c * a[e];
                    for x in &ins {
                        p *= x[e];
                    }
                    out[e] += p;
                }
            }
        }
    }
    match ins.len() {
        0 => fixed::<T, 0>(out, c, a, b, ins),
        1 => fixed::<T, 1>(out, c, a, b, ins),
        2 => fixed::<T, 2>(out, c, a, b, ins),
        3 => fixed::<T, 3>(out, c, a, b, ins),
        4 => fixed::<T, 4>(out, c, a, b, ins),
        5 => fixed::<T, 5>(out, c, a, b, ins),
        6 => fixed::<T, 6>(out, c, a, b, ins),
        m => unreachable!("terms have at most 6 blocks, got {m}"),
    }
}

fn activate<T: Real>(pre: &SlotBatch<T>, sig: &[Vec<T>], slots: &SlotSet) -> SlotBatch<T> {
    let blk = pre.n_points * pre.width();
    let u = pre.data.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); u.len()];
    let mut ins: Vec<&[T]> = Vec::with_capacity(6);
    for t0 in (0..blk).step_by(TILE) {
        let len = TILE.min(blk - t0);
        let at = |b: usize| b * blk + t0..b * blk + t0 + len;
        for (d, terms) in slots.plan().iter().enumerate() {
            let dst = &mut out[at(d)];
            for term in terms {
                ins.clear();
                ins.extend(term.blocks.iter().map(|&b| &u[at(b)]));
                let s = &sig[term.order][t0..t0 + len];
                accumulate(dst, T::from_f64(term.coef), s, None, &ins);
            }
        }
    }
    SlotBatch {
        n_slots: pre.n_slots,
        n_points: pre.n_points,
        data: Array2::from_shape_vec(pre.data.raw_dim(), out).expect("shape"),
    }
}

/// Adjoint of [`activate`]: given `∂E/∂out`, returns `∂E/∂pre`.
///
/// A term `c·σ^(k)(u₀)·Π_q in_{B_q}` of output slot `d` sends
/// `c·ȳ_d·σ^(k+1)·Π_q in_{B_q}` to the value slot and
/// `c·ȳ_d·σ^(k)·Π_{q≠p} in_{B_q}` to each block `B_p`.
fn activate_adjoint<T: Real>(
    pre: &SlotBatch<T>,
    sig: &[Vec<T>],
    slots: &SlotSet,
    out_bar: &Array2<T>,
) -> Array2<T> {
    let blk = pre.n_points * pre.width();
    let u = pre.data.as_slice().expect("standard layout");
    let ybar = out_bar.as_slice().expect("standard layout");
    let mut ubar = vec![T::zero(); u.len()];
    let mut ins: Vec<&[T]> = Vec::with_capacity(6);
    for t0 in (0..blk).step_by(TILE) {
        let len = TILE.min(blk - t0);
        let at = |b: usize| b * blk + t0..b * blk + t0 + len;
        for (d, terms) in slots.plan().iter().enumerate() {
            let yb = &ybar[at(d)];
            if yb.iter().all(|v| v.is_zero()) {
                continue;
            }
            for term in terms {
                let c = T::from_f64(term.coef);
                let k = term.order;
                ins.clear();
                ins.extend(term.blocks.iter().map(|&b| &u[at(b)]));
                accumulate(&mut ubar[at(0)], c, yb, Some(&sig[k + 1][t0..t0 + len]), &ins);
                // a block occurring r times receives r identical contributions
                for (p, &bp) in term.blocks.iter().enumerate() {
                    if term.blocks[..p].contains(&bp) {
                        continue;
                    }
                    let r = term.blocks.iter().filter(|&&b| b == bp).count();
                    ins.clear();
                    ins.extend(
                        term.blocks
                            .iter()
                            .enumerate()
                            .filter(|&(q, _)| q != p)
                            .map(|(_, &b)| &u[at(b)]),
                    );
                    let cr = c * T::from_f64(r as f64);
                    accumulate(&mut ubar[at(bp)], cr, yb, Some(&sig[k][t0..t0 + len]), &ins);
                }
            }
        }
    }
    Array2::from_shape_vec(pre.data.raw_dim(), ubar).expect("shape")
}

/// Values of every output slot at every point, slot-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSlots {
    n_slots: usize,
    n_points: usize,
    values: Vec<f64>,
}

impl OutputSlots {
    pub fn new(n_slots: usize, n_points: usize) -> Self {
        OutputSlots {
            n_slots,
            n_points,
            values: vec![0.0; n_slots * n_points],
        }
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn get(&self, slot: usize, point: usize) -> f64 {
        self.values[slot * self.n_points + point]
    }

    pub fn set(&mut self, slot: usize, point: usize, v: f64) {
        self.values[slot * self.n_points + point] = v;
    }

    /// All slot values of one point, in slot order.
    pub fn point_values(&self, point: usize) -> Vec<f64> {
        (0..self.n_slots).map(|k| self.get(k, point)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn write_chunk<T: Real>(&mut self, range: &Range<usize>, out: &SlotBatch<T>) {
        for k in 0..self.n_slots {
            for (row, i) in range.clone().enumerate() {
                self.set(k, i, out.get(k, row, 0).as_f64());
            }
        }
    }
}

/// A cost `E = (1/N) Σ_i c_i(slots_i)` that is a sum of per-point terms.
pub trait CostFunctional: Sync {
    /// Returns `c_i` and, if requested, writes `∂c_i/∂slot_k` into `grad`.
    fn point_cost(&self, point: usize, slots: &[f64], grad: Option<&mut [f64]>) -> f64;
}

/// `E = (1/N) Σ v²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanSquaredValue;

impl CostFunctional for MeanSquaredValue {
    fn point_cost(&self, _point: usize, slots: &[f64], grad: Option<&mut [f64]>) -> f64 {
        if let Some(g) = grad {
            g.fill(0.0);
            g[0] = 2.0 * slots[0];
        }
        slots[0] * slots[0]
    }
}

/// Scheduling of chunked evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub exec: Exec,
    pub chunk: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            exec: Exec::default(),
            chunk: DEFAULT_CHUNK,
        }
    }
}

impl EvalOptions {
    pub fn sequential() -> Self {
        EvalOptions {
            exec: Exec::Sequential,
            ..Self::default()
        }
    }
}

struct Tape<T> {
    inputs: Vec<SlotBatch<T>>,
    pre: Vec<SlotBatch<T>>,
    sig: Vec<Vec<Vec<T>>>,
}

fn check_weights<T: Real>(weights: &WeightSet<T>, n: usize) -> Result<()> {
    let t = weights.topology();
    if t.input() != n {
        return Err(Error::Shape(format!(
            "network input width {} for {n}-dimensional points",
            t.input()
        )));
    }
    if *t.widths().last().unwrap() != 1 {
        return Err(Error::Shape("network output width must be 1".into()));
    }
    Ok(())
}

fn forward_chunk<T: Real>(
    input: SlotBatch<T>,
    weights: &WeightSet<T>,
    slots: &SlotSet,
    polys: &SigmoidPolys,
    keep: bool,
) -> Result<(SlotBatch<T>, Option<Tape<T>>)> {
    let n_layers = weights.layers.len();
    let orders = slots.max_order() + if keep { 2 } else { 1 };
    let mut tape = Tape {
        inputs: Vec::new(),
        pre: Vec::new(),
        sig: Vec::new(),
    };
    let mut x = input;
    for (l, layer) in weights.layers.iter().enumerate() {
        let u = affine_propagate(&x, layer)?;
        if keep {
            tape.inputs.push(x);
        }
        if l + 1 == n_layers {
            return Ok((u, keep.then_some(tape)));
        }
        let sig = sigma_table(&u, polys, orders);
        x = activate(&u, &sig, slots);
        if keep {
            tape.pre.push(u);
            tape.sig.push(sig);
        }
    }
    unreachable!("weight set has at least one layer")
}

/// Runs the extended forward pass and returns every output slot at every
/// point.
pub fn forward<T: Real>(
    points: &PointCloud,
    directions: &DirectionField,
    weights: &WeightSet<T>,
    slots: &SlotSet,
    opts: EvalOptions,
) -> Result<OutputSlots> {
    check_weights(weights, points.dim())?;
    let polys = SigmoidPolys::default();
    let ranges = chunk_ranges(points.len(), opts.chunk);
    let parts = opts.exec.map_chunks(&ranges, |r| -> Result<SlotBatch<T>> {
        let x0 = init_input_slots(points, directions, slots, r)?;
        Ok(forward_chunk(x0, weights, slots, &polys, false)?.0)
    });
    let mut out = OutputSlots::new(slots.len(), points.len());
    for (r, part) in ranges.iter().zip(parts) {
        out.write_chunk(r, &part?);
    }
    Ok(out)
}

/// Gradient of a cost with respect to every parameter.
#[derive(Debug, Clone)]
pub struct CostGradient<T> {
    pub cost: f64,
    pub gradient: WeightSet<T>,
    pub outputs: OutputSlots,
}

/// Evaluates `E` and `∂E/∂w` by a forward pass followed by the exact adjoint
/// of every affine and activation step.
pub fn cost_gradient<T: Real, C: CostFunctional + ?Sized>(
    points: &PointCloud,
    directions: &DirectionField,
    weights: &WeightSet<T>,
    slots: &SlotSet,
    cost: &C,
    opts: EvalOptions,
) -> Result<CostGradient<T>> {
    if points.is_empty() {
        return Err(Error::EmptyCost);
    }
    check_weights(weights, points.dim())?;
    let polys = SigmoidPolys::default();
    let inv_n = 1.0 / points.len() as f64;
    let ranges = chunk_ranges(points.len(), opts.chunk);
    let parts = opts.exec.map_chunks(&ranges, |r| {
        chunk_gradient(points, directions, weights, slots, cost, &polys, r, inv_n)
    });

    let mut gradient = WeightSet::zeros(&weights.topology());
    let mut total = 0.0;
    let mut outputs = OutputSlots::new(slots.len(), points.len());
    for (r, part) in ranges.iter().zip(parts) {
        let (c, g, out) = part?;
        total += c;
        gradient.add_assign(&g);
        outputs.write_chunk(r, &out);
    }
    Ok(CostGradient {
        cost: total * inv_n,
        gradient,
        outputs,
    })
}

#[allow(clippy::too_many_arguments)]
fn chunk_gradient<T: Real, C: CostFunctional + ?Sized>(
    points: &PointCloud,
    directions: &DirectionField,
    weights: &WeightSet<T>,
    slots: &SlotSet,
    cost: &C,
    polys: &SigmoidPolys,
    range: Range<usize>,
    inv_n: f64,
) -> Result<(f64, WeightSet<T>, SlotBatch<T>)> {
    let x0 = init_input_slots(points, directions, slots, range.clone())?;
    let (out, tape) = forward_chunk(x0, weights, slots, polys, true)?;
    let tape = tape.expect("tape requested");
    let np = range.len();
    let ns = slots.len();

    let mut seeds = Array2::<T>::zeros((ns * np, 1));
    let mut vals = vec![0.0; ns];
    let mut grad = vec![0.0; ns];
    let mut sum = 0.0;
    for (row, i) in range.enumerate() {
        for (k, v) in vals.iter_mut().enumerate() {
            *v = out.get(k, row, 0).as_f64();
        }
        sum += cost.point_cost(i, &vals, Some(&mut grad));
        for (k, g) in grad.iter().enumerate() {
            seeds[(k * np + row, 0)] = T::from_f64(g * inv_n);
        }
    }

    let mut gradient = WeightSet::zeros(&weights.topology());
    let n_layers = weights.layers.len();
    let mut ubar = seeds;
    for l in (0..n_layers).rev() {
        let x = &tape.inputs[l];
        let g = &mut gradient.layers[l];
        g.w = ubar.t().dot(&x.data);
        g.b = ubar.slice(s![0..np, ..]).sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        let xbar = ubar.dot(&weights.layers[l].w);
        ubar = activate_adjoint(&tape.pre[l - 1], &tape.sig[l - 1], slots, &xbar);
    }
    Ok((sum, gradient, out))
}

/// Plain network output `v(x)` at every point (no derivative slots).
pub fn evaluate<T: Real>(weights: &WeightSet<T>, points: &PointCloud, opts: EvalOptions) -> Result<Vec<f64>> {
    check_weights(weights, points.dim())?;
    let n = points.dim();
    let ranges = chunk_ranges(points.len(), opts.chunk.max(1024));
    let parts = opts.exec.map_chunks(&ranges, |r| {
        let mut x = Array2::<T>::zeros((r.len(), n));
        for (row, i) in r.clone().enumerate() {
            for (c, &v) in points.point(i).iter().enumerate() {
                x[(row, c)] = T::from_f64(v);
            }
        }
        let last = weights.layers.len() - 1;
        for (l, layer) in weights.layers.iter().enumerate() {
            let mut u = x.dot(&layer.w.t());
            u.rows_mut().into_iter().for_each(|mut row| row += &layer.b);
            if l < last {
                u.mapv_inplace(super::sigmoid::sigmoid);
            }
            x = u;
        }
        x.column(0).iter().map(|v| v.as_f64()).collect::<Vec<f64>>()
    });
    Ok(parts.into_iter().flatten().collect())
}
