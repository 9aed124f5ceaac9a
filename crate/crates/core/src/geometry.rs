//! Collocation grids on the unit n-ball, per-point direction pairs and their
//! renormalization, and uniform test sampling.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::slotnet::{DirOp, Direction, OutputSlots, SlotSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Surface,
    Interior,
}

impl PointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PointKind::Surface => "surface",
            PointKind::Interior => "interior",
        }
    }
}

/// Points in ℝⁿ stored row-major, each tagged surface or interior.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    n: usize,
    coords: Vec<f64>,
    kinds: Vec<PointKind>,
}

impl PointCloud {
    pub fn new(n: usize) -> Self {
        PointCloud {
            n,
            coords: Vec::new(),
            kinds: Vec::new(),
        }
    }

    pub fn from_points(n: usize, points: &[Vec<f64>], kind: PointKind) -> Self {
        let mut pc = PointCloud::new(n);
        for p in points {
            pc.push(p, kind);
        }
        pc
    }

    pub fn push(&mut self, p: &[f64], kind: PointKind) {
        assert_eq!(p.len(), self.n, "point dimension");
        self.coords.extend_from_slice(p);
        self.kinds.push(kind);
    }

    pub fn extend(&mut self, other: &PointCloud) {
        assert_eq!(self.n, other.n);
        self.coords.extend_from_slice(&other.coords);
        self.kinds.extend_from_slice(&other.kinds);
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.n..(i + 1) * self.n]
    }

    pub fn kind(&self, i: usize) -> PointKind {
        self.kinds[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.n)
    }

    pub fn count(&self, kind: PointKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }

    pub fn radius(&self, i: usize) -> f64 {
        norm(self.point(i))
    }

    /// CSV with header `x1,…,xn,kind`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.n).map(|j| format!("x{j}")).collect();
        writeln!(w, "{},kind", header.join(","))?;
        for (i, p) in self.iter().enumerate() {
            let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", row.join(","), self.kinds[i].as_str())?;
        }
        Ok(())
    }
}

/// The two random directions attached to every collocation point.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionField {
    n: usize,
    xi: Vec<f64>,
    zeta: Vec<f64>,
}

impl DirectionField {
    pub fn from_vectors(n: usize, xi: Vec<f64>, zeta: Vec<f64>) -> Self {
        assert_eq!(xi.len(), zeta.len());
        assert_eq!(xi.len() % n, 0);
        DirectionField { n, xi, zeta }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.xi.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn xi(&self, i: usize) -> &[f64] {
        &self.xi[i * self.n..(i + 1) * self.n]
    }

    pub fn zeta(&self, i: usize) -> &[f64] {
        &self.zeta[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, d: Direction, i: usize) -> &[f64] {
        match d {
            Direction::Xi => self.xi(i),
            Direction::Zeta => self.zeta(i),
        }
    }

    pub fn get_mut(&mut self, d: Direction, i: usize) -> &mut [f64] {
        let n = self.n;
        match d {
            Direction::Xi => &mut self.xi[i * n..(i + 1) * n],
            Direction::Zeta => &mut self.zeta[i * n..(i + 1) * n],
        }
    }

    /// Multiplies direction `d` of point `i` by `k`.
    pub fn scale(&mut self, d: Direction, i: usize, k: f64) {
        self.get_mut(d, i).iter_mut().for_each(|v| *v *= k);
    }
}

/// Grid parameters: surface angular spacing `theta`, interior lattice
/// spacing `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub theta: f64,
    pub lambda: f64,
    pub seed: u64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_vector(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Uniformly distributed unit vector.
pub fn random_unit(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian_vector(rng, n);
        let r = norm(&v);
        if r > 1e-12 {
            v.iter_mut().for_each(|x| *x /= r);
            return v;
        }
    }
}

/// Rotation taking unit vector `from` to unit vector `to` within their common
/// plane, identity on its orthogonal complement.
#[derive(Debug, Clone)]
pub struct PlaneRotation {
    u: Vec<f64>,
    w: Vec<f64>,
    cos: f64,
    sin: f64,
}

impl PlaneRotation {
    pub fn new(from: &[f64], to: &[f64]) -> Self {
        let c = dot(from, to).clamp(-1.0, 1.0);
        let mut w: Vec<f64> = to.iter().zip(from).map(|(b, a)| b - c * a).collect();
        let s = norm(&w);
        if s < 1e-14 {
            // parallel: identity (antiparallel is measure zero for random input)
            w.iter_mut().for_each(|x| *x = 0.0);
            return PlaneRotation {
                u: from.to_vec(),
                w,
                cos: 1.0,
                sin: 0.0,
            };
        }
        w.iter_mut().for_each(|x| *x /= s);
        PlaneRotation {
            u: from.to_vec(),
            w,
            cos: c,
            sin: s,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (xu, xw) = (dot(x, &self.u), dot(x, &self.w));
        let a = (self.cos - 1.0) * xu - self.sin * xw;
        let b = (self.cos - 1.0) * xw + self.sin * xu;
        x.iter()
            .zip(&self.u)
            .zip(&self.w)
            .map(|((xi, ui), wi)| xi + a * ui + b * wi)
            .collect()
    }
}

/// Random orthogonal matrix (rows), by Gram–Schmidt on Gaussian rows.
fn random_orthogonal(rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v = gaussian_vector(rng, n);
        for r in &rows {
            let d = dot(&v, r);
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= d * y);
        }
        let len = norm(&v);
        if len > 1e-8 {
            v.iter_mut().for_each(|x| *x /= len);
            rows.push(v);
        }
    }
    rows
}

/// Points on the sphere of radius `rad` in `d` ambient dimensions, by
/// latitude slicing: polar angles at spacing ≈ θ, each slice a sphere of one
/// dimension less, circles sampled at arc spacing ≤ θ.
fn fill_sphere(d: usize, rad: f64, theta: f64, rng: &mut impl Rng, out: &mut Vec<Vec<f64>>) {
    if rad < 1e-12 {
        out.push(vec![0.0; d]);
        return;
    }
    if d == 2 {
        let count = ((2.0 * PI * rad / theta) - 1e-9).ceil().max(1.0) as usize;
        let phase = rng.gen_range(0.0..2.0 * PI);
        for k in 0..count {
            let a = phase + 2.0 * PI * k as f64 / count as f64;
            out.push(vec![rad * a.cos(), rad * a.sin()]);
        }
        return;
    }
    let m = ((PI * rad / theta).round() as usize).max(1);
    for k in 0..=m {
        let phi = PI * k as f64 / m as f64;
        let mut sub = Vec::new();
        fill_sphere(d - 1, rad * phi.sin(), theta, rng, &mut sub);
        for p in sub {
            let mut q = Vec::with_capacity(d);
            q.push(rad * phi.cos());
            q.extend(p);
            out.push(q);
        }
    }
}

/// Quasi-uniform points on the unit sphere `S^{n−1}` with neighbor angular
/// distance ≈ θ. On the circle this is `⌈2π/θ⌉ + 1` equally spaced points.
pub fn surface_grid(spec: &GridSpec) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5355_5246);
    let n = spec.n;
    let mut raw = Vec::new();
    if n == 2 {
        let count = (2.0 * PI / spec.theta - 1e-9).ceil() as usize + 1;
        let phase = rng.gen_range(0.0..2.0 * PI);
        for k in 0..count {
            let a = phase + 2.0 * PI * k as f64 / count as f64;
            raw.push(vec![a.cos(), a.sin()]);
        }
    } else {
        fill_sphere(n, 1.0, spec.theta, &mut rng, &mut raw);
        let q = random_orthogonal(&mut rng, n);
        raw = raw
            .iter()
            .map(|p| q.iter().map(|row| dot(row, p)).collect())
            .collect();
    }
    let mut pc = PointCloud::new(n);
    for mut p in raw {
        let r = norm(&p);
        p.iter_mut().for_each(|x| *x /= r);
        pc.push(&p, PointKind::Surface);
    }
    pc
}

/// Rotated and shifted Cartesian lattice with spacing λ, restricted to the
/// open unit ball.
pub fn interior_grid(spec: &GridSpec) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x494e_5452);
    let n = spec.n;
    let lambda = spec.lambda;
    let k_max = (1.0 / lambda + 1e-9).floor() as i64;
    let side = (2 * k_max + 1) as usize;

    let from = random_unit(&mut rng, n);
    let to = random_unit(&mut rng, n);
    let rot = PlaneRotation::new(&from, &to);
    let shift: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(-lambda / 4.0..=lambda / 4.0))
        .collect();

    let mut pc = PointCloud::new(n);
    let mut idx = vec![0usize; n];
    let total = side.pow(n as u32);
    for _ in 0..total {
        let p: Vec<f64> = idx
            .iter()
            .map(|&k| (k as i64 - k_max) as f64 * lambda)
            .collect();
        let mut q = rot.apply(&p);
        q.iter_mut().zip(&shift).for_each(|(x, s)| *x += s);
        if norm(&q) < 1.0 {
            pc.push(&q, PointKind::Interior);
        }
        for d in idx.iter_mut() {
            *d += 1;
            if *d < side {
                break;
            }
            *d = 0;
        }
    }
    pc
}

/// Surface points followed by interior points.
pub fn collocation_grid(spec: &GridSpec) -> PointCloud {
    let mut pc = surface_grid(spec);
    pc.extend(&interior_grid(spec));
    pc
}

/// `count` random orthonormal pairs `(ξ_i, ζ_i)`: two uniform unit vectors
/// per point, orthonormalized by Gram–Schmidt. Nearly collinear draws are
/// redrawn.
pub fn direction_pairs(count: usize, n: usize, seed: u64) -> DirectionField {
    assert!(n >= 2, "direction pairs need n ≥ 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4449_5253);
    let mut xi = Vec::with_capacity(count * n);
    let mut zeta = Vec::with_capacity(count * n);
    for _ in 0..count {
        loop {
            let a = random_unit(&mut rng, n);
            let b = random_unit(&mut rng, n);
            let d = dot(&a, &b);
            let mut z: Vec<f64> = b.iter().zip(&a).map(|(bi, ai)| bi - d * ai).collect();
            if norm(&z) < 0.1 {
                continue;
            }
            // second pass restores orthogonality lost to cancellation
            let d2 = dot(&a, &z);
            z.iter_mut().zip(&a).for_each(|(zi, ai)| *zi -= d2 * ai);
            let len = norm(&z);
            z.iter_mut().for_each(|v| *v /= len);
            xi.extend(a);
            zeta.extend(z);
            break;
        }
    }
    DirectionField { n, xi, zeta }
}

/// Uniform samples in the unit n-ball.
pub fn ball_sample(n: usize, count: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4241_4c4c);
    let mut pc = PointCloud::new(n);
    for _ in 0..count {
        let dir = random_unit(&mut rng, n);
        let r = rng.gen::<f64>().powf(1.0 / n as f64);
        let p: Vec<f64> = dir.iter().map(|x| x * r).collect();
        pc.push(&p, PointKind::Interior);
    }
    pc
}

/// How many directions [`renormalize`] shrank.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenormStats {
    pub xi_scaled: usize,
    pub zeta_scaled: usize,
}

/// For every point and each of ξ, ζ: finds the largest output slot magnitude
/// `M` among slots with nonzero order along that direction; if `M` exceeds
/// `threshold`, divides the direction by `M^{1/k}` where `k` is the
/// directional order of the slot attaining `M`.
pub fn renormalize(
    directions: &mut DirectionField,
    outputs: &OutputSlots,
    slots: &SlotSet,
    threshold: f64,
) -> RenormStats {
    let mut stats = RenormStats::default();
    for d in [Direction::Xi, Direction::Zeta] {
        let members: Vec<(usize, usize)> = slots
            .labels()
            .iter()
            .enumerate()
            .filter_map(|(k, l)| match l.dir {
                DirOp::Along(dd, m) if dd == d => Some((k, m)),
                _ => None,
            })
            .collect();
        for i in 0..outputs.n_points() {
            let mut best = 0.0;
            let mut order = 1;
            for &(k, m) in &members {
                let v = outputs.get(k, i).abs();
                if v > best {
                    best = v;
                    order = m;
                }
            }
            if best > threshold {
                directions.scale(d, i, best.powf(-1.0 / order as f64));
                match d {
                    Direction::Xi => stats.xi_scaled += 1,
                    Direction::Zeta => stats.zeta_scaled += 1,
                }
            }
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, theta_div: f64, lambda: f64, seed: u64) -> GridSpec {
        GridSpec {
            n,
            theta: PI / theta_div,
            lambda,
            seed,
        }
    }

    #[test]
    fn surface_counts_near_reference() {
        let cases = [
            (2, 6.0, 13usize),
            (2, 8.0, 17),
            (3, 6.0, 51),
            (3, 8.0, 87),
            (4, 6.0, 154),
            (4, 8.0, 357),
            (5, 6.0, 399),
            (5, 8.0, 1217),
        ];
        for (n, div, reference) in cases {
            let got = surface_grid(&spec(n, div, 1.0 / 3.0, 1)).len();
            let rel = got as f64 / reference as f64;
            assert!((0.85..=1.15).contains(&rel), "n={n} θ=π/{div}: {got} vs {reference}");
        }
        assert_eq!(surface_grid(&spec(2, 6.0, 1.0 / 3.0, 1)).len(), 13);
        assert_eq!(surface_grid(&spec(2, 8.0, 1.0 / 3.0, 1)).len(), 17);
    }

    #[test]
    fn surface_points_on_sphere() {
        for n in 2..=5 {
            let pc = surface_grid(&spec(n, 6.0, 1.0 / 3.0, 9));
            for i in 0..pc.len() {
                assert!((pc.radius(i) - 1.0).abs() < 1e-12);
                assert_eq!(pc.kind(i), PointKind::Surface);
            }
        }
    }

    #[test]
    fn surface_nearest_neighbor_angle() {
        let pc = surface_grid(&spec(3, 6.0, 1.0 / 3.0, 2));
        let theta = PI / 6.0;
        let mut mean = 0.0;
        for i in 0..pc.len() {
            let mut best = f64::MAX;
            for j in 0..pc.len() {
                if i != j {
                    let c = dot(pc.point(i), pc.point(j)).clamp(-1.0, 1.0);
                    best = best.min(c.acos());
                }
            }
            mean += best;
        }
        mean /= pc.len() as f64;
        assert!(mean > 0.6 * theta && mean < 1.2 * theta, "mean {mean}");
    }

    #[test]
    fn interior_counts() {
        let mut counts = Vec::new();
        for seed in 0..20 {
            let c = interior_grid(&spec(2, 6.0, 1.0 / 3.0, seed)).len();
            assert!((22..=32).contains(&c), "seed {seed}: {c}");
            counts.push(c);
        }
        assert!(counts.iter().any(|&c| c != counts[0]));
        let c5 = interior_grid(&spec(5, 6.0, 1.0 / 3.0, 3)).len() as f64;
        assert!((c5 / 1137.0 - 1.0).abs() <= 0.15, "5D count {c5}");
    }

    #[test]
    fn interior_strictly_inside() {
        let pc = interior_grid(&spec(3, 6.0, 0.25, 5));
        assert!((0..pc.len()).all(|i| pc.radius(i) < 1.0));
    }

    #[test]
    fn rotation_is_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=5 {
            let a = random_unit(&mut rng, n);
            let b = random_unit(&mut rng, n);
            let rot = PlaneRotation::new(&a, &b);
            let moved = rot.apply(&a);
            for (x, y) in moved.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
            let pts: Vec<Vec<f64>> = (0..6).map(|_| gaussian_vector(&mut rng, n)).collect();
            let rot_pts: Vec<Vec<f64>> = pts.iter().map(|p| rot.apply(p)).collect();
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    let d0: f64 = norm(&pts[i].iter().zip(&pts[j]).map(|(a, b)| a - b).collect::<Vec<_>>());
                    let d1: f64 = norm(&rot_pts[i].iter().zip(&rot_pts[j]).map(|(a, b)| a - b).collect::<Vec<_>>());
                    assert!((d0 - d1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn grids_are_seeded() {
        let s = spec(3, 8.0, 0.25, 42);
        assert_eq!(collocation_grid(&s), collocation_grid(&s));
        assert_eq!(direction_pairs(50, 3, 1), direction_pairs(50, 3, 1));
        assert_ne!(direction_pairs(50, 3, 1), direction_pairs(50, 3, 2));
    }

    #[test]
    fn direction_pairs_orthonormal() {
        for n in 2..=5 {
            let d = direction_pairs(200, n, 3);
            for i in 0..d.len() {
                assert!((norm(d.xi(i)) - 1.0).abs() < 1e-12);
                assert!((norm(d.zeta(i)) - 1.0).abs() < 1e-12);
                assert!(dot(d.xi(i), d.zeta(i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn direction_pairs_2d_are_rotated_by_90_degrees() {
        let d = direction_pairs(100, 2, 8);
        for i in 0..d.len() {
            let (x, z) = (d.xi(i), d.zeta(i));
            let rot = [-x[1], x[0]];
            let same = (z[0] - rot[0]).abs() < 1e-12 && (z[1] - rot[1]).abs() < 1e-12;
            let opp = (z[0] + rot[0]).abs() < 1e-12 && (z[1] + rot[1]).abs() < 1e-12;
            assert!(same || opp);
        }
    }

    #[test]
    fn direction_isotropy() {
        let d = direction_pairs(100_000, 3, 5);
        let mut mean = [0.0; 3];
        for i in 0..d.len() {
            for (m, v) in mean.iter_mut().zip(d.xi(i)) {
                *m += v / d.len() as f64;
            }
        }
        assert!(norm(&mean) <= 0.02);
    }

    #[test]
    fn ball_sample_is_uniform_in_radius() {
        for n in [2, 5] {
            let pc = ball_sample(n, 100_000, 4);
            let mut mean = 0.0;
            for i in 0..pc.len() {
                let r = pc.radius(i);
                assert!(r <= 1.0);
                mean += r.powi(n as i32);
            }
            mean /= pc.len() as f64;
            assert!((mean - 0.5).abs() <= 0.01, "n={n}: {mean}");
        }
        assert_eq!(ball_sample(2, 4000, 0).len(), 4000);
    }

    #[test]
    fn csv_dump_header() {
        let pc = collocation_grid(&spec(2, 6.0, 1.0 / 3.0, 0));
        let mut buf = Vec::new();
        pc.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x1,x2,kind"));
        assert_eq!(lines.clone().count(), pc.len());
        assert!(lines.next().unwrap().ends_with(",surface"));
    }

    #[test]
    fn renormalize_formula() {
        let slots = SlotSet::build(2, 4);
        let mut out = OutputSlots::new(slots.len(), 2);
        let k4 = slots.at(crate::slotnet::CoordOp::Identity, DirOp::Along(Direction::Xi, 4));
        let k1 = slots.at(crate::slotnet::CoordOp::Identity, DirOp::Along(Direction::Xi, 1));
        out.set(k4, 0, -16.0);
        out.set(k1, 1, 3.9);
        let mut dirs = DirectionField::from_vectors(2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]);
        let stats = renormalize(&mut dirs, &out, &slots, 4.0);
        assert_eq!(stats, RenormStats { xi_scaled: 1, zeta_scaled: 0 });
        assert!((dirs.xi(0)[0] - 0.5).abs() < 1e-15);
        assert_eq!(dirs.xi(1), &[0.0, 1.0]);
    }
}
