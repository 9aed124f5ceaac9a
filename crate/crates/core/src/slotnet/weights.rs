use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;

/// Layer widths `n, h₁, …, h_k, 1`. Every layer except input and output
/// applies the sigmoid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    widths: Vec<usize>,
}

impl Topology {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config("topology", "needs at least input and output layers"));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::config("topology", "output width must be 1"));
        }
        if widths.contains(&0) {
            return Err(Error::config("topology", "layer widths must be positive"));
        }
        Ok(Topology { widths })
    }

    /// `n` inputs, `depth` hidden layers of `width`, one output.
    pub fn uniform(n: usize, width: usize, depth: usize) -> Self {
        let mut widths = vec![n];
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(1);
        Topology { widths }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let widths = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::config("topology", format!("bad width `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Topology::new(widths)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input(&self) -> usize {
        self.widths[0]
    }

    /// Number of weight layers (affine maps).
    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        write!(f, "{}", s.join(","))
    }
}

/// Weights `W` (next × prev) and thresholds `b` (next) of one affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

/// All parameters of a perceptron. Also used to hold gradients and RProp
/// step sizes, which share the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> WeightSet<T> {
    pub fn zeros(topology: &Topology) -> Self {
        Self::filled(topology, T::zero())
    }

    pub fn filled(topology: &Topology, v: T) -> Self {
        let layers = topology
            .widths()
            .windows(2)
            .map(|w| Layer {
                w: Array2::from_elem((w[1], w[0]), v),
                b: Array1::from_elem(w[1], v),
            })
            .collect();
        WeightSet { layers }
    }

    pub fn topology(&self) -> Topology {
        let mut widths = vec![self.layers[0].w.ncols()];
        widths.extend(self.layers.iter().map(|l| l.w.nrows()));
        Topology { widths }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in canonical order: per layer, `W` row-major then `b`.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    /// Parameter `index` in canonical order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut T {
        for l in self.layers.iter_mut() {
            if index < l.w.len() {
                let cols = l.w.ncols();
                return &mut l.w[(index / cols, index % cols)];
            }
            index -= l.w.len();
            if index < l.b.len() {
                return &mut l.b[index];
            }
            index -= l.b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn add_assign(&mut self, other: &WeightSet<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, k: T) {
        for v in self.iter_mut() {
            *v *= k;
        }
    }

    pub fn max_abs(&self) -> T {
        self.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Real>(&self) -> WeightSet<U> {
        WeightSet {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: l.w.mapv(|v| U::from_f64(v.as_f64())),
                    b: l.b.mapv(|v| U::from_f64(v.as_f64())),
                })
                .collect(),
        }
    }

    /// Serializes in the weights file format. Values use the shortest
    /// representation that parses back to the same bits.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "layers: {}; precision: {}\n",
            self.topology(),
            T::BITS
        );
        for v in self.iter() {
            writeln!(out, "{v}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty weights file".into()))?;
        let (topology, bits) = parse_header(header)?;
        if bits != T::BITS {
            return Err(Error::Format(format!(
                "file stores {bits}-bit values, expected {}",
                T::BITS
            )));
        }
        Self::read_values(&topology, &mut lines)
    }

    /// Reads `n_params` values, one per line, into a fresh set.
    pub(crate) fn read_values<'a>(
        topology: &Topology,
        lines: &mut impl Iterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut ws = WeightSet::zeros(topology);
        let total = ws.n_params();
        for (i, slot) in ws.iter_mut().enumerate() {
            let line = lines.next().ok_or_else(|| {
                Error::Format(format!("expected {total} values, found {i}"))
            })?;
            *slot = line
                .trim()
                .parse::<T>()
                .map_err(|_| Error::Format(format!("bad value `{line}` at index {i}")))?;
        }
        Ok(ws)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Parses `layers: 2,8,1; precision: 64`.
pub fn parse_header(header: &str) -> Result<(Topology, u32)> {
    let mut topology = None;
    let mut bits = None;
    for part in header.split(';') {
        let (k, v) = part
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("bad header `{header}`")))?;
        match k.trim() {
            "layers" => topology = Some(Topology::parse(v)?),
            "precision" => {
                bits = Some(
                    v.trim()
                        .parse::<u32>()
                        .map_err(|_| Error::Format(format!("bad precision `{v}`")))?,
                )
            }
            other => return Err(Error::Format(format!("unknown header key `{other}`"))),
        }
    }
    match (topology, bits) {
        (Some(t), Some(b)) if b == 32 || b == 64 => Ok((t, b)),
        _ => Err(Error::Format(format!("incomplete header `{header}`"))),
    }
}

/// Uniform weights in `±2/√senders` and thresholds in `±0.1`.
pub fn init_weights<T: Real>(topology: &Topology, seed: u64) -> WeightSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = WeightSet::zeros(topology);
    for layer in ws.layers.iter_mut() {
        let bound = 2.0 / (layer.w.ncols() as f64).sqrt();
        for v in layer.w.iter_mut() {
            *v = T::from_f64(rng.gen_range(-bound..=bound));
        }
        for v in layer.b.iter_mut() {
            *v = T::from_f64(rng.gen_range(-0.1..=0.1));
        }
    }
    ws
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn init_ranges() {
        let t = Topology::uniform(2, 96, 6);
        let ws = init_weights::<f64>(&t, 7);
        let bound = 2.0 / 96f64.sqrt();
        assert!((bound - 0.2041).abs() < 1e-4);
        for l in &ws.layers[1..] {
            assert!(l.w.iter().all(|v| v.abs() <= bound));
            assert!(l.w.iter().any(|v| v.abs() > 0.9 * bound));
        }
        assert!(ws.layers[0].w.iter().all(|v| v.abs() <= 2.0 / 2f64.sqrt()));
        for l in &ws.layers {
            assert!(l.b.iter().all(|v| v.abs() <= 0.1));
        }
    }

    #[test]
    fn init_is_seeded() {
        let t = Topology::uniform(3, 10, 2);
        assert_eq!(init_weights::<f64>(&t, 3), init_weights::<f64>(&t, 3));
        assert_ne!(init_weights::<f64>(&t, 3), init_weights::<f64>(&t, 4));
    }

    #[test]
    fn topology_validation() {
        assert!(Topology::parse("2,96,96,1").is_ok());
        assert!(Topology::parse("2,96,2").is_err());
        assert!(Topology::parse("2").is_err());
        assert!(Topology::parse("2,x,1").is_err());
        assert_eq!(Topology::parse("2,8,8,1").unwrap().n_params(), 8 * 3 + 8 * 9 + 9);
    }

    #[test]
    fn header_errors() {
        assert!(WeightSet::<f64>::from_text("").is_err());
        assert!(WeightSet::<f64>::from_text("layers: 2,1; precision: 32\n1\n2\n3\n").is_err());
        assert!(WeightSet::<f64>::from_text("layers: 2,1; precision: 64\n1\n2\n").is_err());
    }

    proptest! {
        #[test]
        fn text_roundtrip_is_bit_exact(seed in any::<u64>(), scale in 1e-30f64..1e10) {
            let t = Topology::new(vec![2, 3, 4, 1]).unwrap();
            let mut ws = init_weights::<f64>(&t, seed);
            ws.scale(scale);
            let back = WeightSet::<f64>::from_text(&ws.to_text()).unwrap();
            for (a, b) in ws.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            let ws32: WeightSet<f32> = ws.cast();
            let back32 = WeightSet::<f32>::from_text(&ws32.to_text()).unwrap();
            for (a, b) in ws32.iter().zip(back32.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
