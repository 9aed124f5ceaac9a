//! Slot labels and the activation plan built from them.

use std::fmt;

use smallvec::SmallVec;

use super::partitions::PartitionTable;
use crate::error::{Error, Result};

/// Coordinate part of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoordOp {
    Identity,
    /// `∂/∂x_j`
    First(usize),
    /// `∂²/∂x_j²`
    Second(usize),
}

/// Which random direction a directional derivative runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Xi,
    Zeta,
}

/// Directional part of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DirOp {
    Identity,
    /// `∂^m/∂ξ^m` or `∂^m/∂ζ^m`, `m ∈ 1..=4`.
    Along(Direction, usize),
}

impl CoordOp {
    pub fn order(self) -> usize {
        match self {
            CoordOp::Identity => 0,
            CoordOp::First(_) => 1,
            CoordOp::Second(_) => 2,
        }
    }

    pub fn axis(self) -> Option<usize> {
        match self {
            CoordOp::Identity => None,
            CoordOp::First(j) | CoordOp::Second(j) => Some(j),
        }
    }

    fn with_order(axis: usize, order: usize) -> Self {
        match order {
            0 => CoordOp::Identity,
            1 => CoordOp::First(axis),
            2 => CoordOp::Second(axis),
            _ => unreachable!("coordinate order {order}"),
        }
    }
}

impl DirOp {
    pub fn order(self) -> usize {
        match self {
            DirOp::Identity => 0,
            DirOp::Along(_, m) => m,
        }
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            DirOp::Identity => None,
            DirOp::Along(d, _) => Some(d),
        }
    }

    fn with_order(dir: Direction, order: usize) -> Self {
        if order == 0 {
            DirOp::Identity
        } else {
            DirOp::Along(dir, order)
        }
    }
}

/// One derivative matrix carried through the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotLabel {
    pub coord: CoordOp,
    pub dir: DirOp,
}

impl SlotLabel {
    pub const VALUE: SlotLabel = SlotLabel {
        coord: CoordOp::Identity,
        dir: DirOp::Identity,
    };

    pub fn new(coord: CoordOp, dir: DirOp) -> Self {
        SlotLabel { coord, dir }
    }

    pub fn total_order(&self) -> usize {
        self.coord.order() + self.dir.order()
    }
}

impl fmt::Display for SlotLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.coord {
            CoordOp::Identity => write!(f, "v")?,
            CoordOp::First(j) => write!(f, "v_x{}", j + 1)?,
            CoordOp::Second(j) => write!(f, "v_x{0}x{0}", j + 1)?,
        }
        if let DirOp::Along(d, m) = self.dir {
            let sym = match d {
                Direction::Xi => "xi",
                Direction::Zeta => "zeta",
            };
            write!(f, "_{sym}{m}")?;
        }
        Ok(())
    }
}

/// One term of the chain-rule expansion of an output slot:
/// `coef · σ^(order)(u) · Π in[blocks]`.
#[derive(Debug, Clone)]
pub struct Term {
    pub coef: f64,
    pub order: usize,
    pub blocks: SmallVec<[usize; 6]>,
}

/// The ordered slot set for dimension `n` and cost order `s`, together with
/// the precomputed activation expansion of each slot.
#[derive(Debug, Clone)]
pub struct SlotSet {
    n: usize,
    s: usize,
    labels: Vec<SlotLabel>,
    plan: Vec<Vec<Term>>,
}

/// Enumerates the `(2n+1)(2s+1)` slots for dimension `n ∈ 2..=5` and cost
/// order `s ∈ 2..=4`.
pub fn enumerate_slots(n: usize, s: usize) -> Result<SlotSet> {
    if !(2..=5).contains(&n) {
        return Err(Error::Dimension(n));
    }
    if !(2..=4).contains(&s) {
        return Err(Error::CostOrder(s));
    }
    Ok(SlotSet::build(n, s))
}

impl SlotSet {
    /// Builds the slot set without range checks (any `n ≥ 1`, `s ≤ 4`).
    pub fn build(n: usize, s: usize) -> Self {
        assert!(n >= 1 && s <= 4);
        let mut labels = Vec::with_capacity((2 * n + 1) * (2 * s + 1));
        let mut coords = vec![CoordOp::Identity];
        for j in 0..n {
            coords.push(CoordOp::First(j));
            coords.push(CoordOp::Second(j));
        }
        let mut dirs = vec![DirOp::Identity];
        for d in [Direction::Xi, Direction::Zeta] {
            for m in 1..=s {
                dirs.push(DirOp::Along(d, m));
            }
        }
        for &c in &coords {
            for &d in &dirs {
                labels.push(SlotLabel::new(c, d));
            }
        }
        let mut set = SlotSet {
            n,
            s,
            labels,
            plan: Vec::new(),
        };
        set.plan = set.build_plan(&PartitionTable::standard());
        set
    }

    fn build_plan(&self, table: &PartitionTable) -> Vec<Vec<Term>> {
        self.labels
            .iter()
            .map(|label| {
                let (a, b) = (label.coord.order(), label.dir.order());
                let axis = label.coord.axis().unwrap_or(0);
                let dir = label.dir.direction().unwrap_or(Direction::Xi);
                table
                    .get(a, b)
                    .iter()
                    .map(|p| Term {
                        coef: p.multiplicity as f64,
                        order: p.blocks.len(),
                        blocks: p
                            .blocks
                            .iter()
                            .map(|&(ba, bb)| {
                                self.index(SlotLabel::new(
                                    CoordOp::with_order(axis, ba),
                                    DirOp::with_order(dir, bb),
                                ))
                                .expect("slot set is closed under sub-multisets")
                            })
                            .collect(),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.s
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[SlotLabel] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> SlotLabel {
        self.labels[i]
    }

    /// Position of `label`, or `None` when it is outside the set.
    pub fn index(&self, label: SlotLabel) -> Option<usize> {
        let ci = match label.coord {
            CoordOp::Identity => 0,
            CoordOp::First(j) if j < self.n => 1 + 2 * j,
            CoordOp::Second(j) if j < self.n => 2 + 2 * j,
            _ => return None,
        };
        let di = match label.dir {
            DirOp::Identity => 0,
            DirOp::Along(Direction::Xi, m) if (1..=self.s).contains(&m) => m,
            DirOp::Along(Direction::Zeta, m) if (1..=self.s).contains(&m) => self.s + m,
            _ => return None,
        };
        Some(ci * (2 * self.s + 1) + di)
    }

    /// Index of the slot, panicking if absent.
    pub fn at(&self, coord: CoordOp, dir: DirOp) -> usize {
        self.index(SlotLabel::new(coord, dir))
            .unwrap_or_else(|| panic!("slot {} not in set", SlotLabel::new(coord, dir)))
    }

    /// Index of the value slot (always 0).
    pub fn value_index(&self) -> usize {
        0
    }

    pub fn plan(&self) -> &[Vec<Term>] {
        &self.plan
    }

    /// Highest σ derivative needed by the forward pass.
    pub fn max_order(&self) -> usize {
        self.labels
            .iter()
            .map(SlotLabel::total_order)
            .max()
            .unwrap_or(0)
    }
}
