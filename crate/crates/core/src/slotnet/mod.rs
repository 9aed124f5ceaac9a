//! The extended perceptron.
//!
//! Besides the plain value `v`, the network propagates one table per
//! derivative of `v` that the residual needs ("slots"): coordinate
//! derivatives up to second order along each axis, combined with directional
//! derivatives up to fourth order along the per-point directions ξ and ζ.
//! Through affine layers every slot is multiplied by the weight matrix;
//! through the sigmoid the slots combine by the multiset form of the
//! Faà di Bruno formula. [`cost_gradient`] runs the exact adjoint of both
//! steps.

mod engine;
mod partitions;
mod sigmoid;
mod slots;
mod weights;

pub use engine::{
    activation_propagate, affine_propagate, cost_gradient, evaluate, forward, init_input_slots,
    CostFunctional, CostGradient, EvalOptions, MeanSquaredValue, OutputSlots, SlotBatch,
};
pub use partitions::{Block, PartitionTable, PartitionType};
pub use sigmoid::{sigmoid, SigmoidPolys, MAX_DERIVATIVE};
pub use slots::{enumerate_slots, CoordOp, DirOp, Direction, SlotLabel, SlotSet, Term};
pub use weights::{init_weights, parse_header, Layer, Topology, WeightSet};
