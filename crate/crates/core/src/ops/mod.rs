//! Candidate operations of the search space: selection, fusion,
//! aggregation and readout.

mod aggregate;
mod fusion;
mod kinds;
mod readout;

pub use aggregate::{
    aggregate, edges_with_self_loops, expc, gat, gat_attention, gcn, gen, gin, mf, AggParams,
    ExpcParams, GatParams, GatVariant, GcnParams, GenParams, GinParams, MfParams, Mlp, OpConfig,
};
pub use fusion::{fuse, select, FusionParams, LstmParams};
pub use kinds::{AggOp, FusionOp, OpKind, OpModule, ReadoutOp, SelectionOp};
pub use readout::readout;

#[cfg(test)]
mod tests;
