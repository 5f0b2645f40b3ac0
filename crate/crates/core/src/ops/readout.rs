use std::sync::Arc;

use super::ReadoutOp;
use crate::autodiff::{SegmentMode, Tape, Var};
use crate::error::Result;

impl ReadoutOp {
    pub fn mode(self) -> SegmentMode {
        match self {
            ReadoutOp::GlobalMean => SegmentMode::Mean,
            ReadoutOp::GlobalMax => SegmentMode::Max,
            ReadoutOp::GlobalSum => SegmentMode::Sum,
        }
    }
}

/// Graph-level embeddings (`num_graphs x d`) from node states.
pub fn readout(
    t: &mut Tape,
    op: ReadoutOp,
    h: Var,
    graph_ids: &Arc<[usize]>,
    num_graphs: usize,
) -> Result<Var> {
    t.segment_reduce(h, graph_ids, num_graphs, op.mode())
}
