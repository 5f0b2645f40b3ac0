use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{AggOp, FusionOp, ReadoutOp};

/// One discrete SFA block. `select[j]` is 1 when input `H^j` feeds the
/// block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockChoice {
    pub select: Vec<u8>,
    pub fusion: FusionOp,
    pub agg: AggOp,
}

impl BlockChoice {
    pub fn selected(&self, j: usize) -> bool {
        self.select.get(j) == Some(&1)
    }
}

/// A derived architecture: `num_blocks` SFA blocks and one readout.
/// Block `k` (0-based) chooses among the `k + 1` inputs `H^0..H^k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchEncoding {
    pub num_blocks: usize,
    pub blocks: Vec<BlockChoice>,
    pub readout: ReadoutOp,
}

impl ArchEncoding {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.num_blocks == 0 {
            return bad("architecture needs at least one block".into());
        }
        if self.blocks.len() != self.num_blocks {
            return bad(format!(
                "num_blocks is {} but {} blocks are listed",
                self.num_blocks,
                self.blocks.len()
            ));
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if b.select.len() != k + 1 {
                return bad(format!(
                    "block {k} must have {} selection bits, found {}",
                    k + 1,
                    b.select.len()
                ));
            }
            if b.select.iter().any(|&s| s > 1) {
                return bad(format!("block {k} selection bits must be 0 or 1"));
            }
            if !b.select.contains(&1) {
                return bad(format!("block {k} selects no input"));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: ArchEncoding = serde_json::from_str(s)?;
        a.validate()?;
        Ok(a)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| match e {
            Error::Json(j) => Error::Validation(format!("{}: {j}", path.display())),
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}
