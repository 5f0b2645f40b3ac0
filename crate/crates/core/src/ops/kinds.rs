use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

macro_rules! op_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($name), " `{}`; expected one of {:?}"),
                        s,
                        [$($text),+]
                    ))),
                }
            }
        }
    };
}

op_enum!(
    /// Per-input choice of an SFA block.
    SelectionOp { Zero => "ZERO", Identity => "IDENTITY" }
);

op_enum!(
    FusionOp {
        Sum => "SUM",
        Mean => "MEAN",
        Max => "MAX",
        Concat => "CONCAT",
        Lstm => "LSTM",
    }
);

op_enum!(
    /// Neighborhood aggregation. `GAT_SYM` and `GAT_COS` are the attention
    /// variants used for the attention-only search space.
    AggOp {
        Gcn => "GCN",
        Gat => "GAT",
        GatSym => "GAT_SYM",
        GatCos => "GAT_COS",
        Gin => "GIN",
        Gen => "GEN",
        Mf => "MF",
        Expc => "EXPC",
    }
);

op_enum!(
    ReadoutOp {
        GlobalMean => "GLOBAL_MEAN",
        GlobalMax => "GLOBAL_MAX",
        GlobalSum => "GLOBAL_SUM",
    }
);

impl AggOp {
    /// The six aggregators of the default search space.
    pub const DEFAULT_SPACE: &'static [AggOp] = &[
        AggOp::Gcn,
        AggOp::Gat,
        AggOp::Gin,
        AggOp::Gen,
        AggOp::Mf,
        AggOp::Expc,
    ];

    pub const GAT_VARIANTS: &'static [AggOp] = &[AggOp::Gat, AggOp::GatSym, AggOp::GatCos];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpModule {
    Selection,
    Fusion,
    Aggregation,
    Readout,
}

impl OpModule {
    pub fn as_str(self) -> &'static str {
        match self {
            OpModule::Selection => "Selection",
            OpModule::Fusion => "Fusion",
            OpModule::Aggregation => "Aggregation",
            OpModule::Readout => "Readout",
        }
    }
}

/// Any candidate operation, tagged with the module it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Selection(SelectionOp),
    Fusion(FusionOp),
    Aggregation(AggOp),
    Readout(ReadoutOp),
}

impl OpKind {
    pub fn module(self) -> OpModule {
        match self {
            OpKind::Selection(_) => OpModule::Selection,
            OpKind::Fusion(_) => OpModule::Fusion,
            OpKind::Aggregation(_) => OpModule::Aggregation,
            OpKind::Readout(_) => OpModule::Readout,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Selection(o) => o.as_str(),
            OpKind::Fusion(o) => o.as_str(),
            OpKind::Aggregation(o) => o.as_str(),
            OpKind::Readout(o) => o.as_str(),
        }
    }

    /// Every operation of every module.
    pub fn all() -> Vec<OpKind> {
        SelectionOp::ALL
            .iter()
            .map(|&o| OpKind::Selection(o))
            .chain(FusionOp::ALL.iter().map(|&o| OpKind::Fusion(o)))
            .chain(AggOp::ALL.iter().map(|&o| OpKind::Aggregation(o)))
            .chain(ReadoutOp::ALL.iter().map(|&o| OpKind::Readout(o)))
            .collect()
    }

    /// Parse a name in the context of one module.
    pub fn parse(module: OpModule, name: &str) -> Result<OpKind, Error> {
        Ok(match module {
            OpModule::Selection => OpKind::Selection(name.parse()?),
            OpModule::Fusion => OpKind::Fusion(name.parse()?),
            OpModule::Aggregation => OpKind::Aggregation(name.parse()?),
            OpModule::Readout => OpKind::Readout(name.parse()?),
        })
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{}", self.module(), self.name())
    }
}
