use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_newtype {
    ($(#[$m:meta])* $name:ident, $inner:ty, $prefix:literal) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_newtype!(
    /// A registered physical vehicle (on-board unit).
    VehicleId, u32, "v"
);
id_newtype!(
    /// A roadside unit.
    RsuId, u32, "r"
);
id_newtype!(
    /// A virtual vehicle (the migrating VM).
    VvId, u32, "vv"
);
id_newtype!(
    /// A migration transaction.
    TxnId, u64, "t"
);

/// Where a virtual vehicle can live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HostRef {
    Vehicle(VehicleId),
    Rsu(RsuId),
}

impl HostRef {
    pub fn vehicle(self) -> Option<VehicleId> {
        match self {
            HostRef::Vehicle(v) => Some(v),
            HostRef::Rsu(_) => None,
        }
    }

    pub fn is_rsu(self) -> bool {
        matches!(self, HostRef::Rsu(_))
    }
}

impl fmt::Display for HostRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HostRef::Vehicle(v) => v.fmt(f),
            HostRef::Rsu(r) => r.fmt(f),
        }
    }
}
