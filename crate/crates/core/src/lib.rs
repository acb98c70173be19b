//! Multi-class dynamic origin-destination demand estimation.
//!
//! The crate fuses link counts, link travel times and snapshot densities into
//! a single least-squares objective over time-varying OD demand. A mesoscopic
//! point-queue loader with curbside parking produces tagged cumulative curves;
//! those curves are turned into dynamic assignment ratio (DAR) matrices that
//! linearize the loader, and the gradient of the objective with respect to
//! demand is obtained by back-propagating residuals through the linearization.
//!
//! Module map:
//!
//! * [`network`]: links, OD pairs, path enumeration, file I/O.
//! * [`dnl`]: route choice, path flow assignment and network loading.
//! * [`dar`]: sparse DAR matrices and linear reconstruction of flow/density.
//! * [`estimator`]: observation operators, loss, gradient and the solver loop.
//! * [`observation`]: detection matching, snapshots, noise and consistency filters.
//! * [`benchmark`]: the PCA + SPSA baseline.
//! * [`scenario`]: end-to-end experiment runner used by the `dode` binary.

pub mod benchmark;
pub mod dar;
pub mod dnl;
mod error;
pub mod estimator;
pub mod network;
pub mod observation;
pub mod scenario;
pub mod sparse;
pub mod synthetic;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Vehicle classes modelled by the loader and the estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Car,
    Truck,
}

pub const NUM_CLASSES: usize = 2;

impl VehicleClass {
    pub const ALL: [VehicleClass; NUM_CLASSES] = [VehicleClass::Car, VehicleClass::Truck];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            VehicleClass::Car => 0,
            VehicleClass::Truck => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Car => "car",
            VehicleClass::Truck => "truck",
        }
    }
}

impl std::fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for VehicleClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "car" | "0" => Ok(VehicleClass::Car),
            "truck" | "1" => Ok(VehicleClass::Truck),
            other => Err(Error::InvalidInput(format!("unknown vehicle class `{other}`"))),
        }
    }
}
