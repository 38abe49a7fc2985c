//! Coordinated supply planning between a retailer and a supplier.

pub mod consensus;
pub mod dynamic;
pub mod error;
pub mod instances;
pub mod mechanism;
pub mod network;
pub mod protocol;
mod qp;
pub mod run;
pub mod scenario;
pub mod transport;

pub use error::{Error, ParseError, ParseReason, Result};
pub use transport::{
    retailer_utility, solve_transport, supplier_utility, utility_supergradient, Evaluation,
    RetailerSpec, RowMode, SupplierSpec, SupplyPlan, TransportProblem, TransportSolution,
    TransportStatus, UtilityOracle, UtilityReport,
};
