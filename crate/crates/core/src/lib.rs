//! Selling information to buyers who also take an action the seller cares about.
//!
//! The crate models a seller who commits to an information structure, an
//! upfront price and action-contingent payments, and computes optimal or
//! approximately optimal protocols with and without menus.

#![allow(clippy::needless_range_loop)]

pub mod belief;
pub mod error;
pub mod fixtures;
pub mod instance;
pub mod lp;
pub mod menu;
pub mod nomenu;
pub mod oracle;
pub mod payment;
pub mod principal_agent;
pub mod protocol;
pub mod quniform;

pub use error::{Error, Result};
pub use instance::{random_instance, Instance, ValidationReport};
pub use protocol::{MenuEntry, MenuProtocol, NoMenuProtocol, Signal};
