//! Magnetostatic back-action of a permeable half-space on a localized spin.

#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod constants;
pub mod cylindrical;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod interp;
pub mod magnetostatics;
pub mod oracle;
pub mod profile;
pub mod protocol;
pub mod quad;
pub mod sensing;
pub mod special;

pub use constants::{PhysicalConstants, CONSTANTS};
pub use error::{Error, Result};
pub use geometry::{permeability_contrast, ProbeGeometry};
pub use profile::{normalize_profile, profile_moment, SpinDensityProfile};
