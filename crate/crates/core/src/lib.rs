//! Prediction of missing teeth from the remaining dentition.
//!
//! Teeth of a cohort are put into point-to-point correspondence with a dental template, stacked
//! into per-tooth coordinate dictionaries, and a missing tooth is predicted by sparse-coding its
//! adjacent teeth against their dictionaries and transferring the coefficients to the
//! dictionary of the missing tooth.

pub mod adjacency;
pub mod bpdn;
pub mod correspondence;
pub mod cpd;
pub mod dictionary;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod predict;
pub mod synth;
pub mod tds;
pub mod tooth;

pub use error::{Error, ErrorKind, Result};
pub use geometry::{Point3, PointCloud, RigidTransform};
pub use tooth::ToothLabel;
