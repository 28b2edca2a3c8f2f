//! Schemas, datasets, statistics and encoding for mixed tabular data.

mod dataset;
mod encoding;
mod histogram;
mod schema;
mod stats;

pub use dataset::Dataset;
pub use encoding::{decimals_of, round_to_decimals, snap_to_grid};
pub(crate) use encoding::{argmax as encoding_argmax, grid_point};
pub use histogram::{bin_feature, Binning, Histogram};
pub use schema::{FeatureKind, FeatureSpec, Instance, LabelSpec, Layout, Schema, Slot, Value};
pub use stats::{compute_mad, median};

/// Default number of histogram bins for continuous features.
pub const DEFAULT_BIN_COUNT: usize = 10;
