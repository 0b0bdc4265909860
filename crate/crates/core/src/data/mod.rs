//! Traffic ingestion, Voronoi re-aggregation, splits, scaling, batching and
//! the synthetic generator.

mod batch;
mod container;
mod scaler;
mod series;
mod split;
mod synthetic;
mod voronoi;

pub use batch::{
    assemble_batch, BatchOptions, Dropout, SampleBatch, StoreSource, SubgraphCache, SubgraphSource,
};
pub use container::{GraphParams, PreparedDataset};
pub use scaler::Scaler;
pub use series::{TrafficSeries, DEFAULT_RESOLUTION_MINUTES};
pub use split::{split, Block, Sample, Split, SplitManifest, SplitMode, SplitSpec};
pub use synthetic::{generate_synthetic, SyntheticConfig, DAY_STEPS, WEEK_STEPS};
pub use voronoi::{assign_nearest, voronoi_aggregate, TileTraffic};
