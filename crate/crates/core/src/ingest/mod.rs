//! Parsing and validation of raw event, tower and geography inputs, tower
//! grouping, district assignment and subscriber sharding.

pub mod events;
pub mod geometry;
pub mod shard;
pub mod towers;

pub use events::{
    classify_row, parse_event_file, parse_event_stream, parse_timestamp, CdrEvent, ParsedEvent,
    RejectionReport, RowCategory,
};
pub use geometry::{assign_district, DistrictGeometry, Districts, Placement};
pub use shard::{fnv1a64, ingest_to_shards, read_shard, shard_of, ShardEvents, ShardWriter};
pub use towers::{group_towers, haversine_m, read_towers, Tower, TowerGroup, TowerRegistry};
