pub mod geom;
pub mod projection;
pub mod roads;
pub mod violence;
pub mod zone;

pub use projection::LocalProjection;
pub use roads::{entry_roads, DistrictRoads, Road, RoadNetwork, ENTRY_BUFFER_KM};
pub use violence::{
    district_violence, district_violence_flag, read_events_csv, road_violence_flag, IsoWeek, Precision,
    RoadEventFilter, ViolenceFlags, ViolentEvent,
};
pub use zone::EntryZone;
