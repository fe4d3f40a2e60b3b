pub mod day;
pub mod econometrics;
pub mod error;
pub mod figures;
pub mod geojson;
pub mod ingest;
pub mod metrics;
pub mod panel;
pub mod phenology;
pub mod pipeline;
pub mod residence;
pub mod robustness;
pub mod rng;
pub mod scalar;
pub mod spatial;
pub mod synth;

pub use day::{Day, StudyRange};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FitF64 = econometrics::ols::FitResult<f64>;
pub type FitF32 = econometrics::ols::FitResult<f32>;
pub type SpecFitF64 = econometrics::specs::SpecResult<f64>;
pub type SpecFitF32 = econometrics::specs::SpecResult<f32>;
pub type ContrastF64 = econometrics::ols::Contrast<f64>;
pub type NdviSeriesF64 = phenology::NdviSeries<f64>;
pub type NdviSeriesF32 = phenology::NdviSeries<f32>;
pub type PointF64 = spatial::geom::Point<f64>;
pub type PolygonF64 = spatial::geom::Polygon<f64>;
