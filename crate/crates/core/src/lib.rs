//! Software twin of a battery-powered building telemetry chain: sensor nodes,
//! a store-and-forward gateway and a compressing time-series ingest service.

pub mod clock;
pub mod gateway;
pub mod ingest;
pub mod node;
pub mod power;
pub mod recordstore;
pub mod scenario;
pub mod wire;
