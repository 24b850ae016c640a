//! Real-time render service for style-conditioned Gaussian splats.
//!
//! `GET /healthz`, `GET /info` and the `/stream` WebSocket, backed by one
//! immutable [`ModelSnapshot`]. See [`protocol`] for the wire format.

pub mod model;
pub mod protocol;
pub mod server;

pub use model::{ModelInfo, ModelSnapshot, COLOR_CACHE_SIZE, STYLE_SLOTS};
pub use protocol::{decode_frame, parse_request, Frame, RenderRequest, Telemetry, WireRequest};
pub use server::{router, serve, serve_on};
