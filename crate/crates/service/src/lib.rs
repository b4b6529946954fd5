//! HTTP/JSON API over an admgeo dataset.

pub mod api;
pub mod error;
pub mod server;

pub use error::{ApiError, ErrorCode};
pub use server::{router, serve, AppState, DEFAULT_TIMEOUT};
