//! Process exit codes: 0 success, 2 invalid input, 3 I/O or storage
//! failure, 4 internal error.

use admgeo_core::config::ConfigError;
use admgeo_core::geo::GeoError;
use admgeo_core::index::QueryError;
use admgeo_core::ingest::IngestError;
use admgeo_core::store::StoreError;
use admgeo_core::synth::SynthError;
use admgeo_service::{ApiError, ErrorCode};

pub const VALIDATION: u8 = 2;
pub const IO: u8 = 3;
pub const INTERNAL: u8 = 4;

/// Marks an error as invalid user input.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Invalid(pub String);

fn store_code(e: &StoreError) -> u8 {
    match e {
        StoreError::NotFound(_) | StoreError::Conflict(_) | StoreError::Invalid(_) => VALIDATION,
        StoreError::Io { .. } | StoreError::Corrupt { .. } => IO,
    }
}

pub fn classify(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Invalid>()
            || cause.is::<QueryError>()
            || cause.is::<ConfigError>()
            || cause.is::<GeoError>()
            || cause.is::<serde_json::Error>()
        {
            return VALIDATION;
        }
        if let Some(s) = cause.downcast_ref::<StoreError>() {
            return store_code(s);
        }
        if let Some(i) = cause.downcast_ref::<IngestError>() {
            return match i {
                IngestError::Store(s) => store_code(s),
                IngestError::Io { .. } => IO,
            };
        }
        if let Some(s) = cause.downcast_ref::<SynthError>() {
            return match s {
                SynthError::Spec(_) => VALIDATION,
                _ => IO,
            };
        }
        if let Some(a) = cause.downcast_ref::<ApiError>() {
            return match a.code {
                ErrorCode::Validation | ErrorCode::NotFound => VALIDATION,
                ErrorCode::Timeout | ErrorCode::Internal => INTERNAL,
            };
        }
        if cause.is::<std::io::Error>() {
            return IO;
        }
    }
    INTERNAL
}

/// The cause chain joined with `: `, skipping causes whose text the
/// previous message already ends with.
pub fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

pub fn code_name(code: u8) -> &'static str {
    match code {
        VALIDATION => "validation",
        IO => "io",
        _ => "internal",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_follow_the_cause_chain() {
        let e = anyhow::Error::new(QueryError::Validation("x".into())).context("running query");
        assert_eq!(classify(&e), VALIDATION);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(classify(&anyhow::Error::new(io)), IO);
        let corrupt = StoreError::Corrupt { path: "t".into(), line: 3, message: "bad".into() };
        assert_eq!(classify(&anyhow::Error::new(corrupt)), IO);
        assert_eq!(classify(&anyhow::anyhow!("boom")), INTERNAL);
        let nested: Result<(), _> = Err(ApiError::not_found("trip"));
        assert_eq!(classify(&nested.context("timeline").unwrap_err()), VALIDATION);
    }

    #[test]
    fn message_drops_repeated_sources() {
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        let e = anyhow::Error::new(StoreError::Io { path: "m.json".into(), source: io }).context("opening");
        assert_eq!(message(&e), "opening: m.json: gone");
    }
}
