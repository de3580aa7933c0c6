//! Local HTTP service that runs live DemPref sessions for human responders.
//!
//! Clients create a session, upload demonstrations as control sequences,
//! poll for queries and post rankings. Query synthesis runs off the request
//! path; while it does, `GET /sessions/{id}/query` answers 202 with
//! `Retry-After`.

pub mod api;
pub mod error;
pub mod server;
pub mod store;

pub use error::ServiceError;
pub use server::{router, serve, serve_blocking};
pub use store::{SessionRecord, SessionStore, Status};
