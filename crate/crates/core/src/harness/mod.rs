//! Simulated network, dropout injection and the server-side audit log.

pub mod audit;
pub mod network;

pub use audit::{audit_uniformity, AuditError, AuditLog, AuditReport, ClientAudit};
pub use network::{deliver, random_dropouts, DropoutModel, DropoutScript, RoundDropouts, ScriptError};
