//! What an honest-but-curious server sees, and a uniformity check over it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::quantize::{FieldSpec, FieldVector, QuantizeError};
use crate::secagg::wire::{Envelope, Phase, WireError};
use crate::stats::{chi_square_p_value, chi_square_uniform, residue_histogram};
use crate::types::ClientId;

/// Buckets for the residue histogram.
pub const AUDIT_BUCKETS: usize = 64;
/// A client passes when its p-value exceeds this.
pub const AUDIT_SIGNIFICANCE: f64 = 0.001;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit log contains no masked-input messages")]
    EmptyLog,
    #[error("malformed log: {0}")]
    Wire(#[from] WireError),
    #[error("malformed masked input: {0}")]
    Payload(#[from] QuantizeError),
    #[error("cannot access audit log: {0}")]
    Io(#[from] std::io::Error),
}

/// Append-only record of every envelope the server receives.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditLog {
    envelopes: Vec<Envelope>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, e: Envelope) {
        self.envelopes.push(e);
    }

    pub fn extend(&mut self, other: AuditLog) {
        self.envelopes.extend(other.envelopes);
    }

    pub fn envelopes(&self) -> &[Envelope] {
        &self.envelopes
    }

    pub fn len(&self) -> usize {
        self.envelopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envelopes.is_empty()
    }

    pub fn count(&self, phase: Phase) -> usize {
        self.envelopes.iter().filter(|e| e.phase == phase).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.envelopes {
            e.encode_into(&mut out);
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, WireError> {
        let mut envelopes = Vec::new();
        while !bytes.is_empty() {
            let (e, used) = Envelope::decode(bytes)?;
            envelopes.push(e);
            bytes = &bytes[used..];
        }
        Ok(Self { envelopes })
    }

    pub fn dump(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, AuditError> {
        Ok(Self::from_bytes(&fs::read(path)?)?)
    }

    /// Per-phase message counts, one line each, plus the rounds covered.
    pub fn summary(&self) -> String {
        let rounds: std::collections::BTreeSet<u32> = self.envelopes.iter().map(|e| e.round_id).collect();
        let mut s = format!("envelopes: {}\nrounds: {}\n", self.len(), rounds.len());
        for phase in Phase::ALL {
            let bytes: usize = self
                .envelopes
                .iter()
                .filter(|e| e.phase == phase)
                .map(|e| e.payload.len())
                .sum();
            s.push_str(&format!("{:<12} {:>8} messages {:>12} bytes\n", phase.name(), self.count(phase), bytes));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientAudit {
    pub client: ClientId,
    pub coordinates: usize,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub clients: Vec<ClientAudit>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.clients.iter().all(|c| c.p_value > AUDIT_SIGNIFICANCE)
    }

    pub fn min_p_value(&self) -> f64 {
        self.clients.iter().map(|c| c.p_value).fold(f64::INFINITY, f64::min)
    }
}

/// Chi-square test of each client's masked-input residues (pooled across
/// rounds) against the uniform distribution on the field.
pub fn audit_uniformity(log: &AuditLog, spec: &FieldSpec) -> Result<AuditReport, AuditError> {
    let mut per_client: BTreeMap<ClientId, Vec<u64>> = BTreeMap::new();
    for e in log.envelopes().iter().filter(|e| e.phase == Phase::MaskedInput) {
        let (v, _) = FieldVector::from_bytes(&e.payload)?;
        per_client.entry(e.sender).or_default().extend(v.into_residues());
    }
    if per_client.is_empty() {
        return Err(AuditError::EmptyLog);
    }
    let clients = per_client
        .into_iter()
        .map(|(client, residues)| {
            let coordinates = residues.len();
            let counts = residue_histogram(residues, spec.modulus, AUDIT_BUCKETS);
            let statistic = chi_square_uniform(&counts);
            ClientAudit {
                client,
                coordinates,
                statistic,
                p_value: chi_square_p_value(statistic, AUDIT_BUCKETS - 1),
            }
        })
        .collect();
    Ok(AuditReport { clients })
}
