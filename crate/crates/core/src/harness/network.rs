//! Synchronous message delivery with crash-stop dropouts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Stream;
use crate::secagg::wire::{Envelope, Phase, SERVER_ID};
use crate::types::ClientId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScriptError {
    #[error("dropout entry `{0}` is not of the form round:phase:client")]
    Malformed(String),
    #[error("client {client} is scripted to drop twice in round {round}")]
    Duplicate { round: u32, client: ClientId },
}

/// Which clients crash in one round, and at which phase.
///
/// A client dropping at phase `p` sends nothing in `p` or any later phase
/// of the round, and rejoins in the next round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundDropouts {
    drops: BTreeMap<ClientId, Phase>,
}

impl RoundDropouts {
    pub fn none() -> Self {
        Self::default()
    }

    /// Drops every listed client at `phase`.
    pub fn at(phase: Phase, clients: impl IntoIterator<Item = ClientId>) -> Self {
        Self {
            drops: clients.into_iter().map(|c| (c, phase)).collect(),
        }
    }

    /// Records a drop; an earlier phase wins if the client is already listed.
    pub fn insert(&mut self, client: ClientId, phase: Phase) {
        let e = self.drops.entry(client).or_insert(phase);
        *e = (*e).min(phase);
    }

    pub fn merge(&mut self, other: &RoundDropouts) {
        for (&c, &p) in &other.drops {
            self.insert(c, p);
        }
    }

    pub fn drop_phase(&self, client: ClientId) -> Option<Phase> {
        self.drops.get(&client).copied()
    }

    /// Whether `client` still sends messages in `phase`.
    pub fn is_live(&self, client: ClientId, phase: Phase) -> bool {
        self.drops.get(&client).is_none_or(|&p| phase < p)
    }

    pub fn is_empty(&self) -> bool {
        self.drops.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClientId, Phase)> + '_ {
        self.drops.iter().map(|(&c, &p)| (c, p))
    }
}

/// Scripted dropouts across an experiment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DropoutScript {
    entries: Vec<(u32, Phase, ClientId)>,
}

impl DropoutScript {
    pub fn new(entries: Vec<(u32, Phase, ClientId)>) -> Result<Self, ScriptError> {
        let mut seen = std::collections::BTreeSet::new();
        for &(round, _, client) in &entries {
            if !seen.insert((round, client)) {
                return Err(ScriptError::Duplicate { round, client });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(u32, Phase, ClientId)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn for_round(&self, round: u32) -> RoundDropouts {
        let mut d = RoundDropouts::none();
        for &(r, phase, client) in &self.entries {
            if r == round {
                d.insert(client, phase);
            }
        }
        d
    }
}

impl FromStr for DropoutScript {
    type Err = ScriptError;

    /// Parses `round:phase:client` entries separated by commas, e.g.
    /// `0:MaskedInput:3, 2:Unmask:1`. An empty string is an empty script.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut entries = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let bad = || ScriptError::Malformed(item.to_string());
            let parts: Vec<&str> = item.split(':').map(str::trim).collect();
            let [round, phase, client] = parts[..] else {
                return Err(bad());
            };
            entries.push((
                round.parse().map_err(|_| bad())?,
                phase.parse().map_err(|_| bad())?,
                client.parse().map_err(|_| bad())?,
            ));
        }
        Self::new(entries)
    }
}

impl fmt::Display for DropoutScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self
            .entries
            .iter()
            .map(|(r, p, c)| format!("{r}:{}:{c}", p.name()))
            .collect();
        f.write_str(&items.join(","))
    }
}

/// When randomly injected dropouts happen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropoutModel {
    /// Only scripted dropouts.
    #[default]
    None,
    /// Clients crash after uploading their masked input.
    AfterMasking,
    /// Crash phase drawn uniformly over the four phases.
    AnyPhase,
}

impl FromStr for DropoutModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(DropoutModel::None),
            "aftermasking" | "after_masking" => Ok(DropoutModel::AfterMasking),
            "anyphase" | "any_phase" => Ok(DropoutModel::AnyPhase),
            _ => Err(format!("unknown dropout model `{s}`")),
        }
    }
}

/// Each participant independently drops with probability `rate`.
pub fn random_dropouts(participants: &[ClientId], rate: f64, model: DropoutModel, rng: &mut Stream) -> RoundDropouts {
    let mut d = RoundDropouts::none();
    if model == DropoutModel::None || rate <= 0.0 {
        return d;
    }
    for &c in participants {
        if rng.uniform() < rate {
            let phase = match model {
                DropoutModel::AfterMasking => Phase::Unmask,
                _ => Phase::ALL[rng.below(4) as usize],
            };
            d.insert(c, phase);
        }
    }
    d
}

/// Messages that reach their receivers in `phase`: everything except what
/// dropped clients would have sent, ordered by sender (stable within a
/// sender).
pub fn deliver(messages: Vec<Envelope>, dropouts: &RoundDropouts, phase: Phase) -> Vec<Envelope> {
    let mut out: Vec<Envelope> = messages
        .into_iter()
        .filter(|m| m.sender == SERVER_ID || dropouts.is_live(m.sender, phase))
        .collect();
    out.sort_by_key(|m| m.sender);
    out
}
