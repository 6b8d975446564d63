//! One round of the protocol, run as a sequence of synchronous phases.
//!
//! Survivor sets: `U1` advertised keys, `U2` distributed shares, `U3` sent a
//! masked input, `U4` answered the unmask request. The server removes the
//! self masks of `U3` and the pairwise masks between `U2 \ U3` and `U3`.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::graph::NeighborGraph;
use super::keys::{dealer_pair_keys, Advertisement, ClientKeys, KeyMode, PairKeys};
use super::mask::{client_masked_input, expand_mask, pair_sign};
use super::shamir::{shamir_reconstruct, shamir_share, Share};
use super::wire::{decode_share_records, encode_share_records, seal, Envelope, Phase, SecretRef, ShareRecord, SERVER_ID};
use super::{SecAggConfig, SecAggError};
use crate::field::PrimeField;
use crate::harness::{deliver, AuditLog, RoundDropouts};
use crate::quantize::FieldVector;
use crate::rng::{seeded_rng, Stream};
use crate::types::ClientId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SessionPhase {
    Advertise,
    ShareKeys,
    MaskedInput,
    Unmask,
    Done,
    Aborted,
}

impl From<Phase> for SessionPhase {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Advertise => SessionPhase::Advertise,
            Phase::ShareKeys => SessionPhase::ShareKeys,
            Phase::MaskedInput => SessionPhase::MaskedInput,
            Phase::Unmask => SessionPhase::Unmask,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecAggOutput {
    /// Sum of the inputs of `survivors`, modulo the field prime.
    pub sum: FieldVector,
    /// Clients whose masked input entered the sum.
    pub survivors: BTreeSet<ClientId>,
}

/// A share the server asked `holder` to reveal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ShareRequest {
    pub holder: ClientId,
    pub owner: ClientId,
    pub secret: SecretRef,
}

#[derive(Debug)]
pub struct SecAggSession {
    pub round_id: u32,
    participants: Vec<ClientId>,
    graph: NeighborGraph,
    cfg: SecAggConfig,
    field: PrimeField,
    seed: u64,
    phase: SessionPhase,
    survivors: BTreeMap<Phase, BTreeSet<ClientId>>,
    collected_shares: BTreeMap<(ClientId, SecretRef, ClientId), Share>,
    share_requests: Vec<ShareRequest>,
    audit: AuditLog,
}

impl SecAggSession {
    pub fn new(round_id: u32, participants: &[ClientId], cfg: SecAggConfig, seed: u64) -> Result<Self, SecAggError> {
        let field = cfg.field.field()?;
        let ids: BTreeSet<ClientId> = participants.iter().copied().collect();
        if ids.len() != participants.len() || ids.contains(&SERVER_ID) {
            return Err(SecAggError::InputMismatch("participant ids must be distinct client ids".into()));
        }
        let participants: Vec<ClientId> = ids.into_iter().collect();
        let graph = NeighborGraph::harary(&participants, cfg.neighbor_degree);
        let max = if participants.is_empty() { 0 } else { graph.min_degree() + 1 };
        if cfg.threshold < 2 || cfg.threshold > max {
            return Err(SecAggError::InvalidThreshold {
                threshold: cfg.threshold,
                max,
            });
        }
        if !graph.induced_connected(&participants.iter().copied().collect()) {
            return Err(SecAggError::Disconnected(participants));
        }
        Ok(Self {
            round_id,
            participants,
            graph,
            cfg,
            field,
            seed,
            phase: SessionPhase::Advertise,
            survivors: BTreeMap::new(),
            collected_shares: BTreeMap::new(),
            share_requests: Vec::new(),
            audit: AuditLog::new(),
        })
    }

    pub fn participants(&self) -> &[ClientId] {
        &self.participants
    }

    pub fn graph(&self) -> &NeighborGraph {
        &self.graph
    }

    pub fn config(&self) -> &SecAggConfig {
        &self.cfg
    }

    pub fn phase(&self) -> SessionPhase {
        self.phase
    }

    /// Clients that completed `phase`, if it was reached.
    pub fn survivors(&self, phase: Phase) -> Option<&BTreeSet<ClientId>> {
        self.survivors.get(&phase)
    }

    /// Shares revealed to the server, keyed by `(owner, secret, holder)`.
    pub fn collected_shares(&self) -> &BTreeMap<(ClientId, SecretRef, ClientId), Share> {
        &self.collected_shares
    }

    pub fn share_requests(&self) -> &[ShareRequest] {
        &self.share_requests
    }

    /// Every envelope the server received.
    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn take_audit(&mut self) -> AuditLog {
        std::mem::take(&mut self.audit)
    }

    /// True when no client had both its self-mask seed and one of its
    /// pairwise seeds requested.
    pub fn double_masking_safe(&self) -> bool {
        let mut self_owners = BTreeSet::new();
        let mut pair_owners = BTreeSet::new();
        for r in &self.share_requests {
            match r.secret {
                SecretRef::SelfMask => self_owners.insert(r.owner),
                SecretRef::PairSeed { .. } => pair_owners.insert(r.owner),
            };
        }
        self_owners.is_disjoint(&pair_owners)
    }

    fn enter(&mut self, phase: Phase) {
        let next = SessionPhase::from(phase);
        assert!(next >= self.phase, "phase moved backwards");
        self.phase = next;
    }

    fn record(&mut self, phase: Phase, delivered: &[Envelope]) -> BTreeSet<ClientId> {
        let senders: BTreeSet<ClientId> = delivered.iter().map(|e| e.sender).collect();
        for e in delivered {
            self.audit.append(e.clone());
        }
        if let Some(prev) = phase_before(phase).and_then(|p| self.survivors.get(&p)) {
            assert!(senders.is_subset(prev), "survivor sets must shrink");
        }
        self.survivors.insert(phase, senders.clone());
        senders
    }

    fn require(&self, stage: Phase, available: usize, owner: Option<ClientId>) -> Result<(), SecAggError> {
        if available < self.cfg.threshold {
            return Err(SecAggError::BelowThreshold {
                stage,
                needed: self.cfg.threshold,
                available,
                owner,
            });
        }
        Ok(())
    }

    fn live_neighbors(&self, id: ClientId, alive: &BTreeSet<ClientId>) -> Vec<ClientId> {
        self.graph
            .neighbors(id)
            .iter()
            .copied()
            .filter(|j| alive.contains(j))
            .collect()
    }
}

fn phase_before(p: Phase) -> Option<Phase> {
    match p {
        Phase::Advertise => None,
        Phase::ShareKeys => Some(Phase::Advertise),
        Phase::MaskedInput => Some(Phase::ShareKeys),
        Phase::Unmask => Some(Phase::MaskedInput),
    }
}

/// Local state of one simulated client.
struct Client {
    rng: Stream,
    keys: Option<ClientKeys>,
    pairs: BTreeMap<ClientId, PairKeys>,
    self_seed: u64,
    /// Shares this client holds, its own included.
    held: Vec<ShareRecord>,
}

/// Runs all four phases. Clients in `dropouts` stop sending from their
/// scripted phase on. On abort the session moves to `Aborted` and the
/// audit log keeps everything received so far.
pub fn run_secagg_round(
    session: &mut SecAggSession,
    inputs: &BTreeMap<ClientId, FieldVector>,
    dropouts: &RoundDropouts,
) -> Result<SecAggOutput, SecAggError> {
    if session.phase != SessionPhase::Advertise || !session.survivors.is_empty() {
        return Err(SecAggError::SessionFinished(session.round_id));
    }
    match run_phases(session, inputs, dropouts) {
        Ok(out) => {
            session.phase = SessionPhase::Done;
            Ok(out)
        }
        Err(e) => {
            session.phase = SessionPhase::Aborted;
            Err(e)
        }
    }
}

fn run_phases(
    s: &mut SecAggSession,
    inputs: &BTreeMap<ClientId, FieldVector>,
    dropouts: &RoundDropouts,
) -> Result<SecAggOutput, SecAggError> {
    let keys: Vec<ClientId> = inputs.keys().copied().collect();
    if keys != s.participants {
        return Err(SecAggError::InputMismatch(format!(
            "inputs for {keys:?}, participants {:?}",
            s.participants
        )));
    }
    let dim = inputs.values().next().map_or(0, FieldVector::dim);
    if let Some((id, _)) = inputs.iter().find(|(_, v)| v.dim() != dim) {
        return Err(SecAggError::InputMismatch(format!("client {id} input has a different dimension")));
    }
    if let Some(id) = inputs
        .iter()
        .find(|(_, v)| v.residues().iter().any(|&r| r >= s.field.modulus()))
        .map(|(id, _)| id)
    {
        return Err(SecAggError::InputMismatch(format!("client {id} input is not reduced")));
    }

    let round = s.round_id;
    let t = s.cfg.threshold;
    let field = s.field;
    let spec = s.cfg.field;

    let mut clients: BTreeMap<ClientId, Client> = s
        .participants
        .iter()
        .map(|&id| {
            (
                id,
                Client {
                    rng: seeded_rng(s.seed, format!("secagg/round/{round}/client/{id}")),
                    keys: None,
                    pairs: BTreeMap::new(),
                    self_seed: 0,
                    held: Vec::new(),
                },
            )
        })
        .collect();

    // Advertise.
    s.enter(Phase::Advertise);
    let agreement = s.cfg.key_mode == KeyMode::Agreement;
    let outgoing: Vec<Envelope> = clients
        .par_iter_mut()
        .filter(|(id, _)| dropouts.is_live(**id, Phase::Advertise))
        .map(|(&id, c)| {
            let payload = if agreement {
                let k = ClientKeys::generate(&mut c.rng);
                let ad = k.advertisement();
                c.keys = Some(k);
                ad
            } else {
                Vec::new()
            };
            Envelope {
                round_id: round,
                phase: Phase::Advertise,
                sender: id,
                receiver: SERVER_ID,
                payload,
            }
        })
        .collect();
    let delivered = deliver(outgoing, dropouts, Phase::Advertise);
    let u1 = s.record(Phase::Advertise, &delivered);
    s.require(Phase::Advertise, u1.len(), None)?;
    let ads: BTreeMap<ClientId, Advertisement> = if agreement {
        delivered
            .iter()
            .map(|e| Ok((e.sender, Advertisement::parse(e.sender, &e.payload)?)))
            .collect::<Result<_, SecAggError>>()?
    } else {
        BTreeMap::new()
    };

    // ShareKeys: the server relays each client the keys of its live
    // neighbors; clients derive pairwise secrets and share their seeds.
    s.enter(Phase::ShareKeys);
    let neighbors1: BTreeMap<ClientId, Vec<ClientId>> = u1.iter().map(|&i| (i, s.live_neighbors(i, &u1))).collect();
    for (&i, n) in &neighbors1 {
        s.require(Phase::ShareKeys, n.len() + 1, Some(i))?;
    }
    let seed = s.seed;
    let sharing: Vec<Result<Vec<Envelope>, SecAggError>> = clients
        .par_iter_mut()
        .filter(|(id, _)| u1.contains(id) && dropouts.is_live(**id, Phase::ShareKeys))
        .map(|(&i, c)| {
            let nbrs = &neighbors1[&i];
            for &j in nbrs {
                let pk = match &c.keys {
                    Some(k) => k.pair_keys(j, &ads[&j], &field)?,
                    None => dealer_pair_keys(seed, round, i, j, &field),
                };
                c.pairs.insert(j, pk);
            }
            c.self_seed = field.sample(&mut c.rng);
            let mut holders = nbrs.clone();
            holders.push(i);
            holders.sort_unstable();
            let mut bundles: BTreeMap<ClientId, Vec<ShareRecord>> = BTreeMap::new();
            let mut secrets = vec![(SecretRef::SelfMask, c.self_seed)];
            secrets.extend(nbrs.iter().map(|&j| (SecretRef::PairSeed { peer: j }, c.pairs[&j].mask_seed)));
            for (secret, value) in secrets {
                for share in shamir_share(value, t, i, &holders, &field, &mut c.rng)? {
                    bundles.entry(share.holder).or_default().push(ShareRecord { secret, share });
                }
            }
            c.held.extend(bundles.remove(&i).unwrap_or_default());
            Ok(bundles
                .into_iter()
                .map(|(h, recs)| {
                    let mut payload = encode_share_records(&recs);
                    seal(&c.pairs[&h].channel_key, round, i, h, &mut payload);
                    Envelope {
                        round_id: round,
                        phase: Phase::ShareKeys,
                        sender: i,
                        receiver: h,
                        payload,
                    }
                })
                .collect())
        })
        .collect();
    let mut outgoing = Vec::new();
    for r in sharing {
        outgoing.extend(r?);
    }
    let delivered = deliver(outgoing, dropouts, Phase::ShareKeys);
    let u2 = s.record(Phase::ShareKeys, &delivered);
    s.require(Phase::ShareKeys, u2.len(), None)?;
    // Crashed receivers never open their bundles.
    for e in delivered.into_iter().filter(|e| dropouts.is_live(e.receiver, Phase::ShareKeys)) {
        let c = clients.get_mut(&e.receiver).expect("receiver is a participant");
        let mut payload = e.payload;
        seal(&c.pairs[&e.sender].channel_key, round, e.sender, e.receiver, &mut payload);
        c.held.extend(decode_share_records(&payload, e.receiver)?);
    }

    // MaskedInput.
    s.enter(Phase::MaskedInput);
    let neighbors2: BTreeMap<ClientId, Vec<ClientId>> = u2.iter().map(|&i| (i, s.live_neighbors(i, &u2))).collect();
    let uploads: Vec<Result<Envelope, SecAggError>> = clients
        .par_iter()
        .filter(|(id, _)| u2.contains(id) && dropouts.is_live(**id, Phase::MaskedInput))
        .map(|(&i, c)| {
            let seeds: BTreeMap<ClientId, u64> = c.pairs.iter().map(|(&j, k)| (j, k.mask_seed)).collect();
            let y = client_masked_input(&inputs[&i], c.self_seed, &seeds, i, &neighbors2[&i], &spec)?;
            Ok(Envelope {
                round_id: round,
                phase: Phase::MaskedInput,
                sender: i,
                receiver: SERVER_ID,
                payload: y.to_bytes(),
            })
        })
        .collect();
    let outgoing = uploads.into_iter().collect::<Result<Vec<_>, _>>()?;
    let delivered = deliver(outgoing, dropouts, Phase::MaskedInput);
    let u3 = s.record(Phase::MaskedInput, &delivered);
    s.require(Phase::MaskedInput, u3.len(), None)?;
    if !s.graph.induced_connected(&u3) {
        return Err(SecAggError::Disconnected(u3.into_iter().collect()));
    }
    let mut sum = FieldVector::zeros(dim);
    for e in &delivered {
        let (y, _) = FieldVector::from_bytes(&e.payload)?;
        if y.dim() != dim {
            return Err(SecAggError::InputMismatch(format!("masked input from {} has wrong length", e.sender)));
        }
        sum.add_assign(&y, &field);
    }

    // Unmask: self-mask seeds of U3, pairwise seeds between dropped U2
    // members and U3. Never both kinds for one owner.
    s.enter(Phase::Unmask);
    let mut wanted: BTreeSet<(ClientId, SecretRef)> = u3.iter().map(|&i| (i, SecretRef::SelfMask)).collect();
    for &j in u2.difference(&u3) {
        for &k in neighbors2[&j].iter().filter(|k| u3.contains(k)) {
            wanted.insert((j, SecretRef::PairSeed { peer: k }));
        }
    }
    for &h in &u3 {
        for rec in &clients[&h].held {
            if wanted.contains(&(rec.share.owner, rec.secret)) {
                s.share_requests.push(ShareRequest {
                    holder: h,
                    owner: rec.share.owner,
                    secret: rec.secret,
                });
            }
        }
    }
    assert!(s.double_masking_safe(), "server requested both mask kinds of one client");
    let outgoing: Vec<Envelope> = u3
        .iter()
        .filter(|&&h| dropouts.is_live(h, Phase::Unmask))
        .map(|&h| {
            let recs: Vec<ShareRecord> = clients[&h]
                .held
                .iter()
                .filter(|r| wanted.contains(&(r.share.owner, r.secret)))
                .copied()
                .collect();
            Envelope {
                round_id: round,
                phase: Phase::Unmask,
                sender: h,
                receiver: SERVER_ID,
                payload: encode_share_records(&recs),
            }
        })
        .collect();
    let delivered = deliver(outgoing, dropouts, Phase::Unmask);
    s.record(Phase::Unmask, &delivered);
    for e in &delivered {
        for rec in decode_share_records(&e.payload, e.sender)? {
            s.collected_shares.insert((rec.share.owner, rec.secret, e.sender), rec.share);
        }
    }

    let mut by_secret: BTreeMap<(ClientId, SecretRef), Vec<Share>> = BTreeMap::new();
    for (&(owner, secret, _), &share) in &s.collected_shares {
        by_secret.entry((owner, secret)).or_default().push(share);
    }
    // Holders come out in ascending id order, so the first `t` are the
    // lowest-indexed live holders.
    let mut recovered = Vec::with_capacity(wanted.len());
    for &(owner, secret) in &wanted {
        let shares = by_secret.get(&(owner, secret)).map(Vec::as_slice).unwrap_or(&[]);
        s.require(Phase::Unmask, shares.len(), Some(owner))?;
        recovered.push((owner, secret, shamir_reconstruct(&shares[..t], t, &field)?));
    }
    let removals: Vec<FieldVector> = recovered
        .par_iter()
        .map(|&(owner, secret, seed)| {
            let m = expand_mask(seed, dim, &spec);
            match secret {
                SecretRef::SelfMask => m,
                // Survivor k added sign(k, owner) * PRG(seed); subtract that.
                SecretRef::PairSeed { peer } if pair_sign(peer, owner) => m,
                SecretRef::PairSeed { .. } => {
                    let mut neg = FieldVector::zeros(dim);
                    neg.sub_assign(&m, &field);
                    neg
                }
            }
        })
        .collect();
    for m in &removals {
        sum.sub_assign(m, &field);
    }
    Ok(SecAggOutput { sum, survivors: u3 })
}
