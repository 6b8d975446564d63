//! The FedAvg round loop for the three experiment modes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ExperimentConfig, ModelKind};
use crate::data::{generate_blobs_separated, partition_non_iid, DataError, Dataset};
use crate::dp::{privatize, DpError};
use crate::harness::{random_dropouts, AuditLog, RoundDropouts};
use crate::model::{evaluate, make_groupnorm_mlp, make_linear_model, sgd_step, Model, ModelError};
use crate::quantize::{decode, encode_counting, QuantizeError};
use crate::rng::{seeded_rng, Stream};
use crate::secagg::{run_secagg_round, Envelope, Phase, SecAggError, SecAggSession, SERVER_ID};
use crate::types::{cohort_weights, ClientId, ClientWeight, Mode, ParameterVector, TypeError};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("client {0} has an empty shard")]
    EmptyShard(ClientId),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
    #[error(transparent)]
    SecAgg(#[from] SecAggError),
    #[error(transparent)]
    Types(#[from] TypeError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("cannot write results to {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundStatus {
    Completed,
    Failed,
}

/// Metrics for one round, persisted as one JSON object per line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: u32,
    pub mode: Mode,
    pub status: RoundStatus,
    pub accuracy: f64,
    pub loss: f64,
    /// Clients whose update entered the aggregate.
    pub survivors: usize,
    pub dropouts: usize,
    /// Coordinates clamped during encoding, summed over clients.
    pub saturations: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub clip_norm: f64,
    /// The (epsilon, delta) above hold per round; no composition across rounds.
    pub privacy_accounting: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct GlobalState {
    pub round: u32,
    pub theta: ParameterVector,
    pub history: Vec<RoundReport>,
}

/// Generated data, shards and the model template for one experiment.
pub struct Federation {
    pub cfg: ExperimentConfig,
    pub shards: Vec<Dataset>,
    pub test: Dataset,
    pub model: Box<dyn Model>,
}

impl Federation {
    /// Generates the blobs task, holds out the test split and partitions
    /// the rest across `cfg.num_clients` clients.
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, OrchestratorError> {
        let mut cfg = cfg.clone();
        cfg.resolve()?;
        let d = &cfg.data;
        let all = generate_blobs_separated(
            d.classes,
            d.dim,
            d.samples_per_class,
            d.spread,
            d.separation,
            &mut seeded_rng(cfg.seed, "data/blobs"),
        );
        let test_len = ((all.len() as f64) * d.test_fraction).round() as usize;
        let (test, train) = all.split_at(test_len);
        let shards = partition_non_iid(&train, &cfg.partition, &mut seeded_rng(cfg.seed, "data/partition"))?;
        let mut init = seeded_rng(cfg.seed, "model/init");
        let model: Box<dyn Model> = match cfg.model.kind {
            ModelKind::Linear => Box::new(make_linear_model(d.dim, d.classes, cfg.model.init_scale, &mut init)),
            ModelKind::GnMlp => Box::new(make_groupnorm_mlp(d.dim, cfg.model.hidden, cfg.model.groups, d.classes, &mut init)?),
        };
        Ok(Self {
            cfg,
            shards,
            test,
            model,
        })
    }

    pub fn initial_state(&self) -> GlobalState {
        GlobalState {
            round: 0,
            theta: self.model.parameters(),
            history: Vec::new(),
        }
    }

    pub fn sample_counts(&self) -> Vec<(ClientId, u64)> {
        self.shards
            .iter()
            .enumerate()
            .map(|(i, s)| (i as ClientId, s.len() as u64))
            .collect()
    }
}

/// Runs `epochs` passes of minibatch SGD from `model`'s current
/// parameters and returns `theta_local - theta_start`.
///
/// Each epoch reshuffles the shard; indices within a minibatch are sorted,
/// so a full-batch epoch sums examples in row order.
pub fn local_train(
    model: &mut dyn Model,
    shard: &Dataset,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut Stream,
) -> Result<ParameterVector, OrchestratorError> {
    if shard.is_empty() {
        return Err(OrchestratorError::EmptyShard(0));
    }
    let start = model.parameters();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size.max(1)) {
            let mut batch = chunk.to_vec();
            batch.sort_unstable();
            sgd_step(model, shard, &batch, lr);
        }
    }
    Ok(model.parameters().sub(&start)?)
}

/// `sum_i p_i * delta_i` in floating point, accumulated in client order.
pub fn aggregate_plain(deltas: &[ParameterVector], weights: &[ClientWeight]) -> Result<ParameterVector, OrchestratorError> {
    let dim = deltas.first().map_or(0, ParameterVector::dim);
    if deltas.len() != weights.len() {
        return Err(OrchestratorError::DimensionMismatch {
            expected: deltas.len(),
            got: weights.len(),
        });
    }
    let mut acc = vec![0.0; dim];
    for (d, w) in deltas.iter().zip(weights) {
        if d.dim() != dim {
            return Err(OrchestratorError::DimensionMismatch { expected: dim, got: d.dim() });
        }
        for (a, x) in acc.iter_mut().zip(d.as_slice()) {
            *a += w.weight * x;
        }
    }
    Ok(ParameterVector::new(acc)?)
}

/// Dropouts for `round`: the script plus any random injection.
pub fn round_dropouts(cfg: &ExperimentConfig, round: u32) -> RoundDropouts {
    let mut d = cfg.dropouts.for_round(round);
    let ids: Vec<ClientId> = (0..cfg.num_clients as ClientId).collect();
    let mut rng = seeded_rng(cfg.seed, format!("round/{round}/dropouts"));
    d.merge(&random_dropouts(&ids, cfg.secagg.dropout_rate, cfg.secagg.dropout_model, &mut rng));
    d
}

/// One FedAvg round. Server-visible messages are appended to `audit`.
///
/// A protocol abort marks the round failed and leaves `theta` untouched.
pub fn run_round(
    state: &mut GlobalState,
    fed: &Federation,
    dropouts: &RoundDropouts,
    audit: &mut AuditLog,
) -> Result<RoundReport, OrchestratorError> {
    let started = Instant::now();
    let cfg = &fed.cfg;
    let round = state.round;
    let spec = cfg.secagg.field;
    let field = spec.field()?;
    let counts = fed.sample_counts();

    let deltas: Vec<ParameterVector> = (0..fed.shards.len())
        .into_par_iter()
        .map(|i| {
            let mut model = fed.model.clone();
            model.set_parameters(&state.theta)?;
            let mut rng = seeded_rng(cfg.seed, format!("round/{round}/client/{i}/train"));
            let delta = local_train(
                model.as_mut(),
                &fed.shards[i],
                cfg.local_epochs,
                cfg.train.lr,
                cfg.train.batch_size,
                &mut rng,
            )
            .map_err(|e| match e {
                OrchestratorError::EmptyShard(_) => OrchestratorError::EmptyShard(i as ClientId),
                e => e,
            })?;
            if cfg.mode.uses_dp() {
                let mut rng = seeded_rng(cfg.seed, format!("round/{round}/client/{i}/dp"));
                Ok(privatize(&delta, &cfg.privacy, &mut rng)?)
            } else {
                Ok(delta)
            }
        })
        .collect::<Result<_, OrchestratorError>>()?;

    let mut report = RoundReport {
        round,
        mode: cfg.mode,
        status: RoundStatus::Completed,
        accuracy: 0.0,
        loss: 0.0,
        survivors: 0,
        dropouts: dropouts.iter().count(),
        saturations: 0,
        sigma: if cfg.mode.uses_dp() { cfg.privacy.noise_scale } else { 0.0 },
        epsilon: cfg.privacy.epsilon,
        delta: cfg.privacy.delta,
        clip_norm: cfg.privacy.clip_norm,
        privacy_accounting: "per-round",
        error: None,
        elapsed_ms: None,
    };

    let aggregate = if cfg.mode.uses_secagg() {
        // Clients pre-scale their encoded update by their public count.
        let mut inputs = BTreeMap::new();
        for (i, d) in deltas.iter().enumerate() {
            let (fv, sat) = encode_counting(d, &spec);
            report.saturations += sat;
            inputs.insert(i as ClientId, fv.scale_by(counts[i].1, &field));
        }
        let ids: Vec<ClientId> = inputs.keys().copied().collect();
        let mut session = SecAggSession::new(round, &ids, cfg.secagg, cfg.seed)?;
        let result = run_secagg_round(&mut session, &inputs, dropouts);
        audit.extend(session.take_audit());
        match result {
            Ok(out) => {
                let total: u64 = out.survivors.iter().map(|&i| counts[i as usize].1).sum();
                spec.validate(total)?;
                report.survivors = out.survivors.len();
                Some(decode(&out.sum, &spec, total as usize).scaled(1.0 / total as f64))
            }
            Err(e) if e.is_abort() => {
                report.status = RoundStatus::Failed;
                report.error = Some(e.to_string());
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        // Plaintext uploads; the server sees each encoded update as is.
        let live: Vec<usize> = (0..deltas.len())
            .filter(|&i| dropouts.is_live(i as ClientId, Phase::MaskedInput))
            .collect();
        for &i in &live {
            audit.append(Envelope {
                round_id: round,
                phase: Phase::MaskedInput,
                sender: i as ClientId,
                receiver: SERVER_ID,
                payload: encode_counting(&deltas[i], &spec).0.to_bytes(),
            });
        }
        report.survivors = live.len();
        if live.is_empty() {
            report.status = RoundStatus::Failed;
            report.error = Some("no client update arrived".into());
            None
        } else {
            let weights = cohort_weights(&live.iter().map(|&i| counts[i]).collect::<Vec<_>>())?;
            let chosen: Vec<ParameterVector> = live.iter().map(|&i| deltas[i].clone()).collect();
            Some(aggregate_plain(&chosen, &weights)?)
        }
    };

    if let Some(agg) = aggregate {
        state.theta = state.theta.add(&agg)?;
    }
    let mut model = fed.model.clone();
    model.set_parameters(&state.theta)?;
    let (accuracy, loss) = evaluate(model.as_ref(), &fed.test);
    report.accuracy = accuracy;
    report.loss = loss;
    if cfg.wall_time {
        report.elapsed_ms = Some(started.elapsed().as_millis() as u64);
    }
    state.history.push(report.clone());
    state.round += 1;
    Ok(report)
}

/// Everything an experiment produced.
pub struct ExperimentOutcome {
    pub reports: Vec<RoundReport>,
    pub audit: AuditLog,
    pub final_theta: ParameterVector,
}

impl ExperimentOutcome {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.reports.last().map(|r| r.accuracy)
    }
}

/// Builds the federation and runs `cfg.rounds` rounds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, OrchestratorError> {
    let fed = Federation::build(cfg)?;
    let mut state = fed.initial_state();
    let mut audit = AuditLog::new();
    for r in 0..fed.cfg.rounds {
        let dropouts = round_dropouts(&fed.cfg, r);
        run_round(&mut state, &fed, &dropouts, &mut audit)?;
    }
    Ok(ExperimentOutcome {
        reports: state.history,
        audit,
        final_theta: state.theta,
    })
}

/// `<root>/<name>/<mode>`.
pub fn output_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join(&cfg.name).join(cfg.mode.to_string())
}

/// Writes `reports.jsonl`, `audit.log` and the resolved `config.cfg` into `dir`.
pub fn persist(dir: &Path, cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<(), OrchestratorError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| OrchestratorError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let reports = dir.join("reports.jsonl");
    let mut f = fs::File::create(&reports).map_err(io(&reports))?;
    for r in &outcome.reports {
        let line = serde_json::to_string(r).expect("reports serialize");
        writeln!(f, "{line}").map_err(io(&reports))?;
    }
    let audit = dir.join("audit.log");
    outcome.audit.dump(&audit).map_err(io(&audit))?;
    let config = dir.join("config.cfg");
    fs::write(&config, cfg.to_text()).map_err(io(&config))?;
    Ok(())
}
