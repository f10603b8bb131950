//! Distributed without-replacement SVRG, simulated in-process over `k`
//! virtual machines.
//!
//! The data are randomly dealt to machines; each machine cuts its share into
//! batches of `T` points. Every epoch costs two communication rounds: a reduce
//! that assembles the full gradient at the snapshot from per-machine means,
//! and a broadcast of the new snapshot computed by the single active machine
//! from its next unused batch. Points never leave their machine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Objective;
use crate::rng::CounterRng;
use crate::sampling::{self, Permutation};
use crate::svrg::{EpochState, EpochTrace, SvrgConfig};

/// Version of the [`Message`] layout.
pub const MESSAGE_SCHEMA_VERSION: u32 = 1;

/// Fork tag of the generator used for the random data split.
const PARTITION_TAG: u64 = 2;

/// One machine's share of the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub machine: usize,
    /// Local points in the order they will be consumed.
    pub indices: Vec<usize>,
    pub batch_len: usize,
}

impl Shard {
    pub fn n_batches(&self) -> usize {
        self.indices.len() / self.batch_len
    }

    /// Batch `b` (0-based), `T` indices.
    pub fn batch(&self, b: usize) -> &[usize] {
        &self.indices[b * self.batch_len..(b + 1) * self.batch_len]
    }

    /// Points that fill no batch; they only enter full gradients.
    pub fn leftovers(&self) -> &[usize] {
        &self.indices[self.n_batches() * self.batch_len..]
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Deals a uniform random permutation of `0..m` into `k` contiguous blocks
/// whose sizes differ by at most one (larger blocks first).
pub fn partition(m: usize, k: usize, batch_len: usize, rng: &mut CounterRng) -> Result<Vec<Shard>> {
    if k == 0 || k > m {
        return Err(Error::invalid(format!("need 1 <= k <= m, got k = {k}, m = {m}")));
    }
    if batch_len == 0 {
        return Err(Error::invalid("batch length must be >= 1"));
    }
    let order = sampling::shuffle(m, rng)?.into_vec();
    let (base, extra) = (m / k, m % k);
    let mut shards = Vec::with_capacity(k);
    let mut lo = 0;
    for machine in 0..k {
        let n = base + usize::from(machine < extra);
        shards.push(Shard {
            machine,
            indices: order[lo..lo + n].to_vec(),
            batch_len,
        });
        lo += n;
    }
    Ok(shards)
}

/// The single-machine ordering that reproduces a distributed run: every
/// machine's batches in machine order, then all leftovers.
pub fn matched_permutation(shards: &[Shard]) -> Result<Permutation> {
    let mut order = Vec::with_capacity(shards.iter().map(Shard::len).sum());
    for s in shards {
        order.extend_from_slice(&s.indices[..s.n_batches() * s.batch_len]);
    }
    for s in shards {
        order.extend_from_slice(s.leftovers());
    }
    Permutation::from_order(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    Reduce,
    Broadcast,
}

/// Wire record of one vector transfer. Payloads are always `d` floats:
/// gradients or iterates, never data points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub round_id: usize,
    pub sender: usize,
    pub kind: MessageKind,
    pub payload: Vec<f64>,
}

/// Moves one round of messages between machines.
pub trait Transport {
    /// Delivers a round and returns the messages as received.
    fn exchange(&mut self, round: Vec<Message>) -> Result<Vec<Message>>;
}

/// Loss-free in-process transport that keeps a copy of every message.
#[derive(Debug, Default, Clone)]
pub struct RecordingChannel {
    pub messages: Vec<Message>,
}

impl Transport for RecordingChannel {
    fn exchange(&mut self, round: Vec<Message>) -> Result<Vec<Message>> {
        self.messages.extend(round.iter().cloned());
        Ok(round)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EpochComm {
    pub rounds: usize,
    pub floats: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLog {
    pub machines: usize,
    pub d: usize,
    pub rounds: usize,
    /// Total 64-bit floats transferred.
    pub floats: usize,
    pub per_epoch: Vec<EpochComm>,
}

impl CommLog {
    pub fn new(machines: usize, d: usize) -> Self {
        CommLog {
            machines,
            d,
            rounds: 0,
            floats: 0,
            per_epoch: Vec::new(),
        }
    }

    fn record_round(&mut self, msgs: &[Message]) {
        let floats: usize = msgs.iter().map(|m| m.payload.len()).sum();
        self.rounds += 1;
        self.floats += floats;
        let e = self.per_epoch.last_mut().expect("round outside an epoch");
        e.rounds += 1;
        e.floats += floats;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub epochs: usize,
    pub rounds: usize,
    pub floats: usize,
    pub bytes: usize,
    /// Rounds spent per factor-10 reduction of the suboptimality, when a
    /// trace with a decrease is supplied.
    pub rounds_per_decade: Option<f64>,
}

pub fn comm_cost_report(log: &CommLog, trace: Option<&EpochTrace>) -> CommReport {
    let rounds_per_decade = trace.and_then(|t| {
        let decades = (t.initial_subopt / t.final_subopt()).log10();
        (decades.is_finite() && decades > 0.0).then(|| log.rounds as f64 / decades)
    });
    CommReport {
        epochs: log.per_epoch.len(),
        rounds: log.rounds,
        floats: log.floats,
        bytes: log.floats * std::mem::size_of::<f64>(),
        rounds_per_decade,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistConfig {
    /// Machine count `k`.
    pub machines: usize,
    /// Step size, batch length `T`, epoch count `S`, output rule and seed.
    /// The sampler field is ignored: batches are consumed in shard order.
    pub svrg: SvrgConfig,
    /// Compute per-machine gradient means on separate threads.
    #[serde(default)]
    pub threaded: bool,
}

/// The random split [`run_distributed_svrg`] uses for this configuration.
pub fn shards_for(m: usize, config: &DistConfig) -> Result<Vec<Shard>> {
    let mut rng = CounterRng::new(config.svrg.seed, config.svrg.stream).fork(PARTITION_TAG);
    partition(m, config.machines, config.svrg.epoch_len, &mut rng)
}

pub fn run_distributed_svrg<O: Objective + ?Sized>(problem: &O, config: &DistConfig) -> Result<(EpochTrace, CommLog)> {
    let shards = shards_for(problem.m(), config)?;
    let mut channel = RecordingChannel::default();
    run_on_shards(problem, &shards, config, &mut channel)
}

/// Runs over a given split and transport.
pub fn run_on_shards<O: Objective + ?Sized, C: Transport>(
    problem: &O,
    shards: &[Shard],
    config: &DistConfig,
    channel: &mut C,
) -> Result<(EpochTrace, CommLog)> {
    let m = problem.m();
    let d = problem.d();
    let svrg = &config.svrg;
    check_shards(shards, m, svrg.epoch_len)?;
    let mut probe = svrg.clone();
    probe.sampler = sampling::SamplerKind::WithReplacement;
    probe.validate(m)?;
    let available: usize = shards.iter().map(Shard::n_batches).sum();
    if available < svrg.epochs {
        return Err(Error::BatchesExhausted {
            available,
            batch: svrg.epoch_len,
            required: svrg.epochs,
        });
    }

    // Sorted local index lists fix each machine's summation order.
    let local: Vec<Vec<usize>> = shards
        .iter()
        .map(|s| {
            let mut v = s.indices.clone();
            v.sort_unstable();
            v
        })
        .collect();

    let k = shards.len();
    let mut log = CommLog::new(k, d);
    let mut state = EpochState::new(problem, svrg, &vec![0.0; d])?;
    let mut mu = vec![0.0; d];
    let (mut active, mut batch) = (0usize, 0usize);
    let mut round_id = 0;

    for epoch in 1..=svrg.epochs {
        log.per_epoch.push(EpochComm::default());

        let snap = &state.snap;
        let means = if config.threaded {
            std::thread::scope(|scope| {
                let handles: Vec<_> = local
                    .iter()
                    .map(|idx| scope.spawn(move || local_mean(problem, idx, snap)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker panicked"))
                    .collect::<Vec<_>>()
            })
        } else {
            local.iter().map(|idx| local_mean(problem, idx, snap)).collect()
        };
        let msgs = means
            .into_iter()
            .enumerate()
            .map(|(sender, payload)| Message {
                round_id,
                sender,
                kind: MessageKind::Reduce,
                payload,
            })
            .collect();
        let received = channel.exchange(msgs)?;
        log.record_round(&received);
        round_id += 1;
        mu.iter_mut().for_each(|v| *v = 0.0);
        for msg in &received {
            let weight = local[msg.sender].len() as f64 / m as f64;
            for (a, g) in mu.iter_mut().zip(&msg.payload) {
                *a += weight * g;
            }
        }

        while shards[active].n_batches() == 0 {
            active += 1;
        }
        let shard = &shards[active];
        let mut pos = 0;
        let items = shard.batch(batch);
        state.run_epoch(problem, svrg, epoch, &mu, &mut || {
            let i = items[pos];
            pos += 1;
            Ok(i)
        })?;

        let msgs = (0..k)
            .map(|_| Message {
                round_id,
                sender: active,
                kind: MessageKind::Broadcast,
                payload: state.snap.clone(),
            })
            .collect();
        let received = channel.exchange(msgs)?;
        log.record_round(&received);
        round_id += 1;

        batch += 1;
        if batch >= shard.n_batches() {
            batch = 0;
            active += 1;
        }
    }
    Ok((state.finish(), log))
}

fn local_mean<O: Objective + ?Sized>(problem: &O, idx: &[usize], w: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; problem.d()];
    problem.mean_gradient_over(idx, w, &mut g);
    g
}

fn check_shards(shards: &[Shard], m: usize, batch_len: usize) -> Result<()> {
    if shards.is_empty() {
        return Err(Error::invalid("need at least one machine"));
    }
    let mut seen = vec![false; m];
    for (j, s) in shards.iter().enumerate() {
        if s.machine != j || s.batch_len != batch_len || s.is_empty() {
            return Err(Error::invalid(format!("shard {j} is malformed")));
        }
        for &i in &s.indices {
            if i >= m || seen[i] {
                return Err(Error::invalid("shards do not partition the data"));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|&b| !b) {
        return Err(Error::invalid("shards do not cover the data"));
    }
    Ok(())
}
