//! Message-level execution of one reduce-scatter / all-gather round.
//!
//! Workers only see the messages the channel lets through. The channel asks
//! the round's [`CommOutcome`] whether each message survives, so the same
//! outcome can be replayed against the global `V W` view.

use nalgebra::DMatrix;

use super::{BlockPartition, CommOutcome, ModelMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// A worker's copy of one block, addressed to the block owner.
    Reduce { block: usize, from: usize, payload: Vec<f64> },
    /// The owner's averaged block, broadcast to everyone.
    Gather { block: usize, from: usize, payload: Vec<f64> },
}

/// Lossy point-to-point delivery for a single round.
#[derive(Debug)]
pub struct Channel<'a> {
    outcome: &'a CommOutcome,
    delivered: usize,
    dropped: usize,
}

impl<'a> Channel<'a> {
    pub fn new(outcome: &'a CommOutcome) -> Self {
        Self { outcome, delivered: 0, dropped: 0 }
    }

    /// Returns the message if it reaches `to`.
    pub fn send(&mut self, to: usize, msg: Message) -> Option<Message> {
        let ok = match &msg {
            Message::Reduce { block, from, .. } => {
                debug_assert_eq!(to, self.outcome.owner(*block));
                self.outcome.rs_delivered(*block, *from)
            }
            Message::Gather { block, .. } => self.outcome.ag_delivered(*block, to),
        };
        if ok {
            self.delivered += 1;
            Some(msg)
        } else {
            self.dropped += 1;
            None
        }
    }

    pub fn delivered(&self) -> usize {
        self.delivered
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Ready,
    Reduced,
    Done,
}

/// One participant of the exchange, holding the vector it contributes.
#[derive(Debug, Clone)]
pub struct Worker {
    id: usize,
    values: Vec<f64>,
    inbox: Vec<Message>,
    phase: Phase,
}

impl Worker {
    pub fn new(id: usize, values: Vec<f64>) -> Self {
        Self { id, values, inbox: Vec::new(), phase: Phase::Ready }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Reduce-scatter sends: block j goes to its owner.
    pub fn reduce_messages(&self, part: &BlockPartition, outcome: &CommOutcome) -> Vec<(usize, Message)> {
        debug_assert_eq!(self.phase, Phase::Ready);
        (0..part.blocks())
            .map(|block| {
                let payload = self.values[part.range(block)].to_vec();
                (outcome.owner(block), Message::Reduce { block, from: self.id, payload })
            })
            .collect()
    }

    pub fn receive(&mut self, msg: Message) {
        self.inbox.push(msg);
    }

    /// Averages whatever arrived for each owned block. Contributions are
    /// summed in sender order and divided by their count.
    pub fn average_owned(&mut self, owned: &[usize]) -> Vec<(usize, Vec<f64>)> {
        debug_assert_eq!(self.phase, Phase::Ready);
        let mut out = Vec::with_capacity(owned.len());
        for &block in owned {
            let mut parts: Vec<(usize, &Vec<f64>)> = self
                .inbox
                .iter()
                .filter_map(|m| match m {
                    Message::Reduce { block: b, from, payload } if *b == block => Some((*from, payload)),
                    _ => None,
                })
                .collect();
            parts.sort_by_key(|(from, _)| *from);
            let len = parts.first().map_or(0, |(_, p)| p.len());
            let mut sum = vec![0.0; len];
            for (_, p) in &parts {
                for (s, v) in sum.iter_mut().zip(p.iter()) {
                    *s += v;
                }
            }
            let count = parts.len() as f64;
            sum.iter_mut().for_each(|s| *s /= count);
            out.push((block, sum));
        }
        self.inbox.retain(|m| !matches!(m, Message::Reduce { .. }));
        self.phase = Phase::Reduced;
        out
    }

    /// Overwrites every block for which an average arrived.
    pub fn apply_gathered(&mut self, part: &BlockPartition) {
        debug_assert_eq!(self.phase, Phase::Reduced);
        for msg in self.inbox.drain(..) {
            if let Message::Gather { block, payload, .. } = msg {
                self.values[part.range(block)].copy_from_slice(&payload);
            }
        }
        self.phase = Phase::Done;
    }
}

fn check_round(values: &ModelMatrix, part: &BlockPartition, outcome: &CommOutcome) -> Result<()> {
    let n = values.workers();
    if part.blocks() != n || outcome.workers() != n || part.dim() != values.dim() {
        return Err(Error::Shape {
            expected: format!("{} workers, {} coordinates", n, values.dim()),
            actual: format!(
                "partition {} blocks over {} coordinates, outcome {} workers",
                part.blocks(),
                part.dim(),
                outcome.workers()
            ),
        });
    }
    Ok(())
}

/// Runs the two lossy phases over `values` and returns what each worker holds afterwards.
fn exchange(values: &ModelMatrix, part: &BlockPartition, outcome: &CommOutcome) -> Result<ModelMatrix> {
    check_round(values, part, outcome)?;
    let n = values.workers();
    let mut workers: Vec<Worker> = (0..n).map(|i| Worker::new(i, values.column(i).as_slice().to_vec())).collect();
    let mut channel = Channel::new(outcome);

    let sends: Vec<(usize, Message)> = workers.iter().flat_map(|w| w.reduce_messages(part, outcome)).collect();
    for (to, msg) in sends {
        if let Some(msg) = channel.send(to, msg) {
            workers[to].receive(msg);
        }
    }

    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); n];
    for block in 0..n {
        owned[outcome.owner(block)].push(block);
    }
    let mut broadcasts = Vec::new();
    for w in workers.iter_mut() {
        for (block, avg) in w.average_owned(&owned[w.id()]) {
            broadcasts.push(Message::Gather { block, from: w.id(), payload: avg });
        }
    }
    for msg in broadcasts {
        for to in 0..n {
            if let Some(m) = channel.send(to, msg.clone()) {
                workers[to].receive(m);
            }
        }
    }
    for w in workers.iter_mut() {
        w.apply_gathered(part);
    }

    let data = DMatrix::from_fn(values.dim(), n, |r, c| workers[c].values()[r]);
    ModelMatrix::from_matrix(data)
}

/// Model averaging: exchange the intermediate models `v`.
pub fn rps_round(v: &ModelMatrix, part: &BlockPartition, outcome: &CommOutcome) -> Result<ModelMatrix> {
    exchange(v, part, outcome)
}

/// Gradient averaging under the same loss pattern: gradients are exchanged
/// and each worker steps with whatever (possibly partial) average it holds.
pub fn gradient_averaging_round(
    x: &ModelMatrix,
    grads: &ModelMatrix,
    gamma: f64,
    part: &BlockPartition,
    outcome: &CommOutcome,
) -> Result<ModelMatrix> {
    let mixed = exchange(grads, part, outcome)?;
    super::local_sgd_step(x, &mixed, gamma)
}

/// Reliable all-reduce: every worker gets the exact mean.
pub fn perfect_average(v: &ModelMatrix) -> ModelMatrix {
    ModelMatrix::replicated(&v.mean_column(), v.workers())
}
