use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Independent Bernoulli message loss with a fixed drop probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropModel {
    p: f64,
    seed: u64,
}

/// The two communication phases of a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ReduceScatter,
    AllGather,
}

impl DropModel {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("drop rate {p} outside [0, 1]")));
        }
        Ok(Self { p, seed })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Whether the message identified by `(iteration, stage, block, peer)` is
    /// lost. `peer` is the sender in reduce-scatter and the receiver in
    /// all-gather. One draw per key; the caller exempts self-addressed messages.
    pub fn dropped(&self, iteration: u64, stage: Stage, block: usize, peer: usize) -> bool {
        if self.p <= 0.0 {
            return false;
        }
        if self.p >= 1.0 {
            return true;
        }
        let domain = match stage {
            Stage::ReduceScatter => Domain::ReduceScatter,
            Stage::AllGather => Domain::AllGather,
        };
        let u: f64 = rng::stream(self.seed, domain, iteration, rng::lane(block, peer)).random();
        u < self.p
    }
}

/// How block owners are assigned each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OwnerMode {
    /// Block j is always averaged by worker j.
    FixedIdentity,
    /// A fresh uniform permutation every round.
    #[default]
    RandomPermutation,
}

impl std::str::FromStr for OwnerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed-identity" | "fixed" | "identity" => Ok(Self::FixedIdentity),
            "random-permutation" | "random" => Ok(Self::RandomPermutation),
            other => Err(Error::Config(format!("unknown owner mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for OwnerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::FixedIdentity => "fixed-identity",
            Self::RandomPermutation => "random-permutation",
        })
    }
}

/// Everything the network decided in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommOutcome {
    owners: Vec<usize>,
    rs_received: Vec<Vec<bool>>,
    ag_received: Vec<Vec<bool>>,
}

impl CommOutcome {
    /// Builds an outcome from explicit membership masks (indexed `[block][worker]`).
    pub fn new(owners: Vec<usize>, rs_received: Vec<Vec<bool>>, ag_received: Vec<Vec<bool>>) -> Result<Self> {
        let n = owners.len();
        if n == 0 || rs_received.len() != n || ag_received.len() != n {
            return Err(Error::Shape {
                expected: format!("{n} blocks"),
                actual: format!("{} rs / {} ag", rs_received.len(), ag_received.len()),
            });
        }
        let mut seen = vec![false; n];
        for &o in &owners {
            if o >= n || seen[o] {
                return Err(Error::InvalidParameter("owners must be a permutation".into()));
            }
            seen[o] = true;
        }
        for j in 0..n {
            if rs_received[j].len() != n || ag_received[j].len() != n {
                return Err(Error::Shape {
                    expected: format!("{n} workers per mask"),
                    actual: format!("block {j}"),
                });
            }
            if !rs_received[j][owners[j]] || !ag_received[j][owners[j]] {
                return Err(Error::InvalidParameter(format!(
                    "owner of block {j} must receive its own messages"
                )));
            }
        }
        Ok(Self { owners, rs_received, ag_received })
    }

    pub fn workers(&self) -> usize {
        self.owners.len()
    }

    pub fn owner(&self, block: usize) -> usize {
        self.owners[block]
    }

    pub fn owners(&self) -> &[usize] {
        &self.owners
    }

    /// Did `sender`'s copy of `block` reach the owner?
    pub fn rs_delivered(&self, block: usize, sender: usize) -> bool {
        self.rs_received[block][sender]
    }

    /// Did the averaged `block` reach `receiver`?
    pub fn ag_delivered(&self, block: usize, receiver: usize) -> bool {
        self.ag_received[block][receiver]
    }

    pub fn rs_set(&self, block: usize) -> Vec<usize> {
        members(&self.rs_received[block])
    }

    pub fn ag_set(&self, block: usize) -> Vec<usize> {
        members(&self.ag_received[block])
    }
}

fn members(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
}

/// Samples owners and every drop event for one iteration.
pub fn sample_comm_outcome(n: usize, drop: &DropModel, iteration: u64, owner_mode: OwnerMode) -> CommOutcome {
    assert!(n >= 1, "need at least one worker");
    let mut owners: Vec<usize> = (0..n).collect();
    if owner_mode == OwnerMode::RandomPermutation {
        let mut rng = rng::stream(drop.seed(), Domain::Owners, iteration, 0);
        owners.shuffle(&mut rng);
    }
    let mask = |stage: Stage, block: usize| -> Vec<bool> {
        (0..n)
            .map(|peer| peer == owners[block] || !drop.dropped(iteration, stage, block, peer))
            .collect()
    };
    let rs_received = (0..n).map(|j| mask(Stage::ReduceScatter, j)).collect();
    let ag_received = (0..n).map(|j| mask(Stage::AllGather, j)).collect();
    CommOutcome { owners, rs_received, ag_received }
}

/// Column-stochastic matrix `W` with `X_next^(block) = V^(block) W`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix(DMatrix<f64>);

impl MixingMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Column k is uniform over the reduce-scatter survivors when worker k got
/// the average back, otherwise the unit vector e_k.
pub fn extract_mixing_matrix(outcome: &CommOutcome, block: usize) -> MixingMatrix {
    let n = outcome.workers();
    let survivors = outcome.rs_set(block);
    let weight = 1.0 / survivors.len() as f64;
    let mut w = DMatrix::zeros(n, n);
    for k in 0..n {
        if outcome.ag_delivered(block, k) {
            for &m in &survivors {
                w[(m, k)] = weight;
            }
        } else {
            w[(k, k)] = 1.0;
        }
    }
    MixingMatrix(w)
}
