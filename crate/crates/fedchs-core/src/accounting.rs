//! Communication-cost ledger: every transmitted vector is charged to one of
//! four channels, and closed-form upper bounds for the sequential scheme can
//! be checked against what a run actually recorded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Who is talking to whom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Client → edge server (gradient uploads).
    ClientUp,
    /// Edge server → client (model broadcasts).
    ClientDown,
    /// Edge server → edge server (model handoffs / peer hops).
    EsEs,
    /// Edge server or client ↔ central parameter server.
    EsPs,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::ClientUp,
        Channel::ClientDown,
        Channel::EsEs,
        Channel::EsPs,
    ];

    fn index(self) -> usize {
        match self {
            Channel::ClientUp => 0,
            Channel::ClientDown => 1,
            Channel::EsEs => 2,
            Channel::EsPs => 3,
        }
    }
}

/// One recorded transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferEvent {
    pub round: u64,
    pub channel: Channel,
    pub bits: u64,
}

/// Totals per channel, in bits. (Bit counts are unsigned by construction,
/// so negative transfers cannot even be expressed.)
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelTotals {
    pub client_up: u64,
    pub client_down: u64,
    pub es_es: u64,
    pub es_ps: u64,
}

impl ChannelTotals {
    pub fn total(&self) -> u64 {
        self.client_up + self.client_down + self.es_es + self.es_ps
    }

    pub fn get(&self, channel: Channel) -> u64 {
        match channel {
            Channel::ClientUp => self.client_up,
            Channel::ClientDown => self.client_down,
            Channel::EsEs => self.es_es,
            Channel::EsPs => self.es_ps,
        }
    }
}

/// Append-only communication ledger. Totals are maintained incrementally
/// and always equal the fold of the event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CostLedger {
    totals: [u64; 4],
    events: Vec<TransferEvent>,
}

impl CostLedger {
    pub fn new() -> Self {
        CostLedger::default()
    }

    /// Records one transmission of `bits` bits during `round`.
    pub fn record_transfer(&mut self, round: u64, channel: Channel, bits: u64) {
        self.totals[channel.index()] += bits;
        self.events.push(TransferEvent {
            round,
            channel,
            bits,
        });
    }

    pub fn total(&self, channel: Channel) -> u64 {
        self.totals[channel.index()]
    }

    pub fn totals(&self) -> ChannelTotals {
        ChannelTotals {
            client_up: self.totals[0],
            client_down: self.totals[1],
            es_es: self.totals[2],
            es_ps: self.totals[3],
        }
    }

    pub fn grand_total(&self) -> u64 {
        self.totals.iter().sum()
    }

    pub fn events(&self) -> &[TransferEvent] {
        &self.events
    }

    /// Cumulative per-channel totals through each round `0..rounds`.
    /// Entry `t` covers every event with `event.round ≤ t`.
    pub fn cumulative_by_round(&self, rounds: u64) -> Vec<ChannelTotals> {
        let mut per_round = vec![ChannelTotals::default(); rounds as usize];
        for event in &self.events {
            if (event.round as usize) < per_round.len() {
                let entry = &mut per_round[event.round as usize];
                match event.channel {
                    Channel::ClientUp => entry.client_up += event.bits,
                    Channel::ClientDown => entry.client_down += event.bits,
                    Channel::EsEs => entry.es_es += event.bits,
                    Channel::EsPs => entry.es_ps += event.bits,
                }
            }
        }
        let mut acc = ChannelTotals::default();
        per_round
            .iter()
            .map(|delta| {
                acc.client_up += delta.client_up;
                acc.client_down += delta.client_down;
                acc.es_es += delta.es_es;
                acc.es_ps += delta.es_ps;
                acc
            })
            .collect()
    }
}

/// Closed-form per-channel ceilings for a `rounds × local_steps` sequential
/// run where every transmitted vector costs `bits_per_vector` bits and no
/// cluster has more than `max_cluster_size` clients. Returns
/// `(client_up, client_down, es_es)` bounds; the central-server channel is
/// exactly zero for this scheme.
pub fn fedchs_upper_bounds(
    rounds: u64,
    local_steps: u64,
    bits_per_vector: u64,
    max_cluster_size: u64,
) -> (u64, u64, u64) {
    let client_leg = rounds * local_steps * bits_per_vector * max_cluster_size;
    (client_leg, client_leg, rounds * bits_per_vector)
}

/// Outcome of a bits-to-accuracy-threshold query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BitsToThreshold {
    /// Threshold first met at `round`; `bits` is the cumulative total over
    /// all channels through that round (inclusive).
    Reached {
        round: u64,
        bits: u64,
    },
    NotReached,
}

/// Scans an accuracy series aligned with per-round cumulative bit totals and
/// reports the cost of first reaching accuracy `gamma`.
pub fn bits_to_threshold(
    cumulative_bits: &[u64],
    accuracy: &[f64],
    gamma: f64,
) -> Result<BitsToThreshold> {
    if cumulative_bits.len() != accuracy.len() {
        return Err(Error::contract(format!(
            "bits_to_threshold: {} bit entries but {} accuracy entries",
            cumulative_bits.len(),
            accuracy.len()
        )));
    }
    if !gamma.is_finite() {
        return Err(Error::contract("bits_to_threshold: gamma must be finite"));
    }
    for (round, (&bits, &acc)) in cumulative_bits.iter().zip(accuracy).enumerate() {
        if acc >= gamma {
            return Ok(BitsToThreshold::Reached {
                round: round as u64,
                bits,
            });
        }
    }
    Ok(BitsToThreshold::NotReached)
}
