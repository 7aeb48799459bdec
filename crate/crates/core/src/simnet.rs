//! Deterministic two-node network in virtual time.
//!
//! [`Scheduler`] orders events by `(time, insertion)`. [`SimNet`] owns two
//! [`VirtualNic`]s joined by a [`VirtualLink`]; a transmitted payload is built
//! into a PPDU, pushed through the sender's Tx chain, the link channel and the
//! receiver's Rx chain, decoded, and delivered `latency_us` later. Loss and
//! noise draws come from a counter-based generator keyed by the link seed and
//! the message index, so they do not depend on processing order.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clocking::{bandwidth_for_quad, quad_for_bandwidth, quantize_carrier, Band, PllQuadruple};
use crate::error::{Error, Result};
use crate::impairments::{apply_channel, rx_chain, tx_chain, ImpairmentProfile};
use crate::phy::{assemble_frame, receive, BasebandBurst, FrameConfig, GuardInterval, PhyMode, RxOptions, RxResult};

/// Virtual time in microseconds.
pub type Micros = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(u64);

pub struct Scheduler<E> {
    now: Micros,
    next_seq: u64,
    queue: BinaryHeap<Reverse<(Micros, u64)>>,
    pending: HashMap<u64, E>,
    cancelled: HashSet<u64>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Scheduler { now: 0, next_seq: 0, queue: BinaryHeap::new(), pending: HashMap::new(), cancelled: HashSet::new() }
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    /// Queue `event` at absolute time `at` (clamped to now).
    pub fn schedule(&mut self, event: E, at: Micros) -> EventId {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse((at.max(self.now), seq)));
        self.pending.insert(seq, event);
        EventId(seq)
    }

    pub fn schedule_in(&mut self, event: E, delay: Micros) -> EventId {
        self.schedule(event, self.now + delay)
    }

    /// Returns false when the event already fired or was cancelled.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if self.pending.remove(&id.0).is_some() {
            self.cancelled.insert(id.0);
            true
        } else {
            false
        }
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_empty()
    }

    /// Next live event, advancing the clock.
    pub fn pop(&mut self) -> Option<(Micros, EventId, E)> {
        while let Some(Reverse((t, seq))) = self.queue.pop() {
            if self.cancelled.remove(&seq) {
                continue;
            }
            let ev = self.pending.remove(&seq).expect("queued event has a payload");
            self.now = t;
            return Some((t, EventId(seq), ev));
        }
        None
    }

    /// Drain the queue, handing each event to `handler`, which may schedule
    /// more. Returns `(time, id)` for every event in processing order.
    pub fn run_until_idle(&mut self, mut handler: impl FnMut(&mut Self, Micros, E)) -> Vec<(Micros, EventId)> {
        let mut fired = Vec::new();
        while let Some((t, id, ev)) = self.pop() {
            fired.push((t, id));
            handler(self, t, ev);
        }
        fired
    }
}

/// How a NIC resolves a requested carrier that is not on the synthesizer grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CarrierChoice {
    #[default]
    Nearest,
    Lower,
    Upper,
}

/// Frequencies a NIC actually operates at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tune {
    pub requested_cf: f64,
    pub requested_sf: f64,
    pub cf: f64,
    pub sf: f64,
    pub quad: PllQuadruple,
}

impl Tune {
    pub fn overlaps(&self, other: &Tune) -> bool {
        (self.cf - other.cf).abs() < 0.5 * (self.sf + other.sf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxParams {
    pub mode: PhyMode,
    pub mcs: u8,
    pub n_ess: u8,
    pub guard: GuardInterval,
}

impl Default for TxParams {
    fn default() -> Self {
        TxParams { mode: PhyMode::HT20, mcs: 0, n_ess: 0, guard: GuardInterval::Long }
    }
}

#[derive(Debug, Clone)]
pub struct VirtualNic {
    pub node_id: u32,
    pub tx_profile: ImpairmentProfile,
    pub rx_profile: ImpairmentProfile,
    pub tx: TxParams,
    /// Chain bitmasks; the lowest selected chain is the one used.
    pub txcm: u8,
    pub rxcm: u8,
    pub carrier_choice: CarrierChoice,
    tuned: Option<Tune>,
}

impl VirtualNic {
    pub fn new(node_id: u32, profile: ImpairmentProfile, tx: TxParams) -> Self {
        VirtualNic {
            node_id,
            tx_profile: profile.clone(),
            rx_profile: profile,
            tx,
            txcm: 1,
            rxcm: 1,
            carrier_choice: CarrierChoice::Nearest,
            tuned: None,
        }
    }

    pub fn with_chain_masks(mut self, txcm: u8, rxcm: u8) -> Result<Self> {
        for (m, what) in [(txcm, "txcm"), (rxcm, "rxcm")] {
            if m == 0 || m > 7 {
                return Err(Error::domain(format!("{what} must select at least one of three chains, got {m}")));
            }
        }
        self.txcm = txcm;
        self.rxcm = rxcm;
        Ok(self)
    }

    pub fn tx_chain_index(&self) -> u32 {
        self.txcm.trailing_zeros()
    }

    pub fn rx_chain_index(&self) -> u32 {
        self.rxcm.trailing_zeros()
    }

    pub fn tuned(&self) -> Option<Tune> {
        self.tuned
    }

    /// Snap `(cf, sf)` onto the carrier grid and the nearest PLL bandwidth.
    pub fn tune(&mut self, cf: f64, sf: f64) -> Result<Tune> {
        let band = Band::containing(cf).ok_or_else(|| Error::domain(format!("carrier {cf} Hz is in no supported band")))?;
        let q = quantize_carrier(cf, band)?;
        let chosen = match self.carrier_choice {
            CarrierChoice::Nearest => q.chosen,
            CarrierChoice::Lower => q.lower,
            CarrierChoice::Upper => q.upper,
        };
        let quad = quad_for_bandwidth(sf)?;
        let t = Tune { requested_cf: cf, requested_sf: sf, cf: chosen, sf: bandwidth_for_quad(quad)?, quad };
        self.tuned = Some(t);
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualLink {
    pub latency_us: Micros,
    pub loss_prob: f64,
    pub seed: u64,
    /// Channel from node 0 to node 1, and back.
    pub forward: ImpairmentProfile,
    pub reverse: ImpairmentProfile,
    /// Add the difference between the two chosen carriers as CFO.
    pub quantization_cfo: bool,
    /// Silence padded around each PPDU, in samples.
    pub guard_samples: usize,
}

impl VirtualLink {
    pub fn new(channel: ImpairmentProfile, seed: u64) -> Self {
        VirtualLink {
            latency_us: 100,
            loss_prob: 0.0,
            seed,
            forward: channel.clone(),
            reverse: channel,
            quantization_cfo: true,
            guard_samples: 64,
        }
    }

    pub fn with_loss(mut self, p: f64) -> Self {
        self.loss_prob = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(Error::domain(format!("loss probability {} outside [0, 1]", self.loss_prob)));
        }
        self.forward.validate()?;
        self.reverse.validate()
    }

    fn draws(&self, index: u64) -> (f64, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        (rng.random::<f64>(), rng.random::<u64>())
    }

    /// Loss decision for message `index`, independent of any other message.
    pub fn is_lost(&self, index: u64) -> bool {
        self.draws(index).0 < self.loss_prob
    }

    pub fn noise_seed(&self, index: u64) -> u64 {
        self.draws(index).1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    Lost,
    NotTuned,
    NoOverlap,
    SampleRateMismatch,
    /// The receiver retuned while the frame was in flight.
    Retuned,
    Undecodable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEntry {
    Send { time_us: Micros, index: u64, from: usize, bytes: usize },
    Deliver { time_us: Micros, index: u64, to: usize },
    Drop { time_us: Micros, index: u64, from: usize, reason: DropReason },
    Timer { time_us: Micros, node: usize, token: u64 },
    Retune { time_us: Micros, node: usize, cf: f64, sf: f64 },
}

impl TraceEntry {
    pub fn time_us(&self) -> Micros {
        match self {
            TraceEntry::Send { time_us, .. }
            | TraceEntry::Deliver { time_us, .. }
            | TraceEntry::Drop { time_us, .. }
            | TraceEntry::Timer { time_us, .. }
            | TraceEntry::Retune { time_us, .. } => *time_us,
        }
    }
}

/// A decoded frame handed to the receiving node.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub index: u64,
    pub from: usize,
    pub payload: Vec<u8>,
    pub rx: Box<RxResult>,
    /// Receiver tune at decode time.
    pub tune: Tune,
}

#[derive(Debug)]
pub enum NetEvent {
    Deliver { to: usize, delivery: Delivery },
    Timer { node: usize, token: u64 },
}

pub struct SimNet {
    pub nics: [VirtualNic; 2],
    pub link: VirtualLink,
    pub rx_options: RxOptions,
    sched: Scheduler<NetEvent>,
    next_index: u64,
    trace: Vec<TraceEntry>,
}

impl SimNet {
    pub fn new(nics: [VirtualNic; 2], link: VirtualLink) -> Result<Self> {
        link.validate()?;
        Ok(SimNet { nics, link, rx_options: RxOptions::default(), sched: Scheduler::new(), next_index: 0, trace: Vec::new() })
    }

    pub fn now(&self) -> Micros {
        self.sched.now()
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// One JSON object per line.
    pub fn trace_text(&self) -> String {
        self.trace.iter().map(|e| serde_json::to_string(e).expect("trace entries serialize") + "\n").collect()
    }

    pub fn messages_sent(&self) -> u64 {
        self.next_index
    }

    pub fn tune(&mut self, node: usize, cf: f64, sf: f64) -> Result<Tune> {
        let t = self.nics[node].tune(cf, sf)?;
        self.trace.push(TraceEntry::Retune { time_us: self.now(), node, cf: t.cf, sf: t.sf });
        Ok(t)
    }

    pub fn set_timer(&mut self, node: usize, token: u64, after_us: Micros) -> EventId {
        self.sched.schedule_in(NetEvent::Timer { node, token }, after_us)
    }

    pub fn cancel(&mut self, id: EventId) -> bool {
        self.sched.cancel(id)
    }

    /// CFO contributed by the two chosen carriers (sender minus receiver).
    pub fn quantization_cfo(&self, from: usize) -> f64 {
        match (self.nics[from].tuned, self.nics[1 - from].tuned) {
            (Some(a), Some(b)) if self.link.quantization_cfo => a.cf - b.cf,
            _ => 0.0,
        }
    }

    /// Baseband seen by the peer of `from`: Tx chain, channel, Rx chain.
    pub fn propagate(&self, from: usize, burst: &BasebandBurst, index: u64) -> Result<BasebandBurst> {
        let (tx, rx) = (&self.nics[from], &self.nics[1 - from]);
        let channel = if from == 0 { &self.link.forward } else { &self.link.reverse };
        let b = tx_chain(burst, &tx.tx_profile, tx.tx.mode)?;
        let b = apply_channel(&b, channel, self.quantization_cfo(from), self.link.noise_seed(index));
        rx_chain(&b, &rx.rx_profile, rx.tx.mode)
    }

    fn check_path(&self, from: usize, index: u64) -> std::result::Result<(Tune, Tune), DropReason> {
        if self.link.is_lost(index) {
            return Err(DropReason::Lost);
        }
        let (Some(a), Some(b)) = (self.nics[from].tuned, self.nics[1 - from].tuned) else {
            return Err(DropReason::NotTuned);
        };
        if !a.overlaps(&b) {
            return Err(DropReason::NoOverlap);
        }
        if a.sf != b.sf {
            return Err(DropReason::SampleRateMismatch);
        }
        Ok((a, b))
    }

    /// Send `payload` from node `from`. Returns the message index; a failed
    /// delivery is recorded in the trace, not raised.
    pub fn transmit(&mut self, from: usize, payload: &[u8], scrambler_seed: u8) -> Result<u64> {
        let index = self.next_index;
        self.next_index += 1;
        let now = self.now();
        self.trace.push(TraceEntry::Send { time_us: now, index, from, bytes: payload.len() });
        let to = 1 - from;
        let drop = |net: &mut Self, reason| net.trace.push(TraceEntry::Drop { time_us: now, index, from, reason });
        let (tx_tune, rx_tune) = match self.check_path(from, index) {
            Ok(t) => t,
            Err(reason) => {
                drop(self, reason);
                return Ok(index);
            }
        };
        let p = &self.nics[from].tx;
        let cfg = FrameConfig::new(p.mode, p.mcs, payload.to_vec())
            .with_guard(p.guard)
            .with_ess(p.n_ess)
            .with_seed(scrambler_seed);
        let mut burst = assemble_frame(&cfg)?;
        burst.sample_rate = tx_tune.sf;
        burst.center_freq = tx_tune.cf;
        let pad = vec![Complex64::new(0.0, 0.0); self.link.guard_samples];
        burst.samples.splice(0..0, pad.iter().copied());
        burst.samples.extend(pad);
        let out = self.propagate(from, &burst, index)?;
        match receive(&out, self.nics[to].tx.mode, &self.rx_options) {
            Ok(rx) if rx.fcs_ok => {
                let mut rx = rx;
                rx.csi.center_freq = rx_tune.cf;
                rx.csi.meta.tx_id = self.nics[from].node_id;
                rx.csi.meta.rx_id = self.nics[to].node_id;
                let delivery = Delivery { index, from, payload: rx.payload.clone(), rx: Box::new(rx), tune: rx_tune };
                self.sched.schedule_in(NetEvent::Deliver { to, delivery }, self.link.latency_us);
            }
            Ok(_) => drop(self, DropReason::Undecodable("FCS mismatch".into())),
            Err(e) => drop(self, DropReason::Undecodable(e.to_string())),
        }
        Ok(index)
    }

    /// Next event in virtual time, or `None` when idle.
    pub fn next_event(&mut self) -> Option<(Micros, NetEvent)> {
        loop {
            let (t, _, ev) = self.sched.pop()?;
            match &ev {
                NetEvent::Deliver { to, delivery } => {
                    if self.nics[*to].tuned != Some(delivery.tune) {
                        self.trace.push(TraceEntry::Drop {
                            time_us: t,
                            index: delivery.index,
                            from: delivery.from,
                            reason: DropReason::Retuned,
                        });
                        continue;
                    }
                    self.trace.push(TraceEntry::Deliver { time_us: t, index: delivery.index, to: *to });
                }
                NetEvent::Timer { node, token } => {
                    self.trace.push(TraceEntry::Timer { time_us: t, node: *node, token: *token });
                }
            }
            return Some((t, ev));
        }
    }
}
