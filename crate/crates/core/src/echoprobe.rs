//! EchoProbe round-trip CSI measurement.
//!
//! The initiator walks a grid of `(cf, sf)` points. At each point it runs
//! `repeat` request/reply exchanges; the responder answers every
//! `CSIProbeRequest` with a `CSIProbeReply` that carries the CSI it measured
//! on the request. Between points a `FreqChangeRequest`/`FreqChangeAck` pair
//! moves both nodes: the responder acks on the old channel and then retunes,
//! the initiator retunes once the ack arrives.
//!
//! Both state machines are pure: [`initiator_step`] and [`responder_step`]
//! map `(state, event)` to `(state, actions)`. [`run_scan`] executes the
//! actions over a [`SimNet`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capture::CaptureRecord;
use crate::error::{Error, Result};
use crate::simnet::{Micros, NetEvent, SimNet, TxParams};

/// Parse `start:step:stop` (inclusive) or a single value.
pub fn expand_range(s: &str) -> Result<Vec<f64>> {
    let parse = |t: &str| {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::domain(format!("'{t}' is not a number in range '{s}'")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [v] => Ok(vec![parse(v)?]),
        [a, b, c] => {
            let (start, step, stop) = (parse(a)?, parse(b)?, parse(c)?);
            if step <= 0.0 {
                return Err(Error::domain(format!("range step must be positive in '{s}'")));
            }
            if stop < start {
                return Err(Error::domain(format!("range stop below start in '{s}'")));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(Error::domain(format!("malformed range '{s}', expected start:step:stop"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub cf: f64,
    pub sf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub cf_points: Vec<f64>,
    pub sf_points: Vec<f64>,
    pub repeat: u32,
    pub delay_us: Micros,
    pub tx: TxParams,
    pub txcm: u8,
    pub rxcm: u8,
    pub retries: u32,
    pub retry_timeout_us: Micros,
    /// Data-symbol CSI kept in the initiator's own records.
    pub keep_data_symbols: usize,
    /// Data-symbol CSI the responder sends back in its reply payload.
    pub reply_data_symbols: usize,
}

impl ScanPlan {
    pub fn new(cf_points: Vec<f64>, sf_points: Vec<f64>, repeat: u32) -> Self {
        ScanPlan {
            cf_points,
            sf_points,
            repeat,
            delay_us: 0,
            tx: TxParams::default(),
            txcm: 1,
            rxcm: 1,
            retries: 5,
            retry_timeout_us: 2000,
            keep_data_symbols: 16,
            reply_data_symbols: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (pts, what) in [(&self.cf_points, "cf"), (&self.sf_points, "sf")] {
            if pts.is_empty() {
                return Err(Error::domain(format!("{what} point list is empty")));
            }
            if pts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::domain(format!("{what} points must be strictly increasing")));
            }
        }
        if self.repeat == 0 {
            return Err(Error::domain("repeat must be at least 1"));
        }
        if self.retry_timeout_us == 0 {
            return Err(Error::domain("retry timeout must be positive"));
        }
        Ok(())
    }

    /// Carrier-major order.
    pub fn grid(&self) -> Vec<GridPoint> {
        self.cf_points.iter().flat_map(|&cf| self.sf_points.iter().map(move |&sf| GridPoint { cf, sf })).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    CsiProbeRequest = 1,
    CsiProbeReply = 2,
    FreqChangeRequest = 3,
    FreqChangeAck = 4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeMessage {
    pub kind: MessageKind,
    pub session_id: u32,
    pub seq: u32,
    /// Current point for probes; the next point for frequency changes.
    pub point: GridPoint,
    pub payload: Option<CaptureRecord>,
}

impl ProbeMessage {
    pub const MAGIC: [u8; 4] = *b"EPRB";
    pub const HEADER_LEN: usize = 16;

    /// 16-byte header (magic, kind, flags, 2 reserved, session_id, seq), the
    /// grid point as two `f64`, then the optional CSI record.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut b = Vec::with_capacity(64);
        b.extend_from_slice(&Self::MAGIC);
        b.push(self.kind as u8);
        b.push(self.payload.is_some() as u8);
        b.extend_from_slice(&[0, 0]);
        b.extend_from_slice(&self.session_id.to_le_bytes());
        b.extend_from_slice(&self.seq.to_le_bytes());
        b.extend_from_slice(&self.point.cf.to_le_bytes());
        b.extend_from_slice(&self.point.sf.to_le_bytes());
        if let Some(r) = &self.payload {
            r.write_to(&mut b)?;
        }
        Ok(b)
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < Self::HEADER_LEN + 16 || b[..4] != Self::MAGIC {
            return Err(Error::Format("not an EchoProbe message".into()));
        }
        let kind = match b[4] {
            1 => MessageKind::CsiProbeRequest,
            2 => MessageKind::CsiProbeReply,
            3 => MessageKind::FreqChangeRequest,
            4 => MessageKind::FreqChangeAck,
            k => return Err(Error::Format(format!("unknown message kind {k}"))),
        };
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        let body = &b[32..];
        let payload = match b[5] {
            0 if body.is_empty() => None,
            1 => {
                let (r, used) = CaptureRecord::parse(body)?;
                if used != body.len() {
                    return Err(Error::Format("trailing bytes after payload".into()));
                }
                Some(r)
            }
            _ => return Err(Error::Format("inconsistent payload flag".into())),
        };
        Ok(ProbeMessage {
            kind,
            session_id: u32_at(8),
            seq: u32_at(12),
            point: GridPoint { cf: f64_at(16), sf: f64_at(24) },
            payload,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Start,
    /// A decoded message and the CSI the receiving node measured on it.
    Received { msg: ProbeMessage, csi: CaptureRecord },
    Timeout { token: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeEvent {
    pub at: Micros,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub point: usize,
    pub repeat: u32,
    pub seq: u32,
    pub attempts: u32,
    pub t_request_us: Micros,
    pub t_reply_us: Micros,
    /// From the last request transmission to the reply.
    pub rtt_us: Micros,
    #[serde(skip)]
    pub initiator: Option<CaptureRecord>,
    #[serde(skip)]
    pub responder: Option<CaptureRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send(ProbeMessage),
    SetTimer { token: u64, after_us: Micros },
    CancelTimer { token: u64 },
    Retune(GridPoint),
    Record(Box<RoundTrip>),
    Finish,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Idle,
    Jumping { target: usize },
    Probing,
    Pacing,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Initiator {
    grid: Vec<GridPoint>,
    repeat: u32,
    delay_us: Micros,
    retries: u32,
    retry_timeout_us: Micros,
    session_id: u32,
    phase: Phase,
    /// Grid index the initiator is tuned to.
    tuned: usize,
    point: usize,
    repeat_idx: u32,
    seq: u32,
    attempts: u32,
    t_first: Micros,
    t_last: Micros,
    next_token: u64,
    timer: Option<u64>,
    /// Channels the responder may be listening on.
    maybe_at: Vec<usize>,
    failed: Vec<bool>,
}

impl Initiator {
    /// Both nodes start tuned to the first grid point.
    pub fn new(plan: &ScanPlan, session_id: u32) -> Self {
        let grid = plan.grid();
        let n = grid.len();
        Initiator {
            grid,
            repeat: plan.repeat,
            delay_us: plan.delay_us,
            retries: plan.retries,
            retry_timeout_us: plan.retry_timeout_us,
            session_id,
            phase: Phase::Idle,
            tuned: 0,
            point: 0,
            repeat_idx: 0,
            seq: 0,
            attempts: 0,
            t_first: 0,
            t_last: 0,
            next_token: 0,
            timer: None,
            maybe_at: vec![0],
            failed: vec![false; n],
        }
    }

    pub fn failed(&self) -> &[bool] {
        &self.failed
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    fn arm(&mut self, after_us: Micros, out: &mut Vec<Action>) {
        if let Some(token) = self.timer.take() {
            out.push(Action::CancelTimer { token });
        }
        let token = self.next_token;
        self.next_token += 1;
        self.timer = Some(token);
        out.push(Action::SetTimer { token, after_us });
    }

    fn disarm(&mut self, out: &mut Vec<Action>) {
        if let Some(token) = self.timer.take() {
            out.push(Action::CancelTimer { token });
        }
    }

    fn retune(&mut self, idx: usize, out: &mut Vec<Action>) {
        if self.tuned != idx {
            self.tuned = idx;
            out.push(Action::Retune(self.grid[idx]));
        }
    }

    fn message(&self, kind: MessageKind, point: usize) -> ProbeMessage {
        ProbeMessage { kind, session_id: self.session_id, seq: self.seq, point: self.grid[point], payload: None }
    }

    fn begin_jump(&mut self, target: usize, now: Micros, out: &mut Vec<Action>) {
        self.phase = Phase::Jumping { target };
        self.seq = self.seq.wrapping_add(1);
        self.attempts = 0;
        self.send_jump(target, now, out);
    }

    /// Early attempts cycle over the channels the responder may still be on.
    /// The last two go to the target in case it moved but its ack was lost.
    fn send_jump(&mut self, target: usize, now: Micros, out: &mut Vec<Action>) {
        let on_target = self.attempts >= self.retries.saturating_sub(1).max(1);
        let ch = if on_target { target } else { self.maybe_at[self.attempts as usize % self.maybe_at.len()] };
        self.retune(ch, out);
        out.push(Action::Send(self.message(MessageKind::FreqChangeRequest, target)));
        self.t_last = now;
        self.arm(self.retry_timeout_us, out);
    }

    fn begin_probe(&mut self, now: Micros, out: &mut Vec<Action>) {
        self.phase = Phase::Probing;
        self.seq = self.seq.wrapping_add(1);
        self.attempts = 0;
        self.t_first = now;
        self.send_probe(now, out);
    }

    fn send_probe(&mut self, now: Micros, out: &mut Vec<Action>) {
        out.push(Action::Send(self.message(MessageKind::CsiProbeRequest, self.point)));
        self.t_last = now;
        self.arm(self.retry_timeout_us, out);
    }

    fn enter_point(&mut self, idx: usize, now: Micros, out: &mut Vec<Action>) {
        self.retune(idx, out);
        self.point = idx;
        self.repeat_idx = 0;
        self.begin_probe(now, out);
    }

    fn finish_exchange(&mut self, now: Micros, out: &mut Vec<Action>) {
        self.repeat_idx += 1;
        if self.repeat_idx < self.repeat {
            let wait = (self.t_first + self.delay_us).saturating_sub(now);
            if wait == 0 {
                self.begin_probe(now, out);
            } else {
                self.phase = Phase::Pacing;
                self.arm(wait, out);
            }
        } else if self.point + 1 < self.grid.len() {
            self.begin_jump(self.point + 1, now, out);
        } else {
            self.disarm(out);
            self.phase = Phase::Done;
            out.push(Action::Finish);
        }
    }

    fn step(&mut self, ev: &ProbeEvent) -> Vec<Action> {
        let mut out = Vec::new();
        let now = ev.at;
        match (&ev.kind, self.phase) {
            (EventKind::Start, Phase::Idle) => {
                if self.grid.is_empty() {
                    self.phase = Phase::Done;
                    out.push(Action::Finish);
                } else {
                    // Session handshake: a jump onto the point both nodes start on.
                    self.begin_jump(0, now, &mut out);
                }
            }
            (EventKind::Timeout { token }, phase) if self.timer == Some(*token) => {
                self.timer = None;
                match phase {
                    Phase::Jumping { target } => {
                        self.attempts += 1;
                        if self.attempts > self.retries {
                            self.failed[target] = true;
                            if !self.maybe_at.contains(&target) {
                                self.maybe_at.push(target);
                            }
                            self.enter_point(target, now, &mut out);
                        } else {
                            self.send_jump(target, now, &mut out);
                        }
                    }
                    Phase::Probing => {
                        self.attempts += 1;
                        if self.attempts > self.retries {
                            self.failed[self.point] = true;
                            self.finish_exchange(now, &mut out);
                        } else {
                            self.send_probe(now, &mut out);
                        }
                    }
                    Phase::Pacing => self.begin_probe(now, &mut out),
                    Phase::Idle | Phase::Done => {}
                }
            }
            (EventKind::Received { msg, csi }, phase) if msg.session_id == self.session_id && msg.seq == self.seq => {
                match (msg.kind, phase) {
                    (MessageKind::FreqChangeAck, Phase::Jumping { target }) if msg.point == self.grid[target] => {
                        self.disarm(&mut out);
                        self.maybe_at = vec![target];
                        self.enter_point(target, now, &mut out);
                    }
                    (MessageKind::CsiProbeReply, Phase::Probing) if msg.point == self.grid[self.point] => {
                        if let Some(remote) = &msg.payload {
                            self.disarm(&mut out);
                            self.maybe_at = vec![self.point];
                            out.push(Action::Record(Box::new(RoundTrip {
                                point: self.point,
                                repeat: self.repeat_idx,
                                seq: self.seq,
                                attempts: self.attempts + 1,
                                t_request_us: self.t_first,
                                t_reply_us: now,
                                rtt_us: now - self.t_last,
                                initiator: Some(csi.clone()),
                                responder: Some(remote.clone()),
                            })));
                            self.finish_exchange(now, &mut out);
                        }
                    }
                    _ => {}
                }
            }
            _ => {}
        }
        out
    }
}

pub fn initiator_step(mut state: Initiator, event: &ProbeEvent) -> (Initiator, Vec<Action>) {
    let actions = state.step(event);
    (state, actions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Responder {
    session_id: Option<u32>,
    at: GridPoint,
}

impl Responder {
    pub fn new(start: GridPoint) -> Self {
        Responder { session_id: None, at: start }
    }

    pub fn tuned(&self) -> GridPoint {
        self.at
    }

    fn step(&mut self, ev: &ProbeEvent) -> Vec<Action> {
        let EventKind::Received { msg, csi } = &ev.kind else { return Vec::new() };
        let reply = |kind, payload| {
            Action::Send(ProbeMessage { kind, session_id: msg.session_id, seq: msg.seq, point: msg.point, payload })
        };
        match msg.kind {
            MessageKind::FreqChangeRequest => {
                self.session_id = Some(msg.session_id);
                let mut out = vec![reply(MessageKind::FreqChangeAck, None)];
                if msg.point != self.at {
                    self.at = msg.point;
                    out.push(Action::Retune(msg.point));
                }
                out
            }
            MessageKind::CsiProbeRequest if self.session_id == Some(msg.session_id) && msg.point == self.at => {
                vec![reply(MessageKind::CsiProbeReply, Some(csi.clone()))]
            }
            _ => Vec::new(),
        }
    }
}

pub fn responder_step(mut state: Responder, event: &ProbeEvent) -> (Responder, Vec<Action>) {
    let actions = state.step(event);
    (state, actions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub index: usize,
    pub cf: f64,
    pub sf: f64,
    pub tuned_cf: Option<f64>,
    pub tuned_sf: Option<f64>,
    pub failed: bool,
    pub records: Vec<RoundTrip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub session_id: u32,
    pub seed: u64,
    pub plan: ScanPlan,
    pub records: usize,
    pub failed_points: usize,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub duration_us: Micros,
    pub max_rtt_us: Micros,
    pub points: Vec<PointReport>,
}

impl ScanReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub struct Scan {
    pub report: ScanReport,
    /// Two records per round trip: responder side, then initiator side.
    pub capture: Vec<CaptureRecord>,
}

fn local_record(d: &crate::simnet::Delivery, at: Micros, keep: usize) -> CaptureRecord {
    let mut frame = d.rx.csi.clone();
    frame.timestamp = at as f64 * 1e-6;
    let mut train = d.rx.raw_data_symbol_csi();
    train.truncate(keep);
    CaptureRecord::from_frame(&frame, &train, d.rx.cfo_preamble, d.rx.evm_db)
}

/// Run `plan` with node 0 as initiator and node 1 as responder.
pub fn run_scan(plan: &ScanPlan, net: &mut SimNet) -> Result<Scan> {
    plan.validate()?;
    let grid = plan.grid();
    for nic in net.nics.iter_mut() {
        nic.tx = plan.tx.clone();
        *nic = nic.clone().with_chain_masks(plan.txcm, plan.rxcm)?;
    }
    net.tune(0, grid[0].cf, grid[0].sf)?;
    net.tune(1, grid[0].cf, grid[0].sf)?;
    let session_id = ChaCha8Rng::seed_from_u64(net.link.seed).random::<u32>();

    let mut init = Some(Initiator::new(plan, session_id));
    let mut resp = Some(Responder::new(grid[0]));
    let mut timers = std::collections::HashMap::new();
    let mut trips: Vec<RoundTrip> = Vec::new();
    let mut delivered = 0u64;
    let mut tunes = vec![None; grid.len()];

    let mut pending = vec![(0usize, ProbeEvent { at: 0, kind: EventKind::Start })];
    'run: loop {
        for (node, ev) in pending.drain(..) {
            let actions = if node == 0 {
                let (s, a) = initiator_step(init.take().unwrap(), &ev);
                init = Some(s);
                a
            } else {
                let (s, a) = responder_step(resp.take().unwrap(), &ev);
                resp = Some(s);
                a
            };
            for a in actions {
                match a {
                    Action::Send(msg) => {
                        net.transmit(node, &msg.encode()?, (msg.seq % 127) as u8 + 1)?;
                    }
                    Action::SetTimer { token, after_us } => {
                        timers.insert((node, token), net.set_timer(node, token, after_us));
                    }
                    Action::CancelTimer { token } => {
                        if let Some(id) = timers.remove(&(node, token)) {
                            net.cancel(id);
                        }
                    }
                    Action::Retune(p) => {
                        net.tune(node, p.cf, p.sf)?;
                    }
                    Action::Record(rt) => {
                        tunes[rt.point] = net.nics[0].tuned();
                        trips.push(*rt);
                    }
                    Action::Finish => break 'run,
                }
            }
        }
        let Some((at, ev)) = net.next_event() else { break };
        match ev {
            NetEvent::Timer { node, token } => {
                timers.remove(&(node, token));
                pending.push((node, ProbeEvent { at, kind: EventKind::Timeout { token } }));
            }
            NetEvent::Deliver { to, delivery } => {
                delivered += 1;
                if let Ok(msg) = ProbeMessage::decode(&delivery.payload) {
                    let keep = if to == 0 { plan.keep_data_symbols } else { plan.reply_data_symbols };
                    let csi = local_record(&delivery, at, keep);
                    pending.push((to, ProbeEvent { at, kind: EventKind::Received { msg, csi } }));
                }
            }
        }
    }

    let init = init.unwrap();
    if !init.is_done() {
        return Err(Error::domain("scan stopped before the initiator finished"));
    }
    let mut capture = Vec::with_capacity(2 * trips.len());
    let mut points: Vec<PointReport> = grid
        .iter()
        .enumerate()
        .map(|(i, p)| PointReport {
            index: i,
            cf: p.cf,
            sf: p.sf,
            tuned_cf: tunes[i].map(|t| t.cf),
            tuned_sf: tunes[i].map(|t| t.sf),
            failed: init.failed()[i],
            records: Vec::new(),
        })
        .collect();
    let mut max_rtt = 0;
    for mut rt in trips {
        capture.extend(rt.responder.take());
        capture.extend(rt.initiator.take());
        max_rtt = max_rtt.max(rt.rtt_us);
        points[rt.point].records.push(rt);
    }
    let records = points.iter().map(|p| p.records.len()).sum();
    Ok(Scan {
        report: ScanReport {
            session_id,
            seed: net.link.seed,
            plan: plan.clone(),
            records,
            failed_points: init.failed().iter().filter(|&&f| f).count(),
            messages_sent: net.messages_sent(),
            messages_delivered: delivered,
            duration_us: net.now(),
            max_rtt_us: max_rtt,
            points,
        },
        capture,
    })
}
