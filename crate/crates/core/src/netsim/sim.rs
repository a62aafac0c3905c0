use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{Class, PriorityConfig, Scheduling, Topology, TrafficModel};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// Simulation clock unit: one picosecond.
const TICKS_PER_SEC: f64 = 1e12;

fn ticks(seconds: f64) -> u64 {
    (seconds * TICKS_PER_SEC).round() as u64
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    class: Class,
    bytes: u32,
    dst: u32,
    /// Web message index, unused for learning.
    msg: u32,
    /// Created inside the measurement window.
    measured: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    TxDone { port: u32 },
    LearningTick { src: u32 },
    WebArrival,
}

/// One scheduling decision at a port, recorded when `log_ports` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortEvent {
    pub time: f64,
    pub port: usize,
    /// Class of the packet put on the wire, or `None` when the port went idle.
    pub started: Option<Class>,
    pub web_waiting: usize,
    pub learning_waiting: usize,
}

#[derive(Default)]
struct Port {
    /// Web packets, and every packet under a shared FIFO.
    high: VecDeque<Packet>,
    /// Learning packets under strict priority.
    low: VecDeque<Packet>,
    high_bytes: u64,
    low_bytes: u64,
    in_service: Option<Packet>,
    busy_ticks: u64,
}

impl Port {
    fn waiting(&self) -> (usize, usize) {
        let web = self.high.iter().filter(|p| p.class == Class::Web).count();
        (web, self.high.len() + self.low.len() - web)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub duration: f64,
    pub warmup: f64,
    pub web_injected: usize,
    pub web_completed: usize,
    /// Web messages created after the warmup.
    pub web_measured: usize,
    pub web_mean_completion: f64,
    pub web_p99_completion: f64,
    pub web_packets_dropped: u64,
    pub learning_bytes_injected: u64,
    pub learning_bytes_delivered: u64,
    pub learning_bytes_dropped: u64,
    pub learning_bytes_in_flight: u64,
    /// Dropped fraction of learning bytes created after the warmup.
    pub learning_drop_rate: f64,
    /// Per-port transmitting time in seconds: uplinks first, then switch ports.
    pub port_busy: Vec<f64>,
    /// Per-port transmitted bytes, same order.
    pub port_bytes: Vec<u64>,
    pub log: Vec<PortEvent>,
}

struct Sim<'a> {
    topo: &'a Topology,
    prio: &'a PriorityConfig,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, u64, Event)>>,
    ports: Vec<Port>,
    port_bytes: Vec<u64>,
    msg_created: Vec<u64>,
    msg_remaining: Vec<u32>,
    msg_done: Vec<u64>,
    learning_injected: u64,
    learning_delivered: u64,
    learning_dropped: u64,
    learning_measured: u64,
    learning_measured_dropped: u64,
    log: Vec<PortEvent>,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, at: u64, ev: Event) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq, ev)));
    }

    fn tx_ticks(&self, bytes: u32) -> u64 {
        ticks(self.topo.tx_time(bytes as u64))
    }

    fn enqueue(&mut self, port: usize, pkt: Packet) {
        if pkt.class == Class::Learning {
            if let Some(limit) = self.prio.learning_buffer_bytes {
                let p = &self.ports[port];
                let backlog = match self.prio.scheduling {
                    Scheduling::SharedFifo => p.high_bytes + p.low_bytes,
                    Scheduling::StrictPriority => p.low_bytes,
                };
                if backlog + pkt.bytes as u64 > limit {
                    self.learning_dropped += pkt.bytes as u64;
                    if pkt.measured {
                        self.learning_measured_dropped += pkt.bytes as u64;
                    }
                    return;
                }
            }
        }
        let to_low = pkt.class == Class::Learning && self.prio.scheduling == Scheduling::StrictPriority;
        let p = &mut self.ports[port];
        if to_low {
            p.low_bytes += pkt.bytes as u64;
            p.low.push_back(pkt);
        } else {
            p.high_bytes += pkt.bytes as u64;
            p.high.push_back(pkt);
        }
        if p.in_service.is_none() {
            self.start_next(port);
        }
    }

    fn start_next(&mut self, port: usize) {
        let log = self.prio.log_ports;
        let waiting = if log { self.ports[port].waiting() } else { (0, 0) };
        let p = &mut self.ports[port];
        let next = if let Some(pkt) = p.high.pop_front() {
            p.high_bytes -= pkt.bytes as u64;
            Some(pkt)
        } else if let Some(pkt) = p.low.pop_front() {
            p.low_bytes -= pkt.bytes as u64;
            Some(pkt)
        } else {
            None
        };
        p.in_service = next;
        if log {
            self.log.push(PortEvent {
                time: self.now as f64 / TICKS_PER_SEC,
                port,
                started: next.map(|pkt| pkt.class),
                web_waiting: waiting.0,
                learning_waiting: waiting.1,
            });
        }
        if let Some(pkt) = next {
            let dt = self.tx_ticks(pkt.bytes);
            self.ports[port].busy_ticks += dt;
            self.schedule(self.now + dt, Event::TxDone { port: port as u32 });
        }
    }

    fn tx_done(&mut self, port: usize) {
        let pkt = self.ports[port].in_service.take().expect("tx completion on an idle port");
        self.port_bytes[port] += pkt.bytes as u64;
        let servers = self.topo.servers;
        if port < servers {
            self.enqueue(servers + pkt.dst as usize, pkt);
        } else {
            match pkt.class {
                Class::Web => {
                    let m = pkt.msg as usize;
                    self.msg_remaining[m] -= 1;
                    if self.msg_remaining[m] == 0 {
                        self.msg_done[m] = self.now;
                    }
                }
                Class::Learning => self.learning_delivered += pkt.bytes as u64,
            }
        }
        self.start_next(port);
    }
}

/// Runs the co-location experiment for `duration` seconds of traffic, then
/// drains the network. Statistics skip the first 10% of the run.
pub fn run_colocation_sim(
    topo: &Topology,
    traffic: &TrafficModel,
    prio: &PriorityConfig,
    duration: f64,
    seed: u64,
) -> Result<SimReport> {
    topo.validate()?;
    traffic.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidParameter(format!("duration must be > 0, got {duration}")));
    }
    let servers = topo.servers;
    let warmup = 0.1 * duration;
    let (end, warm) = (ticks(duration), ticks(warmup));

    let mut sim = Sim {
        topo,
        prio,
        now: 0,
        seq: 0,
        queue: BinaryHeap::new(),
        ports: (0..2 * servers).map(|_| Port::default()).collect(),
        port_bytes: vec![0; 2 * servers],
        msg_created: Vec::new(),
        msg_remaining: Vec::new(),
        msg_done: Vec::new(),
        learning_injected: 0,
        learning_delivered: 0,
        learning_dropped: 0,
        learning_measured: 0,
        learning_measured_dropped: 0,
        log: Vec::new(),
    };

    let mut web_rng = stream(seed, Domain::Traffic, 0, 0);
    let mut phase_rng = stream(seed, Domain::Traffic, 1, 0);
    let next_web = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
        let e: f64 = Exp1.sample(rng);
        e / traffic.web_rate
    };
    if traffic.web_rate > 0.0 {
        let first = ticks(next_web(&mut web_rng));
        if first < end {
            sim.schedule(first, Event::WebArrival);
        }
    }

    let per_server = traffic.learning_load / servers as f64;
    let burst = traffic.learning_burst;
    let period = if per_server > 0.0 {
        ticks(burst as f64 * topo.packet_bytes as f64 * 8.0 / per_server).max(1)
    } else {
        0
    };
    let mut learning_dst: Vec<u32> = vec![0; servers];
    if period > 0 {
        for src in 0..servers {
            let phase = phase_rng.random_range(0..period);
            learning_dst[src] = phase_rng.random_range(0..servers as u32 - 1);
            if phase < end {
                sim.schedule(phase, Event::LearningTick { src: src as u32 });
            }
        }
    }

    let size = traffic.web_message_bytes;
    let full = topo.packet_bytes as u64;
    let packets_per_msg = size.div_ceil(full) as u32;

    while let Some(Reverse((t, _, ev))) = sim.queue.pop() {
        sim.now = t;
        match ev {
            Event::TxDone { port } => sim.tx_done(port as usize),
            Event::LearningTick { src } => {
                let src = src as usize;
                // Round-robin over the other servers, starting at a random offset.
                let k = learning_dst[src];
                learning_dst[src] = (k + 1) % (servers as u32 - 1);
                let dst = if (k as usize) < src { k } else { k + 1 };
                let measured = t >= warm;
                let bytes = topo.packet_bytes;
                for _ in 0..burst {
                    sim.learning_injected += bytes as u64;
                    if measured {
                        sim.learning_measured += bytes as u64;
                    }
                    sim.enqueue(src, Packet { class: Class::Learning, bytes, dst, msg: 0, measured });
                }
                if t + period < end {
                    sim.schedule(t + period, Event::LearningTick { src: src as u32 });
                }
            }
            Event::WebArrival => {
                let src = web_rng.random_range(0..servers);
                let mut dst = web_rng.random_range(0..servers - 1);
                if dst >= src {
                    dst += 1;
                }
                let msg = sim.msg_created.len() as u32;
                sim.msg_created.push(t);
                sim.msg_remaining.push(packets_per_msg);
                sim.msg_done.push(0);
                let mut left = size;
                while left > 0 {
                    let bytes = left.min(full);
                    left -= bytes;
                    let pkt = Packet { class: Class::Web, bytes: bytes as u32, dst: dst as u32, msg, measured: t >= warm };
                    sim.enqueue(src, pkt);
                }
                let next = t + ticks(next_web(&mut web_rng));
                if next < end {
                    sim.schedule(next, Event::WebArrival);
                }
            }
        }
    }

    let web_completed = sim.msg_remaining.iter().filter(|&&r| r == 0).count();
    let mut completions: Vec<f64> = sim
        .msg_created
        .iter()
        .zip(&sim.msg_done)
        .filter(|(&c, _)| c >= warm)
        .map(|(&c, &d)| (d - c) as f64 / TICKS_PER_SEC)
        .collect();
    let web_measured = completions.len();
    let web_mean_completion =
        if web_measured > 0 { completions.iter().sum::<f64>() / web_measured as f64 } else { f64::NAN };
    completions.sort_by(f64::total_cmp);
    let web_p99_completion = if web_measured > 0 {
        completions[((0.99 * web_measured as f64).ceil() as usize).clamp(1, web_measured) - 1]
    } else {
        f64::NAN
    };
    let learning_drop_rate = if sim.learning_measured > 0 {
        sim.learning_measured_dropped as f64 / sim.learning_measured as f64
    } else {
        0.0
    };
    let in_flight = sim.learning_injected - sim.learning_delivered - sim.learning_dropped;

    Ok(SimReport {
        duration,
        warmup,
        web_injected: sim.msg_created.len(),
        web_completed,
        web_measured,
        web_mean_completion,
        web_p99_completion,
        web_packets_dropped: 0,
        learning_bytes_injected: sim.learning_injected,
        learning_bytes_delivered: sim.learning_delivered,
        learning_bytes_dropped: sim.learning_dropped,
        learning_bytes_in_flight: in_flight,
        learning_drop_rate,
        port_busy: sim.ports.iter().map(|p| p.busy_ticks as f64 / TICKS_PER_SEC).collect(),
        port_bytes: sim.port_bytes,
        log: sim.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(web_rate: f64, learning_load: f64) -> TrafficModel {
        TrafficModel { web_rate, learning_load, ..Default::default() }
    }

    #[test]
    fn idle_network_single_message() {
        let topo = Topology::default();
        // One message in a long window: rate chosen so the first arrival
        // lands after the warmup and nothing else arrives.
        let mut found = None;
        for seed in 0..200 {
            let r = run_colocation_sim(&topo, &quiet(0.5, 0.0), &PriorityConfig::default(), 1.0, seed).unwrap();
            if r.web_injected == 1 && r.web_measured == 1 {
                found = Some(r);
                break;
            }
        }
        let r = found.expect("a seed with exactly one measured message");
        // 0.8 ms to serialize 100 KB; the switch port trails the uplink by
        // one 12 us packet.
        assert!((r.web_mean_completion - 0.000812).abs() < 1e-12, "{}", r.web_mean_completion);
        assert!((topo.idle_completion(100_000) - 0.000812).abs() < 1e-15);
    }

    #[test]
    fn learning_alone_below_capacity_never_drops() {
        let topo = Topology::default();
        for buf in [Some(24_000), None] {
            for scheduling in [Scheduling::SharedFifo, Scheduling::StrictPriority] {
                let prio = PriorityConfig::with_buffer(scheduling, buf);
                let r = run_colocation_sim(&topo, &quiet(0.0, 2.4e9), &prio, 0.05, 3).unwrap();
                assert_eq!(r.learning_bytes_dropped, 0);
                assert_eq!(r.learning_drop_rate, 0.0);
                assert!(r.learning_bytes_injected > 0);
            }
        }
    }

    #[test]
    fn learning_overload_drops_the_excess() {
        let topo = Topology { servers: 2, ..Default::default() };
        // 2 Gbps offered per uplink on a 1 Gbps link.
        let prio = PriorityConfig::with_buffer(Scheduling::SharedFifo, Some(15_000));
        let r = run_colocation_sim(&topo, &quiet(0.0, 4e9), &prio, 0.05, 1).unwrap();
        assert!((r.learning_drop_rate - 0.5).abs() < 0.01, "{}", r.learning_drop_rate);
    }

    #[test]
    fn conservation() {
        let topo = Topology::default();
        for scheduling in [Scheduling::SharedFifo, Scheduling::StrictPriority] {
            let prio = PriorityConfig::with_buffer(scheduling, Some(3000));
            let r = run_colocation_sim(&topo, &quiet(8000.0, 2.4e9), &prio, 0.05, 5).unwrap();
            assert_eq!(r.web_injected, r.web_completed);
            assert_eq!(r.web_packets_dropped, 0);
            assert_eq!(r.learning_bytes_in_flight, 0);
            assert_eq!(r.learning_bytes_injected, r.learning_bytes_delivered + r.learning_bytes_dropped);
            assert!(r.learning_bytes_dropped > 0);
            // Each port was busy exactly as long as it took to send its bytes.
            for (busy, bytes) in r.port_busy.iter().zip(&r.port_bytes) {
                assert!((busy - topo.tx_time(*bytes)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn strict_priority_and_work_conservation() {
        let topo = Topology::default();
        for scheduling in [Scheduling::SharedFifo, Scheduling::StrictPriority] {
            let prio = PriorityConfig { scheduling, learning_buffer_bytes: Some(30_000), log_ports: true };
            let r = run_colocation_sim(&topo, &quiet(8000.0, 2.4e9), &prio, 0.02, 9).unwrap();
            assert!(!r.log.is_empty());
            let mut learning_starts = 0;
            for e in &r.log {
                match e.started {
                    None => assert_eq!((e.web_waiting, e.learning_waiting), (0, 0), "idle with work queued"),
                    Some(Class::Learning) => {
                        learning_starts += 1;
                        if scheduling == Scheduling::StrictPriority {
                            assert_eq!(e.web_waiting, 0, "learning sent while web waited");
                        }
                    }
                    Some(Class::Web) => {}
                }
            }
            assert!(learning_starts > 0);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let topo = Topology::default();
        let prio = PriorityConfig::with_buffer(Scheduling::SharedFifo, Some(6000));
        let a = run_colocation_sim(&topo, &quiet(5000.0, 2.4e9), &prio, 0.05, 42).unwrap();
        let b = run_colocation_sim(&topo, &quiet(5000.0, 2.4e9), &prio, 0.05, 42).unwrap();
        assert_eq!(a, b);
        let c = run_colocation_sim(&topo, &quiet(5000.0, 2.4e9), &prio, 0.05, 43).unwrap();
        assert_ne!(a.web_mean_completion, c.web_mean_completion);
    }

    #[test]
    fn light_load_matches_queueing_approximation() {
        // No learning traffic, light web load. Uplinks serve whole messages
        // first-come first-served (M/D/1 wait rho S / (2 (1 - rho))); on the
        // switch port colliding messages interleave packet by packet, closer
        // to processor sharing (wait rho S / (1 - rho)).
        let topo = Topology::default();
        let lambda = 400.0;
        let r = run_colocation_sim(&topo, &quiet(lambda, 0.0), &PriorityConfig::default(), 20.0, 2).unwrap();
        let s = topo.tx_time(100_000);
        let rho = lambda / 16.0 * s;
        let wait = rho * s / (2.0 * (1.0 - rho)) + rho * s / (1.0 - rho);
        let approx = topo.idle_completion(100_000) + wait;
        assert!((r.web_mean_completion / approx - 1.0).abs() < 0.02, "{} vs {approx}", r.web_mean_completion);
    }

    #[test]
    fn rejects_bad_input() {
        let topo = Topology { servers: 1, ..Default::default() };
        assert!(run_colocation_sim(&topo, &TrafficModel::default(), &PriorityConfig::default(), 1.0, 0).is_err());
        let t = Topology::default();
        assert!(run_colocation_sim(&t, &TrafficModel::default(), &PriorityConfig::default(), 0.0, 0).is_err());
        let bad = TrafficModel { web_rate: -1.0, ..Default::default() };
        assert!(run_colocation_sim(&t, &bad, &PriorityConfig::default(), 1.0, 0).is_err());
    }
}
