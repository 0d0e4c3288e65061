//! 2D-mesh AER interconnect: per-link four-phase handshake timing, bounded
//! per-virtual-channel FIFOs with credit backpressure, dimension-order
//! routing on relative offsets, and one-shot XY→YX relaying at congested
//! routers.
//!
//! Orientation: East is +x, West is −x, South is +y, North is −y.
//!
//! Each router has an input FIFO per (port, vc) and each outgoing link an
//! output FIFO per vc. A link only starts a transfer when the downstream
//! input FIFO has a free slot, which it reserves; nothing is ever dropped.
//! YX traffic never switches back to XY, so the channel dependency graph
//! stays acyclic and every step's traffic drains.

use std::collections::VecDeque;

use thiserror::Error;

use crate::aer::{AerEvent, VirtualChannel};
use crate::config::{ChipletCoord, WaferConfig};
use crate::des::EventQueue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Port {
    North,
    South,
    East,
    West,
    Local,
}

impl Port {
    pub const LINKS: [Port; 4] = [Port::North, Port::South, Port::East, Port::West];
    const ALL: [Port; 5] = [Port::North, Port::South, Port::East, Port::West, Port::Local];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Port {
        match self {
            Port::North => Port::South,
            Port::South => Port::North,
            Port::East => Port::West,
            Port::West => Port::East,
            Port::Local => Port::Local,
        }
    }

    fn step(self) -> (i32, i32) {
        match self {
            Port::North => (0, -1),
            Port::South => (0, 1),
            Port::East => (1, 0),
            Port::West => (-1, 0),
            Port::Local => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelayRule {
    pub threshold_hops: u32,
    pub occupancy_trigger: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NocParams {
    pub phase_cycles: u64,
    pub fifo_depth: usize,
    pub relay: RelayRule,
}

impl NocParams {
    pub fn from_config(cfg: &WaferConfig) -> Self {
        Self {
            phase_cycles: cfg.link_phase_cycles,
            fifo_depth: cfg.link_fifo_depth,
            relay: RelayRule {
                threshold_hops: cfg.relay_threshold_hops,
                occupancy_trigger: cfg.relay_occupancy_trigger,
            },
        }
    }

    pub fn hop_cycles(&self) -> u64 {
        4 * self.phase_cycles
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NocError {
    #[error("conservation violation: packet for {expected} terminated at {at}")]
    Misdelivered {
        at: ChipletCoord,
        expected: ChipletCoord,
    },
    #[error("packet from {src} with offset ({dx},{dy}) leaves the {width}x{height} mesh")]
    OffMesh {
        src: ChipletCoord,
        dx: i32,
        dy: i32,
        width: u32,
        height: u32,
    },
    #[error("network failed to drain: {stuck} packet(s) still buffered")]
    Undrained { stuck: u64 },
}

/// Next port for the header and the header after taking that hop.
pub fn route_hop(event: &AerEvent) -> (Port, AerEvent) {
    let mut next = *event;
    let x_first = event.vc == VirtualChannel::Xy;
    let port = if event.at_destination() {
        Port::Local
    } else if (x_first && event.dx != 0) || (!x_first && event.dy == 0) {
        if event.dx > 0 {
            next.dx -= 1;
            Port::East
        } else {
            next.dx += 1;
            Port::West
        }
    } else if event.dy > 0 {
        next.dy -= 1;
        Port::South
    } else {
        next.dy += 1;
        Port::North
    };
    (port, next)
}

/// Switches a long, still-unturned XY packet to YX when its preferred output
/// is congested. One-shot: a relayed packet is returned unchanged.
pub fn maybe_relay(rule: &RelayRule, event: &AerEvent, preferred_occupancy: usize) -> AerEvent {
    let eligible = event.vc == VirtualChannel::Xy
        && !event.relayed
        && event.dx != 0
        && event.remaining_hops() > rule.threshold_hops
        && preferred_occupancy > rule.occupancy_trigger;
    if eligible {
        AerEvent {
            vc: VirtualChannel::Yx,
            relayed: true,
            ..*event
        }
    } else {
        *event
    }
}

/// A packet plus the bookkeeping the simulator keeps alongside the header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InFlight {
    pub event: AerEvent,
    pub src: ChipletCoord,
    pub dest: ChipletCoord,
    pub hops: u32,
    pub injected_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub src: ChipletCoord,
    pub dst: ChipletCoord,
    pub event: AerEvent,
    pub hops: u32,
    pub injected_at: u64,
    pub delivered_at: u64,
}

/// One directed link: its per-vc output FIFOs and the handshake state.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub phase_cycles: u64,
    depth: usize,
    queues: [VecDeque<InFlight>; 2],
    in_transit: Option<InFlight>,
    free_at: u64,
    next_vc: usize,
}

impl LinkModel {
    pub fn new(phase_cycles: u64, depth: usize) -> Self {
        Self {
            phase_cycles,
            depth,
            queues: [VecDeque::new(), VecDeque::new()],
            in_transit: None,
            free_at: 0,
            next_vc: 0,
        }
    }

    pub fn occupancy(&self, vc: VirtualChannel) -> usize {
        self.queues[vc.index()].len()
    }

    pub fn has_space(&self, vc: VirtualChannel) -> bool {
        self.occupancy(vc) < self.depth
    }

    /// Queues at the tail; a full FIFO hands the packet back (backpressure).
    pub fn enqueue(&mut self, f: InFlight) -> Result<(), InFlight> {
        if self.has_space(f.event.vc) {
            self.queues[f.event.vc.index()].push_back(f);
            Ok(())
        } else {
            Err(f)
        }
    }

    pub fn dequeue(&mut self, vc: VirtualChannel) -> Option<InFlight> {
        self.queues[vc.index()].pop_front()
    }

    /// Four-phase req/ack transfer starting no earlier than `depart_cycle`
    /// and no earlier than the end of the previous transfer.
    pub fn handshake_transfer(&mut self, depart_cycle: u64) -> u64 {
        let start = depart_cycle.max(self.free_at);
        let arrival = start + 4 * self.phase_cycles;
        self.free_at = arrival;
        arrival
    }

    pub fn is_busy(&self) -> bool {
        self.in_transit.is_some()
    }

    fn buffered(&self) -> impl Iterator<Item = &InFlight> {
        self.queues.iter().flatten().chain(self.in_transit.iter())
    }
}

#[derive(Debug, Clone)]
pub struct RouterState {
    pub coord: ChipletCoord,
    /// Indexed by arrival port (Local = injection) then vc.
    inputs: [[VecDeque<InFlight>; 2]; 5],
    reserved: [[usize; 2]; 4],
    /// Outgoing links indexed by `Port::LINKS` order.
    pub links: [LinkModel; 4],
    rr: usize,
}

impl RouterState {
    fn new(coord: ChipletCoord, params: &NocParams, rr: usize) -> Self {
        let link = LinkModel::new(params.phase_cycles, params.fifo_depth);
        Self {
            coord,
            inputs: Default::default(),
            reserved: [[0; 2]; 4],
            links: [link.clone(), link.clone(), link.clone(), link],
            rr,
        }
    }

    fn buffered(&self) -> impl Iterator<Item = &InFlight> {
        self.inputs
            .iter()
            .flatten()
            .flatten()
            .chain(self.links.iter().flat_map(|l| l.buffered()))
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub width: u32,
    pub height: u32,
    pub params: NocParams,
    routers: Vec<RouterState>,
    worklist: VecDeque<usize>,
    queued: Vec<bool>,
    in_network: u64,
    pub injected: u64,
    pub delivered: u64,
    pub relayed: u64,
}

fn mix(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Mesh {
    /// `seed` only picks each router's initial arbitration position.
    pub fn new(width: u32, height: u32, params: NocParams, seed: u64) -> Self {
        let n = (width * height) as usize;
        let routers = (0..n)
            .map(|i| {
                let c = ChipletCoord::new(i as u32 % width, i as u32 / width);
                RouterState::new(c, &params, (mix(seed, i as u64) % 10) as usize)
            })
            .collect();
        Self {
            width,
            height,
            params,
            routers,
            worklist: VecDeque::new(),
            queued: vec![false; n],
            in_network: 0,
            injected: 0,
            delivered: 0,
            relayed: 0,
        }
    }

    pub fn router(&self, c: ChipletCoord) -> &RouterState {
        &self.routers[self.idx(c)]
    }

    fn idx(&self, c: ChipletCoord) -> usize {
        (c.y * self.width + c.x) as usize
    }

    fn neighbor(&self, r: usize, port: Port) -> Option<usize> {
        let c = self.routers[r].coord;
        let (sx, sy) = port.step();
        let (x, y) = (c.x as i32 + sx, c.y as i32 + sy);
        (x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height)
            .then(|| (y as u32 * self.width + x as u32) as usize)
    }

    fn mark(&mut self, r: usize) {
        if !self.queued[r] {
            self.queued[r] = true;
            self.worklist.push_back(r);
        }
    }

    /// Packets injected but not yet delivered.
    pub fn in_network(&self) -> u64 {
        self.in_network
    }

    pub fn is_idle(&self) -> bool {
        self.in_network == 0
    }

    /// Queues a packet at `src`'s injection port. Call [`Mesh::flush`] to
    /// let it move.
    pub fn inject(&mut self, now: u64, src: ChipletCoord, event: AerEvent) -> Result<(), NocError> {
        let (dx, dy) = (src.x as i32 + event.dx as i32, src.y as i32 + event.dy as i32);
        if dx < 0 || dy < 0 || dx as u32 >= self.width || dy as u32 >= self.height {
            return Err(NocError::OffMesh {
                src,
                dx: event.dx as i32,
                dy: event.dy as i32,
                width: self.width,
                height: self.height,
            });
        }
        let r = self.idx(src);
        self.routers[r].inputs[Port::Local.index()][event.vc.index()].push_back(InFlight {
            event,
            src,
            dest: ChipletCoord::new(dx as u32, dy as u32),
            hops: 0,
            injected_at: now,
        });
        self.in_network += 1;
        self.injected += 1;
        self.mark(r);
        Ok(())
    }

    /// Completes the transfer on `router`'s outgoing `port` link.
    pub fn on_link_arrival(
        &mut self,
        now: u64,
        router: usize,
        port: Port,
        sched: &mut dyn FnMut(u64, usize, Port),
        out: &mut Vec<Delivery>,
    ) -> Result<(), NocError> {
        let f = self.routers[router].links[port.index()]
            .in_transit
            .take()
            .expect("arrival scheduled for an idle link");
        let d = self
            .neighbor(router, port)
            .expect("link transfer toward a missing neighbor");
        let inp = port.opposite().index();
        let vc = f.event.vc.index();
        self.routers[d].reserved[inp][vc] -= 1;
        self.routers[d].inputs[inp][vc].push_back(f);
        self.mark(router);
        self.mark(d);
        self.flush(now, sched, out)
    }

    /// Moves packets until no router can make progress at `now`.
    pub fn flush(
        &mut self,
        now: u64,
        sched: &mut dyn FnMut(u64, usize, Port),
        out: &mut Vec<Delivery>,
    ) -> Result<(), NocError> {
        while let Some(r) = self.worklist.pop_front() {
            self.queued[r] = false;
            self.service(r, now, sched, out)?;
        }
        Ok(())
    }

    fn service(
        &mut self,
        r: usize,
        now: u64,
        sched: &mut dyn FnMut(u64, usize, Port),
        out: &mut Vec<Delivery>,
    ) -> Result<(), NocError> {
        loop {
            let mut progress = false;

            for k in 0..10 {
                let slot = (self.routers[r].rr + k) % 10;
                let (pin, vc) = (slot / 2, slot % 2);
                if self.try_route_head(r, pin, vc, now, out)? {
                    progress = true;
                    self.routers[r].rr = (slot + 1) % 10;
                    if pin != Port::Local.index() {
                        if let Some(up) = self.neighbor(r, Port::ALL[pin]) {
                            self.mark(up);
                        }
                    }
                }
            }

            for port in Port::LINKS {
                if self.try_start_link(r, port, now, sched) {
                    progress = true;
                }
            }

            if !progress {
                return Ok(());
            }
        }
    }

    fn try_route_head(
        &mut self,
        r: usize,
        pin: usize,
        vc: usize,
        now: u64,
        out: &mut Vec<Delivery>,
    ) -> Result<bool, NocError> {
        let Some(head) = self.routers[r].inputs[pin][vc].front().copied() else {
            return Ok(false);
        };
        let mut ev = head.event;
        if ev.vc == VirtualChannel::Xy && !ev.relayed && !ev.at_destination() {
            let (preferred, _) = route_hop(&ev);
            let occ = self.routers[r].links[preferred.index()].occupancy(VirtualChannel::Xy);
            ev = maybe_relay(&self.params.relay, &ev, occ);
        }
        let (port, next) = route_hop(&ev);
        let router = &mut self.routers[r];

        if port == Port::Local {
            if router.coord != head.dest {
                return Err(NocError::Misdelivered {
                    at: router.coord,
                    expected: head.dest,
                });
            }
            router.inputs[pin][vc].pop_front();
            out.push(Delivery {
                src: head.src,
                dst: router.coord,
                event: next,
                hops: head.hops,
                injected_at: head.injected_at,
                delivered_at: now,
            });
            self.in_network -= 1;
            self.delivered += 1;
            return Ok(true);
        }

        if self.neighbor(r, port).is_none() {
            return Err(NocError::OffMesh {
                src: head.src,
                dx: head.event.dx as i32,
                dy: head.event.dy as i32,
                width: self.width,
                height: self.height,
            });
        }
        let router = &mut self.routers[r];
        let link = &mut router.links[port.index()];
        if !link.has_space(next.vc) {
            return Ok(false);
        }
        router.inputs[pin][vc].pop_front();
        let switched = next.relayed && !head.event.relayed;
        link.enqueue(InFlight {
            event: next,
            hops: head.hops + 1,
            ..head
        })
        .expect("space checked");
        if switched {
            self.relayed += 1;
        }
        Ok(true)
    }

    fn try_start_link(
        &mut self,
        r: usize,
        port: Port,
        now: u64,
        sched: &mut dyn FnMut(u64, usize, Port),
    ) -> bool {
        let link = &self.routers[r].links[port.index()];
        if link.is_busy() {
            return false;
        }
        let Some(d) = self.neighbor(r, port) else {
            return false;
        };
        let inp = port.opposite().index();
        let depth = self.params.fifo_depth;
        let first = link.next_vc;
        let chosen = [first, 1 - first].into_iter().find(|&vc| {
            !link.queues[vc].is_empty()
                && self.routers[d].inputs[inp][vc].len() + self.routers[d].reserved[inp][vc] < depth
        });
        let Some(vc) = chosen else {
            return false;
        };
        self.routers[d].reserved[inp][vc] += 1;
        let link = &mut self.routers[r].links[port.index()];
        let f = link.queues[vc].pop_front().expect("non-empty");
        let arrival = link.handshake_transfer(now);
        link.in_transit = Some(f);
        link.next_vc = 1 - vc;
        sched(arrival, r, port);
        true
    }

    /// Packets anywhere in the mesh whose step tag equals `tag`.
    pub fn count_with_tag(&self, tag: u16) -> usize {
        self.routers
            .iter()
            .flat_map(|r| r.buffered())
            .filter(|f| f.event.step_tag == tag)
            .count()
    }

    /// Every packet still buffered, by exhaustive scan.
    pub fn buffered_count(&self) -> usize {
        self.routers.iter().map(|r| r.buffered().count()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TrafficEvent {
    Inject(usize),
    Arrival(usize, Port),
}

#[derive(Debug, Clone)]
pub struct TrafficRun {
    pub deliveries: Vec<Delivery>,
    pub final_cycle: u64,
    pub relayed: u64,
}

/// Runs a standalone injection schedule `(cycle, src, event)` to completion.
pub fn run_traffic(
    width: u32,
    height: u32,
    params: NocParams,
    seed: u64,
    injections: &[(u64, ChipletCoord, AerEvent)],
) -> Result<TrafficRun, NocError> {
    let mut mesh = Mesh::new(width, height, params, seed);
    let mut queue = EventQueue::new();
    for (i, &(cycle, _, _)) in injections.iter().enumerate() {
        queue.schedule(cycle, TrafficEvent::Inject(i));
    }
    let mut deliveries = Vec::with_capacity(injections.len());
    let mut final_cycle = 0;
    while let Some((at, ev)) = queue.pop() {
        final_cycle = at.cycle;
        let mut pending = Vec::new();
        let mut sched = |c: u64, r: usize, p: Port| pending.push((c, r, p));
        match ev {
            TrafficEvent::Inject(i) => {
                let (_, src, e) = injections[i];
                mesh.inject(at.cycle, src, e)?;
                mesh.flush(at.cycle, &mut sched, &mut deliveries)?;
            }
            TrafficEvent::Arrival(r, p) => {
                mesh.on_link_arrival(at.cycle, r, p, &mut sched, &mut deliveries)?;
            }
        }
        for (c, r, p) in pending {
            queue.schedule(c, TrafficEvent::Arrival(r, p));
        }
    }
    if !mesh.is_idle() {
        return Err(NocError::Undrained {
            stuck: mesh.in_network(),
        });
    }
    Ok(TrafficRun {
        deliveries,
        final_cycle,
        relayed: mesh.relayed,
    })
}
