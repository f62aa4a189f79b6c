"""Discrete-event engine binding channel, physical layer, and MAC engines.

One run owns one event heap and one set of RNG streams, so identical
scenarios and seeds replay identically.  Frames broadcast to every other
node with per-link propagation delay; receptions are adjudicated at
their arrival end against the worst-case set of overlapping arrivals,
using cached per-link power quantities so the hot path stays free of
array math.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import ChannelModel, Cir
from .mac import (
    Arm,
    Cancel,
    DATA_KINDS,
    Deliver,
    Drop,
    Frame,
    FrameKind,
    MacTimers,
    Packet,
    Send,
    TR_KINDS,
    TRMAC,
    make_engine,
)
from .scenario import Scenario
from .tr_phy import p_ili, p_isi, p_sig, sdt_signal_and_isi

EV_ARRIVAL = 0
EV_RX_START = 1
EV_RX_END = 2
EV_TIMER = 3

_SEED_MASK = (1 << 64) - 1


class Event:
    """Heap entry; equal times break deterministically by sequence number."""

    __slots__ = ("time", "sequence", "kind", "subject", "attachment")

    def __init__(self, time, sequence, kind, subject, attachment):
        self.time = time
        self.sequence = sequence
        self.kind = kind
        self.subject = subject
        self.attachment = attachment

    def __lt__(self, other):
        if self.time != other.time:
            return self.time < other.time
        return self.sequence < other.sequence


class _RxRecord:
    __slots__ = ("frame", "rx_start", "rx_end", "sense_power", "contribution",
                 "tracked", "corrupted", "interference")

    def __init__(self, frame, rx_start, rx_end, sense_power, contribution, tracked):
        self.frame = frame
        self.rx_start = rx_start
        self.rx_end = rx_end
        self.sense_power = sense_power
        self.contribution = contribution
        self.tracked = tracked
        self.corrupted = False
        self.interference = 0.0


class _NodeState:
    __slots__ = ("engine", "tx_busy_until", "outbox", "impinging", "tracked", "rx_lock", "timer_gen")

    def __init__(self, engine):
        self.engine = engine
        self.tx_busy_until = 0.0
        self.outbox = []
        self.impinging = {}
        self.tracked = []
        self.rx_lock = None
        self.timer_gen = {}


@dataclass
class RunTrace:
    """Raw per-run observations the metrics are computed from."""

    generated: int = 0
    deliveries: list = field(default_factory=list)      # (time, packet_id, delay)
    drops: list = field(default_factory=list)           # (time, packet_id)
    data_tx_times: list = field(default_factory=list)
    busy_intervals: list = field(default_factory=list)  # (start, end)
    per_link_busy: dict = field(default_factory=dict)   # (src, dst) -> intervals
    rx_success: list = field(default_factory=list)      # (time, payload_bits)
    events: Optional[list] = None                       # debug records when enabled


@dataclass
class MetricsRecord:
    generated: int
    delivered: int
    dropped: int
    in_flight: int
    delay_samples: list
    mean_delay: float
    data_frames_transmitted: int
    data_frames_dropped: int
    drop_ratio: float
    busy_time: float
    received_bits: int
    throughput: float
    series: Optional[list] = None


@dataclass
class RunResult:
    metrics: MetricsRecord
    trace: RunTrace
    engine_stats: dict


def _merge_intervals(intervals, lo, hi):
    clipped = sorted(
        (max(a, lo), min(b, hi)) for a, b in intervals if min(b, hi) > max(a, lo)
    )
    total = 0.0
    cur_a = cur_b = None
    for a, b in clipped:
        if cur_b is None or a > cur_b:
            if cur_b is not None:
                total += cur_b - cur_a
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    if cur_b is not None:
        total += cur_b - cur_a
    return total


def collect_metrics(trace: RunTrace, duration: float, warmup: float = 0.0,
                    sample_every: float | None = None) -> MetricsRecord:
    """Aggregate a run trace into delay / drop-ratio / throughput metrics.

    Drop ratio counts dropped data frames against transmitted data frames
    including retransmissions; throughput counts correctly received payload
    bits over the union of data-frame in-flight intervals.
    """

    def compute(until):
        deliveries = [d for d in trace.deliveries if warmup <= d[0] <= until]
        delivered_ids = {d[1] for d in trace.deliveries}
        # a sender-side drop whose packet still reached the destination (its
        # acknowledgments were lost) is not a lost data frame
        drops = [
            d for d in trace.drops if warmup <= d[0] <= until and d[1] not in delivered_ids
        ]
        tx = [t for t in trace.data_tx_times if warmup <= t <= until]
        delays = [d[2] for d in deliveries]
        mean_delay = sum(delays) / len(delays) if delays else math.nan
        n_tx = len(tx)
        n_drop = len(drops)
        if n_tx == 0:
            drop_ratio = 0.0 if n_drop == 0 else 1.0
        else:
            drop_ratio = min(1.0, n_drop / n_tx)
        busy = _merge_intervals(trace.busy_intervals, warmup, until)
        bits = sum(b for t, b in trace.rx_success if warmup <= t <= until)
        throughput = bits / busy if busy > 0 else 0.0
        return deliveries, drops, tx, delays, mean_delay, drop_ratio, busy, bits, throughput

    deliveries, drops, tx, delays, mean_delay, drop_ratio, busy, bits, throughput = compute(duration)
    all_delivered = {d[1] for d in trace.deliveries}
    all_dropped = {d[1] for d in trace.drops} - all_delivered

    series = None
    if sample_every is not None and sample_every > 0:
        series = []
        t = sample_every
        while t <= duration + 1e-9:
            _, _, _, _, m, r, _, _, thr = compute(min(t, duration))
            series.append({"time": min(t, duration), "mean_delay": m,
                           "drop_ratio": r, "throughput": thr})
            t += sample_every

    return MetricsRecord(
        generated=trace.generated,
        delivered=len(deliveries),
        dropped=len(drops),
        in_flight=trace.generated - len(all_delivered) - len(all_dropped),
        delay_samples=delays,
        mean_delay=mean_delay,
        data_frames_transmitted=len(tx),
        data_frames_dropped=len(drops),
        drop_ratio=drop_ratio,
        busy_time=busy,
        received_bits=bits,
        throughput=throughput,
        series=series,
    )


class Simulator:
    """One scenario, one seed, one deterministic event loop."""

    def __init__(self, scenario: Scenario, record_events: bool = False):
        if not scenario.positions or not scenario.routes:
            scenario = scenario.resolved()
        self.scenario = scenario
        self.env = scenario.environment
        self.phy = scenario.phy
        self.positions = scenario.positions
        self.n_nodes = len(self.positions)
        self.channel = ChannelModel(self.env, scenario.channel)
        self.timers = MacTimers(
            t_p=scenario.network.one_hop_range / self.env.nominal_sound_speed,
            t_tr=scenario.traffic.packet_bits / scenario.network.data_rate,
            delta=scenario.mac.guard_time,
            coherence_time=scenario.mac.coherence_time,
            n_max=scenario.mac.n_max,
        )
        self.trmac = scenario.mac.protocol == TRMAC

        seed = scenario.seed & _SEED_MASK
        self.nodes: list[_NodeState] = []
        for i in range(self.n_nodes):
            neighbors = {
                j for j in range(self.n_nodes)
                if j != i and self.positions[i].distance_to(self.positions[j])
                <= scenario.network.one_hop_range * (1 + 1e-9)
            }
            engine = make_engine(
                scenario.mac.protocol,
                i,
                self.timers,
                self.phy,
                neighbors,
                scenario.network.data_rate,
                control_bits=scenario.mac.control_bits,
                rng=np.random.default_rng(np.random.SeedSequence((seed, 0x3AC, i))),
                medium=self,
                s_csma_cap=scenario.mac.s_csma_max_backoff,
            )
            self.nodes.append(_NodeState(engine))

        self.flow_rngs = [
            np.random.default_rng(np.random.SeedSequence((seed, 0xF10, f)))
            for f in range(len(scenario.routes))
        ]

        # per-pair scalar caches (lazily filled); keys are node index tuples
        self._cirs: dict = {}
        self._delay: dict = {}
        self._impinge: dict = {}
        self._tr_sig: dict = {}
        self._tr_isi: dict = {}
        self._direct_sig: dict = {}
        self._direct_isi: dict = {}
        self._ili: dict = {}

        if scenario.mac.sense_threshold_w is not None:
            self.sense_threshold = scenario.mac.sense_threshold_w
        else:
            # receiver sensitivity: the weakest decodable signal is sensed
            self.sense_threshold = self.phy.min_required_sinr * self.phy.noise_variance

        self.heap: list[Event] = []
        self.now = 0.0
        self._seq = 0
        self._frame_seq = 0
        self._packet_seq = 0
        self.trace = RunTrace(events=[] if record_events else None)

    # ------------------------------------------------------------- caches

    def _pair_delay(self, a: int, b: int) -> float:
        key = (a, b)
        value = self._delay.get(key)
        if value is None:
            value = self.channel.propagation_delay(self.positions[a], self.positions[b])
            self._delay[key] = value
            self._delay[(b, a)] = value
        return value

    def _cir(self, a: int, b: int) -> Cir:
        key = (a, b) if a <= b else (b, a)
        c = self._cirs.get(key)
        if c is None:
            c = self.channel.cir(self.positions[a], self.positions[b])
            d = self.phy.updown_factor
            excess = (len(c) - 1) % d
            if excess:
                # arrival-file responses have data-driven lengths; trailing
                # zero taps make them compliant without changing any power
                taps = np.concatenate([c.taps, np.zeros(d - excess, dtype=np.complex128)])
                c = Cir(taps, c.sample_interval)
            self._cirs[key] = c
        return c

    def _impinge_power(self, a: int, b: int) -> float:
        key = (a, b)
        value = self._impinge.get(key)
        if value is None:
            c = self._cir(a, b)
            value = self.phy.avg_transmit_power * float(np.sum(np.abs(c.taps) ** 2))
            self._impinge[key] = value
            self._impinge[(b, a)] = value
        return value

    def _tr_quantities(self, basis: tuple[int, int]) -> tuple[float, float]:
        sig = self._tr_sig.get(basis)
        if sig is None:
            c = self._cir(*basis)
            sig = p_sig(c, self.phy)
            isi = p_isi(c, self.phy)
            self._tr_sig[basis] = sig
            self._tr_isi[basis] = isi
            rev = (basis[1], basis[0])
            self._tr_sig[rev] = sig
            self._tr_isi[rev] = isi
        return sig, self._tr_isi[basis]

    def _direct_quantities(self, a: int, b: int) -> tuple[float, float]:
        key = (a, b)
        sig = self._direct_sig.get(key)
        if sig is None:
            c = self._cir(a, b)
            peak, isi_sum = sdt_signal_and_isi(c, self.phy.updown_factor)
            dp = self.phy.updown_factor * self.phy.avg_transmit_power
            sig = dp * peak
            isi = dp * isi_sum
            self._direct_sig[key] = sig
            self._direct_isi[key] = isi
            self._direct_sig[(b, a)] = sig
            self._direct_isi[(b, a)] = isi
        return sig, self._direct_isi[key]

    def _ili_power(self, tx: int, victim: int, basis: tuple[int, int]) -> float:
        key = (tx, victim, basis)
        value = self._ili.get(key)
        if value is None:
            value = p_ili(self._cir(tx, victim), self._cir(*basis), self.phy)
            self._ili[key] = value
        return value

    def _contribution(self, frame: Frame, victim: int) -> float:
        if frame.kind in TR_KINDS:
            return self._ili_power(frame.src, victim, frame.tr_basis)
        return self._impinge_power(frame.src, victim)

    # -------------------------------------------------------- medium iface

    def busy_until(self, node_id: int, now: float) -> float | None:
        """Latest arrival end among signals currently sensed at the node."""
        latest = None
        for rec in self.nodes[node_id].impinging.values():
            if rec.sense_power >= self.sense_threshold:
                if latest is None or rec.rx_end > latest:
                    latest = rec.rx_end
        return latest

    # ---------------------------------------------------------- scheduling

    def _push(self, time: float, kind: int, subject, attachment) -> None:
        self._seq += 1
        heapq.heappush(self.heap, Event(time, self._seq, kind, subject, attachment))

    def schedule_packet(self, flow_idx: int, time: float) -> None:
        """Inject one packet arrival on a flow (test and tooling hook)."""
        self._push(time, EV_ARRIVAL, flow_idx, None)

    def _schedule_flow_arrival(self, flow_idx: int, now: float) -> None:
        mean = self.scenario.traffic.mean_interarrival
        if mean is None:
            return
        gap = float(self.flow_rngs[flow_idx].exponential(mean))
        when = now + gap
        if when <= self.scenario.duration:
            self._push(when, EV_ARRIVAL, flow_idx, "auto")

    # -------------------------------------------------------------- events

    def run(self) -> RunResult:
        for flow_idx in range(len(self.scenario.routes)):
            self._schedule_flow_arrival(flow_idx, 0.0)
        duration = self.scenario.duration
        heap = self.heap
        while heap:
            event = heapq.heappop(heap)
            if event.time > duration:
                break
            self.now = event.time
            kind = event.kind
            if kind == EV_RX_START:
                self._handle_rx_start(event.subject, event.attachment, event.time)
            elif kind == EV_RX_END:
                self._handle_rx_end(event.subject, event.attachment, event.time)
            elif kind == EV_TIMER:
                self._handle_timer(event.subject, event.attachment, event.time)
            else:
                self._handle_arrival(event.subject, event.attachment, event.time)
        metrics = collect_metrics(self.trace, duration, self.scenario.warmup)
        stats: dict = {}
        for state in self.nodes:
            for key, value in state.engine.stats.items():
                stats[key] = stats.get(key, 0) + value
        return RunResult(metrics=metrics, trace=self.trace, engine_stats=stats)

    def _handle_arrival(self, flow_idx: int, tag, now: float) -> None:
        route = self.scenario.routes[flow_idx]
        self._packet_seq += 1
        packet = Packet(
            packet_id=self._packet_seq,
            flow_id=flow_idx,
            route=route,
            size_bits=self.scenario.traffic.packet_bits,
            created_at=now,
        )
        self.trace.generated += 1
        self._log(now, route[0], "packet_arrival", "-", f"flow{flow_idx}")
        actions = self.nodes[route[0]].engine.enqueue(packet, route[1], now)
        self._process_actions(route[0], actions, now)
        if tag == "auto":
            self._schedule_flow_arrival(flow_idx, now)

    def _process_actions(self, node_id: int, actions, now: float) -> None:
        state = self.nodes[node_id]
        for action in actions:
            if isinstance(action, Send):
                if action.delay > 0.0:
                    self._push(now + action.delay, EV_TIMER, node_id, ("__send", -1, action.frame))
                else:
                    self._submit_frame(node_id, action.frame, now)
            elif isinstance(action, Arm):
                gen = state.timer_gen.get(action.key, 0) + 1
                state.timer_gen[action.key] = gen
                self._push(now + action.delay, EV_TIMER, node_id, (action.key, gen, action.context))
            elif isinstance(action, Cancel):
                state.timer_gen[action.key] = state.timer_gen.get(action.key, 0) + 1
            elif isinstance(action, Deliver):
                self._handle_delivery(node_id, action.packet, now)
            elif isinstance(action, Drop):
                self.trace.drops.append((now, action.packet.packet_id))
                self._log(now, node_id, "drop", "-", action.reason)
            else:
                raise TypeError(f"unknown MAC action {action!r}")

    def _submit_frame(self, node_id: int, frame: Frame, now: float) -> None:
        self._frame_seq += 1
        frame.frame_id = self._frame_seq
        state = self.nodes[node_id]
        if state.tx_busy_until > now:
            state.outbox.append(frame)
            self._push(state.tx_busy_until, EV_TIMER, node_id, ("__drain", -1, None))
            return
        self._start_tx(node_id, frame, now)

    def _start_tx(self, node_id: int, frame: Frame, now: float) -> None:
        state = self.nodes[node_id]
        state.tx_busy_until = now + frame.tx_duration
        # half-duplex: transmitting destroys anything currently arriving here
        for rec in state.impinging.values():
            rec.corrupted = True
        self._process_actions(node_id, state.engine.on_tx_start(frame, now), now)
        if frame.kind in DATA_KINDS:
            self.trace.data_tx_times.append(now)
            end = now + frame.tx_duration + self._pair_delay(node_id, frame.dst)
            self.trace.busy_intervals.append((now, end))
            if self.scenario.per_link_busy_accounting:
                self.trace.per_link_busy.setdefault((node_id, frame.dst), []).append((now, end))
        self._log(now, node_id, "tx_start", frame.kind.value, f"to {frame.dst}")
        for other in range(self.n_nodes):
            if other == node_id:
                continue
            t0 = now + self._pair_delay(node_id, other)
            self._push(t0, EV_RX_START, other, frame)
            self._push(t0 + frame.tx_duration, EV_RX_END, other, frame)
        if state.outbox:
            self._push(state.tx_busy_until, EV_TIMER, node_id, ("__drain", -1, None))

    def _handle_rx_start(self, node_id: int, frame: Frame, now: float) -> None:
        state = self.nodes[node_id]
        addressed = frame.dst == node_id
        overheard_probe = not addressed and self.trmac and frame.kind is FrameKind.PRO
        rec = _RxRecord(
            frame,
            now,
            now + frame.tx_duration,
            self._impinge_power(frame.src, node_id),
            self._contribution(frame, node_id),
            addressed or overheard_probe,
        )
        if state.tx_busy_until > now:
            rec.corrupted = True
        for other in state.tracked:
            other.interference += rec.contribution
        if rec.tracked:
            for other in state.impinging.values():
                rec.interference += other.contribution
        if addressed:
            # one real reception at a time; opportunistically decoded probes
            # neither hold the receiver nor survive overlapping it
            if state.rx_lock is not None:
                rec.corrupted = True
            else:
                state.rx_lock = rec
            for other in state.tracked:
                if other.frame.dst != node_id:
                    other.corrupted = True
        elif overheard_probe and state.rx_lock is not None:
            rec.corrupted = True
        if rec.tracked:
            state.tracked.append(rec)
        state.impinging[frame.frame_id] = rec

    def _handle_rx_end(self, node_id: int, frame: Frame, now: float) -> None:
        state = self.nodes[node_id]
        rec = state.impinging.pop(frame.frame_id, None)
        if rec is None:
            return
        if state.rx_lock is rec:
            state.rx_lock = None
        if not rec.tracked:
            return
        state.tracked.remove(rec)
        success = self._adjudicate(rec, node_id)
        self._log(now, node_id, "rx_end", frame.kind.value, "ok" if success else "fail")
        if not success:
            return
        if frame.kind in DATA_KINDS and frame.dst == node_id:
            self.trace.rx_success.append((now, frame.payload_bits))
        measured = self._cir(frame.src, node_id)
        actions = state.engine.on_frame(frame, measured, now)
        self._process_actions(node_id, actions, now)

    def _adjudicate(self, rec: _RxRecord, node_id: int) -> bool:
        """SINR gate over the full-overlap worst case, after half-duplex rules."""
        if rec.corrupted:
            return False
        frame = rec.frame
        if frame.kind in TR_KINDS:
            sig, isi = self._tr_quantities(frame.tr_basis)
        else:
            sig, isi = self._direct_quantities(frame.src, node_id)
        sinr = sig / (isi + rec.interference + self.phy.noise_variance)
        return sinr >= self.phy.min_required_sinr

    def _handle_timer(self, node_id: int, payload, now: float) -> None:
        key, gen, context = payload
        state = self.nodes[node_id]
        if key == "__send":
            self._submit_frame(node_id, context, now)
            return
        if key == "__drain":
            if state.tx_busy_until <= now and state.outbox:
                self._start_tx(node_id, state.outbox.pop(0), now)
            return
        if state.timer_gen.get(key) != gen:
            return  # cancelled or superseded
        actions = state.engine.on_timer(key, context, now)
        self._process_actions(node_id, actions, now)

    def _handle_delivery(self, node_id: int, packet: Packet, now: float) -> None:
        if node_id == packet.final_dst:
            self.trace.deliveries.append((now, packet.packet_id, now - packet.created_at))
            self._log(now, node_id, "delivered", "-", f"packet {packet.packet_id}")
            return
        next_hop = packet.next_hop(node_id)
        actions = self.nodes[node_id].engine.enqueue(packet, next_hop, now)
        self._process_actions(node_id, actions, now)

    def _log(self, time, node, event, frame_kind, outcome) -> None:
        if self.trace.events is not None:
            self.trace.events.append(
                {"time": time, "node": node, "event": event, "frame": frame_kind, "outcome": outcome}
            )


def run_scenario(scenario: Scenario, sample_every: float | None = None,
                 record_events: bool = False) -> RunResult:
    """Resolve, simulate, and aggregate one scenario."""
    sim = Simulator(scenario.resolved(), record_events=record_events)
    result = sim.run()
    if sample_every is not None:
        result.metrics = collect_metrics(
            sim.trace, scenario.duration, scenario.warmup, sample_every
        )
    return result
