//! Sensor response, inter-layer transport and the per-electron pipeline that
//! turns a selected outcome into timestamped clicks.

use std::cmp::Ordering;
use std::f64::consts::TAU;
use std::sync::Arc;

use thiserror::Error;

use crate::branching::{
    evolve_one_electron, AuditStats, BranchError, BranchTable, Disposition, DispositionLedger, InterpretationMode, Label,
};
use crate::diffraction::DiffractionProfile;
use crate::geometry::{dot, offset_direction, Direction, DualLayerLayout, Landing, Layer, SensorId, SensorLayout};
use crate::rng::{StreamDomain, Substream};

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("{what} = {value} outside {range}")]
    OutOfRange { what: &'static str, value: f64, range: &'static str },
    #[error("p_absorb + p_scatter = {0} exceeds 1")]
    TransitSum(f64),
}

fn check(what: &'static str, value: f64, lo: f64, hi: f64, range: &'static str) -> Result<(), DetectorError> {
    if value >= lo && value <= hi {
        Ok(())
    } else {
        Err(DetectorError::OutOfRange { what, value, range })
    }
}

/// Stochastic response of every sensor of one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResponseModel {
    pub efficiency: f64,
    pub delay_mean_ns: f64,
    pub delay_sigma_ns: f64,
    pub dark_rate_hz: f64,
}

impl ResponseModel {
    pub fn new(efficiency: f64, delay_mean_ns: f64, delay_sigma_ns: f64, dark_rate_hz: f64) -> Result<Self, DetectorError> {
        check("efficiency", efficiency, 0.0, 1.0, "[0, 1]")?;
        check("delay_mean", delay_mean_ns, 0.0, f64::MAX, "[0, inf)")?;
        check("delay_sigma", delay_sigma_ns, 0.0, f64::MAX, "[0, inf)")?;
        check("dark_rate", dark_rate_hz, 0.0, f64::MAX, "[0, inf)")?;
        Ok(Self { efficiency, delay_mean_ns, delay_sigma_ns, dark_rate_hz })
    }

    /// Transparent inner layer: slow, slightly lossy.
    pub fn inner_default() -> Self {
        Self { efficiency: 0.98, delay_mean_ns: 1.0, delay_sigma_ns: 1.0, dark_rate_hz: 0.0 }
    }

    /// Opaque outer (or single) layer.
    pub fn outer_default() -> Self {
        Self { efficiency: 1.0, delay_mean_ns: 0.1, delay_sigma_ns: 0.03, dark_rate_hz: 0.0 }
    }

    /// Normal reaction time truncated to `[0, ∞)` by resampling.
    pub fn sample_delay(&self, s: &mut Substream) -> f64 {
        if self.delay_sigma_ns == 0.0 {
            return self.delay_mean_ns;
        }
        loop {
            let x = self.delay_mean_ns + self.delay_sigma_ns * s.standard_normal();
            if x >= 0.0 {
                return x;
            }
        }
    }

    /// A click at `arrival + delay` with probability `efficiency`.
    pub fn register_click(
        &self,
        layer: Layer,
        sensor: SensorId,
        electron_id: i64,
        t_emit_ns: f64,
        arrival_ns: f64,
        s: &mut Substream,
    ) -> Option<ClickEvent> {
        if s.uniform() >= self.efficiency {
            return None;
        }
        let t_click_ns = arrival_ns + self.sample_delay(s);
        Some(ClickEvent { electron_id, layer, sensor, t_emit_ns, t_click_ns, injected: false })
    }
}

/// One registered signal. `electron_id` is ground truth, `-1` for dark
/// counts; the classifier never reads it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClickEvent {
    pub electron_id: i64,
    pub layer: Layer,
    pub sensor: SensorId,
    pub t_emit_ns: f64,
    pub t_click_ns: f64,
    /// Synthetic duplicate added by fault injection.
    pub injected: bool,
}

impl ClickEvent {
    /// Event-log order: time, then electron, then layer.
    pub fn log_order(a: &ClickEvent, b: &ClickEvent) -> Ordering {
        a.t_click_ns
            .total_cmp(&b.t_click_ns)
            .then(a.electron_id.cmp(&b.electron_id))
            .then(a.layer.cmp(&b.layer))
            .then(a.sensor.cmp(&b.sensor))
    }
}

/// Losses in the space between the inner and outer layers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitModel {
    pub p_absorb: f64,
    pub p_scatter: f64,
    pub scatter_sigma_rad: f64,
}

impl TransitModel {
    pub fn new(p_absorb: f64, p_scatter: f64, scatter_sigma_rad: f64) -> Result<Self, DetectorError> {
        check("p_absorb", p_absorb, 0.0, 1.0, "[0, 1]")?;
        check("p_scatter", p_scatter, 0.0, 1.0, "[0, 1]")?;
        check("scatter_sigma", scatter_sigma_rad, 0.0, std::f64::consts::PI, "[0, pi]")?;
        if p_absorb + p_scatter > 1.0 {
            return Err(DetectorError::TransitSum(p_absorb + p_scatter));
        }
        Ok(Self { p_absorb, p_scatter, scatter_sigma_rad })
    }

    pub fn lossless() -> Self {
        Self { p_absorb: 0.0, p_scatter: 0.0, scatter_sigma_rad: 0.0 }
    }
}

impl Default for TransitModel {
    fn default() -> Self {
        Self { p_absorb: 0.005, p_scatter: 0.01, scatter_sigma_rad: 1f64.to_radians() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OuterArrival {
    SameSensor,
    OtherSensor(SensorId),
    Lost,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transport {
    pub arrival: OuterArrival,
    /// Flight distance from the inner hit point to the outer surface.
    pub path_cm: f64,
}

/// Carry an electron that crossed inner sensor `hit` along `dir` to the
/// outer layer.
pub fn transport_between_layers(
    hit: SensorId,
    dir: &Direction,
    layout: &DualLayerLayout,
    model: &TransitModel,
    s: &mut Substream,
) -> Transport {
    let gap = layout.gap_cm();
    let u = s.uniform();
    if u < model.p_absorb {
        return Transport { arrival: OuterArrival::Lost, path_cm: gap };
    }
    if u >= model.p_absorb + model.p_scatter {
        return Transport { arrival: OuterArrival::SameSensor, path_cm: gap };
    }
    let kick = model.scatter_sigma_rad * s.standard_normal();
    let azimuth = TAU * s.uniform();
    let d1 = offset_direction(dir, kick, azimuth);
    let (r_in, r_out) = (layout.inner.radius_cm(), layout.outer.radius_cm());
    let d0 = dir.unit_vector();
    let p = [r_in * d0[0], r_in * d0[1], r_in * d0[2]];
    // Forward intersection of P + s d1 with the outer sphere.
    let b = dot(p, d1);
    let path = -b + (b * b - r_in * r_in + r_out * r_out).sqrt();
    let q = [p[0] + path * d1[0], p[1] + path * d1[1], p[2] + path * d1[2]];
    let arrival = match layout.outer.locate_vector([q[0] / r_out, q[1] / r_out, q[2] / r_out]) {
        Landing::Sensor(j) if j == hit => OuterArrival::SameSensor,
        Landing::Sensor(j) => OuterArrival::OtherSensor(j),
        Landing::Gap => OuterArrival::Lost,
    };
    Transport { arrival, path_cm: path }
}

/// Poisson dark clicks over `[t_start, t_end)`, uniform over `sensors`.
pub fn dark_counts(
    model: &ResponseModel,
    layer: Layer,
    sensors: usize,
    t_start_ns: f64,
    t_end_ns: f64,
    s: &mut Substream,
) -> Vec<ClickEvent> {
    let mut out = Vec::new();
    if model.dark_rate_hz <= 0.0 || sensors == 0 || t_end_ns <= t_start_ns {
        return out;
    }
    let mean_gap_ns = 1.0e9 / model.dark_rate_hz;
    let mut t = t_start_ns;
    loop {
        t += mean_gap_ns * s.exponential();
        if t >= t_end_ns {
            break;
        }
        let k = ((s.uniform() * sensors as f64) as usize).min(sensors - 1);
        out.push(ClickEvent {
            electron_id: -1,
            layer,
            sensor: SensorId::from_index(k),
            t_emit_ns: t,
            t_click_ns: t,
            injected: false,
        });
    }
    out
}

#[derive(Clone, Debug)]
pub enum Apparatus {
    Single(SensorLayout),
    Dual(DualLayerLayout),
}

impl Apparatus {
    pub fn sensor_count(&self) -> usize {
        self.primary().sensor_count()
    }

    /// The layer that performs the Born selection.
    pub fn primary(&self) -> &SensorLayout {
        match self {
            Apparatus::Single(l) => l,
            Apparatus::Dual(d) => &d.inner,
        }
    }

    pub fn layers(&self) -> Vec<(Layer, &SensorLayout)> {
        match self {
            Apparatus::Single(l) => vec![(Layer::Single, l)],
            Apparatus::Dual(d) => vec![(Layer::Inner, &d.inner), (Layer::Outer, &d.outer)],
        }
    }
}

/// Probabilities of appending a synthetic duplicate click per electron.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FaultPlan {
    pub duplicate_inner: f64,
    pub duplicate_outer: f64,
}

impl FaultPlan {
    pub fn is_active(&self) -> bool {
        self.duplicate_inner > 0.0 || self.duplicate_outer > 0.0
    }
}

/// Everything needed to simulate any electron of a run. Read-only and
/// shared across worker threads.
#[derive(Clone, Debug)]
pub struct ElectronPipeline {
    pub profile: Arc<DiffractionProfile>,
    pub apparatus: Apparatus,
    pub table: Arc<BranchTable>,
    pub mode: InterpretationMode,
    pub inner: ResponseModel,
    pub outer: ResponseModel,
    pub transit: TransitModel,
    pub faults: FaultPlan,
    pub speed_m_per_s: f64,
    pub seed: u64,
    pub trace: bool,
    cap_bounds: Vec<f64>,
}

/// Output of a contiguous range of electrons.
#[derive(Clone, Debug)]
pub struct ShardOutput {
    pub events: Vec<ClickEvent>,
    pub ledger: DispositionLedger,
    pub selected: Vec<Label>,
    pub audit: AuditStats,
    pub trace: String,
    pub errors: Vec<BranchError>,
}

impl ElectronPipeline {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        profile: Arc<DiffractionProfile>,
        apparatus: Apparatus,
        table: Arc<BranchTable>,
        mode: InterpretationMode,
        inner: ResponseModel,
        outer: ResponseModel,
        transit: TransitModel,
        faults: FaultPlan,
        speed_m_per_s: f64,
        seed: u64,
    ) -> Self {
        let layout = apparatus.primary();
        let r = layout.cap_angular_radius();
        let cap_bounds = layout
            .centers()
            .iter()
            .map(|c| profile.max_pdf_between(c.theta - r, c.theta + r))
            .collect();
        Self { profile, apparatus, table, mode, inner, outer, transit, faults, speed_m_per_s, seed, trace: false, cap_bounds }
    }

    /// Flight time over `cm`, in ns.
    pub fn flight_ns(&self, cm: f64) -> f64 {
        cm * 1.0e7 / self.speed_m_per_s
    }

    /// Direction inside cap `k` drawn from the profile restricted to the cap:
    /// area-uniform proposals accepted with probability `p(θ) / max p`.
    pub fn sample_in_cap(&self, k: SensorId, s: &mut Substream) -> Direction {
        let layout = self.apparatus.primary();
        let center = layout.center(k);
        let one_minus_cos = 1.0 - layout.cap_angular_radius().cos();
        let bound = self.cap_bounds[k.index()];
        for _ in 0..100_000 {
            let rho = (1.0 - s.uniform() * one_minus_cos).acos();
            let d = Direction::from_vector(offset_direction(&center, rho, TAU * s.uniform()));
            if s.uniform() * bound < self.profile.pdf_at(d.theta) {
                return d;
            }
        }
        center
    }

    pub fn simulate_range(&self, first_id: u64, emit_ns: &[f64]) -> ShardOutput {
        let mut out = ShardOutput {
            events: Vec::with_capacity(emit_ns.len() * 2),
            ledger: DispositionLedger::new(first_id, emit_ns.len()),
            selected: Vec::with_capacity(emit_ns.len()),
            audit: AuditStats::default(),
            trace: String::new(),
            errors: Vec::new(),
        };
        for (i, &t) in emit_ns.iter().enumerate() {
            self.simulate_electron(first_id + i as u64, t, &mut out);
        }
        out
    }

    /// Runs one electron, appending its clicks, ledger record and audits.
    pub fn simulate_electron(&self, id: u64, t_emit: f64, out: &mut ShardOutput) {
        let mut s = Substream::new(self.seed, StreamDomain::Electron, id);
        let pending = evolve_one_electron(&self.table, self.mode, s.uniform(), &mut out.audit);
        let selected = pending.outcome();
        let eid = id as i64;
        let first_event = out.events.len();
        let disposition = match (&self.apparatus, selected) {
            (_, Label::Gap) => Disposition::GapLanding,
            (Apparatus::Single(layout), Label::Sensor(k)) => {
                let arrival = t_emit + self.flight_ns(layout.radius_cm());
                out.events.extend(self.outer.register_click(Layer::Single, k, eid, t_emit, arrival, &mut s));
                Disposition::Detected { sensor: k, layer: Layer::Single }
            }
            (Apparatus::Dual(d), Label::Sensor(k)) => {
                let dir = self.sample_in_cap(k, &mut s);
                let inner_arrival = t_emit + self.flight_ns(d.inner.radius_cm());
                out.events.extend(self.inner.register_click(Layer::Inner, k, eid, t_emit, inner_arrival, &mut s));
                let tr = transport_between_layers(k, &dir, d, &self.transit, &mut s);
                let outer_arrival = inner_arrival + self.flight_ns(tr.path_cm);
                let target = match tr.arrival {
                    OuterArrival::SameSensor => Some(k),
                    OuterArrival::OtherSensor(j) => Some(j),
                    OuterArrival::Lost => None,
                };
                match target {
                    Some(j) => {
                        out.events.extend(self.outer.register_click(Layer::Outer, j, eid, t_emit, outer_arrival, &mut s));
                        Disposition::Detected { sensor: j, layer: Layer::Outer }
                    }
                    None => Disposition::LostBetweenLayers,
                }
            }
        };
        if self.faults.is_active() {
            self.inject_faults(id, t_emit, first_event, out);
        }
        out.selected.push(selected);
        match pending.settle(&mut out.ledger, id, disposition, &mut out.audit) {
            Ok(trace) if self.trace => trace.render(&mut out.trace),
            Ok(_) => {}
            Err(e) => out.errors.push(e),
        }
    }

    /// Duplicates an electron's click on a layer, at a random sensor up to
    /// 0.5 ns later.
    fn inject_faults(&self, id: u64, t_emit: f64, first_event: usize, out: &mut ShardOutput) {
        let mut f = Substream::new(self.seed, StreamDomain::Faults, id);
        let n = self.apparatus.sensor_count();
        let plan = match &self.apparatus {
            Apparatus::Single(_) => vec![(Layer::Single, self.faults.duplicate_outer)],
            Apparatus::Dual(_) => {
                vec![(Layer::Inner, self.faults.duplicate_inner), (Layer::Outer, self.faults.duplicate_outer)]
            }
        };
        for (layer, p) in plan {
            let (u_fire, u_sensor, u_shift) = (f.uniform(), f.uniform(), f.uniform());
            if u_fire >= p {
                continue;
            }
            let Some(base) = out.events[first_event..].iter().find(|e| e.layer == layer).map(|e| e.t_click_ns) else {
                continue;
            };
            let k = ((u_sensor * n as f64) as usize).min(n - 1);
            out.events.push(ClickEvent {
                electron_id: id as i64,
                layer,
                sensor: SensorId::from_index(k),
                t_emit_ns: t_emit,
                t_click_ns: base + 0.5 * u_shift,
                injected: true,
            });
        }
    }
}
