//! Measurement bookkeeping: state preparation, branching, outcome selection
//! and relocation, with three interchangeable interpretation modes.
//!
//! Every mode selects its outcome with the same inverse-cdf rule over the
//! branch weights in ascending label order (gap last). Feeding the same
//! uniform to any mode therefore yields the same label; the modes differ only
//! in what the [`BookkeepingTrace`] says happened to the other branches.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{Layer, ReferenceMap, SensorId};

pub const AUDIT_TOLERANCE: f64 = 1e-12;
const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum BranchError {
    #[error("state norm {0:.15} differs from 1 by more than 1e-9")]
    Unnormalized(f64),
    #[error("state has no sensor amplitudes")]
    Empty,
    #[error("electron {0} relocated twice")]
    DoubleRelocation(u64),
    #[error("relocation before an outcome was selected")]
    NotSelected,
    #[error("electron {id}: disposition {disposition} contradicts selected outcome {selected}")]
    Inconsistent { id: u64, selected: Label, disposition: Disposition },
    #[error("electron {id} outside ledger range {first}..{end}")]
    OutOfRange { id: u64, first: u64, end: u64 },
    #[error("ledger shards overlap at electron {0}")]
    ShardOverlap(u64),
}

/// Outcome label. The derived order puts every sensor before the gap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Sensor(SensorId),
    Gap,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Sensor(id) => write!(f, "{}", id.0),
            Label::Gap => f.write_str("gap"),
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "gap" {
            return Ok(Label::Gap);
        }
        match s.parse::<u32>() {
            Ok(k) if k >= 1 => Ok(Label::Sensor(SensorId(k))),
            _ => Err(format!("bad outcome label '{s}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum InterpretationMode {
    #[default]
    Bhsi,
    Mwi,
    Ci,
}

impl InterpretationMode {
    pub const ALL: [InterpretationMode; 3] = [Self::Bhsi, Self::Mwi, Self::Ci];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bhsi => "BHSI",
            Self::Mwi => "MWI",
            Self::Ci => "CI",
        }
    }
}

impl fmt::Display for InterpretationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InterpretationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BHSI" => Ok(Self::Bhsi),
            "MWI" => Ok(Self::Mwi),
            "CI" => Ok(Self::Ci),
            _ => Err(format!("unknown interpretation '{s}' (expected BHSI, MWI or CI)")),
        }
    }
}

/// Electron state before measurement: one amplitude per sensor plus the
/// amplitude of the part of the wave that misses every cap.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveState {
    amplitudes: Vec<Complex64>,
    gap_amplitude: Complex64,
}

impl WaveState {
    /// Zero-phase amplitudes `c_k = √(w_k / W)`, `c_gap = √(w_gap / W)` with
    /// `W` the map total, so a map read back from its rounded file still
    /// yields a unit-norm state.
    pub fn prepare(map: &ReferenceMap) -> Self {
        let total = map.total();
        let amp = |w: f64| Complex64::new((w / total).sqrt(), 0.0);
        Self { amplitudes: map.weights().iter().map(|&w| amp(w)).collect(), gap_amplitude: amp(map.gap_weight()) }
    }

    /// Arbitrary amplitudes, e.g. with a phase map. Normalisation is checked
    /// when branching.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>, gap_amplitude: Complex64) -> Result<Self, BranchError> {
        if amplitudes.is_empty() {
            return Err(BranchError::Empty);
        }
        Ok(Self { amplitudes, gap_amplitude })
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn gap_amplitude(&self) -> Complex64 {
        self.gap_amplitude
    }

    pub fn sensor_count(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum::<f64>() + self.gap_amplitude.norm_sqr()
    }
}

/// The labels and weights produced by branching a state. Shared read-only by
/// every electron of a run.
#[derive(Debug, PartialEq)]
pub struct BranchTable {
    labels: Vec<Label>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl BranchTable {
    /// Branch a normalised state: one entry per nonzero-weight label, weight
    /// `|c_k|²`.
    pub fn branch(state: &WaveState) -> Result<Arc<Self>, BranchError> {
        let norm = state.norm_sqr();
        if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(BranchError::Unnormalized(norm));
        }
        let mut labels = Vec::with_capacity(state.sensor_count() + 1);
        let mut weights = Vec::with_capacity(state.sensor_count() + 1);
        let sensors = state.amplitudes.iter().enumerate().map(|(i, c)| (Label::Sensor(SensorId::from_index(i)), c));
        for (label, c) in sensors.chain(std::iter::once((Label::Gap, &state.gap_amplitude))) {
            let w = c.norm_sqr();
            if w > 0.0 {
                labels.push(label);
                weights.push(w);
            }
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Arc::new(Self { labels, weights, cumulative }))
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn weight_of(&self, label: Label) -> f64 {
        self.labels.binary_search(&label).map_or(0.0, |i| self.weights[i])
    }

    /// First label whose cumulative weight exceeds `u`.
    pub fn select(&self, u: f64) -> Label {
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.labels[i.min(self.labels.len() - 1)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvTag {
    Coherent,
    DecoheredLocal,
    AbsorbedEnv,
}

impl EnvTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvTag::Coherent => "Coherent",
            EnvTag::DecoheredLocal => "DecoheredLocal",
            EnvTag::AbsorbedEnv => "AbsorbedEnv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadoutState {
    Ready,
    Reads(Label),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Branched,
    Relocated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchEntry {
    pub label: Label,
    pub weight: f64,
    pub tag: EnvTag,
}

/// One electron's branches. The per-entry environment tags follow from the
/// phase and the pointer, so the set stays a handful of words wide no matter
/// how many sensors there are.
#[derive(Clone, Debug)]
pub struct BranchSet {
    table: Arc<BranchTable>,
    phase: Phase,
    pointer: ReadoutState,
}

impl BranchSet {
    pub fn new(table: Arc<BranchTable>) -> Self {
        Self { table, phase: Phase::Branched, pointer: ReadoutState::Ready }
    }

    pub fn pointer(&self) -> ReadoutState {
        self.pointer
    }

    pub fn table(&self) -> &Arc<BranchTable> {
        &self.table
    }

    pub fn is_relocated(&self) -> bool {
        self.phase == Phase::Relocated
    }

    fn tag_of(&self, label: Label) -> EnvTag {
        match (self.phase, self.pointer) {
            (Phase::Relocated, ReadoutState::Reads(sel)) if sel != label => EnvTag::AbsorbedEnv,
            _ => EnvTag::DecoheredLocal,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = BranchEntry> + '_ {
        self.table
            .labels
            .iter()
            .zip(&self.table.weights)
            .map(|(&label, &weight)| BranchEntry { label, weight, tag: self.tag_of(label) })
    }

    /// Inverse-cdf outcome choice; moves the pointer to `Reads(label)`.
    pub fn select_outcome(&mut self, u: f64) -> Label {
        let label = self.table.select(u);
        self.pointer = ReadoutState::Reads(label);
        label
    }

    /// Absorb every non-selected branch into the environment and write the
    /// electron's single ledger record.
    pub fn relocate(
        &mut self,
        ledger: &mut DispositionLedger,
        electron_id: u64,
        disposition: Disposition,
    ) -> Result<(), BranchError> {
        let selected = match self.pointer {
            ReadoutState::Reads(label) => label,
            ReadoutState::Ready => return Err(BranchError::NotSelected),
        };
        if self.phase == Phase::Relocated {
            return Err(BranchError::DoubleRelocation(electron_id));
        }
        let consistent = matches!(
            (selected, disposition),
            (Label::Gap, Disposition::GapLanding)
                | (Label::Sensor(_), Disposition::Detected { .. } | Disposition::LostBetweenLayers)
        );
        if !consistent {
            return Err(BranchError::Inconsistent { id: electron_id, selected, disposition });
        }
        ledger.record(electron_id, disposition)?;
        self.phase = Phase::Relocated;
        Ok(())
    }
}

/// Σ weights over the set's entries; 0 for an empty set.
pub fn weight_audit(branches: &BranchSet) -> f64 {
    branches.entries().map(|e| e.weight).sum()
}

/// Terminal record of one electron.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Disposition {
    Detected { sensor: SensorId, layer: Layer },
    GapLanding,
    LostBetweenLayers,
    /// Only produced when validating a corrupted ledger.
    Violation,
}

impl Disposition {
    pub fn name(&self) -> &'static str {
        match self {
            Disposition::Detected { .. } => "Detected",
            Disposition::GapLanding => "GapLanding",
            Disposition::LostBetweenLayers => "LostBetweenLayers",
            Disposition::Violation => "Violation",
        }
    }
}

impl fmt::Display for Disposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Disposition::Detected { sensor, layer } => write!(f, "Detected({}, {layer})", sensor.0),
            other => f.write_str(other.name()),
        }
    }
}

/// Dispositions for a contiguous range of electron ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DispositionLedger {
    first_id: u64,
    slots: Vec<Option<Disposition>>,
    violations: Vec<u64>,
}

impl DispositionLedger {
    pub fn new(first_id: u64, count: usize) -> Self {
        Self { first_id, slots: vec![None; count], violations: Vec::new() }
    }

    pub fn first_id(&self) -> u64 {
        self.first_id
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn slot(&self, id: u64) -> Result<usize, BranchError> {
        let end = self.first_id + self.slots.len() as u64;
        if id < self.first_id || id >= end {
            return Err(BranchError::OutOfRange { id, first: self.first_id, end });
        }
        Ok((id - self.first_id) as usize)
    }

    /// Writes the record; a second write for the same electron is refused
    /// and remembered as a violation.
    pub fn record(&mut self, id: u64, disposition: Disposition) -> Result<(), BranchError> {
        let i = self.slot(id)?;
        if self.slots[i].is_some() {
            self.violations.push(id);
            return Err(BranchError::DoubleRelocation(id));
        }
        self.slots[i] = Some(disposition);
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<Disposition> {
        self.slot(id).ok().and_then(|i| self.slots[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, Option<Disposition>)> + '_ {
        self.slots.iter().enumerate().map(|(i, d)| (self.first_id + i as u64, *d))
    }

    /// Ids with a refused second record.
    pub fn violations(&self) -> &[u64] {
        &self.violations
    }

    pub fn missing(&self) -> usize {
        self.slots.iter().filter(|s| s.is_none()).count()
    }

    /// Concatenate shards covering disjoint, adjacent id ranges.
    pub fn merge(mut shards: Vec<DispositionLedger>) -> Result<Self, BranchError> {
        shards.sort_by_key(|s| s.first_id);
        let mut iter = shards.into_iter();
        let Some(mut out) = iter.next() else {
            return Ok(Self::new(0, 0));
        };
        for shard in iter {
            let end = out.first_id + out.slots.len() as u64;
            if shard.first_id < end {
                return Err(BranchError::ShardOverlap(shard.first_id));
            }
            for _ in end..shard.first_id {
                out.slots.push(None);
            }
            out.slots.extend(shard.slots);
            out.violations.extend(shard.violations);
        }
        Ok(out)
    }
}

/// Running record of every weight audit taken during a run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AuditStats {
    pub audits: u64,
    pub failures: u64,
    pub max_deviation: f64,
}

impl AuditStats {
    pub fn observe(&mut self, total: f64) {
        let dev = (total - 1.0).abs();
        self.audits += 1;
        if !(dev <= AUDIT_TOLERANCE) {
            self.failures += 1;
        }
        if dev > self.max_deviation || dev.is_nan() {
            self.max_deviation = dev;
        }
    }

    pub fn combine(self, other: Self) -> Self {
        Self {
            audits: self.audits + other.audits,
            failures: self.failures + other.failures,
            max_deviation: self.max_deviation.max(other.max_deviation),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// An electron whose outcome is chosen but whose fate downstream of the
/// first measurement is not yet known.
#[derive(Debug)]
pub struct PendingMeasurement {
    mode: InterpretationMode,
    branches: BranchSet,
    outcome: Label,
}

impl PendingMeasurement {
    pub fn outcome(&self) -> Label {
        self.outcome
    }

    pub fn branches(&self) -> &BranchSet {
        &self.branches
    }

    /// Relocate with the final disposition and produce the mode's trace.
    pub fn settle(
        mut self,
        ledger: &mut DispositionLedger,
        electron_id: u64,
        disposition: Disposition,
        audit: &mut AuditStats,
    ) -> Result<BookkeepingTrace, BranchError> {
        self.branches.relocate(ledger, electron_id, disposition)?;
        audit.observe(weight_audit(&self.branches));
        Ok(BookkeepingTrace { electron_id, mode: self.mode, table: self.branches.table, selected: self.outcome })
    }
}

/// Branch, select and audit one electron. Identical `(table, u)` gives the
/// identical outcome in every mode.
pub fn evolve_one_electron(
    table: &Arc<BranchTable>,
    mode: InterpretationMode,
    u: f64,
    audit: &mut AuditStats,
) -> PendingMeasurement {
    let mut branches = BranchSet::new(Arc::clone(table));
    audit.observe(weight_audit(&branches));
    let outcome = branches.select_outcome(u);
    audit.observe(weight_audit(&branches));
    PendingMeasurement { mode, branches, outcome }
}

/// What each interpretation records about the branches after one electron.
/// Rendering is lazy: the lines exist only when asked for.
#[derive(Clone, Debug)]
pub struct BookkeepingTrace {
    electron_id: u64,
    mode: InterpretationMode,
    table: Arc<BranchTable>,
    selected: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceLine {
    pub label: Label,
    pub weight: f64,
    pub tag: &'static str,
}

impl BookkeepingTrace {
    pub fn selected(&self) -> Label {
        self.selected
    }

    pub fn mode(&self) -> InterpretationMode {
        self.mode
    }

    pub fn lines(&self) -> Vec<TraceLine> {
        let sel = self.selected;
        self.table
            .labels
            .iter()
            .zip(&self.table.weights)
            .map(|(&label, &w)| match self.mode {
                InterpretationMode::Bhsi => TraceLine {
                    label,
                    weight: w,
                    tag: if label == sel { EnvTag::DecoheredLocal.as_str() } else { EnvTag::AbsorbedEnv.as_str() },
                },
                InterpretationMode::Mwi => {
                    TraceLine { label, weight: w, tag: if label == sel { "ObservedWorld" } else { "World" } }
                }
                InterpretationMode::Ci => {
                    if label == sel {
                        TraceLine { label, weight: 1.0, tag: "Collapsed" }
                    } else {
                        TraceLine { label, weight: 0.0, tag: "Zeroed" }
                    }
                }
            })
            .collect()
    }

    /// `electron_id mode label weight tag` per line.
    pub fn render(&self, out: &mut String) {
        for l in self.lines() {
            let _ = writeln!(out, "{} {} {} {:.12e} {}", self.electron_id, self.mode, l.label, l.weight, l.tag);
        }
    }
}
