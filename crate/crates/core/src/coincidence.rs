//! Timing-hierarchy checks, click grouping and the dual-layer taxonomy.
//!
//! Grouping and classification only look at a click's layer, sensor and
//! time. Ground-truth electron ids ride along in the events but are never
//! consulted here.

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::detector::ClickEvent;
use crate::geometry::Layer;
#[cfg(test)]
use crate::geometry::SensorId;

#[derive(Debug, Error, PartialEq)]
pub enum CoincidenceError {
    #[error("click stream not sorted by time at position {0}")]
    Unsorted(usize),
}

/// Time scales of the dual-layer experiment, all in ns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingConfig {
    pub dt_transit_ns: f64,
    pub tau_in_ns: f64,
    pub tau_out_ns: f64,
    pub window_ns: f64,
    pub period_ns: f64,
    /// How many windows must fit in one emission period.
    pub separation_factor: f64,
}

impl TimingConfig {
    pub const DEFAULT_SEPARATION_FACTOR: f64 = 100.0;

    pub fn new(dt_transit_ns: f64, tau_in_ns: f64, tau_out_ns: f64, window_ns: f64, period_ns: f64) -> Self {
        Self {
            dt_transit_ns,
            tau_in_ns,
            tau_out_ns,
            window_ns,
            period_ns,
            separation_factor: Self::DEFAULT_SEPARATION_FACTOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TimingViolation {
    NonPositive { name: &'static str, value: f64 },
    TransitExceedsInnerResponse { dt_transit_ns: f64, tau_in_ns: f64 },
    WindowNotAboveInnerResponse { tau_in_ns: f64, window_ns: f64 },
    WindowNotMuchBelowPeriod { window_ns: f64, period_ns: f64, factor: f64 },
}

impl TimingViolation {
    /// The clause of `Δt ≤ τ_in < T_w ≪ 1/f` that failed.
    pub fn clause(&self) -> &'static str {
        match self {
            TimingViolation::NonPositive { .. } => "all timescales > 0",
            TimingViolation::TransitExceedsInnerResponse { .. } => "Δt ≤ τ_in",
            TimingViolation::WindowNotAboveInnerResponse { .. } => "τ_in < T_w",
            TimingViolation::WindowNotMuchBelowPeriod { .. } => "T_w ≪ 1/f",
        }
    }
}

impl fmt::Display for TimingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimingViolation::NonPositive { name, value } => write!(f, "{}: {name} = {value}", self.clause()),
            TimingViolation::TransitExceedsInnerResponse { dt_transit_ns, tau_in_ns } => {
                write!(f, "{}: {dt_transit_ns} ns > {tau_in_ns} ns", self.clause())
            }
            TimingViolation::WindowNotAboveInnerResponse { tau_in_ns, window_ns } => {
                write!(f, "{}: {tau_in_ns} ns >= {window_ns} ns", self.clause())
            }
            TimingViolation::WindowNotMuchBelowPeriod { window_ns, period_ns, factor } => {
                write!(f, "{}: {window_ns} ns > {period_ns} ns / {factor}", self.clause())
            }
        }
    }
}

/// Every violated clause of the timing hierarchy; empty when it holds.
pub fn validate_timing(cfg: &TimingConfig) -> Vec<TimingViolation> {
    let mut v = Vec::new();
    let fields = [
        ("dt_transit", cfg.dt_transit_ns),
        ("tau_in", cfg.tau_in_ns),
        ("tau_out", cfg.tau_out_ns),
        ("window", cfg.window_ns),
        ("period", cfg.period_ns),
        ("separation_factor", cfg.separation_factor),
    ];
    for (name, value) in fields {
        if !(value > 0.0 && value.is_finite()) {
            v.push(TimingViolation::NonPositive { name, value });
        }
    }
    if !(cfg.dt_transit_ns <= cfg.tau_in_ns) {
        v.push(TimingViolation::TransitExceedsInnerResponse { dt_transit_ns: cfg.dt_transit_ns, tau_in_ns: cfg.tau_in_ns });
    }
    if !(cfg.tau_in_ns < cfg.window_ns) {
        v.push(TimingViolation::WindowNotAboveInnerResponse { tau_in_ns: cfg.tau_in_ns, window_ns: cfg.window_ns });
    }
    if !(cfg.window_ns <= cfg.period_ns / cfg.separation_factor) {
        v.push(TimingViolation::WindowNotMuchBelowPeriod {
            window_ns: cfg.window_ns,
            period_ns: cfg.period_ns,
            factor: cfg.separation_factor,
        });
    }
    v
}

/// Greedy windowing: each group starts at the first unconsumed click and
/// takes every later click within `window_ns` of it. Groups are returned as
/// index ranges into `stream`.
pub fn group_clicks(stream: &[ClickEvent], window_ns: f64) -> Result<Vec<std::ops::Range<usize>>, CoincidenceError> {
    if let Some(i) = stream.windows(2).position(|w| w[1].t_click_ns < w[0].t_click_ns) {
        return Err(CoincidenceError::Unsorted(i + 1));
    }
    let mut groups = Vec::new();
    let mut start = 0;
    while start < stream.len() {
        let t0 = stream[start].t_click_ns;
        let mut end = start + 1;
        while end < stream.len() && stream[end].t_click_ns - t0 <= window_ns {
            end += 1;
        }
        groups.push(start..end);
        start = end;
    }
    Ok(groups)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Aligned,
    Misaligned,
    OuterOnly,
    InnerOnly,
    DoubleInner,
    DoubleOuter,
    Empty,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Aligned,
        Category::Misaligned,
        Category::OuterOnly,
        Category::InnerOnly,
        Category::DoubleInner,
        Category::DoubleOuter,
        Category::Empty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Aligned => "Aligned",
            Category::Misaligned => "Misaligned",
            Category::OuterOnly => "OuterOnly",
            Category::InnerOnly => "InnerOnly",
            Category::DoubleInner => "DoubleInner",
            Category::DoubleOuter => "DoubleOuter",
            Category::Empty => "Empty",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoincidenceRecord {
    pub group_id: usize,
    pub category: Category,
    pub clicks: Vec<ClickEvent>,
    pub delayed_choice: bool,
    /// `t_outer - t_inner` for the first click of each layer, else the span
    /// of the group.
    pub dt_observed_ns: f64,
    /// Set when the group has more clicks than the taxonomy describes.
    pub overflow: bool,
}

impl CoincidenceRecord {
    fn first(&self, outer: bool) -> Option<&ClickEvent> {
        self.clicks.iter().find(|c| is_outer(c.layer) == outer)
    }

    pub fn inner_click(&self) -> Option<&ClickEvent> {
        self.first(false)
    }

    pub fn outer_click(&self) -> Option<&ClickEvent> {
        self.first(true)
    }
}

/// Single-layer clicks are opaque-layer clicks.
fn is_outer(layer: Layer) -> bool {
    layer != Layer::Inner
}

/// Classifies one group from its observable fields only.
pub fn classify(group_id: usize, clicks: &[ClickEvent]) -> CoincidenceRecord {
    let n_in = clicks.iter().filter(|c| !is_outer(c.layer)).count();
    let n_out = clicks.len() - n_in;
    let inner: Vec<&ClickEvent> = clicks.iter().filter(|c| !is_outer(c.layer)).collect();
    let outer: Vec<&ClickEvent> = clicks.iter().filter(|c| is_outer(c.layer)).collect();
    let mut overflow = false;
    let category = match (n_in, n_out) {
        (0, 0) => Category::Empty,
        (1, 1) if inner[0].sensor == outer[0].sensor => Category::Aligned,
        (1, 1) => Category::Misaligned,
        (0, 1) => Category::OuterOnly,
        (1, 0) => Category::InnerOnly,
        (2, 0) => Category::DoubleInner,
        (0, 2) => Category::DoubleOuter,
        (i, _) => {
            overflow = true;
            if i >= 2 {
                Category::DoubleInner
            } else {
                Category::DoubleOuter
            }
        }
    };
    let delayed_choice = outer.iter().any(|o| inner.iter().any(|i| o.t_click_ns < i.t_click_ns));
    let dt_observed_ns = match (inner.first(), outer.first()) {
        (Some(i), Some(o)) => o.t_click_ns - i.t_click_ns,
        _ => {
            let lo = clicks.iter().map(|c| c.t_click_ns).fold(f64::INFINITY, f64::min);
            let hi = clicks.iter().map(|c| c.t_click_ns).fold(f64::NEG_INFINITY, f64::max);
            if clicks.is_empty() {
                0.0
            } else {
                hi - lo
            }
        }
    };
    CoincidenceRecord { group_id, category, clicks: clicks.to_vec(), delayed_choice, dt_observed_ns, overflow }
}

/// Groups a sorted stream and classifies every group.
pub fn classify_stream(stream: &[ClickEvent], window_ns: f64) -> Result<Vec<CoincidenceRecord>, CoincidenceError> {
    Ok(group_clicks(stream, window_ns)?
        .into_iter()
        .enumerate()
        .map(|(g, r)| classify(g, &stream[r]))
        .collect())
}

/// A binomial fraction with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateEstimate {
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub std_error: f64,
}

impl RateEstimate {
    pub fn new(successes: u64, trials: u64) -> Option<Self> {
        if trials == 0 {
            return None;
        }
        let rate = successes as f64 / trials as f64;
        Some(Self { successes, trials, rate, std_error: (rate * (1.0 - rate) / trials as f64).sqrt() })
    }

    /// `rate ± 3σ`, clipped to `[0, 1]`.
    pub fn interval3(&self) -> (f64, f64) {
        ((self.rate - 3.0 * self.std_error).max(0.0), (self.rate + 3.0 * self.std_error).min(1.0))
    }
}

/// Fraction of Aligned and Misaligned records flagged as delayed choice;
/// `None` when there are no such records.
pub fn delayed_choice_rate(records: &[CoincidenceRecord]) -> Option<RateEstimate> {
    let eligible = records.iter().filter(|r| matches!(r.category, Category::Aligned | Category::Misaligned));
    let (mut hits, mut n) = (0u64, 0u64);
    for r in eligible {
        n += 1;
        hits += r.delayed_choice as u64;
    }
    RateEstimate::new(hits, n)
}

fn opt_sensor(c: Option<&ClickEvent>) -> String {
    c.map(|c| c.sensor.0.to_string()).unwrap_or_default()
}

fn opt_time(c: Option<&ClickEvent>) -> String {
    c.map(|c| format!("{:.6}", c.t_click_ns)).unwrap_or_default()
}

/// `group_id,category,inner_sensor,outer_sensor,t_inner_ns,t_outer_ns,dt_observed_ns,delayed_choice`
pub fn write_records<W: Write>(records: &[CoincidenceRecord], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "group_id",
        "category",
        "inner_sensor",
        "outer_sensor",
        "t_inner_ns",
        "t_outer_ns",
        "dt_observed_ns",
        "delayed_choice",
    ])?;
    for r in records {
        let (i, o) = (r.inner_click(), r.outer_click());
        w.write_record([
            r.group_id.to_string(),
            r.category.to_string(),
            opt_sensor(i),
            opt_sensor(o),
            opt_time(i),
            opt_time(o),
            format!("{:.6}", r.dt_observed_ns),
            r.delayed_choice.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{StreamDomain, Substream};
    use proptest::prelude::*;

    fn click(layer: Layer, sensor: u32, t: f64) -> ClickEvent {
        ClickEvent { electron_id: 0, layer, sensor: SensorId(sensor), t_emit_ns: 0.0, t_click_ns: t, injected: false }
    }

    #[test]
    fn timing_hierarchy() {
        assert!(validate_timing(&TimingConfig::new(0.12, 1.0, 0.1, 6.0, 1000.0)).is_empty());
        let v = validate_timing(&TimingConfig::new(2.0, 1.0, 0.1, 6.0, 1000.0));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].clause(), "Δt ≤ τ_in");
        let v = validate_timing(&TimingConfig::new(0.12, 1.0, 0.1, 20.0, 1000.0));
        assert_eq!(v.iter().map(|x| x.clause()).collect::<Vec<_>>(), ["T_w ≪ 1/f"]);
        let v = validate_timing(&TimingConfig::new(0.12, 6.0, 0.1, 6.0, 1000.0));
        assert_eq!(v.iter().map(|x| x.clause()).collect::<Vec<_>>(), ["τ_in < T_w"]);
        let v = validate_timing(&TimingConfig::new(-1.0, 1.0, 0.1, 6.0, 1000.0));
        assert_eq!(v[0].clause(), "all timescales > 0");
        let both = validate_timing(&TimingConfig::new(2.0, 1.0, 0.1, 20.0, 1000.0));
        assert_eq!(both.len(), 2);
    }

    #[test]
    fn grouping_examples() {
        let s = [click(Layer::Inner, 35, 100.0), click(Layer::Outer, 35, 100.9)];
        assert_eq!(group_clicks(&s, 6.0).unwrap(), vec![0..2]);
        let s = [click(Layer::Outer, 1, 100.0), click(Layer::Outer, 2, 2100.0)];
        assert_eq!(group_clicks(&s, 6.0).unwrap(), vec![0..1, 1..2]);
        let s = [click(Layer::Outer, 1, 5.0), click(Layer::Outer, 2, 1.0)];
        assert_eq!(group_clicks(&s, 6.0), Err(CoincidenceError::Unsorted(1)));
        assert!(group_clicks(&[], 6.0).unwrap().is_empty());
    }

    #[test]
    fn taxonomy_examples() {
        let r = classify(0, &[click(Layer::Inner, 35, 100.0), click(Layer::Outer, 35, 100.9)]);
        assert_eq!(r.category, Category::Aligned);
        assert!(!r.delayed_choice);
        assert!((r.dt_observed_ns - 0.9).abs() < 1e-12);
        let r = classify(0, &[click(Layer::Outer, 45, 100.5), click(Layer::Inner, 35, 101.2)]);
        assert_eq!(r.category, Category::Misaligned);
        assert!(r.delayed_choice);
        assert_eq!(classify(0, &[click(Layer::Outer, 12, 100.3)]).category, Category::OuterOnly);
        assert_eq!(classify(0, &[click(Layer::Single, 12, 100.3)]).category, Category::OuterOnly);
        assert_eq!(classify(0, &[click(Layer::Inner, 3, 1.0)]).category, Category::InnerOnly);
        let r = classify(0, &[click(Layer::Inner, 3, 1.0), click(Layer::Inner, 4, 1.2)]);
        assert_eq!((r.category, r.overflow), (Category::DoubleInner, false));
        let r = classify(0, &[click(Layer::Outer, 3, 1.0), click(Layer::Outer, 4, 1.2)]);
        assert_eq!(r.category, Category::DoubleOuter);
        assert_eq!(classify(0, &[]).category, Category::Empty);
    }

    #[test]
    fn overflow_precedence() {
        let two_two = [
            click(Layer::Inner, 1, 0.0),
            click(Layer::Inner, 2, 0.1),
            click(Layer::Outer, 1, 0.2),
            click(Layer::Outer, 2, 0.3),
        ];
        let r = classify(0, &two_two);
        assert_eq!((r.category, r.overflow), (Category::DoubleInner, true));
        let one_two = [click(Layer::Inner, 1, 0.0), click(Layer::Outer, 1, 0.2), click(Layer::Outer, 2, 0.3)];
        let r = classify(0, &one_two);
        assert_eq!((r.category, r.overflow), (Category::DoubleOuter, true));
        let three_out = [click(Layer::Outer, 1, 0.0), click(Layer::Outer, 1, 0.2), click(Layer::Outer, 2, 0.3)];
        assert_eq!(classify(0, &three_out).category, Category::DoubleOuter);
    }

    #[test]
    fn delayed_choice_rates() {
        assert_eq!(delayed_choice_rate(&[]), None);
        let recs: Vec<_> = (0..10)
            .map(|g| classify(g, &[click(Layer::Outer, 1, 0.1), click(Layer::Inner, 1, 1.0)]))
            .collect();
        assert_eq!(delayed_choice_rate(&recs).unwrap().rate, 1.0);
        let only_outer = vec![classify(0, &[click(Layer::Outer, 1, 0.1)])];
        assert_eq!(delayed_choice_rate(&only_outer), None);
    }

    #[test]
    fn record_csv_layout() {
        let recs = vec![
            classify(0, &[click(Layer::Inner, 35, 100.0), click(Layer::Outer, 35, 100.9)]),
            classify(1, &[click(Layer::Outer, 12, 2000.3)]),
        ];
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "group_id,category,inner_sensor,outer_sensor,t_inner_ns,t_outer_ns,dt_observed_ns,delayed_choice");
        assert_eq!(lines[1], "0,Aligned,35,35,100.000000,100.900000,0.900000,false");
        assert_eq!(lines[2], "1,OuterOnly,,12,,2000.300000,0.000000,false");
    }

    /// O(n²) partition by the anchor recurrence: the next group starts at
    /// the first click later than the current anchor plus the window.
    fn brute_partition(times: &[f64], window: f64) -> Vec<usize> {
        let n = times.len();
        let mut anchors: Vec<usize> = if n > 0 { vec![0] } else { vec![] };
        while let Some(&a) = anchors.last() {
            match (0..n).filter(|&j| times[j] > times[a] + window).min() {
                Some(j) => anchors.push(j),
                None => break,
            }
        }
        (0..n).map(|j| anchors.iter().rposition(|&a| a <= j).unwrap()).collect()
    }

    #[test]
    fn grouping_matches_reference_partitioner() {
        let mut s = Substream::new(17, StreamDomain::CrossCheck, 0);
        for _ in 0..10_000 {
            let n = (s.uniform() * 30.0) as usize;
            let mut times: Vec<f64> = (0..n).map(|_| (s.uniform() * 60.0 * 4.0).round() / 4.0).collect();
            times.sort_by(f64::total_cmp);
            let stream: Vec<_> = times.iter().map(|&t| click(Layer::Outer, 1, t)).collect();
            let groups = group_clicks(&stream, 6.0).unwrap();
            let mut ours = vec![0; n];
            for (g, r) in groups.iter().enumerate() {
                for i in r.clone() {
                    ours[i] = g;
                }
            }
            assert_eq!(ours, brute_partition(&times, 6.0));
        }
    }

    fn pattern() -> impl Strategy<Value = Vec<(bool, u32, f64)>> {
        (0usize..=2, 0usize..=2).prop_flat_map(|(ni, no)| {
            let inner = proptest::collection::vec((Just(false), 1u32..4, 0.0f64..5.0), ni);
            let outer = proptest::collection::vec((Just(true), 1u32..4, 0.0f64..5.0), no);
            (inner, outer).prop_map(|(mut a, b)| {
                a.extend(b);
                a
            })
        })
    }

    fn to_clicks(p: &[(bool, u32, f64)]) -> Vec<ClickEvent> {
        let mut v: Vec<_> = p.iter().map(|&(o, s, t)| click(if o { Layer::Outer } else { Layer::Inner }, s, t)).collect();
        v.sort_by(ClickEvent::log_order);
        v
    }

    proptest! {
        #[test]
        fn taxonomy_is_exclusive_and_exhaustive(p in pattern()) {
            let clicks = to_clicks(&p);
            let r = classify(0, &clicks);
            let n_in = p.iter().filter(|x| !x.0).count();
            let n_out = p.len() - n_in;
            let expected: &[Category] = match (n_in, n_out) {
                (0, 0) => &[Category::Empty],
                (1, 1) => &[Category::Aligned, Category::Misaligned],
                (0, 1) => &[Category::OuterOnly],
                (1, 0) => &[Category::InnerOnly],
                (2, 0) => &[Category::DoubleInner],
                (0, 2) => &[Category::DoubleOuter],
                (2, _) => &[Category::DoubleInner],
                _ => &[Category::DoubleOuter],
            };
            prop_assert!(expected.contains(&r.category));
            prop_assert_eq!(r.overflow, n_in + n_out > 2);
        }

        #[test]
        fn ground_truth_ids_and_time_shifts_do_not_matter(p in pattern(), shift in -1.0e6f64..1.0e6, ids in proptest::collection::vec(-1i64..100, 4)) {
            let clicks = to_clicks(&p);
            let base = classify(0, &clicks);
            let moved: Vec<_> = clicks
                .iter()
                .enumerate()
                .map(|(i, c)| ClickEvent { electron_id: ids[i % 4], t_click_ns: c.t_click_ns + shift, ..*c })
                .collect();
            let other = classify(0, &moved);
            prop_assert_eq!(base.category, other.category);
            prop_assert_eq!(base.delayed_choice, other.delayed_choice);
        }

        #[test]
        fn stream_classification_shift_invariant(times in proptest::collection::vec(0.0f64..500.0, 0..40), shift in 0.0f64..1.0e5) {
            let mut times = times;
            // Quarter-ns grid keeps window comparisons exact under shifting.
            for t in times.iter_mut() { *t = (*t * 4.0).round() / 4.0; }
            times.sort_by(f64::total_cmp);
            let shift = (shift * 4.0).round() / 4.0;
            let a: Vec<_> = times.iter().enumerate().map(|(i, &t)| click(if i % 2 == 0 { Layer::Inner } else { Layer::Outer }, 1 + (i % 3) as u32, t)).collect();
            let b: Vec<_> = a.iter().map(|c| ClickEvent { t_click_ns: c.t_click_ns + shift, ..*c }).collect();
            let ca: Vec<_> = classify_stream(&a, 6.0).unwrap().into_iter().map(|r| r.category).collect();
            let cb: Vec<_> = classify_stream(&b, 6.0).unwrap().into_iter().map(|r| r.category).collect();
            prop_assert_eq!(ca, cb);
        }
    }
}
