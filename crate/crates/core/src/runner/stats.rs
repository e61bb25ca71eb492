//! Born-rule goodness of fit, conservation audit and category rates.

use std::collections::HashMap;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::branching::{Disposition, DispositionLedger, Label};
use crate::coincidence::{delayed_choice_rate, Category, CoincidenceRecord, RateEstimate};
use crate::detector::ClickEvent;
use crate::geometry::{Layer, ReferenceMap};

/// Bins expecting fewer counts than this are pooled.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct BornReport {
    pub total: u64,
    pub expected: Vec<f64>,
    pub observed: Vec<u64>,
    pub gap_expected: f64,
    pub gap_observed: u64,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    pub tv_distance: f64,
    /// Sensor bins folded into the pooled (gap) bin.
    pub pooled_sensors: usize,
    pub note: Option<String>,
}

impl BornReport {
    /// Observed frequency per sensor.
    pub fn frequencies(&self) -> Vec<f64> {
        self.observed.iter().map(|&o| o as f64 / self.total as f64).collect()
    }
}

/// Chi-square test of per-sensor counts (plus undetected count) against the
/// reference map. Returns `None` if there are no counts.
pub fn born_rule_test(observed: &[u64], gap_observed: u64, map: &ReferenceMap) -> Option<BornReport> {
    assert_eq!(observed.len(), map.sensor_count(), "one count per sensor");
    let total: u64 = observed.iter().sum::<u64>() + gap_observed;
    if total == 0 {
        return None;
    }
    let m = total as f64;
    let expected: Vec<f64> = map.weights().iter().map(|w| w * m).collect();
    let gap_expected = map.gap_weight() * m;

    let mut kept: Vec<usize> = (0..expected.len()).filter(|&i| expected[i] >= MIN_EXPECTED).collect();
    let mut pooled_e = gap_expected;
    let mut pooled_o = gap_observed as f64;
    for i in (0..expected.len()).filter(|&i| expected[i] < MIN_EXPECTED) {
        pooled_e += expected[i];
        pooled_o += observed[i] as f64;
    }
    // Fill a thin pooled bin from the smallest kept bins upward.
    kept.sort_by(|&a, &b| map.weights()[a].total_cmp(&map.weights()[b]).then(a.cmp(&b)));
    let mut next = 0;
    while pooled_e > 0.0 && pooled_e < MIN_EXPECTED && next < kept.len() {
        pooled_e += expected[kept[next]];
        pooled_o += observed[kept[next]] as f64;
        next += 1;
    }
    let kept = &kept[next..];
    let pooled_sensors = expected.len() - kept.len();

    let mut chi_square: f64 = kept
        .iter()
        .map(|&i| {
            let d = observed[i] as f64 - expected[i];
            d * d / expected[i]
        })
        .sum();
    let mut bins = kept.len();
    if pooled_e > 0.0 {
        chi_square += (pooled_o - pooled_e).powi(2) / pooled_e;
        bins += 1;
    } else if pooled_o > 0.0 {
        chi_square = f64::INFINITY;
        bins += 1;
    }

    let mut note = None;
    let (dof, p_value) = if bins < 2 {
        note = Some(format!("all bins expect fewer than {MIN_EXPECTED} counts; merged into one bin, no test possible"));
        chi_square = 0.0;
        (0, 1.0)
    } else {
        let dof = bins - 1;
        let p = match ChiSquared::new(dof as f64) {
            Ok(d) if chi_square.is_finite() => d.sf(chi_square),
            _ => 0.0,
        };
        (dof, p.clamp(0.0, 1.0))
    };

    let tv_distance = 0.5
        * (observed.iter().zip(map.weights()).map(|(&o, w)| (o as f64 / m - w).abs()).sum::<f64>()
            + (gap_observed as f64 / m - map.gap_weight()).abs());

    Some(BornReport {
        total,
        expected,
        observed: observed.to_vec(),
        gap_expected,
        gap_observed,
        chi_square,
        dof,
        p_value,
        tv_distance,
        pooled_sensors,
        note,
    })
}

/// Per-sensor counts of Born-selected labels.
pub fn selection_counts(selected: &[Label], sensors: usize) -> (Vec<u64>, u64) {
    let mut counts = vec![0u64; sensors];
    let mut gap = 0;
    for l in selected {
        match l {
            Label::Sensor(s) => counts[s.index()] += 1,
            Label::Gap => gap += 1,
        }
    }
    (counts, gap)
}

/// Per-sensor click counts on one layer.
pub fn click_counts(events: &[ClickEvent], layer: Layer, sensors: usize) -> Vec<u64> {
    let mut counts = vec![0u64; sensors];
    for e in events.iter().filter(|e| e.layer == layer) {
        if e.sensor.index() < sensors {
            counts[e.sensor.index()] += 1;
        }
    }
    counts
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConservationReport {
    pub electrons: u64,
    pub detected: u64,
    pub gap_landing: u64,
    pub lost_between_layers: u64,
    pub violation_records: u64,
    pub zero_disposition: u64,
    pub multiple_disposition: u64,
    /// Electrons with more than one click on some layer (ground truth).
    pub double_click_electrons: u64,
    /// Real clicks that contradict the electron's ledger record.
    pub inconsistent_clicks: u64,
    pub classifier_double_inner: u64,
    pub classifier_double_outer: u64,
    pub injected_faults: u64,
    pub injected_flagged: u64,
}

impl ConservationReport {
    pub fn disposed(&self) -> u64 {
        self.detected + self.gap_landing + self.lost_between_layers
    }

    pub fn passed(&self) -> bool {
        self.zero_disposition == 0
            && self.multiple_disposition == 0
            && self.violation_records == 0
            && self.double_click_electrons == 0
            && self.inconsistent_clicks == 0
            && self.disposed() == self.electrons
    }
}

/// Cross-checks the ledger against the event stream.
///
/// `events` holds every click, injected ones included; `categories` are the
/// classifier's verdicts on the groups of the same stream.
pub fn conservation_audit(
    ledger: &DispositionLedger,
    selected: &[Label],
    events: &[ClickEvent],
    categories: impl IntoIterator<Item = Category>,
) -> ConservationReport {
    let mut r = ConservationReport { electrons: ledger.len() as u64, ..Default::default() };
    for (_, d) in ledger.iter() {
        match d {
            Some(Disposition::Detected { .. }) => r.detected += 1,
            Some(Disposition::GapLanding) => r.gap_landing += 1,
            Some(Disposition::LostBetweenLayers) => r.lost_between_layers += 1,
            Some(Disposition::Violation) => r.violation_records += 1,
            None => r.zero_disposition += 1,
        }
    }
    let mut twice: Vec<u64> = ledger.violations().to_vec();
    twice.sort_unstable();
    twice.dedup();
    r.multiple_disposition = twice.len() as u64;

    let mut per_layer: HashMap<(i64, Layer), u32> = HashMap::new();
    for e in events.iter().filter(|e| e.electron_id >= 0) {
        *per_layer.entry((e.electron_id, e.layer)).or_default() += 1;
        if e.injected {
            r.injected_faults += 1;
            continue;
        }
        if !click_consistent(e, ledger, selected) {
            r.inconsistent_clicks += 1;
        }
    }
    let mut doubled: Vec<i64> = per_layer.iter().filter(|(_, &n)| n > 1).map(|(&(id, _), _)| id).collect();
    doubled.sort_unstable();
    doubled.dedup();
    r.double_click_electrons = doubled.len() as u64;
    // An injected click is flagged when its electron shows a double click.
    r.injected_flagged = events
        .iter()
        .filter(|e| e.injected && per_layer.get(&(e.electron_id, e.layer)).is_some_and(|&n| n > 1))
        .count() as u64;

    for c in categories {
        match c {
            Category::DoubleInner => r.classifier_double_inner += 1,
            Category::DoubleOuter => r.classifier_double_outer += 1,
            _ => {}
        }
    }
    r
}

fn click_consistent(e: &ClickEvent, ledger: &DispositionLedger, selected: &[Label]) -> bool {
    let id = e.electron_id as u64;
    let Some(disposition) = ledger.get(id) else {
        return false;
    };
    let chosen = id
        .checked_sub(ledger.first_id())
        .and_then(|i| selected.get(i as usize))
        .copied();
    match (disposition, e.layer) {
        (Disposition::GapLanding | Disposition::Violation, _) => false,
        (_, Layer::Inner) => chosen == Some(Label::Sensor(e.sensor)),
        (Disposition::LostBetweenLayers, _) => false,
        (Disposition::Detected { sensor, layer }, l) => layer == l && sensor == e.sensor,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryTable {
    pub nonempty_groups: u64,
    pub rows: Vec<(Category, RateEstimate)>,
    pub delayed_choice: Option<RateEstimate>,
    pub overflow_groups: u64,
}

impl CategoryTable {
    pub fn rate(&self, c: Category) -> Option<RateEstimate> {
        self.rows.iter().find(|(k, _)| *k == c).map(|(_, r)| *r)
    }
}

/// Fraction of nonempty groups in each category, with binomial errors.
pub fn category_rates(records: &[CoincidenceRecord]) -> CategoryTable {
    let nonempty: Vec<&CoincidenceRecord> = records.iter().filter(|r| r.category != Category::Empty).collect();
    let n = nonempty.len() as u64;
    let rows = Category::ALL
        .iter()
        .filter(|&&c| c != Category::Empty)
        .filter_map(|&c| {
            let k = nonempty.iter().filter(|r| r.category == c).count() as u64;
            RateEstimate::new(k, n).map(|e| (c, e))
        })
        .collect();
    CategoryTable {
        nonempty_groups: n,
        rows,
        delayed_choice: delayed_choice_rate(records),
        overflow_groups: records.iter().filter(|r| r.overflow).count() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coincidence::classify;
    use crate::geometry::{Direction, SensorId};

    fn uniform4() -> ReferenceMap {
        ReferenceMap::new(vec![Direction::new(0.0, 0.0); 4], vec![0.25; 4], 0.0).unwrap()
    }

    /// Q(3/2, x) = erfc(√x) + 2 √(x/π) e^{-x}.
    fn q_three_halves(x: f64) -> f64 {
        libm::erfc(x.sqrt()) + 2.0 * (x / std::f64::consts::PI).sqrt() * (-x).exp()
    }

    #[test]
    fn hand_computed_chi_square() {
        let r = born_rule_test(&[30, 20, 25, 25], 0, &uniform4()).unwrap();
        assert!((r.chi_square - 2.0).abs() < 1e-12);
        assert_eq!(r.dof, 3);
        assert!((r.p_value - 0.572_406_704_886_058_4).abs() < 1e-9, "{}", r.p_value);
        assert!((r.p_value - q_three_halves(1.0)).abs() < 1e-12);
        assert!((r.tv_distance - 0.05).abs() < 1e-12);
    }

    #[test]
    fn proportional_counts_are_a_perfect_fit() {
        let r = born_rule_test(&[25, 25, 25, 25], 0, &uniform4()).unwrap();
        assert_eq!((r.chi_square, r.tv_distance), (0.0, 0.0));
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn small_bins_pool_into_the_gap() {
        let map = ReferenceMap::new(vec![Direction::new(0.0, 0.0); 3], vec![0.5, 0.45, 0.01], 0.04).unwrap();
        let r = born_rule_test(&[50, 45, 1], 4, &map).unwrap();
        // Sensor 3 (1 expected) and the gap (4 expected) share one bin.
        assert_eq!(r.pooled_sensors, 1);
        assert_eq!(r.dof, 2);
        assert!(r.chi_square.abs() < 1e-12);
    }

    #[test]
    fn thin_pool_absorbs_smallest_kept_bin() {
        let map = ReferenceMap::new(vec![Direction::new(0.0, 0.0); 3], vec![0.6, 0.38, 0.02], 0.0).unwrap();
        let r = born_rule_test(&[60, 38, 2], 0, &map).unwrap();
        assert_eq!(r.pooled_sensors, 2);
        assert_eq!(r.dof, 1);
    }

    #[test]
    fn everything_below_threshold() {
        let r = born_rule_test(&[1, 0, 1, 0], 0, &uniform4()).unwrap();
        assert_eq!(r.dof, 0);
        assert_eq!(r.p_value, 1.0);
        assert!(r.note.is_some());
        assert!(born_rule_test(&[0, 0, 0, 0], 0, &uniform4()).is_none());
    }

    #[test]
    fn counts_in_zero_weight_region_fail() {
        let r = born_rule_test(&[25, 25, 25, 20], 5, &uniform4()).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.chi_square.is_infinite());
    }

    fn ev(id: i64, layer: Layer, sensor: u32, t: f64, injected: bool) -> ClickEvent {
        ClickEvent { electron_id: id, layer, sensor: SensorId(sensor), t_emit_ns: 0.0, t_click_ns: t, injected }
    }

    #[test]
    fn audit_clean_and_faulty() {
        let mut ledger = DispositionLedger::new(0, 3);
        ledger.record(0, Disposition::Detected { sensor: SensorId(4), layer: Layer::Outer }).unwrap();
        ledger.record(1, Disposition::GapLanding).unwrap();
        ledger.record(2, Disposition::LostBetweenLayers).unwrap();
        let selected = [Label::Sensor(SensorId(4)), Label::Gap, Label::Sensor(SensorId(9))];
        let clean = vec![ev(0, Layer::Inner, 4, 5.0, false), ev(0, Layer::Outer, 4, 4.9, false), ev(2, Layer::Inner, 9, 2005.0, false)];
        let r = conservation_audit(&ledger, &selected, &clean, []);
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.disposed(), 3);

        let mut faulty = clean.clone();
        faulty.push(ev(0, Layer::Outer, 7, 5.1, true));
        let recs = [classify(0, &faulty[..2]), classify(1, &[faulty[0], faulty[1], faulty[3]])];
        let r = conservation_audit(&ledger, &selected, &faulty, recs.iter().map(|r| r.category));
        assert!(!r.passed());
        assert_eq!((r.injected_faults, r.injected_flagged), (1, 1));
        assert_eq!(r.classifier_double_outer, 1);

        let mut wrong = clean;
        wrong.push(ev(2, Layer::Outer, 9, 2006.0, false));
        assert_eq!(conservation_audit(&ledger, &selected, &wrong, []).inconsistent_clicks, 1);

        let partial = DispositionLedger::new(0, 2);
        let r = conservation_audit(&partial, &[], &[], []);
        assert_eq!(r.zero_disposition, 2);
        assert!(!r.passed());
    }

    #[test]
    fn rates_of_a_clean_table() {
        let recs: Vec<_> = (0..50)
            .map(|g| classify(g, &[ev(g as i64, Layer::Outer, 1, 0.1, false), ev(g as i64, Layer::Inner, 1, 1.0, false)]))
            .collect();
        let t = category_rates(&recs);
        assert_eq!(t.nonempty_groups, 50);
        assert_eq!(t.rate(Category::Aligned).unwrap().rate, 1.0);
        assert_eq!(t.rate(Category::InnerOnly).unwrap().rate, 0.0);
        assert_eq!(t.delayed_choice.unwrap().rate, 1.0);
        assert!(category_rates(&[]).rows.is_empty());
    }
}
