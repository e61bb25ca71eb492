use std::fs;

use hemibranch_core::coincidence::{classify_stream, Category};
use hemibranch_core::detector::{dark_counts, ClickEvent, FaultPlan, ResponseModel, TransitModel};
use hemibranch_core::geometry::{Layer, ReferenceMap};
use hemibranch_core::rng::{StreamDomain, Substream};
use hemibranch_core::runner::{
    self, analyze, calibrate, category_rates, io, parse_config, preset, run_to_dir, summary, ApparatusMode, Experiment, ProfileKind,
};
use hemibranch_core::ExperimentConfig;

fn single() -> ExperimentConfig {
    parse_config(preset("paper-single").unwrap()).unwrap()
}

fn dual() -> ExperimentConfig {
    parse_config(preset("paper-dual").unwrap()).unwrap()
}

#[test]
fn smallest_run_has_one_record_and_at_most_one_click() {
    let mut c = single();
    c.electrons = 1;
    c.outer = ResponseModel::new(1.0, 0.1, 0.03, 0.0).unwrap();
    let sim = Experiment::build(&c).unwrap().simulate().unwrap();
    assert_eq!(sim.ledger.len(), 1);
    assert!(sim.events.len() <= 1);
    assert_eq!(sim.ledger.missing(), 0);
}

#[test]
fn zero_electrons_rejected_at_parse() {
    let text = format!("{}\n[run]\nelectrons = 0\n", preset("paper-single").unwrap());
    assert!(parse_config(&text).is_err());
}

#[test]
fn later_run_section_overrides_earlier_values() {
    let text = format!("{}\n[run]\nelectrons = 7\nseed = 3\n", preset("paper-dual").unwrap());
    let c = parse_config(&text).unwrap();
    assert_eq!((c.electrons, c.seed), (7, 3));
}

#[test]
fn calibration_is_byte_stable_and_roundtrips() {
    let c = single();
    let write = |m: &ReferenceMap| {
        let mut b = Vec::new();
        m.write_csv(&mut b).unwrap();
        b
    };
    let a = write(&calibrate(&c).unwrap());
    let b = write(&calibrate(&c).unwrap());
    assert_eq!(a, b);
    let back = ReferenceMap::read_csv(a.as_slice()).unwrap();
    assert_eq!(write(&back), a);
    let original = calibrate(&c).unwrap();
    for (x, y) in original.weights().iter().zip(back.weights()) {
        assert!((x - y).abs() <= 5e-12 * x, "{x} vs {y}");
    }
}

#[test]
fn uniform_debug_profile_gives_equal_weights() {
    let mut c = single();
    c.profile_kind = ProfileKind::Uniform;
    let m = calibrate(&c).unwrap();
    let share = c.coverage / c.sensors as f64;
    assert!(m.weights().iter().all(|w| (w - share).abs() <= 0.02 * share));
}

#[test]
fn ledger_sums_to_electron_count() {
    let mut c = dual();
    c.electrons = 30_000;
    c.transit = TransitModel::new(0.05, 0.05, 10f64.to_radians()).unwrap();
    let exp = Experiment::build(&c).unwrap();
    let sim = exp.simulate().unwrap();
    let (_, r) = exp.report(&sim).unwrap();
    let k = &r.conservation;
    assert_eq!(k.detected + k.gap_landing + k.lost_between_layers, 30_000);
    assert!(k.lost_between_layers > 0);
    assert!(r.passed());
}

#[test]
fn zero_anomaly_dual_run_is_all_aligned() {
    let mut c = dual();
    c.electrons = 20_000;
    c.inner = ResponseModel::new(1.0, 1.0, 1.0, 0.0).unwrap();
    c.transit = TransitModel::lossless();
    let exp = Experiment::build(&c).unwrap();
    let sim = exp.simulate().unwrap();
    let (records, _) = exp.report(&sim).unwrap();
    let t = category_rates(records.as_ref().unwrap());
    assert_eq!(t.rate(Category::Aligned).unwrap().rate, 1.0);
}

#[test]
fn run_directory_reports_reproduce_from_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = dual();
    c.electrons = 10_000;
    c.faults = FaultPlan { duplicate_inner: 0.002, duplicate_outer: 0.002 };
    c.trace = true;
    let text = format!("{}\n[run]\nelectrons = 10000\ntrace = true\n[faults]\nduplicate_inner = 0.002\nduplicate_outer = 0.002\n", preset("paper-dual").unwrap());
    let art = run_to_dir(&c, &text, tmp.path()).unwrap();
    assert!(!art.passed());
    assert!(art.records.is_some() && art.injected.is_some() && art.trace.is_some());

    let again = runner::report_from_dir(tmp.path()).unwrap();
    assert_eq!(again.render_kv(), art.report.render_kv());
    let kv = fs::read_to_string(&art.summary_kv).unwrap();
    assert_eq!(summary::kv_get(&kv, "passed"), Some("false"));
    assert!(fs::read_to_string(&art.summary_text).unwrap().contains("result: FAIL"));
}

#[test]
fn trace_lines_carry_mode_specific_tags() {
    for (mode, tags) in [("BHSI", ["DecoheredLocal", "AbsorbedEnv"]), ("MWI", ["World", "ObservedWorld"]), ("CI", ["Collapsed", "Zeroed"])] {
        let mut c = single();
        c.electrons = 3;
        c.trace = true;
        c.interpretation = mode.parse().unwrap();
        let sim = Experiment::build(&c).unwrap().simulate().unwrap();
        assert!(sim.trace.lines().all(|l| l.split(' ').nth(1) == Some(mode)), "{mode}");
        assert!(tags.iter().all(|t| sim.trace.contains(t)), "{mode}");
    }
}

#[test]
fn poisson_emission_is_seeded_and_increasing() {
    let mut c = single();
    c.electrons = 1000;
    c.emission = runner::Emission::Poisson;
    let a = Experiment::build(&c).unwrap().emission_times();
    let b = Experiment::build(&c).unwrap().emission_times();
    assert_eq!(a, b);
    assert_eq!(a[0], 0.0);
    assert!(a.windows(2).all(|w| w[1] >= w[0]));
    let mean_gap = a[999] / 999.0;
    assert!((mean_gap - 1000.0).abs() < 4.0 * 1000.0 / (999f64).sqrt());
}

#[test]
fn dark_counts_split_between_layers_by_rate() {
    // No beam: every group is a lone dark click, so the OuterOnly fraction
    // is r_out / (r_in + r_out).
    let (r_in, r_out) = (2.0e4, 6.0e4);
    let inner = ResponseModel::new(0.98, 1.0, 1.0, r_in).unwrap();
    let outer = ResponseModel::new(1.0, 0.1, 0.03, r_out).unwrap();
    let t_end = 2.0e9;
    let mut ev: Vec<ClickEvent> = dark_counts(&inner, Layer::Inner, 200, 0.0, t_end, &mut Substream::new(4, StreamDomain::DarkCounts, 0));
    ev.extend(dark_counts(&outer, Layer::Outer, 200, 0.0, t_end, &mut Substream::new(4, StreamDomain::DarkCounts, 1)));
    ev.sort_by(ClickEvent::log_order);
    let t = category_rates(&classify_stream(&ev, 6.0).unwrap());
    let est = t.rate(Category::OuterOnly).unwrap();
    let p = r_out / (r_in + r_out);
    assert!((est.rate - p).abs() <= 3.0 * est.std_error, "{} vs {p}", est.rate);
    let inner_only = t.rate(Category::InnerOnly).unwrap();
    assert!((inner_only.rate - (1.0 - p)).abs() <= 3.0 * inner_only.std_error);
}

#[test]
fn analyze_matches_in_run_classification() {
    let mut c = dual();
    c.electrons = 10_000;
    let exp = Experiment::build(&c).unwrap();
    let sim = exp.simulate().unwrap();
    let (records, _) = exp.report(&sim).unwrap();
    let mut log = Vec::new();
    io::write_events(&sim.events, &mut log).unwrap();
    let events = io::read_events(log.as_slice()).unwrap();
    let a = analyze(&events, &exp.map, c.window_ns).unwrap();
    assert_eq!(a.records.len(), records.unwrap().len());
    assert_eq!(a.layer, Layer::Inner);
    assert!(a.born.unwrap().p_value > 1e-3);
}

#[test]
fn single_mode_reports_have_no_category_table() {
    let mut c = single();
    c.electrons = 2000;
    let exp = Experiment::build(&c).unwrap();
    assert_eq!(exp.config.mode, ApparatusMode::Single);
    let (_, records, report) = exp.run().unwrap();
    assert!(records.is_none() && report.categories.is_none());
    assert!(report.passed());
}
