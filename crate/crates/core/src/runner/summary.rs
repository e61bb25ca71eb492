//! Human-readable and key/value renderings of a run's reports.

use std::fmt::Write;

use crate::branching::{AuditStats, InterpretationMode};

use super::config::ApparatusMode;
use super::stats::{BornReport, CategoryTable, ConservationReport};

/// Everything a run reports, independent of where the data came from.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub mode: ApparatusMode,
    pub interpretation: InterpretationMode,
    pub electrons: u64,
    pub seed: u64,
    pub born: Option<BornReport>,
    pub conservation: ConservationReport,
    pub categories: Option<CategoryTable>,
    pub weight_audit: AuditStats,
    pub dark_clicks: u64,
}

impl RunReport {
    /// Weight audits and conservation both clean. The Born statistic is
    /// reported but does not gate the outcome.
    pub fn passed(&self) -> bool {
        self.weight_audit.passed() && self.conservation.passed()
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let c = &self.conservation;
        let _ = writeln!(s, "run: {} layer, {} interpretation, {} electrons, seed {}", self.mode, self.interpretation, self.electrons, self.seed);
        let _ = writeln!(
            s,
            "weight audit: {} checks, {} failures, max |sum - 1| = {:.3e}",
            self.weight_audit.audits, self.weight_audit.failures, self.weight_audit.max_deviation
        );
        let _ = writeln!(s, "\nconservation");
        let _ = writeln!(s, "  detected             {}", c.detected);
        let _ = writeln!(s, "  gap landing          {}", c.gap_landing);
        let _ = writeln!(s, "  lost between layers  {}", c.lost_between_layers);
        let _ = writeln!(s, "  unaccounted          {}", c.zero_disposition);
        let _ = writeln!(s, "  multiply disposed    {}", c.multiple_disposition);
        let _ = writeln!(s, "  violation records    {}", c.violation_records);
        let _ = writeln!(s, "  double-click electrons {}", c.double_click_electrons);
        let _ = writeln!(s, "  inconsistent clicks  {}", c.inconsistent_clicks);
        let _ = writeln!(s, "  DoubleInner groups   {}", c.classifier_double_inner);
        let _ = writeln!(s, "  DoubleOuter groups   {}", c.classifier_double_outer);
        let _ = writeln!(s, "  injected faults      {} ({} flagged)", c.injected_faults, c.injected_flagged);
        let _ = writeln!(s, "  dark clicks          {}", self.dark_clicks);

        match &self.born {
            Some(b) => {
                let _ = writeln!(s, "\nBorn-rule test over {} selections", b.total);
                let _ = writeln!(s, "  chi-square {:.4} on {} dof, p = {:.4}", b.chi_square, b.dof, b.p_value);
                let _ = writeln!(s, "  total-variation distance {:.5}", b.tv_distance);
                let _ = writeln!(s, "  gap: expected {:.1}, observed {}", b.gap_expected, b.gap_observed);
                if b.pooled_sensors > 0 {
                    let _ = writeln!(s, "  {} low-expectation sensors pooled", b.pooled_sensors);
                }
                if let Some(note) = &b.note {
                    let _ = writeln!(s, "  note: {note}");
                }
            }
            None => {
                let _ = writeln!(s, "\nBorn-rule test: not enough data");
            }
        }

        if let Some(t) = &self.categories {
            let _ = writeln!(s, "\ncoincidence categories over {} non-empty groups", t.nonempty_groups);
            for (cat, r) in &t.rows {
                let _ = writeln!(s, "  {:<12} {:>9}  {:.6} ± {:.6}", cat.as_str(), r.successes, r.rate, r.std_error);
            }
            if let Some(d) = &t.delayed_choice {
                let _ = writeln!(s, "  delayed choice {:.6} ± {:.6} ({} of {})", d.rate, d.std_error, d.successes, d.trials);
            }
            if t.overflow_groups > 0 {
                let _ = writeln!(s, "  overflow groups {}", t.overflow_groups);
            }
        }
        let _ = writeln!(s, "\nresult: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }

    /// One `key=value` per line, stable ordering.
    pub fn render_kv(&self) -> String {
        let mut s = String::new();
        let c = &self.conservation;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("mode", self.mode.to_string());
        kv("interpretation", self.interpretation.as_str().to_string());
        kv("electrons", self.electrons.to_string());
        kv("seed", self.seed.to_string());
        kv("audit.checks", self.weight_audit.audits.to_string());
        kv("audit.failures", self.weight_audit.failures.to_string());
        kv("audit.max_deviation", format!("{:e}", self.weight_audit.max_deviation));
        kv("conservation.detected", c.detected.to_string());
        kv("conservation.gap_landing", c.gap_landing.to_string());
        kv("conservation.lost_between_layers", c.lost_between_layers.to_string());
        kv("conservation.zero_disposition", c.zero_disposition.to_string());
        kv("conservation.multiple_disposition", c.multiple_disposition.to_string());
        kv("conservation.violation_records", c.violation_records.to_string());
        kv("conservation.double_click_electrons", c.double_click_electrons.to_string());
        kv("conservation.inconsistent_clicks", c.inconsistent_clicks.to_string());
        kv("conservation.classifier_double_inner", c.classifier_double_inner.to_string());
        kv("conservation.classifier_double_outer", c.classifier_double_outer.to_string());
        kv("conservation.injected_faults", c.injected_faults.to_string());
        kv("conservation.injected_flagged", c.injected_flagged.to_string());
        kv("dark_clicks", self.dark_clicks.to_string());
        if let Some(b) = &self.born {
            kv("born.total", b.total.to_string());
            kv("born.chi_square", format!("{:e}", b.chi_square));
            kv("born.dof", b.dof.to_string());
            kv("born.p_value", format!("{:e}", b.p_value));
            kv("born.tv_distance", format!("{:e}", b.tv_distance));
        }
        if let Some(t) = &self.categories {
            kv("groups", t.nonempty_groups.to_string());
            for (cat, r) in &t.rows {
                kv(&format!("category.{}", cat.as_str()), r.successes.to_string());
            }
            if let Some(d) = &t.delayed_choice {
                kv("delayed_choice.rate", format!("{:e}", d.rate));
                kv("delayed_choice.std_error", format!("{:e}", d.std_error));
            }
        }
        kv("passed", self.passed().to_string());
        s
    }
}

/// Looks up one key in `render_kv` output.
pub fn kv_get<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.split_once('=').filter(|(k, _)| k.trim() == key).map(|(_, v)| v.trim()))
}

/// Restores the weight-audit counters, which cannot be recomputed from the
/// persisted event log.
pub fn audit_from_kv(text: &str) -> AuditStats {
    let num = |k: &str| kv_get(text, k).and_then(|v| v.parse::<u64>().ok()).unwrap_or(0);
    AuditStats {
        audits: num("audit.checks"),
        failures: num("audit.failures"),
        max_deviation: kv_get(text, "audit.max_deviation").and_then(|v| v.parse().ok()).unwrap_or(0.0),
    }
}
