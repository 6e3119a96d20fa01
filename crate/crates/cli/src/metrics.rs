//! Success-rate tables: one row per (policy, alpha), one column per task,
//! with deltas against the alpha = 0 row of the same policy.

use std::collections::BTreeMap;
use std::fmt::Write;

use guidance_core::executor::EpisodeLog;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cell {
    pub successes: usize,
    pub episodes: usize,
}

impl Cell {
    /// Percent in [0, 100].
    pub fn rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            100.0 * self.successes as f64 / self.episodes as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub policy: String,
    pub alpha: f64,
    pub cells: BTreeMap<String, Cell>,
}

impl MetricsRow {
    pub fn rate(&self, task: &str) -> Option<f64> {
        self.cells.get(task).map(Cell::rate)
    }

    /// Unweighted mean of the per-task rates.
    pub fn avg(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.values().map(Cell::rate).sum::<f64>() / self.cells.len() as f64
    }

    fn is_baseline(&self) -> bool {
        self.alpha == 0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    /// Sorted task ids.
    pub tasks: Vec<String>,
    /// Sorted by policy, then alpha.
    pub rows: Vec<MetricsRow>,
}

fn signed(d: f64) -> String {
    // Avoids printing "-0.0".
    let d = if d == 0.0 { 0.0 } else { d };
    format!("({d:+.1})")
}

impl MetricsTable {
    pub fn from_logs<'a>(logs: impl IntoIterator<Item = &'a EpisodeLog>) -> Self {
        let mut groups: BTreeMap<(String, u64), BTreeMap<String, Cell>> = BTreeMap::new();
        for log in logs {
            let cell = groups
                .entry((log.policy.clone(), log.alpha.to_bits()))
                .or_default()
                .entry(log.task_id.clone())
                .or_default();
            cell.episodes += 1;
            cell.successes += usize::from(log.success);
        }
        let mut rows: Vec<MetricsRow> = groups
            .into_iter()
            .map(|((policy, bits), cells)| MetricsRow { policy, alpha: f64::from_bits(bits), cells })
            .collect();
        rows.sort_by(|a, b| a.policy.cmp(&b.policy).then(a.alpha.total_cmp(&b.alpha)));
        let mut tasks: Vec<String> = rows.iter().flat_map(|r| r.cells.keys().cloned()).collect();
        tasks.sort();
        tasks.dedup();
        Self { tasks, rows }
    }

    pub fn baseline(&self, policy: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.policy == policy && r.is_baseline())
    }

    /// Guided rate minus the baseline rate. `None` for the baseline row
    /// itself, or when either side lacks the task.
    pub fn delta(&self, row: &MetricsRow, task: &str) -> Option<f64> {
        if row.is_baseline() {
            return None;
        }
        let base = self.baseline(&row.policy)?;
        Some(row.rate(task)? - base.rate(task)?)
    }

    pub fn avg_delta(&self, row: &MetricsRow) -> Option<f64> {
        if row.is_baseline() {
            return None;
        }
        Some(row.avg() - self.baseline(&row.policy)?.avg())
    }

    fn text_cells(&self, row: &MetricsRow) -> Vec<String> {
        let mut cells = vec![row.policy.clone(), format!("{:.2}", row.alpha)];
        for t in &self.tasks {
            let mut c = row.rate(t).map_or_else(|| "-".to_string(), |r| format!("{r:.1}"));
            if let Some(d) = self.delta(row, t) {
                c.push(' ');
                c.push_str(&signed(d));
            }
            cells.push(c);
        }
        let mut avg = format!("{:.1}", row.avg());
        if let Some(d) = self.avg_delta(row) {
            avg.push(' ');
            avg.push_str(&signed(d));
        }
        cells.push(avg);
        cells
    }

    /// Left-aligned columns separated by two spaces.
    pub fn render_text(&self) -> String {
        let mut header = vec!["policy".to_string(), "alpha".to_string()];
        header.extend(self.tasks.iter().cloned());
        header.push("Avg. Success".to_string());
        let mut lines = vec![header];
        lines.extend(self.rows.iter().map(|r| self.text_cells(r)));
        let widths: Vec<usize> =
            (0..lines[0].len()).map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// Rates, then `<task>_delta` columns (empty for baseline rows).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,alpha");
        for t in &self.tasks {
            let _ = write!(out, ",{t}");
        }
        out.push_str(",avg_success");
        for t in &self.tasks {
            let _ = write!(out, ",{t}_delta");
        }
        out.push_str(",avg_success_delta\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.1}"));
        for row in &self.rows {
            let _ = write!(out, "{},{}", row.policy, row.alpha);
            for t in &self.tasks {
                let _ = write!(out, ",{}", opt(row.rate(t)));
            }
            let _ = write!(out, ",{:.1}", row.avg());
            for t in &self.tasks {
                let _ = write!(out, ",{}", opt(self.delta(row, t)));
            }
            let _ = writeln!(out, ",{}", opt(self.avg_delta(row)));
        }
        out
    }
}
