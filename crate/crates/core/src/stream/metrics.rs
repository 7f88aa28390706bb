use std::collections::VecDeque;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

/// Sub-shot latency sample for one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub shot_index: u64,
    pub block_index: u64,
    pub t_block_acquired_ns: u64,
    pub t_block_done_ns: u64,
    pub sub_shot_latency_ns: u64,
    /// Blocks acquired but not yet retired when this block was acquired.
    pub queue_depth: u64,
}

impl LatencyRecord {
    pub fn new(shot_index: u64, block_index: u64, acquired_ns: u64, done_ns: u64, queue_depth: u64) -> Self {
        LatencyRecord {
            shot_index,
            block_index,
            t_block_acquired_ns: acquired_ns,
            t_block_done_ns: done_ns.max(acquired_ns),
            sub_shot_latency_ns: done_ns.saturating_sub(acquired_ns),
            queue_depth,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotLatency {
    pub shot_index: u64,
    /// From receipt of the final frame to the prediction.
    pub end_of_shot_latency_ns: u64,
    pub t_software_median_ns: u64,
    pub t_software_p99_ns: u64,
}

impl ShotLatency {
    pub fn new(shot_index: u64, end_of_shot_latency_ns: u64, blocks: &[LatencyRecord]) -> Self {
        let mut lat: Vec<u64> = blocks.iter().map(|r| r.sub_shot_latency_ns).collect();
        lat.sort_unstable();
        ShotLatency {
            shot_index,
            end_of_shot_latency_ns,
            t_software_median_ns: quantile(&lat, 0.5),
            t_software_p99_ns: quantile(&lat, 0.99),
        }
    }
}

/// Nearest-rank quantile of sorted samples; zero when empty.
pub fn quantile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Median of unsorted samples (lower median for even counts).
pub fn median(samples: &[u64]) -> u64 {
    let mut v = samples.to_vec();
    v.sort_unstable();
    quantile(&v, 0.5)
}

/// Fixed I/O and control times added to a measured software latency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingBudget {
    pub t_input_ns: u64,
    pub t_output_ns: u64,
    pub t_control_ns: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingReport {
    pub t_input_ns: u64,
    pub t_software_ns: u64,
    pub t_output_ns: u64,
    pub t_decode_ns: u64,
    pub t_control_ns: u64,
    pub t_react_ns: u64,
}

impl TimingBudget {
    pub fn report(&self, t_software_ns: u64) -> TimingReport {
        let t_decode_ns = self.t_input_ns + t_software_ns + self.t_output_ns;
        TimingReport {
            t_input_ns: self.t_input_ns,
            t_software_ns,
            t_output_ns: self.t_output_ns,
            t_decode_ns,
            t_control_ns: self.t_control_ns,
            t_react_ns: t_decode_ns + self.t_control_ns,
        }
    }
}

impl TimingReport {
    pub fn is_consistent(&self) -> bool {
        self.t_decode_ns == self.t_input_ns + self.t_software_ns + self.t_output_ns
            && self.t_react_ns == self.t_decode_ns + self.t_control_ns
    }
}

/// Raises an alarm when queue depth keeps growing: over the last `window`
/// blocks it never fell and rose by at least `min_growth`.
#[derive(Clone, Debug)]
pub struct BacklogMonitor {
    window: usize,
    min_growth: u64,
    depths: VecDeque<u64>,
    alarms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacklogAlarm {
    pub shot_index: u64,
    pub block_index: u64,
    pub queue_depth: u64,
    pub growth: u64,
}

impl BacklogMonitor {
    pub fn new(window: usize, min_growth: u64) -> Self {
        BacklogMonitor { window: window.max(2), min_growth: min_growth.max(1), depths: VecDeque::new(), alarms: 0 }
    }

    pub fn observe(&mut self, record: &LatencyRecord) -> Option<BacklogAlarm> {
        if self.depths.len() == self.window {
            self.depths.pop_front();
        }
        self.depths.push_back(record.queue_depth);
        if self.depths.len() < self.window {
            return None;
        }
        let rising = self.depths.iter().zip(self.depths.iter().skip(1)).all(|(a, b)| b >= a);
        let growth = self.depths.back().unwrap().saturating_sub(*self.depths.front().unwrap());
        if rising && growth >= self.min_growth {
            self.alarms += 1;
            // Require a fresh window before alarming again.
            self.depths.clear();
            Some(BacklogAlarm {
                shot_index: record.shot_index,
                block_index: record.block_index,
                queue_depth: record.queue_depth,
                growth,
            })
        } else {
            None
        }
    }

    pub fn alarms(&self) -> u64 {
        self.alarms
    }
}

impl Default for BacklogMonitor {
    fn default() -> Self {
        BacklogMonitor::new(32, 8)
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum MetricLine<'a> {
    Block(&'a LatencyRecord),
    Shot {
        #[serde(flatten)]
        latency: &'a ShotLatency,
        #[serde(flatten)]
        timing: TimingReport,
    },
    Backlog(&'a BacklogAlarm),
}

/// Append-only JSON-lines sink for latency records and alarms.
pub struct MetricsSink<W: Write> {
    out: W,
    monitor: BacklogMonitor,
    budget: TimingBudget,
    records: u64,
}

impl<W: Write> MetricsSink<W> {
    pub fn new(out: W, budget: TimingBudget) -> Self {
        MetricsSink { out, monitor: BacklogMonitor::default(), budget, records: 0 }
    }

    pub fn with_monitor(mut self, monitor: BacklogMonitor) -> Self {
        self.monitor = monitor;
        self
    }

    /// Writes a block record; returns the alarm it triggered, if any.
    pub fn record(&mut self, record: &LatencyRecord) -> io::Result<Option<BacklogAlarm>> {
        write_line(&mut self.out, &MetricLine::Block(record))?;
        self.records += 1;
        let alarm = self.monitor.observe(record);
        if let Some(a) = &alarm {
            write_line(&mut self.out, &MetricLine::Backlog(a))?;
        }
        Ok(alarm)
    }

    pub fn shot(&mut self, latency: &ShotLatency) -> io::Result<TimingReport> {
        let timing = self.budget.report(latency.end_of_shot_latency_ns);
        write_line(&mut self.out, &MetricLine::Shot { latency, timing })?;
        Ok(timing)
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn alarms(&self) -> u64 {
        self.monitor.alarms()
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

/// One parsed line of a metrics file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRecord {
    Block(LatencyRecord),
    Shot(serde_json::Value),
    Backlog(BacklogAlarm),
}
