use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::config::Watchdog;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// Iteration index of the recorded iterate (0 is the initial volume).
    pub iteration: usize,
    pub cost: f64,
    /// Seconds since the solver started.
    pub seconds: f64,
}

/// Cost history of one solver run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<TraceRecord>,
}

impl IterationTrace {
    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cost).collect()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Tab-separated `iteration  cost  seconds` table with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("iteration\tcost\tseconds\n");
        for r in &self.records {
            let _ = writeln!(out, "{}\t{:.12e}\t{:.6}", r.iteration, r.cost, r.seconds);
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Format {
            what: "trace".into(),
            reason: format!("bad line `{line}`"),
        };
        let mut records = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad(line));
            }
            records.push(TraceRecord {
                iteration: f[0].parse().map_err(|_| bad(line))?,
                cost: f[1].parse().map_err(|_| bad(line))?,
                seconds: f[2].parse().map_err(|_| bad(line))?,
            });
        }
        Ok(Self { records })
    }
}

/// Wall clock that reads zero where no monotonic clock exists (wasm).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Clock {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Clock {
    pub(crate) fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    pub(crate) fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

/// Appends records and enforces the divergence watchdog.
pub(crate) struct Recorder {
    algorithm: &'static str,
    every: usize,
    watchdog: Option<Watchdog>,
    clock: Clock,
    strikes: usize,
    pub(crate) trace: IterationTrace,
}

impl Recorder {
    pub(crate) fn new(algorithm: &'static str, every: usize, watchdog: Option<Watchdog>) -> Self {
        Self {
            algorithm,
            every: every.max(1),
            watchdog,
            clock: Clock::start(),
            strikes: 0,
            trace: IterationTrace::default(),
        }
    }

    pub(crate) fn wants(&self, iteration: usize) -> bool {
        iteration % self.every == 0
    }

    pub(crate) fn record(&mut self, iteration: usize, cost: f64) -> Result<()> {
        let seconds = self.clock.seconds();
        let seconds = self.trace.last().map_or(seconds, |r| seconds.max(r.seconds));
        self.trace.records.push(TraceRecord {
            iteration,
            cost,
            seconds,
        });
        if let Some(w) = self.watchdog {
            let initial = self.trace.records[0].cost;
            // +inf flags a prediction of zero where data is positive, not growth
            let blown = cost.is_nan() || (cost.is_finite() && cost > w.factor * initial);
            if initial.is_finite() && blown {
                self.strikes += 1;
                if self.strikes >= w.patience {
                    return Err(Error::Diverged {
                        algorithm: self.algorithm,
                        iteration,
                        cost,
                        initial,
                        factor: w.factor,
                        patience: w.patience,
                    });
                }
            } else {
                self.strikes = 0;
            }
        }
        Ok(())
    }
}
