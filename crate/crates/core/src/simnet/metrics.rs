use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write};

use crate::time::Micros;

pub const METRICS_HEADER: &str = "metric,node,time_us,value";

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub metric: &'static str,
    pub node: String,
    pub time: Micros,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub samples: Vec<Sample>,
}

impl MetricsReport {
    pub fn push(&mut self, metric: &'static str, node: &str, time: Micros, value: f64) {
        self.samples.push(Sample {
            metric,
            node: node.into(),
            time,
            value,
        });
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values<'a>(&'a self, metric: &'a str) -> impl Iterator<Item = f64> + 'a {
        self.samples.iter().filter(move |s| s.metric == metric).map(|s| s.value)
    }

    pub fn count(&self, metric: &str) -> usize {
        self.values(metric).count()
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        let (n, sum) = self.values(metric).fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
        (n > 0).then(|| sum / n as f64)
    }

    /// CSV with [`METRICS_HEADER`]; an empty report is just the header.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> fmt::Result {
        writeln!(out, "{METRICS_HEADER}")?;
        for s in &self.samples {
            writeln!(out, "{},{},{},{}", s.metric, s.node, s.time, s.value)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        self.write_csv(&mut s).expect("writing to a String cannot fail");
        s
    }
}
