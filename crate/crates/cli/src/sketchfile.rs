//! `EMDSKT v1`: a header line, the scheme configuration as one JSON line,
//! the measurement count, then one measurement per line.

use anyhow::{bail, Context, Result};
use emdsparse::pipeline::SchemeConfig;

pub const HEADER: &str = "EMDSKT v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SketchFile {
    pub config: SchemeConfig,
    pub measurements: Vec<f64>,
}

impl SketchFile {
    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("{HEADER}\n{}\n{}\n", serde_json::to_string(&self.config)?, self.measurements.len());
        for v in &self.measurements {
            // Display for f64 is the shortest string that parses back exactly.
            out.push_str(&format!("{v}\n"));
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HEADER) {
            bail!("expected `{HEADER}` header");
        }
        let config: SchemeConfig =
            serde_json::from_str(lines.next().context("missing configuration line")?).context("bad configuration")?;
        let count: usize = lines.next().context("missing measurement count")?.trim().parse().context("bad count")?;
        let measurements = lines
            .flat_map(str::split_whitespace)
            .map(|t| t.parse::<f64>().with_context(|| format!("bad measurement {t:?}")))
            .collect::<Result<Vec<f64>>>()?;
        if measurements.len() != count {
            bail!("expected {count} measurements, found {}", measurements.len());
        }
        Ok(Self { config, measurements })
    }
}
