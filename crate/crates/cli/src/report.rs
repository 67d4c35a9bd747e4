//! Statistics output, as an aligned table or as `file,section,key,value` CSV.

use std::fmt::Write as _;
use std::io::{ErrorKind, Write as _};

use avtx::block_codec::CodingStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
}

pub struct Report {
    format: Format,
    text: String,
}

const PASSES: [&str; 6] = ["BR", "LR", "HR", "sign", "EOB", "side"];

impl Report {
    pub fn new(format: Format) -> Self {
        let text = match format {
            Format::Table => String::new(),
            Format::Csv => "file,section,key,value\n".to_string(),
        };
        Report { format, text }
    }

    /// A verification verdict for one file.
    pub fn verdict(&mut self, file: &str, pass: bool, detail: &str) {
        let status = if pass { "PASS" } else { "FAIL" };
        match self.format {
            Format::Table => {
                let _ = writeln!(self.text, "{status} {file}: {detail}");
            }
            Format::Csv => {
                let _ = writeln!(self.text, "{},result,status,{status}", csv_field(file));
            }
        }
    }

    /// Block and byte counts, tool usage and, when `bits` is set, the
    /// estimated bits per coding pass.
    pub fn stats(&mut self, file: &str, s: &CodingStats, bits: bool) {
        let mut rows: Vec<(&str, String, String)> = vec![
            ("summary", "blocks".into(), s.blocks.to_string()),
            ("summary", "payload_bytes".into(), s.payload_bytes.to_string()),
        ];
        if bits {
            rows.push(("summary", "total_bits".into(), format!("{:.1}", s.total_bits())));
            let by_pass = s.bits_by_pass();
            for p in PASSES {
                rows.push(("bits", p.into(), format!("{:.1}", by_pass.get(p).copied().unwrap_or(0.0))));
            }
        }
        for (k, v) in &s.tools {
            rows.push(("tools", (*k).into(), v.to_string()));
        }
        match self.format {
            Format::Table => {
                let _ = writeln!(self.text, "== {file}");
                let mut section = "";
                for (sec, k, v) in &rows {
                    if *sec != section {
                        let _ = writeln!(self.text, "  [{sec}]");
                        section = sec;
                    }
                    let _ = writeln!(self.text, "    {k:<16} {v:>14}");
                }
            }
            Format::Csv => {
                let f = csv_field(file);
                for (sec, k, v) in &rows {
                    let _ = writeln!(self.text, "{f},{sec},{k},{v}");
                }
            }
        }
    }

    pub fn print(&self) -> anyhow::Result<()> {
        emit(&self.text)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Write to stdout; a closed pipe (`avtx ... | head`) is not an error.
pub fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() == ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}
