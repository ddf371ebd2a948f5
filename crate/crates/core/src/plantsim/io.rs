//! Line-oriented trace files.
//!
//! ```text
//! {"format":"plantsim-trace","version":1,"seed":7,"duration":3,"digest":"…","channels":[…],"schedule":[…]}
//! 2.0431 12.3 5.1 …
//! 1.9876 12.1 5.0 …
//! 2.1102 11.9 5.2 …
//! ```
//!
//! The first line is a JSON header. Each following line holds one sample per
//! channel, separated by single spaces, written in the shortest decimal form
//! that parses back to the identical `f64`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::channels::ChannelSpec;
use super::faults::ScheduledFault;
use super::trace::SensorTrace;
use crate::error::{Error, Result};
use crate::rng;

pub const TRACE_FORMAT: &str = "plantsim-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    duration: usize,
    digest: String,
    channels: Vec<ChannelSpec>,
    schedule: Vec<ScheduledFault>,
}

/// Hex digest of the channel layout and fault schedule.
pub fn trace_digest(channels: &[ChannelSpec], schedule: &[ScheduledFault]) -> String {
    let body = serde_json::to_string(&(channels, schedule)).expect("layout serializes");
    format!("{:016x}", rng::tag(&body))
}

pub fn write_trace<W: Write>(trace: &SensorTrace, mut w: W) -> Result<()> {
    let header = Header {
        format: TRACE_FORMAT.into(),
        version: TRACE_VERSION,
        seed: trace.seed,
        duration: trace.duration,
        digest: trace_digest(&trace.specs, &trace.schedule),
        channels: trace.specs.clone(),
        schedule: trace.schedule.clone(),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    writeln!(w)?;
    let mut line = String::new();
    for t in 0..trace.duration {
        line.clear();
        for (i, ch) in trace.channels.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&ch[t].to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: BufRead>(r: R) -> Result<SensorTrace> {
    let mut lines = r.lines();
    let first = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty trace file".into(),
    })??;
    let header: Header = serde_json::from_str(&first).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != TRACE_FORMAT {
        return Err(Error::Parse {
            line: 1,
            message: format!("not a trace file (format `{}`)", header.format),
        });
    }
    if header.version != TRACE_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported trace version {}", header.version),
        });
    }
    if trace_digest(&header.channels, &header.schedule) != header.digest {
        return Err(Error::Parse {
            line: 1,
            message: "header digest does not match its channels and schedule".into(),
        });
    }
    let n = header.channels.len();
    let mut channels = vec![Vec::with_capacity(header.duration); n];
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        let mut count = 0;
        for (c, tok) in line.split(' ').enumerate() {
            if c >= n {
                count = c + 1;
                break;
            }
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad value `{tok}` in column {c}"),
            })?;
            channels[c].push(v);
            count = c + 1;
        }
        if count != n {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {n} values, found {count}"),
            });
        }
        rows += 1;
    }
    if rows != header.duration {
        return Err(Error::Parse {
            line: rows + 1,
            message: format!("expected {} sample rows, found {rows}", header.duration),
        });
    }
    Ok(SensorTrace {
        specs: header.channels,
        channels,
        schedule: header.schedule,
        seed: header.seed,
        duration: header.duration,
    })
}
