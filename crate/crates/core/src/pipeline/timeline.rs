//! Timeline rows and their CSV form.

use std::io::{BufWriter, Write};

use crate::error::Result;

pub const TIMELINE_HEADER: &str = "t,estimator,err_fro,err_spec,hankel_err,d_err,objective,seed,k";

/// One estimate at one time. Error columns are `None` without an oracle or
/// when a metric does not apply.
#[derive(Debug, Clone, PartialEq)]
pub struct TimelineRecord {
    pub t: usize,
    pub estimator: String,
    pub err_fro: Option<f64>,
    pub err_spec: Option<f64>,
    pub hankel_err: Option<f64>,
    pub d_err: Option<f64>,
    pub objective: Option<f64>,
    pub seed: u64,
    pub k: usize,
}

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TimelineRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.t,
            self.estimator,
            field(self.err_fro),
            field(self.err_spec),
            field(self.hankel_err),
            field(self.d_err),
            field(self.objective),
            self.seed,
            self.k
        )
    }
}

pub fn write_timeline<W: Write>(records: &[TimelineRecord], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{TIMELINE_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_line())?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a file written by [`write_timeline`].
pub fn read_timeline(text: &str) -> Result<Vec<TimelineRecord>> {
    use crate::error::Error;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TIMELINE_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "expected timeline header, found {other:?}"
            )))
        }
    }
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))
        }
    };
    let int = |s: &str| -> Result<u64> {
        s.parse()
            .map_err(|e| Error::Parse(format!("bad integer {s:?}: {e}")))
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Parse(format!("timeline row has {} fields", f.len())));
            }
            Ok(TimelineRecord {
                t: int(f[0])? as usize,
                estimator: f[1].to_string(),
                err_fro: num(f[2])?,
                err_spec: num(f[3])?,
                hankel_err: num(f[4])?,
                d_err: num(f[5])?,
                objective: num(f[6])?,
                seed: int(f[7])?,
                k: int(f[8])? as usize,
            })
        })
        .collect()
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
