//! Dataset file formats.
//!
//! Two interchangeable encodings, selected by file extension:
//!
//! * text (any extension other than `.bin`): a self-describing header
//!   (`count`, `len`, `dt_us`, `seed`), then per trace a `trace <label>`
//!   line followed by one decimal sample per line. Round-trip exact via
//!   shortest-exact f64 formatting.
//! * binary (`.bin`): magic `SPRDDS1\n`, then count/len as little-endian
//!   u64, dt_us as LE f64, seed as LE u64, then per trace one label byte
//!   (0 = event, 1 = noevent) and `len` LE f64 samples.

use crate::error::{Error, Result};
use crate::trace::{Label, LabeledDataset, Trace};
use std::fs;
use std::io::Write as _;
use std::path::Path;

const BINARY_MAGIC: &[u8; 8] = b"SPRDDS1\n";

fn is_binary(path: &Path) -> bool {
    path.extension().map(|e| e == "bin").unwrap_or(false)
}

pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let bytes = if is_binary(path) {
        encode_binary(ds)
    } else {
        encode_text(ds).into_bytes()
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if is_binary(path) {
        decode_binary(&bytes, path)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::malformed(path.display().to_string(), "not valid UTF-8"))?;
        decode_text(&text, path)
    }
}

fn encode_text(ds: &LabeledDataset) -> String {
    let len = ds.traces.first().map(|t| t.len()).unwrap_or(0);
    let dt = ds.traces.first().map(|t| t.dt_us()).unwrap_or(1.0);
    let mut out = String::with_capacity(ds.len() * len * 20 + 128);
    out.push_str("# spinread dataset v1\n");
    out.push_str(&format!("count {}\n", ds.len()));
    out.push_str(&format!("len {len}\n"));
    out.push_str(&format!("dt_us {dt}\n"));
    out.push_str(&format!("seed {}\n", ds.seed));
    for (trace, label) in ds.traces.iter().zip(&ds.labels) {
        out.push_str(&format!("trace {}\n", label.as_str()));
        for s in trace.samples() {
            out.push_str(&format!("{s}\n"));
        }
    }
    out
}

fn decode_text(text: &str, path: &Path) -> Result<LabeledDataset> {
    let p = || path.display().to_string();
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != "# spinread dataset v1" {
        return Err(Error::malformed(p(), "missing dataset header"));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| Error::malformed(p(), format!("missing {name}")))?;
        line.strip_prefix(&format!("{name} "))
            .map(str::to_owned)
            .ok_or_else(|| Error::malformed(p(), format!("expected {name} line, got {line:?}")))
    };
    let count: usize = field("count")?
        .parse()
        .map_err(|_| Error::malformed(p(), "bad count"))?;
    let len: usize = field("len")?
        .parse()
        .map_err(|_| Error::malformed(p(), "bad len"))?;
    let dt_us: f64 = field("dt_us")?
        .parse()
        .map_err(|_| Error::malformed(p(), "bad dt_us"))?;
    let seed: u64 = field("seed")?
        .parse()
        .map_err(|_| Error::malformed(p(), "bad seed"))?;

    let mut traces = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::malformed(p(), "truncated: missing trace line"))?;
        let label = line
            .strip_prefix("trace ")
            .ok_or_else(|| Error::malformed(p(), format!("expected trace line, got {line:?}")))
            .and_then(Label::parse)?;
        let mut samples = Vec::with_capacity(len);
        for _ in 0..len {
            let s = lines
                .next()
                .ok_or_else(|| Error::malformed(p(), "truncated: missing sample"))?;
            samples.push(
                s.parse()
                    .map_err(|_| Error::malformed(p(), format!("bad sample {s:?}")))?,
            );
        }
        traces.push(Trace::new(samples, dt_us)?);
        labels.push(label);
    }
    if lines.next().is_some() {
        return Err(Error::malformed(p(), "trailing data after last trace"));
    }
    LabeledDataset::new(traces, labels, seed)
}

fn encode_binary(ds: &LabeledDataset) -> Vec<u8> {
    let len = ds.traces.first().map(|t| t.len()).unwrap_or(0);
    let dt = ds.traces.first().map(|t| t.dt_us()).unwrap_or(1.0);
    let mut out = Vec::with_capacity(32 + ds.len() * (1 + 8 * len));
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&(len as u64).to_le_bytes());
    out.extend_from_slice(&dt.to_le_bytes());
    out.extend_from_slice(&ds.seed.to_le_bytes());
    for (trace, label) in ds.traces.iter().zip(&ds.labels) {
        out.push(match label {
            Label::Event => 0,
            Label::NoEvent => 1,
        });
        for s in trace.samples() {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    out
}

fn decode_binary(bytes: &[u8], path: &Path) -> Result<LabeledDataset> {
    let p = || path.display().to_string();
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let slice = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::malformed(p(), "truncated binary dataset"))?;
        pos += n;
        Ok(slice)
    };
    if take(8)? != BINARY_MAGIC {
        return Err(Error::malformed(p(), "bad magic"));
    }
    let read_u64 =
        |b: &[u8]| u64::from_le_bytes(b.try_into().expect("slice length checked by take"));
    let count = read_u64(take(8)?) as usize;
    let len = read_u64(take(8)?) as usize;
    let dt_us = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let seed = read_u64(take(8)?);
    let mut traces = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let label = match take(1)?[0] {
            0 => Label::Event,
            1 => Label::NoEvent,
            other => return Err(Error::malformed(p(), format!("bad label byte {other}"))),
        };
        let raw = take(8 * len)?;
        let samples = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        traces.push(Trace::new(samples, dt_us)?);
        labels.push(label);
    }
    if pos != bytes.len() {
        return Err(Error::malformed(p(), "trailing bytes after last trace"));
    }
    LabeledDataset::new(traces, labels, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_dataset() -> LabeledDataset {
        let t1 = Trace::new(vec![0.0, 1.0, -0.25, 1e-17], 1.0).unwrap();
        let t2 = Trace::new(vec![0.5, 0.1234567890123456, 2.0, -3.0], 1.0).unwrap();
        LabeledDataset::new(vec![t1, t2], vec![Label::Event, Label::NoEvent], 99).unwrap()
    }

    #[test]
    fn text_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ds.txt");
        let ds = sample_dataset();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.seed, ds.seed);
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.traces.iter().zip(&ds.traces) {
            for (x, y) in a.samples().iter().zip(b.samples()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let ds = sample_dataset();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.traces.iter().zip(&ds.traces) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn malformed_text_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "# spinread dataset v1\ncount 1\nlen 2\n").unwrap();
        assert!(load_dataset(&path).is_err());
    }
}
