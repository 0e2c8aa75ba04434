//! Corpus files: CSV manifest, signal files (CSV or `MMSG` binary) and
//! JSON annotations.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::{Episode, SeriesLabel, SignalRecord};
use crate::error::{Error, Result};

pub const SIGNAL_MAGIC: &[u8; 4] = b"MMSG";
pub const MANIFEST_HEADER: [&str; 4] = ["record_id", "signal_path", "label", "annotation_path"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub episodes: Vec<Episode>,
    pub beat_positions: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub record_id: String,
    pub signal_path: String,
    pub label: SeriesLabel,
    pub annotation_path: String,
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_err(path: &Path, position: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        position: position.into(),
        message: message.into(),
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, "line 1", e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(parse_err(
            path,
            "line 1",
            format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = format!("line {}", i + 2);
        let rec = rec.map_err(|e| parse_err(path, line.clone(), e.to_string()))?;
        if rec.len() != 4 {
            return Err(parse_err(path, line, format!("expected 4 fields, found {}", rec.len())));
        }
        let label = rec[2]
            .parse::<SeriesLabel>()
            .map_err(|e| parse_err(path, line.clone(), e.to_string()))?;
        if rec[0].is_empty() {
            return Err(parse_err(path, line, "empty record_id"));
        }
        rows.push(ManifestRow {
            record_id: rec[0].to_string(),
            signal_path: rec[1].to_string(),
            label,
            annotation_path: rec[3].to_string(),
        });
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER).map_err(csv_io)?;
    for r in rows {
        w.write_record([r.record_id.as_str(), &r.signal_path, r.label.code(), &r.annotation_path])
            .map_err(csv_io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Reads a signal file, returning `(sampling_rate, samples)`. Files starting
/// with the `MMSG` magic are binary; anything else is one value per line.
pub fn read_signal(path: &Path) -> Result<(u32, Vec<f64>)> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(SIGNAL_MAGIC) {
        return decode_binary_signal(path, &bytes);
    }
    let text =
        std::str::from_utf8(&bytes).map_err(|e| parse_err(path, format!("byte {}", e.valid_up_to()), "not UTF-8"))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| parse_err(path, format!("line {}", i + 1), format!("`{line}` is not a number")))?;
        samples.push(v);
    }
    Ok((SignalRecord::DEFAULT_SAMPLING_RATE, samples))
}

fn decode_binary_signal(path: &Path, bytes: &[u8]) -> Result<(u32, Vec<f64>)> {
    const HEADER: usize = 4 + 4 + 8;
    if bytes.len() < HEADER {
        return Err(parse_err(path, format!("byte {}", bytes.len()), "truncated header"));
    }
    let rate = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = count
        .checked_mul(8)
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| parse_err(path, "byte 8", "sample count overflows"))?;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            format!("byte {}", bytes.len().min(expected)),
            format!("expected {expected} bytes for {count} samples, found {}", bytes.len()),
        ));
    }
    let samples = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rate, samples))
}

pub fn encode_binary_signal(sampling_rate: u32, samples: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + samples.len() * 8);
    out.extend_from_slice(SIGNAL_MAGIC);
    out.extend_from_slice(&sampling_rate.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for v in samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_csv_signal(samples: &[f64]) -> String {
    let mut out = String::with_capacity(samples.len() * 12);
    for v in samples {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

pub fn read_annotation(path: &Path) -> Result<Annotation> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| parse_err(path, format!("line {}, column {}", e.line(), e.column()), e.to_string()))
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads and validates every record listed in a manifest. Relative paths
/// resolve against the manifest's directory.
pub fn load_records(manifest: &Path, beat_len: usize) -> Result<Vec<SignalRecord>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let rows = read_manifest(manifest)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        if !seen.insert(row.record_id.clone()) {
            return Err(Error::Validation {
                record_id: row.record_id,
                message: "duplicate record id in manifest".into(),
            });
        }
        let (sampling_rate, samples) = read_signal(&resolve(base, &row.signal_path))?;
        let ann = if row.annotation_path.is_empty() {
            Annotation::default()
        } else {
            read_annotation(&resolve(base, &row.annotation_path))?
        };
        let rec = SignalRecord {
            record_id: row.record_id,
            sampling_rate,
            samples,
            series_label: row.label,
            episodes: ann.episodes,
            beat_positions: ann.beat_positions,
        };
        rec.validate(beat_len)?;
        records.push(rec);
    }
    Ok(records)
}

/// Writes `records` as `manifest.csv` plus `signals/<id>.bin` and
/// `annotations/<id>.json` under `dir`.
pub fn write_corpus(dir: &Path, records: &[SignalRecord]) -> Result<PathBuf> {
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let signal_rel = format!("signals/{}.bin", r.record_id);
        let ann_rel = format!("annotations/{}.json", r.record_id);
        write_atomic(
            &dir.join(&signal_rel),
            &encode_binary_signal(r.sampling_rate, &r.samples),
        )?;
        let ann = Annotation {
            episodes: r.episodes.clone(),
            beat_positions: r.beat_positions.clone(),
        };
        write_atomic(&dir.join(&ann_rel), serde_json::to_string(&ann)?.as_bytes())?;
        rows.push(ManifestRow {
            record_id: r.record_id.clone(),
            signal_path: signal_rel,
            label: r.series_label,
            annotation_path: ann_rel,
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: SeriesLabel, n: usize, eps: &[[usize; 2]]) -> SignalRecord {
        SignalRecord {
            record_id: id.into(),
            sampling_rate: 200,
            samples: (0..n).map(|i| (i as f64 * 0.01).sin()).collect(),
            series_label: label,
            episodes: eps.iter().copied().map(Episode::from).collect(),
            beat_positions: None,
        }
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            rec("a", SeriesLabel::Normal, 2000, &[]),
            rec("b", SeriesLabel::Persistent, 2000, &[[0, 1999]]),
            rec("c", SeriesLabel::Paroxysmal, 3000, &[[1000, 1999]]),
        ];
        let manifest = write_corpus(dir.path(), &records).unwrap();
        let back = load_records(&manifest, 150).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn csv_signal_and_empty_annotation() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("s.csv"), "0.5\n-1.25\n\n2\n").unwrap();
        fs::write(
            dir.path().join("m.csv"),
            "record_id,signal_path,label,annotation_path\nx,s.csv,N,\n",
        )
        .unwrap();
        let recs = load_records(&dir.path().join("m.csv"), 1).unwrap();
        assert_eq!(recs[0].samples, vec![0.5, -1.25, 2.0]);
        assert_eq!(recs[0].sampling_rate, 200);
    }

    #[test]
    fn parse_errors_carry_positions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "1.0\n2.0\nabc\n").unwrap();
        match read_signal(&p) {
            Err(Error::Parse { position, .. }) => assert_eq!(position, "line 3"),
            other => panic!("{other:?}"),
        }

        let mut bin = encode_binary_signal(200, &[1.0, 2.0]);
        bin.pop();
        fs::write(&p, &bin).unwrap();
        assert!(matches!(read_signal(&p), Err(Error::Parse { .. })));

        let a = dir.path().join("a.json");
        fs::write(&a, "{\"episodes\": [[1, 2],\n oops]}").unwrap();
        match read_annotation(&a) {
            Err(Error::Parse { position, .. }) => assert!(position.starts_with("line 2"), "{position}"),
            other => panic!("{other:?}"),
        }

        let m = dir.path().join("m.csv");
        fs::write(&m, "record_id,signal_path,label,annotation_path\nx,s.csv,AFX,\n").unwrap();
        match read_manifest(&m) {
            Err(Error::Parse { position, .. }) => assert_eq!(position, "line 2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invariant_breach_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let bad = rec("bad", SeriesLabel::Paroxysmal, 3000, &[]);
        let manifest = write_corpus(dir.path(), &[bad]).unwrap();
        match load_records(&manifest, 150) {
            Err(Error::Validation { record_id, .. }) => assert_eq!(record_id, "bad"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn annotation_json_shape() {
        let ann = Annotation {
            episodes: vec![Episode::new(3, 9)],
            beat_positions: None,
        };
        assert_eq!(
            serde_json::to_string(&ann).unwrap(),
            r#"{"episodes":[[3,9]],"beat_positions":null}"#
        );
    }
}
