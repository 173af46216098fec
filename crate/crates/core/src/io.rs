//! CSV persistence.
//!
//! Every table starts with a block of `# key=value` metadata lines followed
//! by an ordinary CSV header and rows. Floats are written with 17
//! significant digits so that files round-trip bit-exactly.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::projfilter::ProjState;
use crate::qfilter::FilterEstimates;
use crate::trajectory::{JumpChannel, JumpEvent, ModelParams, ObservationRecord, SimGrid, TruthRecord};

/// 17 significant digits, e.g. `1.0000000000000000e-5`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Ordered `key=value` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata(Vec<(String, String)>);

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `key`.
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.0.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.0.push((key.to_owned(), value)),
        }
        self
    }

    pub fn set_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.set(key, fmt_f64(value))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses `key` as `T`, reporting `source` in errors.
    pub fn parse<T: FromStr>(&self, key: &str, source: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key).ok_or_else(|| Error::Parse {
            source_name: source.to_owned(),
            line: 0,
            message: format!("missing metadata key `{key}`"),
        })?;
        raw.parse().map_err(|e: T::Err| Error::Parse {
            source_name: source.to_owned(),
            line: 0,
            message: format!("bad value `{raw}` for `{key}`: {e}"),
        })
    }

    fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
    }

    fn insert_params(&mut self, params: &ModelParams) {
        self.set_f64("g", params.g)
            .set_f64("kappa", params.kappa)
            .set_f64("gamma", params.gamma)
            .set_f64("eta", params.eta);
    }

    pub fn params(&self, source: &str) -> Result<ModelParams> {
        ModelParams::new(
            self.parse("g", source)?,
            self.parse("kappa", source)?,
            self.parse("gamma", source)?,
            self.parse("eta", source)?,
        )
    }
}

/// Parsed table: metadata, header and rows of raw fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Metadata,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// File line number of each row (1-based), for error messages.
    pub row_lines: Vec<usize>,
}

fn parse_err(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_owned(),
        line,
        message: message.into(),
    }
}

/// Renders metadata, header and rows.
pub fn render_table(meta: &Metadata, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(meta.render().into_bytes());
    w.write_record(header).map_err(|e| Error::invalid(e.to_string()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

pub fn parse_table(text: &str, source: &str) -> Result<Table> {
    let mut meta = Metadata::new();
    for (i, line) in text.lines().enumerate() {
        let Some(body) = line.strip_prefix('#') else { break };
        let body = body.trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| parse_err(source, i + 1, format!("metadata line `{line}` is not key=value")))?;
        meta.set(k.trim(), v.trim());
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(source, 0, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    let mut row_lines = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(source, line, e.to_string())
        })?;
        row_lines.push(rec.position().map_or(0, |p| p.line() as usize));
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    Ok(Table {
        meta,
        header,
        rows,
        row_lines,
    })
}

impl Table {
    fn expect_header(&self, expected: &[&str], source: &str) -> Result<()> {
        if self.header != expected {
            return Err(parse_err(
                source,
                0,
                format!("expected columns {}, found {}", expected.join(","), self.header.join(",")),
            ));
        }
        Ok(())
    }

    fn column_f64(&self, col: usize, source: &str) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .zip(&self.row_lines)
            .map(|(r, &line)| {
                r[col]
                    .parse::<f64>()
                    .map_err(|e| parse_err(source, line, format!("column {}: {e}", self.header[col])))
            })
            .collect()
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

const RECORD_COLUMNS: [&str; 3] = ["t", "dY", "jump"];

pub fn render_record(record: &ObservationRecord) -> Result<String> {
    let mut meta = Metadata::new();
    meta.insert_params(&record.params);
    meta.set("seed", record.seed())
        .set_f64("dt", record.dt())
        .set("n_steps", record.len())
        .set("n_fock", record.n_fock);
    let jumps = record.jump_column();
    let rows = record.times.iter().zip(&record.dy).zip(jumps).map(|((t, dy), j)| {
        vec![
            fmt_f64(*t),
            fmt_f64(*dy),
            j.map_or('-', JumpChannel::symbol).to_string(),
        ]
    });
    render_table(&meta, &RECORD_COLUMNS, rows)
}

pub fn parse_record(text: &str, source: &str) -> Result<ObservationRecord> {
    let table = parse_table(text, source)?;
    table.expect_header(&RECORD_COLUMNS, source)?;
    let m = &table.meta;
    let params = m.params(source)?;
    let grid = SimGrid::new(m.parse("dt", source)?, m.parse("n_steps", source)?, m.parse("seed", source)?)?;
    let n_fock = m.parse("n_fock", source)?;
    let times = table.column_f64(0, source)?;
    let dy = table.column_f64(1, source)?;
    let mut jumps = Vec::new();
    for (k, (row, &line)) in table.rows.iter().zip(&table.row_lines).enumerate() {
        let mut chars = row[2].chars();
        let symbol = match (chars.next(), chars.next()) {
            (Some(c), None) => JumpChannel::from_symbol(c),
            _ => None,
        };
        match symbol {
            Some(Some(channel)) => jumps.push(JumpEvent {
                step: k,
                time: times[k],
                channel,
            }),
            Some(None) => {}
            None => return Err(parse_err(source, line, format!("unknown jump symbol `{}`", row[2]))),
        }
    }
    let record = ObservationRecord {
        times,
        dy,
        jumps,
        params,
        grid,
        n_fock,
    };
    record.validate().map_err(|e| parse_err(source, 0, e.to_string()))?;
    Ok(record)
}

pub fn write_record(path: &Path, record: &ObservationRecord) -> Result<()> {
    write_text(path, &render_record(record)?)
}

pub fn read_record(path: &Path) -> Result<ObservationRecord> {
    parse_record(&read_text(path)?, &source_name(path))
}

const TRUTH_COLUMNS: [&str; 3] = ["t", "p_plus_full", "y_mean_full"];

pub fn render_truth(truth: &TruthRecord, seed: u64) -> Result<String> {
    let mut meta = Metadata::new();
    meta.set("seed", seed).set_f64("dt", truth.dt);
    let rows = truth
        .times()
        .zip(truth.p_plus_full.iter().zip(&truth.y_mean_full))
        .map(|(t, (p, y))| vec![fmt_f64(t), fmt_f64(*p), fmt_f64(*y)]);
    render_table(&meta, &TRUTH_COLUMNS, rows)
}

pub fn parse_truth(text: &str, source: &str) -> Result<TruthRecord> {
    let table = parse_table(text, source)?;
    table.expect_header(&TRUTH_COLUMNS, source)?;
    Ok(TruthRecord {
        p_plus_full: table.column_f64(1, source)?,
        y_mean_full: table.column_f64(2, source)?,
        dt: table.meta.parse("dt", source)?,
    })
}

pub fn write_truth(path: &Path, truth: &TruthRecord, seed: u64) -> Result<()> {
    write_text(path, &render_truth(truth, seed)?)
}

pub fn read_truth(path: &Path) -> Result<TruthRecord> {
    parse_truth(&read_text(path)?, &source_name(path))
}

const ESTIMATE_COLUMNS: [&str; 3] = ["t", "p_plus", "y_mean"];

/// Contents of an estimates file.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatesFile {
    pub meta: Metadata,
    pub times: Vec<f64>,
    pub p_plus: Vec<f64>,
    pub y_mean: Vec<f64>,
}

impl EstimatesFile {
    pub fn new(meta: Metadata, est: &FilterEstimates) -> Self {
        Self {
            meta,
            times: est.times.clone(),
            p_plus: est.p_plus.clone(),
            y_mean: est.y_mean.clone(),
        }
    }

    pub fn render(&self) -> Result<String> {
        let rows = self
            .times
            .iter()
            .zip(self.p_plus.iter().zip(&self.y_mean))
            .map(|(t, (p, y))| vec![fmt_f64(*t), fmt_f64(*p), fmt_f64(*y)]);
        render_table(&self.meta, &ESTIMATE_COLUMNS, rows)
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let table = parse_table(text, source)?;
        table.expect_header(&ESTIMATE_COLUMNS, source)?;
        Ok(Self {
            times: table.column_f64(0, source)?,
            p_plus: table.column_f64(1, source)?,
            y_mean: table.column_f64(2, source)?,
            meta: table.meta,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.render()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &source_name(path))
    }
}

const TRACE_COLUMNS: [&str; 4] = ["t", "nu_tilde", "mu_plus", "mu_minus"];

/// Projection-filter parameter trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub meta: Metadata,
    pub times: Vec<f64>,
    pub states: Vec<ProjState>,
}

impl TraceFile {
    pub fn render(&self) -> Result<String> {
        let rows = self.times.iter().zip(&self.states).map(|(t, s)| {
            vec![fmt_f64(*t), fmt_f64(s.nu_tilde), fmt_f64(s.mu_plus), fmt_f64(s.mu_minus)]
        });
        render_table(&self.meta, &TRACE_COLUMNS, rows)
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let table = parse_table(text, source)?;
        table.expect_header(&TRACE_COLUMNS, source)?;
        let nu = table.column_f64(1, source)?;
        let mp = table.column_f64(2, source)?;
        let mm = table.column_f64(3, source)?;
        Ok(Self {
            times: table.column_f64(0, source)?,
            states: nu
                .into_iter()
                .zip(mp.into_iter().zip(mm))
                .map(|(nu_tilde, (mu_plus, mu_minus))| ProjState {
                    nu_tilde,
                    mu_plus,
                    mu_minus,
                })
                .collect(),
            meta: table.meta,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.render()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &source_name(path))
    }
}

/// Flat `key=value` text without a CSV body.
pub fn render_key_values(meta: &Metadata) -> String {
    meta.entries().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_key_values(text: &str, source: &str) -> Result<Metadata> {
    let mut meta = Metadata::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(source, i + 1, format!("expected key = value, found `{line}`")))?;
        meta.set(k.trim(), v.trim());
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::JumpChannel;

    fn record() -> ObservationRecord {
        let dt = 1e-5;
        ObservationRecord {
            times: (0..4).map(|k| (k + 1) as f64 * dt).collect(),
            dy: vec![0.1 / 3.0, -2e-7, std::f64::consts::PI, 0.0],
            jumps: vec![
                JumpEvent {
                    step: 1,
                    time: 2.0 * dt,
                    channel: JumpChannel::Z,
                },
                JumpEvent {
                    step: 3,
                    time: 4.0 * dt,
                    channel: JumpChannel::Minus,
                },
            ],
            params: ModelParams::moderate(),
            grid: SimGrid::new(dt, 4, 99).unwrap(),
            n_fock: 25,
        }
    }

    #[test]
    fn record_round_trip() {
        let r = record();
        let text = render_record(&r).unwrap();
        assert!(text.starts_with("# g=1.2000000000000000e2\n"));
        assert!(text.contains("\nt,dY,jump\n"));
        assert_eq!(parse_record(&text, "mem").unwrap(), r);
    }

    #[test]
    fn float_format_is_exact() {
        for x in [0.1, 1.0 / 3.0, f64::MIN_POSITIVE, -1e300, 2.5e-6] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn bad_jump_symbol_reports_line() {
        let text = render_record(&record()).unwrap().replace(",z\n", ",q\n");
        match parse_record(&text, "mem") {
            Err(Error::Parse { line, .. }) => assert!(line > 9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_metadata_is_a_parse_error() {
        let text = render_record(&record()).unwrap().replace("# seed=99\n", "");
        assert!(matches!(parse_record(&text, "mem"), Err(Error::Parse { .. })));
    }

    #[test]
    fn truth_and_estimates_round_trip() {
        let truth = TruthRecord {
            p_plus_full: vec![0.0, 0.25, 1.0],
            y_mean_full: vec![0.0, -1.5, 3.0 + 1e-12],
            dt: 1e-5,
        };
        assert_eq!(parse_truth(&render_truth(&truth, 3).unwrap(), "mem").unwrap(), truth);

        let mut meta = Metadata::new();
        meta.set("backend", "qpde").set("seed", 3);
        let est = EstimatesFile {
            meta,
            times: vec![0.0, 1e-5],
            p_plus: vec![0.0, 1e-3],
            y_mean: vec![0.0, 0.1],
        };
        assert_eq!(EstimatesFile::parse(&est.render().unwrap(), "mem").unwrap(), est);
    }

    #[test]
    fn trace_round_trip() {
        let t = TraceFile {
            meta: Metadata::new(),
            times: vec![0.0, 1e-5],
            states: vec![ProjState::singular_start(), ProjState::new(0.3, -2.0, 2.0).unwrap()],
        };
        assert_eq!(TraceFile::parse(&t.render().unwrap(), "mem").unwrap(), t);
    }

    #[test]
    fn key_values() {
        let mut m = Metadata::new();
        m.set("rms_p", 0.01).set("label", "a b");
        let back = parse_key_values(&render_key_values(&m), "mem").unwrap();
        assert_eq!(back, m);
        assert!(parse_key_values("novalue\n", "mem").is_err());
    }
}
