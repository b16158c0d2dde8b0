//! Transition files, curve tables and SVG figures.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bands::{pointwise_ci, Band, Transform};
use crate::error::{Error, Result};
use crate::estim::{Target, TargetCurve};
use crate::model::{
    validate_dataset, Arm, Cluster, ClusteredDataset, StateSpace, SubjectPath, TerminusKind,
    Transition,
};
use crate::panel::Weighting;
use crate::resample::Method;

pub const TRANSITIONS_HEADER: [&str; 8] = [
    "cluster", "subject", "arm", "entry", "time", "from", "to", "status",
];

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn field<V: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: usize) -> Result<V> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse()
        .map_err(|_| parse_err(line, format!("invalid {} '{raw}'", TRANSITIONS_HEADER[idx])))
}

struct Row {
    line: usize,
    arm: Option<Arm>,
    entry: f64,
    time: f64,
    from: usize,
    to: usize,
    censoring: bool,
}

#[derive(Default)]
struct SubjectRows {
    id: String,
    rows: Vec<Row>,
}

/// Parses a transitions table. Validation violations carry the line of the
/// subject's (or cluster's) first row.
pub fn parse_transitions(input: impl Read, space: StateSpace) -> Result<ClusteredDataset<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.iter().map(str::trim).ne(TRANSITIONS_HEADER) {
        return Err(parse_err(
            1,
            format!("expected header '{}'", TRANSITIONS_HEADER.join(",")),
        ));
    }

    let mut clusters: Vec<(String, usize, Vec<SubjectRows>)> = Vec::new();
    let mut cluster_index: HashMap<String, usize> = HashMap::new();
    let mut subject_index: HashMap<(usize, String), usize> = HashMap::new();
    for rec in reader.records() {
        let rec = rec
            .map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != TRANSITIONS_HEADER.len() {
            return Err(parse_err(
                line,
                format!(
                    "expected {} fields, found {}",
                    TRANSITIONS_HEADER.len(),
                    rec.len()
                ),
            ));
        }
        let cid = rec[0].trim().to_string();
        let sid = rec[1].trim().to_string();
        if cid.is_empty() || sid.is_empty() {
            return Err(parse_err(line, "cluster and subject ids must be non-empty"));
        }
        let arm = match rec[2].trim() {
            "" => None,
            a => Some(
                a.parse::<u8>()
                    .ok()
                    .and_then(Arm::from_label)
                    .ok_or_else(|| parse_err(line, format!("invalid arm '{a}'")))?,
            ),
        };
        let status: u8 = field(&rec, 7, line)?;
        let row = Row {
            line,
            arm,
            entry: field(&rec, 3, line)?,
            time: field(&rec, 4, line)?,
            from: field(&rec, 5, line)?,
            to: field(&rec, 6, line)?,
            censoring: match status {
                0 => true,
                1 => false,
                s => return Err(parse_err(line, format!("status must be 0 or 1, found {s}"))),
            },
        };
        if row.censoring && row.from != row.to {
            return Err(parse_err(
                line,
                "a censoring row must repeat the occupied state in 'from' and 'to'",
            ));
        }
        let c = *cluster_index.entry(cid.clone()).or_insert_with(|| {
            clusters.push((cid, line, Vec::new()));
            clusters.len() - 1
        });
        let members = &mut clusters[c].2;
        let s = *subject_index.entry((c, sid.clone())).or_insert_with(|| {
            members.push(SubjectRows {
                id: sid,
                rows: Vec::new(),
            });
            members.len() - 1
        });
        let subject = &mut members[s];
        if let Some(first) = subject.rows.first() {
            if first.entry != row.entry || first.arm != row.arm {
                return Err(parse_err(
                    line,
                    "entry time and arm must agree across a subject's rows",
                ));
            }
            if first.censoring || subject.rows.iter().any(|r| r.censoring) {
                return Err(parse_err(line, "rows follow the subject's censoring row"));
            }
        }
        subject.rows.push(row);
    }

    let mut lines: HashMap<(String, Option<String>), usize> = HashMap::new();
    let mut built = Vec::with_capacity(clusters.len());
    for (cid, cline, members) in clusters {
        lines.insert((cid.clone(), None), cline);
        let paths = members
            .into_iter()
            .map(|s| {
                lines.insert((cid.clone(), Some(s.id.clone())), s.rows[0].line);
                subject_from_rows(s)
            })
            .collect();
        built.push(Cluster::new(cid, paths));
    }
    validate_dataset(ClusteredDataset::new(space, built)).map_err(|mut report| {
        for v in &mut report.violations {
            if let Some(c) = &v.cluster_id {
                v.line = lines
                    .get(&(c.clone(), v.subject_id.clone()))
                    .or_else(|| lines.get(&(c.clone(), None)))
                    .copied();
            }
        }
        Error::Validation(report)
    })
}

fn subject_from_rows(s: SubjectRows) -> SubjectPath<f64> {
    let first = &s.rows[0];
    let (entry, entry_state, arm) = (first.entry, first.from, first.arm);
    let records: Vec<Transition<f64>> = s
        .rows
        .iter()
        .filter(|r| !r.censoring)
        .map(|r| Transition {
            time: r.time,
            from: r.from,
            to: r.to,
        })
        .collect();
    let path = match s.rows.iter().find(|r| r.censoring) {
        Some(c) => SubjectPath::censored(s.id, entry_state, records, c.time),
        // Without a censoring row the path must end in absorption; validation flags it otherwise.
        None => SubjectPath::absorbed(s.id, entry_state, records),
    }
    .with_entry(entry);
    match arm {
        Some(a) => path.with_arm(a),
        None => path,
    }
}

pub fn read_transitions(
    path: impl AsRef<Path>,
    space: StateSpace,
) -> Result<ClusteredDataset<f64>> {
    parse_transitions(std::fs::File::open(path)?, space)
}

pub fn write_transitions(data: &ClusteredDataset<f64>, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(e.into());
    w.write_record(TRANSITIONS_HEADER).map_err(csv_err)?;
    for c in &data.clusters {
        for s in &c.members {
            let arm = s.arm.map_or(String::new(), |a| a.label().to_string());
            let entry = s.entry_time.to_string();
            for r in &s.records {
                let rec = [
                    &c.id,
                    &s.id,
                    &arm,
                    &entry,
                    &r.time.to_string(),
                    &r.from.to_string(),
                    &r.to.to_string(),
                    "1",
                ];
                w.write_record(rec).map_err(csv_err)?;
            }
            if s.terminus.kind == TerminusKind::Censored {
                let state = s.records.last().map_or(s.entry_state, |r| r.to).to_string();
                let rec = [
                    &c.id,
                    &s.id,
                    &arm,
                    &entry,
                    &s.terminus.time.to_string(),
                    &state,
                    &state,
                    "0",
                ];
                w.write_record(rec).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_transitions(data: &ClusteredDataset<f64>, path: impl AsRef<Path>) -> Result<()> {
    write_transitions(data, std::io::BufWriter::new(std::fs::File::create(path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub target: Target<f64>,
    pub weighting: Weighting,
    pub n_clusters: usize,
    pub method: Option<Method>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub transform: Option<Transform>,
    pub alpha: Option<f64>,
    /// Band domain as percentiles of the driving jump times.
    pub domain: Option<(f64, f64)>,
    pub critical_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: f64,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub band_lo: Option<f64>,
    pub band_hi: Option<f64>,
    /// Inside the band domain (or, without a band, where the estimate is valid).
    pub domain_flag: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveOutput {
    pub meta: CurveMeta,
    pub rows: Vec<CurveRow>,
}

const CURVE_COLUMNS: [&str; 8] = [
    "t",
    "estimate",
    "se",
    "ci_lo",
    "ci_hi",
    "band_lo",
    "band_hi",
    "domain_flag",
];

impl CurveOutput {
    pub fn from_curve(curve: &TargetCurve<f64>, n_clusters: usize) -> Self {
        let rows = curve
            .grid
            .iter()
            .zip(curve.values.iter().zip(&curve.valid))
            .map(|(&t, (&estimate, &valid))| CurveRow {
                t,
                estimate,
                se: None,
                ci_lo: None,
                ci_hi: None,
                band_lo: None,
                band_hi: None,
                domain_flag: valid,
            })
            .collect();
        let meta = CurveMeta {
            target: curve.target,
            weighting: curve.weighting,
            n_clusters,
            method: None,
            reps: None,
            seed: None,
            transform: None,
            alpha: None,
            domain: None,
            critical_value: None,
        };
        Self { meta, rows }
    }

    /// Attaches standard errors (aligned with the rows) and the pointwise
    /// intervals they imply. Intervals stay empty where the transform is undefined.
    pub fn with_intervals(mut self, se: &[Option<f64>], transform: Transform, alpha: f64) -> Self {
        for (row, &s) in self.rows.iter_mut().zip(se) {
            row.se = s;
            if let Some(Ok((lo, hi))) = s.map(|s| pointwise_ci(row.estimate, s, transform, alpha)) {
                row.ci_lo = Some(lo);
                row.ci_hi = Some(hi);
            }
        }
        self.meta.transform = Some(transform);
        self.meta.alpha = Some(alpha);
        self
    }

    pub fn with_band(mut self, band: &Band<f64>, domain: (f64, f64)) -> Self {
        let mut k = 0;
        for row in &mut self.rows {
            row.domain_flag = false;
            while k < band.grid.len() && band.grid[k] < row.t {
                k += 1;
            }
            if k < band.grid.len() && band.grid[k] == row.t {
                row.band_lo = Some(band.lower[k]);
                row.band_hi = Some(band.upper[k]);
                row.domain_flag = true;
            }
        }
        self.meta.method = Some(band.method);
        self.meta.reps = Some(band.reps);
        self.meta.seed = band.seed;
        self.meta.transform = Some(band.transform);
        self.meta.alpha = Some(band.alpha);
        self.meta.domain = Some(domain);
        self.meta.critical_value = Some(band.critical_value);
        self
    }

    /// Comma-separated table preceded by `# key: value` metadata lines (values in JSON).
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        if let serde_json::Value::Object(map) = serde_json::to_value(&self.meta)? {
            for (k, v) in map {
                let _ = writeln!(out, "# {k}: {v}");
            }
        }
        out.push_str(&CURVE_COLUMNS.join(","));
        out.push('\n');
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.t,
                r.estimate,
                opt(r.se),
                opt(r.ci_lo),
                opt(r.ci_hi),
                opt(r.band_lo),
                opt(r.band_hi),
                u8::from(r.domain_flag)
            );
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = serde_json::Map::new();
        let mut rows = Vec::new();
        let mut seen_header = false;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest
                    .split_once(": ")
                    .ok_or_else(|| parse_err(lineno, "malformed metadata line"))?;
                let value =
                    serde_json::from_str(v).map_err(|e| parse_err(lineno, e.to_string()))?;
                meta.insert(k.to_string(), value);
            } else if !seen_header {
                if line.split(',').ne(CURVE_COLUMNS) {
                    return Err(parse_err(
                        lineno,
                        format!("expected header '{}'", CURVE_COLUMNS.join(",")),
                    ));
                }
                seen_header = true;
            } else if !line.is_empty() {
                let cells: Vec<&str> = line.split(',').collect();
                if cells.len() != CURVE_COLUMNS.len() {
                    return Err(parse_err(
                        lineno,
                        format!("expected {} fields", CURVE_COLUMNS.len()),
                    ));
                }
                let num = |j: usize| -> Result<f64> {
                    cells[j].parse().map_err(|_| {
                        parse_err(
                            lineno,
                            format!("invalid {} '{}'", CURVE_COLUMNS[j], cells[j]),
                        )
                    })
                };
                let opt = |j: usize| -> Result<Option<f64>> {
                    if cells[j].is_empty() {
                        Ok(None)
                    } else {
                        num(j).map(Some)
                    }
                };
                rows.push(CurveRow {
                    t: num(0)?,
                    estimate: num(1)?,
                    se: opt(2)?,
                    ci_lo: opt(3)?,
                    ci_hi: opt(4)?,
                    band_lo: opt(5)?,
                    band_hi: opt(6)?,
                    domain_flag: match cells[7] {
                        "1" => true,
                        "0" => false,
                        other => {
                            return Err(parse_err(lineno, format!("invalid domain_flag '{other}'")))
                        }
                    },
                });
            }
        }
        if !seen_header {
            return Err(parse_err(
                text.lines().count().max(1),
                "missing column header",
            ));
        }
        let meta = serde_json::from_value(serde_json::Value::Object(meta))
            .map_err(|e| parse_err(1, e.to_string()))?;
        Ok(Self { meta, rows })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads either representation, choosing by the first non-blank character.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            Self::from_json(&text)
        } else {
            Self::from_csv(&text)
        }
    }
}

fn target_label(t: &Target<f64>) -> String {
    match *t {
        Target::Transition { from, to, origin } => format!("P{from}{to}({origin}, t)"),
        Target::Occupation { state } => format!("P{state}(t)"),
    }
}

/// Step-function figure of the estimate with its band (shaded) and pointwise
/// intervals (dashed), as a standalone SVG document.
pub fn plot_svg(curve: &CurveOutput) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const M: f64 = 50.0;
    let t_max = curve
        .rows
        .iter()
        .map(|r| r.t)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let y_max = curve
        .rows
        .iter()
        .flat_map(|r| [Some(r.estimate), r.ci_hi, r.band_hi])
        .flatten()
        .fold(0.0, f64::max)
        .clamp(0.05, 1.0);
    let x = |t: f64| M + t / t_max * (W - 2.0 * M);
    let y = |p: f64| H - M - p / y_max * (H - 2.0 * M);

    let steps = |pick: &dyn Fn(&CurveRow) -> Option<f64>| -> Vec<String> {
        let mut segs = Vec::new();
        let mut cur: Vec<(f64, f64)> = Vec::new();
        for (i, r) in curve.rows.iter().enumerate() {
            let next_t = curve.rows.get(i + 1).map_or(t_max, |n| n.t);
            match pick(r) {
                Some(v) => {
                    cur.push((x(r.t), y(v)));
                    cur.push((x(next_t), y(v)));
                }
                None if !cur.is_empty() => segs.push(std::mem::take(&mut cur)),
                None => {}
            }
        }
        if !cur.is_empty() {
            segs.push(cur);
        }
        segs.into_iter()
            .map(|s| {
                s.iter()
                    .map(|(a, b)| format!("{a:.2},{b:.2}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{} ({})</text>"#,
        W / 2.0,
        target_label(&curve.meta.target),
        curve.meta.weighting.name()
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{M},{M} V{} H{}" fill="none" stroke="black"/>"#,
        H - M,
        W - M
    );
    for k in 0..=4 {
        let p = y_max * k as f64 / 4.0;
        let t = t_max * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{p:.2}</text>"#,
            M - 6.0,
            y(p) + 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{t:.2}</text>"#,
            x(t),
            H - M + 16.0
        );
    }
    let lo = steps(&|r: &CurveRow| r.band_lo);
    let hi = steps(&|r: &CurveRow| r.band_hi);
    for (l, h) in lo.iter().zip(&hi) {
        let upper_rev: Vec<&str> = h.split(' ').rev().collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{l} {}" fill="steelblue" fill-opacity="0.25" stroke="none"/>"#,
            upper_rev.join(" ")
        );
    }
    for pts in steps(&|r: &CurveRow| r.ci_lo)
        .into_iter()
        .chain(steps(&|r: &CurveRow| r.ci_hi))
    {
        let _ = writeln!(
            svg,
            r#"<polyline points="{pts}" fill="none" stroke="gray" stroke-dasharray="4 3"/>"#
        );
    }
    for pts in steps(&|r: &CurveRow| Some(r.estimate)) {
        let _ = writeln!(
            svg,
            r#"<polyline points="{pts}" fill="none" stroke="black" stroke-width="1.5"/>"#
        );
    }
    svg.push_str("</svg>\n");
    svg
}
