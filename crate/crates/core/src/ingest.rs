//! Daily production records: CSV parsing, daily resampling and train/test splitting.
//!
//! A [`ProductionHistory`] keeps every measurement as `Option<f64>` so that a
//! missing reading is never confused with a zero rate. Numerical code works on
//! the dense [`FieldData`] view, which can only be built from a history whose
//! wells share one gap-free daily axis.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact header of the production CSV.
pub const CSV_HEADER: [&str; 9] = [
    "date",
    "well_id",
    "well_type",
    "oil_vol_m3",
    "gas_vol_m3",
    "water_vol_m3",
    "water_inj_m3",
    "downhole_pressure_bar",
    "downhole_temp_c",
];

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate observation for well {well} on {date}")]
    DuplicateObservation { date: NaiveDate, well: String },
    #[error("unknown well kind {0:?} (expected PRODUCER or INJECTOR)")]
    UnknownWellKind(String),
    #[error("gap in well {well} at {date}")]
    GapFound { well: String, date: NaiveDate },
    #[error("test span must be shorter than the history ({test_len} >= {len})")]
    TestTooLong { test_len: usize, len: usize },
    #[error("test span must be at least one day")]
    EmptyTestSpan,
    #[error("history is not dense: {0}")]
    NotDense(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WellKind {
    Producer,
    Injector,
}

impl WellKind {
    pub fn parse(s: &str) -> Result<Self, IngestError> {
        match s {
            "PRODUCER" => Ok(WellKind::Producer),
            "INJECTOR" => Ok(WellKind::Injector),
            other => Err(IngestError::UnknownWellKind(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WellKind::Producer => "PRODUCER",
            WellKind::Injector => "INJECTOR",
        }
    }
}

impl fmt::Display for WellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A measured quantity attached to a well.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    Oil,
    Gas,
    Water,
    Injection,
    Pressure,
    Temperature,
}

impl Channel {
    fn is_rate(self) -> bool {
        matches!(
            self,
            Channel::Oil | Channel::Gas | Channel::Water | Channel::Injection
        )
    }

    fn allowed_for(self, kind: WellKind) -> bool {
        match self {
            Channel::Oil | Channel::Gas | Channel::Water => kind == WellKind::Producer,
            Channel::Injection => kind == WellKind::Injector,
            Channel::Pressure | Channel::Temperature => true,
        }
    }

    /// Channels always present for a well of this kind.
    fn required(kind: WellKind) -> &'static [Channel] {
        match kind {
            WellKind::Producer => &[Channel::Oil, Channel::Gas, Channel::Water],
            WellKind::Injector => &[Channel::Injection],
        }
    }
}

/// Time series of a single well. Every channel has one entry per date; `None`
/// marks a missing reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellSeries {
    pub well_id: String,
    pub kind: WellKind,
    pub dates: Vec<NaiveDate>,
    pub channels: BTreeMap<Channel, Vec<Option<f64>>>,
}

impl WellSeries {
    pub fn new(well_id: impl Into<String>, kind: WellKind) -> Self {
        let channels = Channel::required(kind)
            .iter()
            .map(|&c| (c, Vec::new()))
            .collect();
        WellSeries {
            well_id: well_id.into(),
            kind,
            dates: Vec::new(),
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn channel(&self, channel: Channel) -> Option<&[Option<f64>]> {
        self.channels.get(&channel).map(Vec::as_slice)
    }

    /// Oil rate for producers, injection rate for injectors.
    pub fn primary_rate(&self) -> &[Option<f64>] {
        let c = match self.kind {
            WellKind::Producer => Channel::Oil,
            WellKind::Injector => Channel::Injection,
        };
        self.channel(c).unwrap_or(&[])
    }

    /// Checks the structural invariants of the series.
    pub fn check(&self) -> Result<(), String> {
        for w in self.dates.windows(2) {
            if w[1] <= w[0] {
                return Err(format!("{}: dates not strictly increasing", self.well_id));
            }
        }
        for (&c, values) in &self.channels {
            if !c.allowed_for(self.kind) {
                return Err(format!("{}: channel {c:?} not allowed for {}", self.well_id, self.kind));
            }
            if values.len() != self.dates.len() {
                return Err(format!("{}: channel {c:?} length mismatch", self.well_id));
            }
            for v in values.iter().flatten() {
                if !v.is_finite() || (c.is_rate() && *v < 0.0) {
                    return Err(format!("{}: invalid {c:?} value {v}", self.well_id));
                }
            }
        }
        Ok(())
    }
}

/// A field record: all wells plus the shared daily date axis.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProductionHistory {
    pub wells: Vec<WellSeries>,
    pub date_axis: Vec<NaiveDate>,
}

impl ProductionHistory {
    /// Builds a history and derives the date axis as the union of well dates.
    pub fn from_wells(wells: Vec<WellSeries>) -> Self {
        let axis: BTreeSet<NaiveDate> = wells.iter().flat_map(|w| w.dates.iter().copied()).collect();
        ProductionHistory {
            wells,
            date_axis: axis.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.date_axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.date_axis.is_empty()
    }

    pub fn well(&self, id: &str) -> Option<&WellSeries> {
        self.wells.iter().find(|w| w.well_id == id)
    }

    pub fn producers(&self) -> impl Iterator<Item = &WellSeries> {
        self.wells.iter().filter(|w| w.kind == WellKind::Producer)
    }

    pub fn injectors(&self) -> impl Iterator<Item = &WellSeries> {
        self.wells.iter().filter(|w| w.kind == WellKind::Injector)
    }

    /// True when every well is sampled exactly on `date_axis`.
    pub fn is_aligned(&self) -> bool {
        self.wells.iter().all(|w| w.dates == self.date_axis)
    }

    pub fn check(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for w in &self.wells {
            if !seen.insert(w.well_id.as_str()) {
                return Err(format!("duplicate well id {}", w.well_id));
            }
            w.check()?;
        }
        Ok(())
    }

    /// Dense numeric view; fails on missing values or misaligned wells.
    pub fn to_field(&self) -> Result<FieldData, IngestError> {
        FieldData::from_history(self)
    }
}

fn parse_value(raw: &str, line: u64, column: &str) -> Result<Option<f64>, IngestError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw.parse().map_err(|_| IngestError::MalformedRow {
        line,
        reason: format!("{column}: not a number: {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(IngestError::MalformedRow {
            line,
            reason: format!("{column}: non-finite value"),
        });
    }
    Ok(Some(v))
}

fn parse_date(raw: &str, line: u64) -> Result<NaiveDate, IngestError> {
    let bad = || IngestError::MalformedRow {
        line,
        reason: format!("date: expected YYYY-MM-DD, got {raw:?}"),
    };
    if raw.len() != 10 {
        return Err(bad());
    }
    NaiveDate::parse_from_str(raw, DATE_FORMAT).map_err(|_| bad())
}

struct Row {
    date: NaiveDate,
    values: BTreeMap<Channel, Option<f64>>,
}

/// Parses the production CSV into a history. Wells keep the order of their
/// first appearance; rows of each well are sorted by date.
pub fn parse_production_csv<R: Read>(source: R) -> Result<ProductionHistory, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);

    let mut records = reader.records();
    match records.next() {
        None => return Ok(ProductionHistory::default()),
        Some(Err(e)) => {
            return Err(IngestError::MalformedRow {
                line: 1,
                reason: e.to_string(),
            })
        }
        Some(Ok(header)) => {
            let got: Vec<&str> = header.iter().collect();
            let got_first = got.first().map(|s| s.trim_start_matches('\u{feff}'));
            let matches = got.len() == CSV_HEADER.len()
                && got_first == Some(CSV_HEADER[0])
                && got[1..] == CSV_HEADER[1..];
            if !matches {
                return Err(IngestError::MalformedRow {
                    line: 1,
                    reason: format!("unexpected header, expected {}", CSV_HEADER.join(",")),
                });
            }
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut kinds: HashMap<String, WellKind> = HashMap::new();
    let mut rows: HashMap<String, BTreeMap<NaiveDate, Row>> = HashMap::new();

    for record in records {
        let record = record.map_err(|e| IngestError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if record.len() != CSV_HEADER.len() {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", CSV_HEADER.len(), record.len()),
            });
        }
        let date = parse_date(record[0].trim(), line)?;
        let well_id = record[1].trim().to_string();
        if well_id.is_empty() {
            return Err(IngestError::MalformedRow {
                line,
                reason: "empty well_id".into(),
            });
        }
        let kind = WellKind::parse(record[2].trim())?;
        match kinds.get(&well_id) {
            Some(&k) if k != kind => {
                return Err(IngestError::MalformedRow {
                    line,
                    reason: format!("well {well_id} changes type from {k} to {kind}"),
                })
            }
            Some(_) => {}
            None => {
                kinds.insert(well_id.clone(), kind);
                order.push(well_id.clone());
            }
        }

        let columns = [
            (Channel::Oil, 3),
            (Channel::Gas, 4),
            (Channel::Water, 5),
            (Channel::Injection, 6),
            (Channel::Pressure, 7),
            (Channel::Temperature, 8),
        ];
        let mut values = BTreeMap::new();
        for (channel, idx) in columns {
            let v = parse_value(&record[idx], line, CSV_HEADER[idx])?;
            if let Some(x) = v {
                if !channel.allowed_for(kind) {
                    return Err(IngestError::MalformedRow {
                        line,
                        reason: format!("{} must be empty for a {kind}", CSV_HEADER[idx]),
                    });
                }
                if channel.is_rate() && x < 0.0 {
                    return Err(IngestError::MalformedRow {
                        line,
                        reason: format!("{}: negative rate {x}", CSV_HEADER[idx]),
                    });
                }
            }
            if channel.allowed_for(kind) {
                values.insert(channel, v);
            }
        }

        let per_well = rows.entry(well_id.clone()).or_default();
        if per_well.contains_key(&date) {
            return Err(IngestError::DuplicateObservation { date, well: well_id });
        }
        per_well.insert(date, Row { date, values });
    }

    let wells = order
        .into_iter()
        .map(|id| {
            let kind = kinds[&id];
            let rows = rows.remove(&id).unwrap_or_default();
            let mut series = WellSeries::new(id, kind);
            let optional_present = |c: Channel| rows.values().any(|r| r.values.get(&c).copied().flatten().is_some());
            for c in [Channel::Pressure, Channel::Temperature] {
                if optional_present(c) {
                    series.channels.insert(c, Vec::new());
                }
            }
            for row in rows.values() {
                series.dates.push(row.date);
                for (c, values) in series.channels.iter_mut() {
                    values.push(row.values.get(c).copied().flatten());
                }
            }
            series
        })
        .collect();

    Ok(ProductionHistory::from_wells(wells))
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a history in the production CSV format (well-major row order).
pub fn write_production_csv(history: &ProductionHistory) -> String {
    let mut out = String::new();
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    let cols = [
        Channel::Oil,
        Channel::Gas,
        Channel::Water,
        Channel::Injection,
        Channel::Pressure,
        Channel::Temperature,
    ];
    for well in &history.wells {
        for (k, date) in well.dates.iter().enumerate() {
            let mut fields = vec![
                date.format(DATE_FORMAT).to_string(),
                well.well_id.clone(),
                well.kind.as_str().to_string(),
            ];
            for c in cols {
                fields.push(fmt_value(well.channel(c).and_then(|v| v[k])));
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
    }
    out
}

/// How missing days and missing readings are filled by [`resample_daily`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    Zero,
    #[default]
    LinearInterpolate,
    Fail,
}

/// Linear interpolation over missing entries; edges hold the nearest value.
fn interpolate(values: &mut [Option<f64>]) {
    let known: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    if known.is_empty() {
        values.iter_mut().for_each(|v| *v = Some(0.0));
        return;
    }
    let first = known[0];
    let last = *known.last().unwrap();
    let (vf, vl) = (values[first].unwrap(), values[last].unwrap());
    for v in &mut values[..first] {
        *v = Some(vf);
    }
    for v in &mut values[last + 1..] {
        *v = Some(vl);
    }
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (ya, yb) = (values[a].unwrap(), values[b].unwrap());
        for i in a + 1..b {
            let t = (i - a) as f64 / (b - a) as f64;
            values[i] = Some(ya + t * (yb - ya));
        }
    }
}

/// Puts every well on the full daily axis spanning the earliest to the latest
/// date of the history, filling gaps per `gap_policy`.
///
/// Pressure and temperature are always interpolated under the non-failing
/// policies; a zero bottom-hole pressure has no physical meaning.
pub fn resample_daily(
    history: &ProductionHistory,
    gap_policy: GapPolicy,
) -> Result<ProductionHistory, IngestError> {
    let (Some(&start), Some(&end)) = (history.date_axis.first(), history.date_axis.last()) else {
        return Ok(history.clone());
    };
    let n = (end - start).num_days() as usize + 1;
    let axis: Vec<NaiveDate> = (0..n).map(|k| start + Duration::days(k as i64)).collect();

    let mut wells = Vec::with_capacity(history.wells.len());
    for well in &history.wells {
        let mut out = WellSeries {
            well_id: well.well_id.clone(),
            kind: well.kind,
            dates: axis.clone(),
            channels: BTreeMap::new(),
        };
        for (&c, values) in &well.channels {
            let mut dense: Vec<Option<f64>> = vec![None; n];
            for (d, v) in well.dates.iter().zip(values) {
                dense[(*d - start).num_days() as usize] = *v;
            }
            match gap_policy {
                GapPolicy::Fail => {
                    if let Some(k) = dense.iter().position(Option::is_none) {
                        return Err(IngestError::GapFound {
                            well: well.well_id.clone(),
                            date: axis[k],
                        });
                    }
                }
                GapPolicy::Zero if c.is_rate() => {
                    dense.iter_mut().filter(|v| v.is_none()).for_each(|v| *v = Some(0.0));
                }
                _ => interpolate(&mut dense),
            }
            out.channels.insert(c, dense);
        }
        if gap_policy == GapPolicy::Fail && well.dates.len() != n {
            let present: BTreeSet<_> = well.dates.iter().collect();
            let missing = axis.iter().find(|d| !present.contains(d)).copied().unwrap_or(start);
            return Err(IngestError::GapFound {
                well: well.well_id.clone(),
                date: missing,
            });
        }
        wells.push(out);
    }
    Ok(ProductionHistory {
        wells,
        date_axis: axis,
    })
}

fn restrict(history: &ProductionHistory, keep: impl Fn(&NaiveDate) -> bool) -> ProductionHistory {
    let wells = history
        .wells
        .iter()
        .map(|w| {
            let idx: Vec<usize> = (0..w.dates.len()).filter(|&k| keep(&w.dates[k])).collect();
            WellSeries {
                well_id: w.well_id.clone(),
                kind: w.kind,
                dates: idx.iter().map(|&k| w.dates[k]).collect(),
                channels: w
                    .channels
                    .iter()
                    .map(|(&c, v)| (c, idx.iter().map(|&k| v[k]).collect()))
                    .collect(),
            }
        })
        .collect();
    ProductionHistory {
        wells,
        date_axis: history.date_axis.iter().copied().filter(|d| keep(d)).collect(),
    }
}

/// Splits off the last `test_len` days of the date axis.
pub fn split(
    history: &ProductionHistory,
    test_len: usize,
) -> Result<(ProductionHistory, ProductionHistory), IngestError> {
    let len = history.len();
    if test_len == 0 {
        return Err(IngestError::EmptyTestSpan);
    }
    if test_len >= len {
        return Err(IngestError::TestTooLong { test_len, len });
    }
    let cutoff = history.date_axis[len - test_len];
    Ok((restrict(history, |d| *d < cutoff), restrict(history, |d| *d >= cutoff)))
}

/// Inverse of [`split`]: appends `tail` after `head`, well by well.
pub fn concat(head: &ProductionHistory, tail: &ProductionHistory) -> ProductionHistory {
    let wells = head
        .wells
        .iter()
        .map(|w| {
            let mut out = w.clone();
            if let Some(t) = tail.well(&w.well_id) {
                out.dates.extend_from_slice(&t.dates);
                for (c, v) in out.channels.iter_mut() {
                    match t.channel(*c) {
                        Some(tv) => v.extend_from_slice(tv),
                        None => v.extend(std::iter::repeat(None).take(t.len())),
                    }
                }
            }
            out
        })
        .collect();
    let mut axis = head.date_axis.clone();
    axis.extend_from_slice(&tail.date_axis);
    ProductionHistory {
        wells,
        date_axis: axis,
    }
}

/// Dense, gap-free numeric view of a field on a daily axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldData {
    pub dates: Vec<NaiveDate>,
    pub producers: Vec<String>,
    pub injectors: Vec<String>,
    /// `oil[j][t]`: oil rate of producer `j` on day `t`.
    pub oil: Vec<Vec<f64>>,
    /// `injection[i][t]`: water injection rate of injector `i` on day `t`.
    pub injection: Vec<Vec<f64>>,
    /// Bottom-hole pressure per producer, present only when every producer has
    /// a complete pressure record.
    pub pressure: Option<Vec<Vec<f64>>>,
}

impl FieldData {
    pub fn from_history(history: &ProductionHistory) -> Result<Self, IngestError> {
        if !history.is_aligned() {
            return Err(IngestError::NotDense("wells are not aligned on the date axis".into()));
        }
        for w in history.date_axis.windows(2) {
            if (w[1] - w[0]).num_days() != 1 {
                return Err(IngestError::NotDense(format!("date axis not daily at {}", w[1])));
            }
        }
        let dense = |w: &WellSeries, c: Channel| -> Result<Vec<f64>, IngestError> {
            let values = w
                .channel(c)
                .ok_or_else(|| IngestError::NotDense(format!("{}: no {c:?} channel", w.well_id)))?;
            values
                .iter()
                .zip(&w.dates)
                .map(|(v, d)| {
                    v.ok_or_else(|| IngestError::NotDense(format!("{}: missing {c:?} on {d}", w.well_id)))
                })
                .collect()
        };
        let mut producers = Vec::new();
        let mut oil = Vec::new();
        let mut pressure = Some(Vec::new());
        for w in history.producers() {
            producers.push(w.well_id.clone());
            oil.push(dense(w, Channel::Oil)?);
            let p = dense(w, Channel::Pressure).ok();
            pressure = match (pressure, p) {
                (Some(mut all), Some(p)) => {
                    all.push(p);
                    Some(all)
                }
                _ => None,
            };
        }
        let mut injectors = Vec::new();
        let mut injection = Vec::new();
        for w in history.injectors() {
            injectors.push(w.well_id.clone());
            injection.push(dense(w, Channel::Injection)?);
        }
        if producers.is_empty() {
            pressure = None;
        }
        Ok(FieldData {
            dates: history.date_axis.clone(),
            producers,
            injectors,
            oil,
            injection,
            pressure,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn producer_index(&self, well: &str) -> Option<usize> {
        self.producers.iter().position(|p| p == well)
    }

    /// Days `range` of the field.
    pub fn slice(&self, range: std::ops::Range<usize>) -> FieldData {
        let cut = |m: &Vec<Vec<f64>>| m.iter().map(|s| s[range.clone()].to_vec()).collect();
        FieldData {
            dates: self.dates[range.clone()].to_vec(),
            producers: self.producers.clone(),
            injectors: self.injectors.clone(),
            oil: cut(&self.oil),
            injection: cut(&self.injection),
            pressure: self.pressure.as_ref().map(cut),
        }
    }

    /// The first `n` days.
    pub fn prefix(&self, n: usize) -> FieldData {
        self.slice(0..n)
    }

    /// Injection rates for days `range`, per injector.
    pub fn injection_span(&self, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
        self.injection.iter().map(|s| s[range.clone()].to_vec()).collect()
    }

    /// Converts back into a record-level history.
    pub fn to_history(&self) -> ProductionHistory {
        let mut wells = Vec::new();
        for (j, id) in self.producers.iter().enumerate() {
            let mut w = WellSeries::new(id.clone(), WellKind::Producer);
            w.dates = self.dates.clone();
            w.channels.insert(Channel::Oil, self.oil[j].iter().map(|&v| Some(v)).collect());
            w.channels.insert(Channel::Gas, vec![None; self.len()]);
            w.channels.insert(Channel::Water, vec![None; self.len()]);
            if let Some(p) = &self.pressure {
                w.channels.insert(Channel::Pressure, p[j].iter().map(|&v| Some(v)).collect());
            }
            wells.push(w);
        }
        for (i, id) in self.injectors.iter().enumerate() {
            let mut w = WellSeries::new(id.clone(), WellKind::Injector);
            w.dates = self.dates.clone();
            w.channels
                .insert(Channel::Injection, self.injection[i].iter().map(|&v| Some(v)).collect());
            wells.push(w);
        }
        ProductionHistory {
            wells,
            date_axis: self.dates.clone(),
        }
    }
}
