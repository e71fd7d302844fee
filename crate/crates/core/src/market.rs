//! Exogenous hourly time series: spot prices, distribution tariffs,
//! household baseload and carbon intensity.
//!
//! Every series is stored in UTC with a fixed one-hour step. Hourly kWh
//! readings are read as a constant kW level for the whole hour. Tariff bands
//! are defined on local clock hours; the conversion from UTC uses a fixed
//! offset (no daylight-saving modelling).

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// A contiguous hourly series starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    start: DateTime<Utc>,
    values: Vec<f64>,
}

impl HourlySeries {
    pub fn new(start: DateTime<Utc>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("hourly series must not be empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at hour {i}")));
        }
        Ok(Self { start, values })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    /// Exclusive end of coverage.
    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::hours(self.values.len() as i64)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the hour containing `t`, if covered.
    pub fn hour_index(&self, t: DateTime<Utc>) -> Option<usize> {
        if t < self.start {
            return None;
        }
        let idx = (t - self.start).num_minutes().div_euclid(60) as usize;
        (idx < self.values.len()).then_some(idx)
    }

    pub fn value_at(&self, t: DateTime<Utc>) -> Option<f64> {
        self.hour_index(t).map(|i| self.values[i])
    }

    pub fn stats(&self) -> SeriesStats {
        let n = self.values.len();
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &v in &self.values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        SeriesStats {
            rows: n,
            min,
            max,
            mean: sum / n as f64,
        }
    }

    fn require_non_negative(&self, label: &str) -> Result<()> {
        match self.values.iter().position(|&v| v < 0.0) {
            Some(i) => Err(Error::Data(format!(
                "{label}: negative value {} at hour {i}",
                self.values[i]
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesStats {
    pub rows: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl fmt::Display for SeriesStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rows={} min={:.4} max={:.4} mean={:.4}",
            self.rows, self.min, self.max, self.mean
        )
    }
}

/// Hourly day-ahead spot prices in DKK/kWh. Negative prices are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries(pub HourlySeries);

/// Aggregated non-EV household consumption in kW, one value per hour.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseloadProfile(pub HourlySeries);

/// Hourly grid carbon intensity in kg CO2-eq/kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct CarbonIntensitySeries(pub HourlySeries);

impl PriceSeries {
    pub fn new(series: HourlySeries) -> Self {
        Self(series)
    }
}

impl BaseloadProfile {
    pub fn new(series: HourlySeries) -> Result<Self> {
        series.require_non_negative("baseload")?;
        Ok(Self(series))
    }
}

impl CarbonIntensitySeries {
    pub fn new(series: HourlySeries) -> Result<Self> {
        series.require_non_negative("carbon intensity")?;
        Ok(Self(series))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Spot,
    Baseload,
    Intensity,
}

impl fmt::Display for SeriesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeriesKind::Spot => "spot",
            SeriesKind::Baseload => "baseload",
            SeriesKind::Intensity => "intensity",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MarketSeries {
    Spot(PriceSeries),
    Baseload(BaseloadProfile),
    Intensity(CarbonIntensitySeries),
}

impl MarketSeries {
    pub fn hourly(&self) -> &HourlySeries {
        match self {
            MarketSeries::Spot(s) => &s.0,
            MarketSeries::Baseload(s) => &s.0,
            MarketSeries::Intensity(s) => &s.0,
        }
    }
}

pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|n| Utc.from_utc_datetime(&n))
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

/// Parse a `timestamp,value` CSV with a header line into a contiguous hourly series.
pub fn read_hourly_csv<R: Read>(reader: R, source_name: &str) -> Result<HourlySeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut start = None;
    let mut prev: Option<DateTime<Utc>> = None;
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            row,
            message,
        };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        if rec.len() < 2 {
            return Err(parse_err(format!("expected 2 fields, found {}", rec.len())));
        }
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| parse_err(format!("unparsable timestamp {:?}", &rec[0])))?;
        let value: f64 = rec[1]
            .parse()
            .map_err(|_| parse_err(format!("unparsable value {:?}", &rec[1])))?;
        if !value.is_finite() {
            return Err(parse_err(format!("non-finite value {:?}", &rec[1])));
        }
        if let Some(p) = prev {
            if ts <= p {
                return Err(Error::NonMonotonic {
                    source_name: source_name.to_string(),
                    row,
                    previous: format_timestamp(p),
                    current: format_timestamp(ts),
                });
            }
            if ts - p != Duration::hours(1) {
                return Err(Error::Gap {
                    source_name: source_name.to_string(),
                    row,
                    previous: format_timestamp(p),
                    current: format_timestamp(ts),
                });
            }
        } else {
            start = Some(ts);
        }
        prev = Some(ts);
        values.push(value);
    }
    let start = start.ok_or_else(|| Error::Parse {
        source_name: source_name.to_string(),
        row: 0,
        message: "no data rows".into(),
    })?;
    HourlySeries::new(start, values)
}

/// Load one of the three hourly market inputs from a CSV file.
pub fn load_series_csv(path: &Path, kind: SeriesKind) -> Result<MarketSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let series = read_hourly_csv(file, &path.display().to_string())?;
    Ok(match kind {
        SeriesKind::Spot => MarketSeries::Spot(PriceSeries::new(series)),
        SeriesKind::Baseload => MarketSeries::Baseload(BaseloadProfile::new(series)?),
        SeriesKind::Intensity => MarketSeries::Intensity(CarbonIntensitySeries::new(series)?),
    })
}

pub fn load_spot_csv(path: &Path) -> Result<PriceSeries> {
    match load_series_csv(path, SeriesKind::Spot)? {
        MarketSeries::Spot(s) => Ok(s),
        _ => unreachable!(),
    }
}

pub fn load_baseload_csv(path: &Path) -> Result<BaseloadProfile> {
    match load_series_csv(path, SeriesKind::Baseload)? {
        MarketSeries::Baseload(s) => Ok(s),
        _ => unreachable!(),
    }
}

pub fn load_intensity_csv(path: &Path) -> Result<CarbonIntensitySeries> {
    match load_series_csv(path, SeriesKind::Intensity)? {
        MarketSeries::Intensity(s) => Ok(s),
        _ => unreachable!(),
    }
}

pub fn write_hourly_csv<W: Write>(series: &HourlySeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Data(format!("csv write: {e}"));
    w.write_record(["timestamp", "value"]).map_err(to_err)?;
    for (i, v) in series.values.iter().enumerate() {
        let ts = series.start + Duration::hours(i as i64);
        w.write_record([format_timestamp(ts), v.to_string()])
            .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("csv flush: {e}")))
}

pub fn write_hourly_csv_file(series: &HourlySeries, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_hourly_csv(series, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Summer,
}

/// One rate band covering local hours `[from_hour, to_hour)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TariffBand {
    pub from_hour: u32,
    pub to_hour: u32,
    /// øre/kWh, resolved to 0.01 øre
    pub rate_ore: f64,
}

/// Time-of-use distribution tariff with a winter and a summer rate table.
///
/// Winter runs from `winter_start` through `winter_end` inclusive (month, day),
/// wrapping over the new year when `winter_start` is later in the year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffSchedule {
    pub winter_start: (u32, u32),
    pub winter_end: (u32, u32),
    pub utc_offset_hours: i32,
    pub winter: Vec<TariffBand>,
    pub summer: Vec<TariffBand>,
}

impl Default for TariffSchedule {
    /// Low-voltage C-customer time-of-use tariff: 9.04 øre at night, peak
    /// 81.31 (winter) / 35.24 (summer) between 17:00 and 21:00.
    fn default() -> Self {
        let bands = |day: f64, peak: f64| {
            vec![
                TariffBand { from_hour: 0, to_hour: 6, rate_ore: 9.04 },
                TariffBand { from_hour: 6, to_hour: 17, rate_ore: day },
                TariffBand { from_hour: 17, to_hour: 21, rate_ore: peak },
                TariffBand { from_hour: 21, to_hour: 24, rate_ore: day },
            ]
        };
        Self {
            winter_start: (10, 1),
            winter_end: (3, 31),
            utc_offset_hours: 1,
            winter: bands(27.10, 81.31),
            summer: bands(13.55, 35.24),
        }
    }
}

impl TariffSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, bands) in [("winter", &self.winter), ("summer", &self.summer)] {
            let mut sorted = bands.clone();
            sorted.sort_by_key(|b| b.from_hour);
            let mut cursor = 0;
            for b in &sorted {
                if b.from_hour != cursor || b.to_hour <= b.from_hour {
                    return Err(Error::Config(format!(
                        "{name} tariff bands must partition [0,24) without overlap (band {}-{})",
                        b.from_hour, b.to_hour
                    )));
                }
                if !(b.rate_ore >= 0.0) {
                    return Err(Error::Config(format!("{name} tariff rate must be >= 0")));
                }
                cursor = b.to_hour;
            }
            if cursor != 24 {
                return Err(Error::Config(format!(
                    "{name} tariff bands end at {cursor}, expected 24"
                )));
            }
        }
        for (m, d) in [self.winter_start, self.winter_end] {
            if NaiveDate::from_ymd_opt(2024, m, d).is_none() {
                return Err(Error::Config(format!("invalid season date {m:02}-{d:02}")));
            }
        }
        Ok(())
    }

    pub fn to_local(&self, t: DateTime<Utc>) -> NaiveDateTime {
        t.naive_utc() + Duration::hours(self.utc_offset_hours as i64)
    }

    pub fn season_of(&self, date: NaiveDate) -> Season {
        let md = (date.month(), date.day());
        let in_winter = if self.winter_start <= self.winter_end {
            md >= self.winter_start && md <= self.winter_end
        } else {
            md >= self.winter_start || md <= self.winter_end
        };
        if in_winter {
            Season::Winter
        } else {
            Season::Summer
        }
    }

    /// Rate in DKK/kWh for a local wall-clock time.
    pub fn tariff_at_local(&self, local: NaiveDateTime) -> f64 {
        let bands = match self.season_of(local.date()) {
            Season::Winter => &self.winter,
            Season::Summer => &self.summer,
        };
        let hour = local.hour();
        bands
            .iter()
            .find(|b| hour >= b.from_hour && hour < b.to_hour)
            .map(|b| (b.rate_ore * 100.0).round() / 10_000.0)
            .unwrap_or(0.0)
    }

    /// Rate in DKK/kWh for a UTC instant.
    pub fn tariff_at(&self, t: DateTime<Utc>) -> f64 {
        self.tariff_at_local(self.to_local(t))
    }
}

/// Spot price plus distribution tariff for the hour containing `t`.
pub fn total_price(spot: &PriceSeries, schedule: &TariffSchedule, t: DateTime<Utc>) -> Result<f64> {
    let s = spot.0.value_at(t).ok_or_else(|| Error::Coverage {
        series: "spot".into(),
        detail: format!("{} outside spot coverage", format_timestamp(t)),
    })?;
    Ok(s + schedule.tariff_at(t))
}

/// Perfect day-ahead forecast: the recorded values of `day`.
pub fn baseload_forecast(profile: &BaseloadProfile, day: NaiveDate) -> Result<[f64; 24]> {
    let start = Utc.from_utc_datetime(&day.and_hms_opt(0, 0, 0).expect("midnight"));
    let idx = profile.0.hour_index(start).ok_or_else(|| Error::Coverage {
        series: "baseload".into(),
        detail: format!("day {day} not covered"),
    })?;
    baseload_forecast_at(profile, idx).ok_or_else(|| Error::Coverage {
        series: "baseload".into(),
        detail: format!("day {day} only partially covered"),
    })
}

/// 24 hourly values starting at hour index `first_hour`.
pub fn baseload_forecast_at(profile: &BaseloadProfile, first_hour: usize) -> Option<[f64; 24]> {
    let slice = profile.0.values().get(first_hour..first_hour + 24)?;
    let mut out = [0.0; 24];
    out.copy_from_slice(slice);
    Some(out)
}

/// Total price (spot + tariff) for each simulation hour, aligned positionally:
/// simulation hour `i` uses spot value `i` and the tariff of calendar time
/// `origin + i` hours.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyPrices {
    total: Vec<f64>,
    tariff: Vec<f64>,
}

impl HourlyPrices {
    pub fn build(
        spot: &PriceSeries,
        schedule: &TariffSchedule,
        origin: DateTime<Utc>,
        hours: usize,
    ) -> Result<Self> {
        if spot.0.len() < hours {
            return Err(Error::Coverage {
                series: "spot".into(),
                detail: format!("{} hours needed, {} available", hours, spot.0.len()),
            });
        }
        let tariff: Vec<f64> = (0..hours)
            .map(|h| schedule.tariff_at(origin + Duration::hours(h as i64)))
            .collect();
        let total = tariff
            .iter()
            .zip(spot.0.values())
            .map(|(t, s)| t + s)
            .collect();
        Ok(Self { total, tariff })
    }

    /// Flat per-hour totals with no tariff split (tests and toy instances).
    pub fn from_totals(total: Vec<f64>) -> Self {
        let tariff = vec![0.0; total.len()];
        Self { total, tariff }
    }

    pub fn hours(&self) -> usize {
        self.total.len()
    }

    /// DKK/kWh for hour index `hour`. Hours past the end repeat the last value.
    pub fn hour_price(&self, hour: usize) -> f64 {
        self.total[hour.min(self.total.len() - 1)]
    }

    pub fn minute_price(&self, minute: usize) -> f64 {
        self.hour_price(minute / 60)
    }

    pub fn hour_tariff(&self, hour: usize) -> f64 {
        self.tariff[hour.min(self.tariff.len() - 1)]
    }
}
