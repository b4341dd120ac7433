//! Train booking tools: clock lookup, paginated station search, booking.
//!
//! All three are pure given (dataset, fare table, clock, seed); the model
//! carries any state (such as the current results page) in its arguments.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use chrono::{DateTime, Datelike, NaiveDate, NaiveTime, Timelike, Utc};
use chrono_tz::Tz;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::clock::Clock;
use crate::tools::{CallContext, RegistryError, Tool, ToolOutput, ToolRegistry};
use crate::types::{ArgMap, ParamKind, ParamSpec, ToolSpec};

pub const DEFAULT_PAGE_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataError {
    #[error("duplicate station name {0:?}")]
    DuplicateStation(String),
    #[error("invalid fare table: {0}")]
    Fares(String),
}

/// Ordered, duplicate-free list of station names.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StationDataset {
    names: Vec<String>,
}

impl StationDataset {
    pub fn new<I, S>(names: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for n in names {
            let n: String = n.into();
            if !seen.insert(n.clone()) {
                return Err(DataError::DuplicateStation(n));
            }
            out.push(n);
        }
        Ok(Self { names: out })
    }

    /// One station per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, DataError> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    /// Synthetic dataset of `n` names for stress tests.
    pub fn generate(n: usize, seed: u64) -> Self {
        const CITIES: &[&str] = &[
            "Genova", "Roma", "Milano", "Torino", "Napoli", "Firenze", "Bologna", "Venezia", "Bari", "Verona",
        ];
        const SUFFIX: &[&str] = &["Centrale", "Porta", "Nord", "Sud", "Est", "Ovest", "Marittima", "Borgo"];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = (0..n).map(|i| {
            let city = CITIES[rng.gen_range(0..CITIES.len())];
            let suffix = SUFFIX[rng.gen_range(0..SUFFIX.len())];
            format!("{city} {suffix} {i}")
        });
        Self::new(names.collect::<Vec<_>>()).expect("index makes names unique")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Case-insensitive exact lookup, returning the canonical spelling.
    pub fn find(&self, name: &str) -> Option<&str> {
        let wanted = name.trim().to_lowercase();
        self.names
            .iter()
            .find(|n| n.to_lowercase() == wanted)
            .map(String::as_str)
    }

    /// Every whitespace-separated query word must occur in the name,
    /// ignoring case. An empty query matches nothing.
    pub fn matches(&self, query: &str) -> Vec<&str> {
        let words: Vec<String> = query.split_whitespace().map(str::to_lowercase).collect();
        if words.is_empty() {
            return Vec::new();
        }
        self.names
            .iter()
            .filter(|n| {
                let lower = n.to_lowercase();
                words.iter().all(|w| lower.contains(w.as_str()))
            })
            .map(String::as_str)
            .collect()
    }
}

/// Formats one page of results. Numbering is global across pages.
pub fn search_railway_station(dataset: &StationDataset, query: &str, page: i64, page_size: usize) -> String {
    let page_size = page_size.max(1);
    let hits = dataset.matches(query);
    let total = hits.len();
    if total == 0 {
        return "Found 0 total results.".to_string();
    }
    let pages = total.div_ceil(page_size);
    let mut out = format!("Found {total} total results (Page {page} of {pages}):");
    let in_range = page >= 1 && (page as usize) <= pages;
    if !in_range {
        out.push_str("\nNo results on this page.");
        return out;
    }
    let start = (page as usize - 1) * page_size;
    for (i, name) in hits.iter().enumerate().skip(start).take(page_size) {
        out.push_str(&format!("\n{}. {}", i + 1, name));
    }
    out
}

// ---- date/time --------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateTimeInfo {
    pub time: String,
    pub date: String,
    pub day_name: String,
    pub timezone_abbr: String,
}

fn ordinal(day: u32) -> String {
    let suffix = match (day % 10, day % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{day}{suffix}")
}

fn day_period(hour: u32) -> &'static str {
    match hour {
        5..=11 => "in the morning",
        12..=16 => "in the afternoon",
        17..=20 => "in the evening",
        _ => "at night",
    }
}

/// Human-friendly reading of `now`. An unknown or missing timezone silently
/// falls back to `default_tz`.
pub fn get_date_time(now: DateTime<Utc>, timezone: Option<&str>, default_tz: Tz) -> DateTimeInfo {
    let tz = timezone.and_then(|t| t.trim().parse::<Tz>().ok()).unwrap_or(default_tz);
    let local = now.with_timezone(&tz);
    let hour12 = match local.hour() % 12 {
        0 => 12,
        h => h,
    };
    DateTimeInfo {
        time: format!("{}:{:02} {}", hour12, local.minute(), day_period(local.hour())),
        date: format!("{} of {}, {}", ordinal(local.day()), local.format("%B"), local.year()),
        day_name: local.format("%A").to_string(),
        timezone_abbr: local.format("%Z").to_string(),
    }
}

// ---- fares & booking --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FareEntry {
    pub train_name: String,
    pub departure: String,
    pub arrival: String,
    pub carriage: u32,
    pub seat_pattern: String,
    /// Per-passenger price in EUR.
    pub price: f64,
    /// Flat booking fee in EUR.
    #[serde(default)]
    pub fee: f64,
}

/// Fixture keyed by `"{from}|{to}|{band}"`, `"{from}|{to}"` or `"*"`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FareTable {
    entries: BTreeMap<String, FareEntry>,
}

pub fn time_band(time: NaiveTime) -> &'static str {
    match time.hour() {
        5..=11 => "morning",
        12..=17 => "afternoon",
        18..=23 => "evening",
        _ => "night",
    }
}

impl FareTable {
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let table: FareTable = serde_json::from_str(text).map_err(|e| DataError::Fares(e.to_string()))?;
        for (k, e) in &table.entries {
            if e.price < 0.0 || e.fee < 0.0 || !e.price.is_finite() || !e.fee.is_finite() {
                return Err(DataError::Fares(format!("negative or invalid amount for {k:?}")));
            }
        }
        Ok(table)
    }

    pub fn lookup(&self, from: &str, to: &str, time: NaiveTime) -> Option<&FareEntry> {
        let band = time_band(time);
        self.entries
            .get(&format!("{from}|{to}|{band}"))
            .or_else(|| self.entries.get(&format!("{from}|{to}")))
            .or_else(|| self.entries.get("*"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TravelClass {
    #[serde(rename = "1st")]
    First,
    #[serde(rename = "2nd")]
    Second,
}

impl TravelClass {
    /// Accepts `1st`/`2nd` as well as the bare `1`/`2` spelling.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "1st" | "1" => Some(Self::First),
            "2nd" | "2" => Some(Self::Second),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::First => "1st",
            Self::Second => "2nd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BookingRequest {
    pub departure_city_station: String,
    pub destination_city_station: String,
    pub departure_date: String,
    pub departure_time: String,
    pub return_date: Option<String>,
    pub return_time: Option<String>,
    pub passenger_count: i64,
    pub travel_class: String,
}

impl BookingRequest {
    pub fn from_args(args: &ArgMap) -> Self {
        let text = |k: &str| args.get(k).and_then(Value::as_str).map(str::to_string);
        Self {
            departure_city_station: text("departure_city_station").unwrap_or_default(),
            destination_city_station: text("destination_city_station").unwrap_or_default(),
            departure_date: text("departure_date").unwrap_or_default(),
            departure_time: text("departure_time").unwrap_or_default(),
            return_date: text("return_date"),
            return_time: text("return_time"),
            passenger_count: args.get("passenger_count").and_then(Value::as_i64).unwrap_or(0),
            travel_class: text("travel_class").unwrap_or_default(),
        }
    }
}

fn cents(eur: f64) -> i64 {
    (eur * 100.0).round() as i64
}

fn money(cents: i64) -> String {
    format!("{}.{:02}", cents / 100, cents % 100)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn booking_error(reason: impl Into<String>) -> String {
    json!({"status": "error", "reason": reason.into()}).to_string()
}

/// Books a ticket, returning confirmation or error JSON text.
///
/// PNR and control code come from a ChaCha stream seeded by `seed` mixed with
/// the request, so equal inputs always produce the same booking.
pub fn book_train_ticket(
    req: &BookingRequest,
    now: DateTime<Utc>,
    tz: Tz,
    dataset: &StationDataset,
    fares: &FareTable,
    seed: u64,
) -> String {
    if req.passenger_count < 1 {
        return booking_error("passenger_count must be at least 1");
    }
    let Some(class) = TravelClass::parse(&req.travel_class) else {
        return booking_error(format!(
            "travel_class must be '1st' or '2nd', got {:?}",
            req.travel_class
        ));
    };
    let Ok(date) = NaiveDate::parse_from_str(&req.departure_date, "%Y-%m-%d") else {
        return booking_error("malformed departure_date, expected YYYY-MM-DD");
    };
    let Ok(time) = NaiveTime::parse_from_str(&req.departure_time, "%H:%M") else {
        return booking_error("malformed departure_time, expected HH:MM");
    };
    if let Some(d) = &req.return_date {
        if NaiveDate::parse_from_str(d, "%Y-%m-%d").is_err() {
            return booking_error("malformed return_date, expected YYYY-MM-DD");
        }
    }
    if let Some(t) = &req.return_time {
        if NaiveTime::parse_from_str(t, "%H:%M").is_err() {
            return booking_error("malformed return_time, expected HH:MM");
        }
    }
    let today = now.with_timezone(&tz).date_naive();
    if date < today {
        return booking_error("departure date in the past");
    }
    let Some(from) = dataset.find(&req.departure_city_station) else {
        return booking_error(format!("unknown station: {}", req.departure_city_station));
    };
    let Some(to) = dataset.find(&req.destination_city_station) else {
        return booking_error(format!("unknown station: {}", req.destination_city_station));
    };
    let Some(fare) = fares.lookup(from, to, time) else {
        return booking_error(format!("no train found from {from} to {to}"));
    };

    let key = format!("{from}|{to}|{date}|{time}|{}|{}", req.passenger_count, class.as_str());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(key.as_bytes()));
    const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    let pnr: String = (0..6).map(|_| ALNUM[rng.gen_range(0..ALNUM.len())] as char).collect();
    let control_code = format!("{:06}", rng.gen_range(0..1_000_000u32));

    let price = cents(fare.price);
    let total = price * req.passenger_count + cents(fare.fee);

    let mut out = serde_json::Map::new();
    out.insert("status".into(), json!("confirmed"));
    out.insert("pnr".into(), json!(pnr));
    out.insert("control_code".into(), json!(control_code));
    out.insert("departure_city_station".into(), json!(from));
    out.insert("destination_city_station".into(), json!(to));
    out.insert("departure_date".into(), json!(date.format("%Y-%m-%d").to_string()));
    out.insert("departure_time".into(), json!(time.format("%H:%M").to_string()));
    if let Some(d) = &req.return_date {
        out.insert("return_date".into(), json!(d));
    }
    if let Some(t) = &req.return_time {
        out.insert("return_time".into(), json!(t));
    }
    out.insert("passenger_count".into(), json!(req.passenger_count));
    out.insert("travel_class".into(), json!(class.as_str()));
    out.insert("train_name".into(), json!(fare.train_name));
    out.insert("train_departure".into(), json!(fare.departure));
    out.insert("train_arrival".into(), json!(fare.arrival));
    out.insert("carriage".into(), json!(fare.carriage));
    out.insert("seat".into(), json!(fare.seat_pattern));
    out.insert("ticket_price".into(), json!(money(price)));
    out.insert("total_amount".into(), json!(money(total)));
    out.insert("currency".into(), json!("EUR"));
    Value::Object(out).to_string()
}

// ---- tool wiring ------------------------------------------------------------

/// Shared state behind the three booking tools.
#[derive(Clone)]
pub struct TrainBackend {
    pub dataset: Arc<StationDataset>,
    pub fares: Arc<FareTable>,
    pub clock: Arc<dyn Clock>,
    pub default_tz: Tz,
    pub seed: u64,
    pub page_size: usize,
}

pub fn get_date_time_spec() -> ToolSpec {
    ToolSpec::new(
        "get_date_time",
        "Convert the current moment into human-friendly datetime strings with timezone support.",
    )
    .param(ParamSpec::new(
        "timezone",
        ParamKind::String,
        "IANA timezone string (e.g. 'Europe/Rome', 'Asia/Tokyo'); the system default is used if missing or invalid.",
        false,
    ))
    .returns("Object with keys time, date, day_name, timezone_abbr.")
}

pub fn search_railway_station_spec() -> ToolSpec {
    ToolSpec::new(
        "search_railway_station",
        "Search railway station names and display the results in a paginated format. Matches are case-insensitive.",
    )
    .param(ParamSpec::new(
        "query",
        ParamKind::String,
        "The search query, one or more space-separated words.",
        true,
    ))
    .param(ParamSpec::new(
        "page",
        ParamKind::Integer,
        "The page number to display (1-based). Defaults to 1.",
        false,
    ))
    .returns("Formatted result list with total count and page position.")
}

pub fn book_train_ticket_spec() -> ToolSpec {
    let text = |name: &str, desc: &str, required: bool| ParamSpec::new(name, ParamKind::String, desc, required);
    ToolSpec::new(
        "book_train_ticket",
        "Book a train ticket with the specified details and return a JSON booking confirmation or error.",
    )
    .param(text(
        "departure_city_station",
        "Name of the station where the journey begins.",
        true,
    ))
    .param(text(
        "destination_city_station",
        "Name of the station where the journey ends.",
        true,
    ))
    .param(text("departure_date", "Departure date in YYYY-MM-DD format.", true))
    .param(text("departure_time", "Desired departure time in HH:MM format.", true))
    .param(ParamSpec::new(
        "passenger_count",
        ParamKind::Integer,
        "Number of passengers.",
        true,
    ))
    .param(
        text("travel_class", "Travel class: '1st' or '2nd'.", true)
            .with_enum(&["1st", "2nd"])
            .with_alias("1", "1st")
            .with_alias("2", "2nd"),
    )
    .param(text(
        "return_date",
        "Return date in YYYY-MM-DD format, omitted for one-way trips.",
        false,
    ))
    .param(text("return_time", "Desired return time in HH:MM format.", false))
    .returns("JSON text with status 'confirmed' and ticket details, or status 'error' with a reason.")
}

struct GetDateTime(TrainBackend, ToolSpec);
struct SearchStation(TrainBackend, ToolSpec);
struct BookTicket(TrainBackend, ToolSpec);

impl Tool for GetDateTime {
    fn spec(&self) -> &ToolSpec {
        &self.1
    }

    fn invoke(&self, args: &ArgMap, _: &CallContext<'_>) -> ToolOutput {
        let tz = args.get("timezone").and_then(Value::as_str);
        let info = get_date_time(self.0.clock.now(), tz, self.0.default_tz);
        ToolOutput::text(serde_json::to_string(&info).expect("plain strings"))
    }
}

impl Tool for SearchStation {
    fn spec(&self) -> &ToolSpec {
        &self.1
    }

    fn invoke(&self, args: &ArgMap, _: &CallContext<'_>) -> ToolOutput {
        let query = args.get("query").and_then(Value::as_str).unwrap_or_default();
        let page = args.get("page").and_then(Value::as_i64).unwrap_or(1);
        ToolOutput::text(search_railway_station(&self.0.dataset, query, page, self.0.page_size))
    }
}

impl Tool for BookTicket {
    fn spec(&self) -> &ToolSpec {
        &self.1
    }

    fn invoke(&self, args: &ArgMap, _: &CallContext<'_>) -> ToolOutput {
        let req = BookingRequest::from_args(args);
        let b = &self.0;
        let out = book_train_ticket(&req, b.clock.now(), b.default_tz, &b.dataset, &b.fares, b.seed);
        // Errors travel in-band as JSON; flag them so logs can tell.
        let is_error = out.starts_with(r#"{"status":"error""#);
        ToolOutput {
            is_error,
            ..ToolOutput::text(out)
        }
    }
}

impl TrainBackend {
    /// Registers the three tools plus the `buy_train_ticket` alias.
    pub fn register_into(&self, registry: &mut ToolRegistry) -> Result<(), RegistryError> {
        registry.register(GetDateTime(self.clone(), get_date_time_spec()))?;
        registry.register(SearchStation(self.clone(), search_railway_station_spec()))?;
        registry.register(BookTicket(self.clone(), book_train_ticket_spec()))?;
        registry.alias("buy_train_ticket", "book_train_ticket")
    }
}
