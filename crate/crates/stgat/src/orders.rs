//! Order-log CSV: `pickup_time,pickup_lat,pickup_lon,dropoff_lat,dropoff_lon`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta};
use stgat_core::ingest::OrderEvent;

use crate::error::{CliError, Result};

pub const HEADER: [&str; 5] = ["pickup_time", "pickup_lat", "pickup_lon", "dropoff_lat", "dropoff_lon"];
pub const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderRecord {
    pub pickup_time: NaiveDateTime,
    pub pickup_lat: f64,
    pub pickup_lon: f64,
    pub dropoff_lat: f64,
    pub dropoff_lon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOrders {
    /// Sorted by pickup time; ties keep file order.
    pub records: Vec<OrderRecord>,
    pub rows: usize,
    pub malformed: usize,
    /// 1-based data row numbers of the first few malformed rows.
    pub malformed_examples: Vec<usize>,
}

pub fn parse_orders(path: &Path) -> Result<ParsedOrders> {
    let file = File::open(path).map_err(|e| CliError::user(format!("cannot read orders file {}: {e}", path.display())))?;
    parse_orders_from(file).map_err(|e| e.context(format!("in {}", path.display())))
}

pub fn parse_orders_from(reader: impl Read) -> Result<ParsedOrders> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| CliError::user(format!("unreadable CSV header: {e}")))?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != HEADER {
        return Err(CliError::user(format!("expected header `{}`, found `{}`", HEADER.join(","), got.join(","))));
    }
    let mut out = ParsedOrders {
        records: Vec::new(),
        rows: 0,
        malformed: 0,
        malformed_examples: Vec::new(),
    };
    for row in rdr.records() {
        out.rows += 1;
        match row.ok().as_ref().and_then(parse_row) {
            Some(r) => out.records.push(r),
            None => {
                out.malformed += 1;
                if out.malformed_examples.len() < 5 {
                    out.malformed_examples.push(out.rows);
                }
            }
        }
    }
    if out.malformed * 2 > out.rows {
        return Err(CliError::user(format!(
            "{} of {} rows are malformed (first at data rows {:?})",
            out.malformed, out.rows, out.malformed_examples
        )));
    }
    out.records.sort_by_key(|r| r.pickup_time);
    Ok(out)
}

fn parse_row(row: &csv::StringRecord) -> Option<OrderRecord> {
    if row.len() != HEADER.len() {
        return None;
    }
    let num = |k: usize| row[k].trim().parse::<f64>().ok().filter(|x| x.is_finite());
    let r = OrderRecord {
        pickup_time: NaiveDateTime::parse_from_str(row[0].trim(), TIME_FORMAT).ok()?,
        pickup_lat: num(1)?,
        pickup_lon: num(2)?,
        dropoff_lat: num(3)?,
        dropoff_lon: num(4)?,
    };
    let lat_ok = |x: f64| (-90.0..=90.0).contains(&x);
    let lon_ok = |x: f64| (-180.0..=180.0).contains(&x);
    (lat_ok(r.pickup_lat) && lat_ok(r.dropoff_lat) && lon_ok(r.pickup_lon) && lon_ok(r.dropoff_lon)).then_some(r)
}

/// Records re-expressed as seconds since midnight of the first record's date.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvents {
    pub start: NaiveDate,
    /// Monday = 0.
    pub start_weekday: usize,
    pub events: Vec<OrderEvent>,
}

pub fn to_events(records: &[OrderRecord], start: Option<NaiveDate>) -> Result<TimedEvents> {
    let start = match start.or_else(|| records.first().map(|r| r.pickup_time.date())) {
        Some(d) => d,
        None => NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date"),
    };
    let origin = start.and_hms_opt(0, 0, 0).expect("midnight");
    let mut events = Vec::with_capacity(records.len());
    for r in records {
        let secs = (r.pickup_time - origin).num_seconds();
        if secs < 0 {
            return Err(CliError::user(format!("order at {} precedes the dataset start {start}", r.pickup_time)));
        }
        events.push(OrderEvent {
            elapsed_secs: secs as u64,
            pickup_lat: r.pickup_lat,
            pickup_lon: r.pickup_lon,
            dropoff_lat: r.dropoff_lat,
            dropoff_lon: r.dropoff_lon,
        });
    }
    Ok(TimedEvents {
        start,
        start_weekday: start.weekday().num_days_from_monday() as usize,
        events,
    })
}

/// Writes events as order-log CSV with times counted from midnight of `start`.
pub fn write_orders(w: impl Write, start: NaiveDate, events: &[OrderEvent]) -> Result<()> {
    let origin = start.and_hms_opt(0, 0, 0).expect("midnight");
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(HEADER).map_err(CliError::io)?;
    for e in events {
        let t = origin + TimeDelta::seconds(e.elapsed_secs as i64);
        wtr.write_record([
            t.format(TIME_FORMAT).to_string(),
            e.pickup_lat.to_string(),
            e.pickup_lon.to_string(),
            e.dropoff_lat.to_string(),
            e.dropoff_lon.to_string(),
        ])
        .map_err(CliError::io)?;
    }
    wtr.flush().map_err(CliError::io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD: &str = "pickup_time,pickup_lat,pickup_lon,dropoff_lat,dropoff_lon\n";

    #[test]
    fn header_only_is_empty() {
        let p = parse_orders_from(HEAD.as_bytes()).unwrap();
        assert!(p.records.is_empty());
        assert_eq!((p.rows, p.malformed), (0, 0));
    }

    #[test]
    fn one_row() {
        let text = format!("{HEAD}2024-03-04T12:07:00,30.01,120.02,30.03,120.04\n");
        let p = parse_orders_from(text.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 1);
        let r = p.records[0];
        assert_eq!(r.pickup_time.format(TIME_FORMAT).to_string(), "2024-03-04T12:07:00");
        assert_eq!((r.pickup_lat, r.pickup_lon, r.dropoff_lat, r.dropoff_lon), (30.01, 120.02, 30.03, 120.04));
    }

    #[test]
    fn bad_latitude_is_skipped() {
        let text = format!(
            "{HEAD}2024-03-04T12:07:00,abc,120.02,30.03,120.04\n2024-03-04T12:08:00,30,120,30,120\n2024-03-04T12:09:00,30,120,30,120\n"
        );
        let p = parse_orders_from(text.as_bytes()).unwrap();
        assert_eq!((p.records.len(), p.malformed), (2, 1));
        assert_eq!(p.malformed_examples, vec![1]);
    }

    #[test]
    fn mostly_malformed_is_fatal() {
        let text = format!("{HEAD}x,1,2,3,4\ny,1,2,3,4\n2024-03-04T12:08:00,30,120,30,120\n");
        let err = parse_orders_from(text.as_bytes()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("2 of 3"));
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(parse_orders_from("time,lat\n".as_bytes()).is_err());
    }

    #[test]
    fn records_come_back_sorted() {
        let text = format!("{HEAD}2024-03-05T00:00:00,30,120,30,120\n2024-03-04T23:59:59,30,120,30,120\n");
        let p = parse_orders_from(text.as_bytes()).unwrap();
        assert!(p.records[0].pickup_time < p.records[1].pickup_time);
        let t = to_events(&p.records, None).unwrap();
        assert_eq!(t.start, NaiveDate::from_ymd_opt(2024, 3, 4).unwrap());
        assert_eq!(t.start_weekday, 0);
        assert_eq!(t.events[0].elapsed_secs, 86399);
        assert_eq!(t.events[1].elapsed_secs, 86400);
    }

    #[test]
    fn write_then_parse_round_trips() {
        let events = vec![
            OrderEvent { elapsed_secs: 5, pickup_lat: 30.1, pickup_lon: 120.2, dropoff_lat: 30.3, dropoff_lon: 120.4 },
            OrderEvent { elapsed_secs: 90061, pickup_lat: 30.123456789, pickup_lon: 120.0, dropoff_lat: 30.0, dropoff_lon: 120.5 },
        ];
        let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let mut buf = Vec::new();
        write_orders(&mut buf, start, &events).unwrap();
        let p = parse_orders_from(buf.as_slice()).unwrap();
        assert_eq!(to_events(&p.records, Some(start)).unwrap().events, events);
    }
}
