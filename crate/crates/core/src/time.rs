//! Timestamp formatting and calendar-day bucketing.

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use chrono_tz::Europe::Brussels;

/// Calendar day of an instant in the Europe/Brussels timezone.
pub fn brussels_day(ts: DateTime<Utc>) -> NaiveDate {
    ts.with_timezone(&Brussels).date_naive()
}

pub fn format_instant(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Parses an ISO-8601 instant. Accepts any RFC 3339 offset and truncates to
/// whole seconds.
pub fn parse_instant(raw: &str) -> Option<DateTime<Utc>> {
    let ts = DateTime::parse_from_rfc3339(raw.trim()).ok()?.with_timezone(&Utc);
    DateTime::from_timestamp(ts.timestamp(), 0)
}

/// Serde adapter writing instants as `YYYY-MM-DDTHH:MM:SSZ`.
pub mod iso_seconds {
    use chrono::{DateTime, Utc};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_instant(*ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_instant(&raw).ok_or_else(|| D::Error::custom(format!("malformed timestamp {raw:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn late_evening_utc_is_next_day_in_brussels() {
        let ts = parse_instant("2020-11-01T23:30:00Z").unwrap();
        assert_eq!(brussels_day(ts), NaiveDate::from_ymd_opt(2020, 11, 2).unwrap());
        // summer time: UTC+2
        let ts = parse_instant("2020-10-13T22:15:00Z").unwrap();
        assert_eq!(brussels_day(ts), NaiveDate::from_ymd_opt(2020, 10, 14).unwrap());
    }

    #[test]
    fn instants_round_trip_at_second_resolution() {
        let ts = parse_instant("2021-01-05T10:11:12.987+01:00").unwrap();
        assert_eq!(format_instant(ts), "2021-01-05T09:11:12Z");
        assert!(parse_instant("2021-13-05T10:11:12Z").is_none());
    }
}
