use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{AnalyticsError, Point, TimeSeries};

/// Confirmed cases per day, days strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseCounts {
    points: Vec<(NaiveDate, u64)>,
}

impl CaseCounts {
    /// Sums counts that share a day.
    pub fn from_rows(rows: impl IntoIterator<Item = (NaiveDate, u64)>) -> Self {
        let mut days: BTreeMap<NaiveDate, u64> = BTreeMap::new();
        for (day, n) in rows {
            *days.entry(day).or_default() += n;
        }
        Self {
            points: days.into_iter().collect(),
        }
    }

    pub fn points(&self) -> &[(NaiveDate, u64)] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_series(&self) -> TimeSeries {
        let points = self
            .points
            .iter()
            .map(|&(day, n)| Point { day, value: n as f64 })
            .collect();
        TimeSeries::new("cases", "confirmed cases per day", points).expect("days are increasing")
    }
}

/// Parses a case-count table with `DATE` and `CASES` columns. Other columns
/// (region, age group, …) are ignored and rows sharing a date are summed.
pub fn read_case_counts<R: Read>(reader: R) -> Result<CaseCounts, AnalyticsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(reader);
    let malformed = |line: u64, reason: String| AnalyticsError::Malformed {
        line: line as usize,
        reason,
    };
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(malformed(1, e.to_string())),
    };
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Ok(CaseCounts::default());
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| malformed(1, format!("missing {name} column")))
    };
    let (date_col, cases_col) = (column("DATE")?, column("CASES")?);
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let date = &record[date_col];
        let day = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| malformed(line, format!("bad date {date:?}")))?;
        let cases = &record[cases_col];
        let n: u64 = cases.parse().map_err(|_| malformed(line, format!("bad case count {cases:?}")))?;
        rows.push((day, n));
    }
    Ok(CaseCounts::from_rows(rows))
}

pub fn load_case_counts(path: &Path) -> Result<CaseCounts, AnalyticsError> {
    read_case_counts(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn same_day_rows_are_summed() {
        let c = read_case_counts("DATE,CASES\n2020-11-01,100\n2020-11-01,50\n".as_bytes()).unwrap();
        assert_eq!(c.points(), [(d("2020-11-01"), 150)]);
    }

    #[test]
    fn empty_file() {
        assert!(read_case_counts("".as_bytes()).unwrap().is_empty());
        assert!(read_case_counts("DATE,CASES\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn five_row_fixture() {
        let src = "DATE,PROVINCE,CASES\n\
                   2020-11-03,Antwerpen,7\n\
                   2020-11-02,Limburg,3\n\
                   2020-11-03,Namur,11\n\
                   2020-11-02,Brussels,4\n\
                   2020-11-05,Liège,20\n";
        let c = read_case_counts(src.as_bytes()).unwrap();
        assert_eq!(c.points(), [(d("2020-11-02"), 3 + 4), (d("2020-11-03"), 7 + 11), (d("2020-11-05"), 20)]);
        assert_eq!(c.to_series().len(), 3);
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let err = read_case_counts("DATE,CASES\n2020-11-01,1\n2020-11-02,-4\n".as_bytes()).unwrap_err();
        assert!(matches!(err, AnalyticsError::Malformed { line: 3, .. }), "{err}");
        let err = read_case_counts("DATE,CASES\n2020-13-01,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, AnalyticsError::Malformed { line: 2, .. }));
        let err = read_case_counts("DATE,CASES\n2020-11-01,1\n2020-11-02\n".as_bytes()).unwrap_err();
        assert!(matches!(err, AnalyticsError::Malformed { line: 3, .. }), "{err}");
        assert!(read_case_counts("DAY,N\n2020-11-01,1\n".as_bytes()).is_err());
    }
}
