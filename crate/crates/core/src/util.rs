//! Small helpers shared across modules: seed derivation, civil dates, and
//! atomic file output.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};

/// Days between 0001-01-01 (CE day 1) and 1970-01-01.
const UNIX_EPOCH_CE_DAY: i32 = 719_163;

/// Mixes a master seed with a component index into an independent child seed.
///
/// Finalizer of SplitMix64 applied to the pair, so child seeds depend only on
/// `(master, index)` and never on scheduling order.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parses a strict `YYYY-MM-DD` date into days since 1970-01-01.
pub fn parse_day(s: &str) -> Option<i64> {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return None;
    }
    if !b
        .iter()
        .enumerate()
        .all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
    {
        return None;
    }
    let date = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    Some(i64::from(date.num_days_from_ce() - UNIX_EPOCH_CE_DAY))
}

fn to_date(day: i64) -> NaiveDate {
    let ce = i32::try_from(day + i64::from(UNIX_EPOCH_CE_DAY)).expect("day out of range");
    NaiveDate::from_num_days_from_ce_opt(ce).expect("day out of range")
}

/// Formats a day number as `YYYY-MM-DD`.
pub fn format_day(day: i64) -> String {
    to_date(day).format("%Y-%m-%d").to_string()
}

/// Proleptic Gregorian month index: `year * 12 + (month - 1)`.
pub fn month_index(day: i64) -> i64 {
    let d = to_date(day);
    i64::from(d.year()) * 12 + i64::from(d.month0())
}

/// Formats a month index as `YYYY-MM`.
pub fn format_month(month: i64) -> String {
    format!(
        "{:04}-{:02}",
        month.div_euclid(12),
        month.rem_euclid(12) + 1
    )
}

/// First day (days since epoch) of a month index.
pub fn month_start_day(month: i64) -> i64 {
    let year = i32::try_from(month.div_euclid(12)).expect("month out of range");
    let m = u32::try_from(month.rem_euclid(12) + 1).expect("month in 1..=12");
    let d = NaiveDate::from_ymd_opt(year, m, 1).expect("valid month");
    i64::from(d.num_days_from_ce() - UNIX_EPOCH_CE_DAY)
}

/// Writes `contents` to `path` through a sibling temp file and a rename, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Civil-from-days inverse (Hinnant's algorithm), independent of chrono.
    fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
        let y = if m <= 2 { y - 1 } else { y };
        let era = y.div_euclid(400);
        let yoe = y - era * 400;
        let mp = (m + 9) % 12;
        let doy = (153 * mp + 2) / 5 + d - 1;
        let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
        era * 146_097 + doe - 719_468
    }

    #[test]
    fn day_numbers_match_civil_arithmetic() {
        assert_eq!(days_from_civil(2018, 3, 5), 17_595);
        assert_eq!(parse_day("2018-03-05"), Some(17_595));
        assert_eq!(parse_day("1970-01-01"), Some(0));
        for (y, m, d) in [(2000, 2, 29), (2012, 12, 31), (2021, 7, 4), (1999, 1, 1)] {
            let s = format!("{y:04}-{m:02}-{d:02}");
            assert_eq!(parse_day(&s), Some(days_from_civil(y, m, d)), "{s}");
            assert_eq!(format_day(days_from_civil(y, m, d)), s);
        }
    }

    #[test]
    fn rejects_loose_dates() {
        for bad in [
            "2018-3-05",
            "2018/03/05",
            "2018-02-30",
            "18-03-05",
            "2018-03-05T00",
            "",
        ] {
            assert_eq!(parse_day(bad), None, "{bad}");
        }
    }

    #[test]
    fn months() {
        let day = parse_day("2013-01-17").unwrap();
        assert_eq!(format_month(month_index(day)), "2013-01");
        assert_eq!(
            month_start_day(month_index(day)),
            parse_day("2013-01-01").unwrap()
        );
        assert_eq!(
            month_index(parse_day("2012-12-31").unwrap()) + 1,
            month_index(day)
        );
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..64).map(|i| derive_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), a.len());
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}
