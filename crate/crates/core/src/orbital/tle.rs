//! Two-line element set ingestion.
//!
//! Only the mean elements needed by the circular propagator are kept. The
//! argument of perigee is folded into the mean anomaly, which for a circular
//! orbit gives the argument of latitude at epoch.

use std::f64::consts::PI;

use super::{OrbitalElements, OrbitalError, MU_EARTH};

const LINE_LEN: usize = 69;

#[derive(Debug, Clone, PartialEq)]
pub struct TleRecord {
    pub name: String,
    pub catalog_number: u32,
    pub elements: OrbitalElements,
}

/// Outcome of parsing a TLE file: the usable records plus one diagnostic per
/// skipped record.
#[derive(Debug, Clone, Default)]
pub struct TleParse {
    pub records: Vec<TleRecord>,
    pub skipped: Vec<TleIssue>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TleIssue {
    ChecksumError { line_number: usize, expected: u32, found: u32 },
    Malformed { line_number: usize, reason: String },
}

impl TleParse {
    pub fn checksum_errors(&self) -> usize {
        self.skipped
            .iter()
            .filter(|i| matches!(i, TleIssue::ChecksumError { .. }))
            .count()
    }
}

/// Modulo-10 checksum over the first 68 columns: digits count their value,
/// minus signs count one.
pub fn checksum(line: &str) -> u32 {
    line.bytes()
        .take(LINE_LEN - 1)
        .map(|b| match b {
            b'0'..=b'9' => (b - b'0') as u32,
            b'-' => 1,
            _ => 0,
        })
        .sum::<u32>()
        % 10
}

/// Semi-major axis (km) from mean motion in revolutions per day.
pub fn semi_major_axis_from_mean_motion(rev_per_day: f64) -> f64 {
    let n = rev_per_day * 2.0 * PI / 86_400.0;
    (MU_EARTH / (n * n)).cbrt()
}

fn field(line: &str, from: usize, to: usize) -> Result<f64, String> {
    // columns are 1-based inclusive
    line.get(from - 1..to)
        .ok_or_else(|| format!("line too short for columns {from}-{to}"))?
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("columns {from}-{to}: {e}"))
}

fn check_line(line: &str, number: char, line_number: usize) -> Result<(), TleIssue> {
    if line.len() < LINE_LEN || !line.is_ascii() {
        return Err(TleIssue::Malformed {
            line_number,
            reason: format!("expected {LINE_LEN} ASCII columns, found {}", line.len()),
        });
    }
    if !line.starts_with(number) || line.as_bytes()[1] != b' ' {
        return Err(TleIssue::Malformed {
            line_number,
            reason: format!("expected line number {number}"),
        });
    }
    let found = (line.as_bytes()[LINE_LEN - 1] as char).to_digit(10).ok_or(TleIssue::Malformed {
        line_number,
        reason: "checksum column is not a digit".into(),
    })?;
    let expected = checksum(line);
    if expected != found {
        return Err(TleIssue::ChecksumError {
            line_number,
            expected,
            found,
        });
    }
    Ok(())
}

fn parse_pair(name: &str, l1: &str, l2: &str, line_number: usize) -> Result<TleRecord, TleIssue> {
    check_line(l1, '1', line_number)?;
    check_line(l2, '2', line_number + 1)?;
    let malformed = |reason: String| TleIssue::Malformed {
        line_number: line_number + 1,
        reason,
    };
    let catalog_number = l2[2..7].trim().parse::<u32>().map_err(|e| malformed(e.to_string()))?;
    let inclination = field(l2, 9, 16).map_err(malformed)?;
    let raan = field(l2, 18, 25).map_err(malformed)?;
    let arg_perigee = field(l2, 35, 42).map_err(malformed)?;
    let mean_anomaly = field(l2, 44, 51).map_err(malformed)?;
    let mean_motion = field(l2, 53, 63).map_err(malformed)?;
    if mean_motion <= 0.0 {
        return Err(malformed(format!("non-positive mean motion {mean_motion}")));
    }
    let a = semi_major_axis_from_mean_motion(mean_motion);
    let elements = OrbitalElements::new(a, inclination, raan, arg_perigee + mean_anomaly, 0.0)
        .map_err(|e| malformed(e.to_string()))?;
    let name = if name.is_empty() {
        format!("{catalog_number}")
    } else {
        name.to_string()
    };
    Ok(TleRecord {
        name,
        catalog_number,
        elements,
    })
}

/// Parses concatenated two- or three-line element sets. Records that fail the
/// checksum or do not parse are skipped and reported in [`TleParse::skipped`].
pub fn parse_tle(text: &str) -> Result<TleParse, OrbitalError> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end()).collect();
    let mut out = TleParse::default();
    let mut pending_name = String::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if line.starts_with("1 ") && lines.get(i + 1).is_some_and(|n| n.starts_with("2 ")) {
            match parse_pair(&pending_name, line, lines[i + 1], i + 1) {
                Ok(rec) => out.records.push(rec),
                Err(issue) => {
                    log::warn!("skipping TLE record at line {}: {issue:?}", i + 1);
                    out.skipped.push(issue);
                }
            }
            pending_name.clear();
            i += 2;
            continue;
        }
        if line.starts_with("1 ") || line.starts_with("2 ") {
            out.skipped.push(TleIssue::Malformed {
                line_number: i + 1,
                reason: "orphan element line".into(),
            });
        } else if !line.trim().is_empty() {
            let name = line.trim();
            pending_name = name.strip_prefix("0 ").unwrap_or(name).trim().to_string();
        }
        i += 1;
    }
    if out.records.is_empty() {
        return Err(OrbitalError::EmptyInput);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ISS: &str = "ISS (ZARYA)
1 25544U 98067A   08264.51782528 -.00002182  00000-0 -11606-4 0  2927
2 25544  51.6416 247.4627 0006703 130.5360 325.0288 15.72125391563537";

    fn with_checksum(body: &str) -> String {
        assert_eq!(body.len(), 68);
        format!("{body}{}", checksum(body))
    }

    fn synthetic(name: &str, catalog: u32, mean_motion: f64) -> String {
        let l1 = with_checksum(&format!(
            "1 {catalog:05}U 24001A   24001.00000000  .00000000  00000-0  00000-0 0  999"
        ));
        let l2 = with_checksum(&format!(
            "2 {catalog:05}  53.0000 120.0000 0001000  90.0000  10.0000 {mean_motion:11.8}    1"
        ));
        format!("{name}\n{l1}\n{l2}\n")
    }

    #[test]
    fn reference_checksums() {
        let lines: Vec<&str> = ISS.lines().collect();
        assert_eq!(checksum(lines[1]), 7);
        assert_eq!(checksum(lines[2]), 7);
    }

    #[test]
    fn iss_record() {
        let parsed = parse_tle(ISS).unwrap();
        assert_eq!(parsed.records.len(), 1);
        let r = &parsed.records[0];
        assert_eq!(r.name, "ISS (ZARYA)");
        assert_eq!(r.catalog_number, 25544);
        assert!((r.elements.inclination - 51.6416).abs() < 1e-9);
        assert!((r.elements.raan - 247.4627).abs() < 1e-9);
        assert!((r.elements.mean_anomaly_at_epoch - (130.5360 + 325.0288 - 360.0)).abs() < 1e-9);
    }

    #[test]
    fn mean_motion_to_semi_major_axis() {
        // a = (mu * (86400 / (15.5 * 2 pi))^2)^(1/3) = 6794.86 km (evaluated independently)
        let a = semi_major_axis_from_mean_motion(15.5);
        assert!((a - 6794.863).abs() < 1e-3, "{a}");
        let text = synthetic("SAT-A", 1, 15.5);
        let parsed = parse_tle(&text).unwrap();
        assert!((parsed.records[0].elements.semi_major_axis - a).abs() < 1e-9);
    }

    #[test]
    fn empty_input() {
        assert_eq!(parse_tle("").unwrap_err(), OrbitalError::EmptyInput);
        assert_eq!(parse_tle("just a name\n").unwrap_err(), OrbitalError::EmptyInput);
    }

    #[test]
    fn two_records_keep_names() {
        let text = format!("{}{}", synthetic("ALPHA", 11, 14.2), synthetic("0 BRAVO", 12, 14.3));
        let parsed = parse_tle(&text).unwrap();
        let names: Vec<&str> = parsed.records.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["ALPHA", "BRAVO"]);
        assert!(parsed.skipped.is_empty());
    }

    #[test]
    fn bad_checksum_skips_record() {
        let good = synthetic("GOOD", 21, 14.2);
        let mut bad = synthetic("BAD", 22, 14.2);
        // corrupt a digit in line 2 without touching the checksum column
        bad = bad.replacen("120.0000", "121.0000", 1);
        let parsed = parse_tle(&format!("{bad}{good}")).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.records[0].name, "GOOD");
        assert_eq!(parsed.checksum_errors(), 1);
    }

    #[test]
    fn geostationary_record_is_skipped() {
        let text = synthetic("GEO", 31, 1.0027);
        assert_eq!(parse_tle(&text).unwrap_err(), OrbitalError::EmptyInput);
    }
}
