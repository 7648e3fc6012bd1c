//! Time-tag CSV interchange format.
//!
//! One row per detection, sorted by time:
//!
//! ```text
//! time_ps,detector,basis,outcome,origin
//! 1043,Alice,HV,0,pair:0:17
//! 2381,Bob,HV,1,dark
//! ```
//!
//! `detector` is the user name, `origin` is `pair:<link>:<serial>`, `dark`
//! or `unlabeled`. In blind mode the `origin` column is omitted entirely so
//! analyses cannot peek at ground truth; such files read back with
//! [`Origin::Unlabeled`] on every tag.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::eventsim::{Origin, TimeTag, TimeTagStream};
use crate::quantum::Basis;

#[derive(Debug, Error)]
pub enum TagIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown detector {name:?}")]
    UnknownDetector { line: usize, name: String },
    #[error("line {line}: time_ps not sorted")]
    Unsorted { line: usize },
}

pub const HEADER: &str = "time_ps,detector,basis,outcome,origin";
pub const HEADER_BLIND: &str = "time_ps,detector,basis,outcome";

fn origin_str(origin: Origin) -> String {
    match origin {
        Origin::Pair { link, serial } => format!("pair:{link}:{serial}"),
        Origin::Dark => "dark".into(),
        Origin::Unlabeled => "unlabeled".into(),
    }
}

/// Writes one stream as CSV. `blind` strips the origin column.
pub fn write_tags_csv(
    w: &mut impl Write,
    tags: &[TimeTag],
    users: &[String],
    blind: bool,
) -> io::Result<()> {
    writeln!(w, "{}", if blind { HEADER_BLIND } else { HEADER })?;
    for t in tags {
        let name = users
            .get(t.detector as usize)
            .map(String::as_str)
            .unwrap_or("?");
        if blind {
            writeln!(w, "{},{},{},{}", t.time_ps, name, t.basis, t.outcome)?;
        } else {
            writeln!(
                w,
                "{},{},{},{},{}",
                t.time_ps,
                name,
                t.basis,
                t.outcome,
                origin_str(t.origin)
            )?;
        }
    }
    Ok(())
}

fn parse_origin(s: &str, line: usize) -> Result<Origin, TagIoError> {
    if s == "dark" {
        return Ok(Origin::Dark);
    }
    if s == "unlabeled" {
        return Ok(Origin::Unlabeled);
    }
    if let Some(rest) = s.strip_prefix("pair:") {
        let mut it = rest.split(':');
        let link = it
            .next()
            .and_then(|v| v.parse::<u16>().ok())
            .ok_or_else(|| TagIoError::Parse {
                line,
                msg: format!("bad pair origin {s:?}"),
            })?;
        let serial = it
            .next()
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| TagIoError::Parse {
                line,
                msg: format!("bad pair origin {s:?}"),
            })?;
        if it.next().is_some() {
            return Err(TagIoError::Parse {
                line,
                msg: format!("bad pair origin {s:?}"),
            });
        }
        return Ok(Origin::Pair { link, serial });
    }
    Err(TagIoError::Parse {
        line,
        msg: format!("unknown origin {s:?}"),
    })
}

/// Reads a time-tag CSV and splits it into per-user streams aligned with
/// `users`. Rows must be globally sorted by `time_ps`; the offending line is
/// named otherwise. Both the full and the blind header are accepted.
pub fn read_tags_csv(r: impl BufRead, users: &[String]) -> Result<Vec<TimeTagStream>, TagIoError> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.ok_or_else(|| TagIoError::Parse {
        line: 1,
        msg: "empty file, expected a header".into(),
    })?;
    let header = header.trim_end();
    let blind = if header == HEADER {
        false
    } else if header == HEADER_BLIND {
        true
    } else {
        return Err(TagIoError::Parse {
            line: 1,
            msg: format!("unrecognized header {header:?}"),
        });
    };

    let mut per_user: Vec<Vec<TimeTag>> = vec![Vec::new(); users.len()];
    let mut last_time = i64::MIN;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected = if blind { 4 } else { 5 };
        if fields.len() != expected {
            return Err(TagIoError::Parse {
                line: line_no,
                msg: format!("expected {expected} fields, got {}", fields.len()),
            });
        }
        let time_ps: i64 = fields[0].parse().map_err(|_| TagIoError::Parse {
            line: line_no,
            msg: format!("bad time_ps {:?}", fields[0]),
        })?;
        if time_ps < last_time {
            return Err(TagIoError::Unsorted { line: line_no });
        }
        last_time = time_ps;
        let detector = users.iter().position(|u| u == fields[1]).ok_or_else(|| {
            TagIoError::UnknownDetector {
                line: line_no,
                name: fields[1].to_string(),
            }
        })?;
        let basis = match fields[2] {
            "HV" => Basis::HV,
            "DA" => Basis::DA,
            other => {
                return Err(TagIoError::Parse {
                    line: line_no,
                    msg: format!("unknown basis {other:?}"),
                })
            }
        };
        let outcome: u8 = match fields[3] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(TagIoError::Parse {
                    line: line_no,
                    msg: format!("outcome must be 0 or 1, got {other:?}"),
                })
            }
        };
        let origin = if blind {
            Origin::Unlabeled
        } else {
            parse_origin(fields[4], line_no)?
        };
        per_user[detector].push(TimeTag {
            time_ps,
            detector: detector as u16,
            basis,
            outcome,
            origin,
        });
    }
    Ok(per_user
        .into_iter()
        .map(|tags| TimeTagStream::new(tags).expect("globally sorted input"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn users() -> Vec<String> {
        vec!["Alice".into(), "Bob".into()]
    }

    fn sample_tags() -> Vec<TimeTag> {
        vec![
            TimeTag {
                time_ps: 100,
                detector: 0,
                basis: Basis::HV,
                outcome: 0,
                origin: Origin::Pair { link: 0, serial: 7 },
            },
            TimeTag {
                time_ps: 250,
                detector: 1,
                basis: Basis::DA,
                outcome: 1,
                origin: Origin::Dark,
            },
        ]
    }

    #[test]
    fn writes_expected_rows() {
        let mut buf = Vec::new();
        write_tags_csv(&mut buf, &sample_tags(), &users(), false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "time_ps,detector,basis,outcome,origin\n\
             100,Alice,HV,0,pair:0:7\n\
             250,Bob,DA,1,dark\n"
        );
    }

    #[test]
    fn blind_mode_strips_origin() {
        let mut buf = Vec::new();
        write_tags_csv(&mut buf, &sample_tags(), &users(), true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains("pair:"));
        assert!(text.starts_with(HEADER_BLIND));
        let streams = read_tags_csv(text.as_bytes(), &users()).unwrap();
        assert!(streams[0]
            .tags()
            .iter()
            .all(|t| t.origin == Origin::Unlabeled));
    }

    #[test]
    fn round_trip_preserves_tags() {
        let mut buf = Vec::new();
        write_tags_csv(&mut buf, &sample_tags(), &users(), false).unwrap();
        let streams = read_tags_csv(buf.as_slice(), &users()).unwrap();
        assert_eq!(streams[0].tags(), &sample_tags()[..1]);
        assert_eq!(streams[1].tags(), &sample_tags()[1..]);
    }

    #[test]
    fn unsorted_rows_name_the_line() {
        let text = "time_ps,detector,basis,outcome,origin\n\
                    500,Alice,HV,0,dark\n\
                    100,Bob,HV,0,dark\n";
        let err = read_tags_csv(text.as_bytes(), &users()).unwrap_err();
        assert!(matches!(err, TagIoError::Unsorted { line: 3 }));
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "time_ps,detector,basis,outcome,origin\n\
                    abc,Alice,HV,0,dark\n";
        let err = read_tags_csv(text.as_bytes(), &users()).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"));

        let text = "time_ps,detector,basis,outcome,origin\n\
                    5,Eve,HV,0,dark\n";
        let err = read_tags_csv(text.as_bytes(), &users()).unwrap_err();
        assert!(matches!(err, TagIoError::UnknownDetector { line: 2, .. }));

        let text = "time_ps,detector,basis,outcome,origin\n\
                    5,Alice,XY,0,dark\n";
        assert!(read_tags_csv(text.as_bytes(), &users()).is_err());

        let text = "bad header\n";
        let err = read_tags_csv(text.as_bytes(), &users()).unwrap_err();
        assert!(matches!(err, TagIoError::Parse { line: 1, .. }));
    }

    prop_compose! {
        fn arb_tag()(
            time in 0i64..1_000_000,
            detector in 0u16..2,
            basis_da in any::<bool>(),
            outcome in 0u8..2,
            kind in 0u8..3,
            link in 0u16..4,
            serial in 0u32..1000,
        ) -> TimeTag {
            TimeTag {
                time_ps: time,
                detector,
                basis: if basis_da { Basis::DA } else { Basis::HV },
                outcome,
                origin: match kind {
                    0 => Origin::Dark,
                    1 => Origin::Unlabeled,
                    _ => Origin::Pair { link, serial },
                },
            }
        }
    }

    proptest! {
        #[test]
        fn round_trips_any_sorted_tags(mut tags in prop::collection::vec(arb_tag(), 0..200)) {
            tags.sort();
            let mut buf = Vec::new();
            write_tags_csv(&mut buf, &tags, &users(), false).unwrap();
            let streams = read_tags_csv(buf.as_slice(), &users()).unwrap();
            let mut recovered: Vec<TimeTag> =
                streams.iter().flat_map(|s| s.tags().iter().copied()).collect();
            recovered.sort();
            prop_assert_eq!(recovered, tags);
        }
    }
}
