//! The Marlin subset spoken to the motion controller.
//!
//! ```text
//! G28                              home all axes
//! G1 X<f3> Y<f3> Z<f3> F<u32>      absolute move, feed in mm/min
//! G91 / G1 ... / G90               relative move (three lines)
//! M400                             wait for queued moves to finish
//! M114                             report position
//! M106 P<u8> S<u8>                 fan duty
//! ```
//!
//! Coordinates are written with exactly three decimals. Every command line is
//! acknowledged by the firmware with `ok`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::StagePosition;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GCodeCommand {
    Home,
    MoveAbsolute { target: StagePosition, feed: u32 },
    MoveRelative { delta: StagePosition, feed: u32 },
    ReportPosition,
    SetFanSpeed { index: u8, duty: u8 },
    FinishMoves,
}

impl GCodeCommand {
    /// `feed_mm_s` is converted to the firmware's mm/min.
    pub fn move_absolute(target: StagePosition, feed_mm_s: f64) -> Result<Self> {
        Ok(GCodeCommand::MoveAbsolute {
            target: checked_coords(target)?,
            feed: feed_per_minute(feed_mm_s)?,
        })
    }

    pub fn move_relative(delta: StagePosition, feed_mm_s: f64) -> Result<Self> {
        Ok(GCodeCommand::MoveRelative {
            delta: checked_coords(delta)?,
            feed: feed_per_minute(feed_mm_s)?,
        })
    }

    /// Number of wire lines this command produces; the firmware acks each.
    pub fn line_count(&self) -> usize {
        match self {
            GCodeCommand::MoveRelative { .. } => 3,
            _ => 1,
        }
    }
}

fn checked_coords(p: StagePosition) -> Result<StagePosition> {
    if p.is_finite() {
        Ok(p)
    } else {
        Err(Error::validation(format!("non-finite coordinate in {p:?}")))
    }
}

fn feed_per_minute(feed_mm_s: f64) -> Result<u32> {
    let f = (feed_mm_s * 60.0).round();
    if !(f.is_finite() && f >= 1.0 && f <= f64::from(u32::MAX)) {
        return Err(Error::validation(format!(
            "feed must be positive, got {feed_mm_s} mm/s"
        )));
    }
    Ok(f as u32)
}

fn push_move(out: &mut String, p: &StagePosition, feed: u32) {
    let _ = writeln!(out, "G1 X{:.3} Y{:.3} Z{:.3} F{}", p.x, p.y, p.z, feed);
}

/// Wire text for `cmd`, newline-terminated.
pub fn encode(cmd: &GCodeCommand) -> String {
    let mut out = String::new();
    match cmd {
        GCodeCommand::Home => out.push_str("G28\n"),
        GCodeCommand::MoveAbsolute { target, feed } => push_move(&mut out, target, *feed),
        GCodeCommand::MoveRelative { delta, feed } => {
            out.push_str("G91\n");
            push_move(&mut out, delta, *feed);
            out.push_str("G90\n");
        }
        GCodeCommand::ReportPosition => out.push_str("M114\n"),
        GCodeCommand::SetFanSpeed { index, duty } => {
            let _ = writeln!(out, "M106 P{index} S{duty}");
        }
        GCodeCommand::FinishMoves => out.push_str("M400\n"),
    }
    out
}

/// One parsed wire line: a command word plus letter-addressed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GLine {
    pub word: String,
    pub params: Vec<(char, f64)>,
}

impl GLine {
    pub fn param(&self, letter: char) -> Option<f64> {
        self.params
            .iter()
            .find(|(l, _)| *l == letter)
            .map(|(_, v)| *v)
    }
}

/// Splits a single line into command word and parameters. `base` is the
/// byte offset of `line` within the enclosing text, used in errors.
pub fn parse_line(line: &str, base: usize) -> Result<GLine> {
    let mut tokens = token_offsets(line);
    let (word_at, word) = tokens.next().ok_or_else(|| Error::Parse {
        offset: base,
        message: "empty line".into(),
    })?;
    let mut chars = word.chars();
    let ok_word = matches!(chars.next(), Some('G' | 'M'))
        && word.len() > 1
        && chars.all(|c| c.is_ascii_digit());
    if !ok_word {
        return Err(Error::Parse {
            offset: base + word_at,
            message: format!("expected G or M command, found {word:?}"),
        });
    }
    let mut params = Vec::new();
    for (at, tok) in tokens {
        let letter = tok.chars().next().unwrap_or(' ');
        if !letter.is_ascii_uppercase() {
            return Err(Error::Parse {
                offset: base + at,
                message: format!("expected parameter letter, found {tok:?}"),
            });
        }
        let value: f64 = tok[1..].parse().map_err(|_| Error::Parse {
            offset: base + at + 1,
            message: format!("bad number in {tok:?}"),
        })?;
        params.push((letter, value));
    }
    Ok(GLine {
        word: word.to_string(),
        params,
    })
}

fn token_offsets(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split(' ')
        .scan(0usize, |pos, tok| {
            let at = *pos;
            *pos += tok.len() + 1;
            Some((at, tok))
        })
        .filter(|(_, t)| !t.is_empty())
}

fn lines_with_offsets(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut at = 0;
    for raw in text.split('\n') {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if !line.trim().is_empty() {
            out.push((at, line));
        }
        at += raw.len() + 1;
    }
    out
}

fn required(line: &GLine, letter: char, offset: usize) -> Result<f64> {
    line.param(letter).ok_or_else(|| Error::Parse {
        offset,
        message: format!("{} is missing {letter}", line.word),
    })
}

fn move_params(line: &GLine, offset: usize) -> Result<(StagePosition, u32)> {
    let p = StagePosition::new(
        required(line, 'X', offset)?,
        required(line, 'Y', offset)?,
        required(line, 'Z', offset)?,
    );
    let f = required(line, 'F', offset)?;
    if f < 1.0 || f.fract() != 0.0 {
        return Err(Error::Parse {
            offset,
            message: format!("feed must be a positive integer, got {f}"),
        });
    }
    Ok((p, f as u32))
}

fn small_uint(line: &GLine, letter: char, offset: usize) -> Result<u8> {
    let v = required(line, letter, offset)?;
    if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
        return Err(Error::Parse {
            offset,
            message: format!("{letter} must be an integer in 0..=255, got {v}"),
        });
    }
    Ok(v as u8)
}

/// Parses the output of [`encode`] back into a command.
pub fn decode(text: &str) -> Result<GCodeCommand> {
    let lines = lines_with_offsets(text);
    let Some(&(at, first)) = lines.first() else {
        return Err(Error::Parse {
            offset: 0,
            message: "no command".into(),
        });
    };
    let head = parse_line(first, at)?;
    let expect_single = |cmd: GCodeCommand| {
        if lines.len() == 1 {
            Ok(cmd)
        } else {
            Err(Error::Parse {
                offset: lines[1].0,
                message: "unexpected trailing line".into(),
            })
        }
    };
    match head.word.as_str() {
        "G28" => expect_single(GCodeCommand::Home),
        "G0" | "G1" => {
            let (target, feed) = move_params(&head, at)?;
            expect_single(GCodeCommand::MoveAbsolute { target, feed })
        }
        "M114" => expect_single(GCodeCommand::ReportPosition),
        "M400" => expect_single(GCodeCommand::FinishMoves),
        "M106" => {
            let index = small_uint(&head, 'P', at)?;
            let duty = small_uint(&head, 'S', at)?;
            expect_single(GCodeCommand::SetFanSpeed { index, duty })
        }
        "G91" => {
            if lines.len() != 3 {
                return Err(Error::Parse {
                    offset: text.len(),
                    message: "relative move needs G91, G1, G90".into(),
                });
            }
            let (mat, mline) = lines[1];
            let mv = parse_line(mline, mat)?;
            if mv.word != "G1" && mv.word != "G0" {
                return Err(Error::Parse {
                    offset: mat,
                    message: format!("expected G1 after G91, found {}", mv.word),
                });
            }
            let (delta, feed) = move_params(&mv, mat)?;
            let (eat, eline) = lines[2];
            if parse_line(eline, eat)?.word != "G90" {
                return Err(Error::Parse {
                    offset: eat,
                    message: "relative move must end with G90".into(),
                });
            }
            Ok(GCodeCommand::MoveRelative { delta, feed })
        }
        other => Err(Error::Parse {
            offset: at,
            message: format!("unsupported command {other}"),
        }),
    }
}

/// Parses an `M114` report: `X:<f> Y:<f> Z:<f>` followed by anything.
pub fn decode_position_report(line: &str) -> Result<StagePosition> {
    let bytes = line.as_bytes();
    let mut pos = 0usize;
    let mut coords = [0.0f64; 3];
    for (i, axis) in ['X', 'Y', 'Z'].into_iter().enumerate() {
        if i > 0 {
            if bytes.get(pos) != Some(&b' ') {
                return Err(Error::Parse {
                    offset: pos,
                    message: format!("expected space before {axis}:"),
                });
            }
            pos += 1;
        }
        if bytes.get(pos) != Some(&(axis as u8)) || bytes.get(pos + 1) != Some(&b':') {
            return Err(Error::Parse {
                offset: pos,
                message: format!("expected {axis}:"),
            });
        }
        pos += 2;
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b' ' {
            pos += 1;
        }
        let value: f64 = line[start..pos].parse().map_err(|_| Error::Parse {
            offset: start,
            message: format!("bad {axis} coordinate {:?}", &line[start..pos]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                offset: start,
                message: format!("non-finite {axis} coordinate"),
            });
        }
        coords[i] = value;
    }
    Ok(StagePosition::new(coords[0], coords[1], coords[2]))
}

/// Position report as the simulated firmware prints it.
pub fn format_position_report(p: &StagePosition, steps: [i64; 3]) -> String {
    format!(
        "X:{:.4} Y:{:.4} Z:{:.4} E:0.0000 Count X:{} Y:{} Z:{}",
        p.x, p.y, p.z, steps[0], steps[1], steps[2]
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_grammar() {
        let mv = GCodeCommand::MoveAbsolute {
            target: StagePosition::new(10.5, 2.0, 3.25),
            feed: 600,
        };
        assert_eq!(encode(&mv), "G1 X10.500 Y2.000 Z3.250 F600\n");
        assert_eq!(encode(&GCodeCommand::Home), "G28\n");
        assert_eq!(
            encode(&GCodeCommand::SetFanSpeed {
                index: 0,
                duty: 255
            }),
            "M106 P0 S255\n"
        );
        let rel = GCodeCommand::move_relative(StagePosition::new(1.0, -0.5, 0.0), 10.0).unwrap();
        assert_eq!(encode(&rel), "G91\nG1 X1.000 Y-0.500 Z0.000 F600\nG90\n");
    }

    #[test]
    fn max_speed_is_f600() {
        let mv = GCodeCommand::move_absolute(StagePosition::ORIGIN, 10.0).unwrap();
        assert!(matches!(mv, GCodeCommand::MoveAbsolute { feed: 600, .. }));
        assert!(GCodeCommand::move_absolute(StagePosition::ORIGIN, 0.0).is_err());
        assert!(GCodeCommand::move_absolute(StagePosition::new(f64::NAN, 0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode("G28\n").unwrap(), GCodeCommand::Home);
        assert_eq!(
            decode("G1 X10.500 Y2.000 Z3.250 F600\n").unwrap(),
            GCodeCommand::MoveAbsolute {
                target: StagePosition::new(10.5, 2.0, 3.25),
                feed: 600
            }
        );
        assert!(decode("G1 X1 Y2 F600").is_err());
        assert!(decode("").is_err());
        assert!(decode("G91\nG1 X1 Y1 Z1 F60\n").is_err());
    }

    #[test]
    fn parse_error_offsets() {
        match decode("G1 X1.000 Yabc Z0 F600") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 11),
            other => panic!("unexpected {other:?}"),
        }
        match decode("T0") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn position_reports() {
        let p = decode_position_report("X:10.50 Y:2.00 Z:3.25 E:0.00 Count X:4200 Y:800 Z:1300")
            .unwrap();
        assert_eq!(p, StagePosition::new(10.5, 2.0, 3.25));
        assert_eq!(
            decode_position_report("X:0.00 Y:0.00 Z:0.00").unwrap(),
            StagePosition::ORIGIN
        );
    }

    #[test]
    fn position_report_errors_carry_offsets() {
        let off = |s: &str| match decode_position_report(s) {
            Err(Error::Parse { offset, .. }) => offset,
            other => panic!("unexpected {other:?}"),
        };
        assert_eq!(off("ok"), 0);
        assert_eq!(off("X:1.0 Q:2.0 Z:3"), 6);
        assert_eq!(off("X:1.0 Y:zz Z:3"), 8);
        assert_eq!(off("X:1.0 Y:2.0"), 11);
    }
}
