//! Line-oriented text format for detector error models.
//!
//! ```text
//! # comment
//! detectors_per_cycle 8
//! observables 1
//! period 1
//! prologue 1
//! epilogue 0
//! error 0.01 D0 D1
//! error 0.004 D0 D1 ^ D2 D3 L0
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use super::{DetectorId, ErrorMechanism, NoiseModel, Part, MAX_OBSERVABLES};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum DemError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("line {line}, column {column}: probability {value} outside (0, 0.5]")]
    ProbabilityOutOfRange { line: usize, column: usize, value: String },
    #[error("line {line}, column {column}: {message}")]
    Inconsistent { line: usize, column: usize, message: String },
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokens(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token { text: &line[s..i], column: s + 1 });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token { text: &line[s..], column: s + 1 });
    }
    out
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> DemError {
    DemError::Syntax { line, column, message: message.into() }
}

fn parse_index(tok: &Token<'_>, line: usize) -> Result<u64, DemError> {
    tok.text[1..]
        .parse::<u64>()
        .map_err(|_| syntax(line, tok.column, format!("malformed index in `{}`", tok.text)))
}

/// Parses the text form into a canonical [`NoiseModel`].
pub fn parse_dem<W: Real>(text: &str) -> Result<NoiseModel<W>, DemError> {
    let mut model = NoiseModel::<W>::new(0, 0);
    let mut have_dpc = false;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        let toks = tokens(content);
        let Some(head) = toks.first() else { continue };
        match head.text {
            "detectors_per_cycle" | "observables" | "period" | "prologue" | "epilogue" => {
                if toks.len() != 2 {
                    return Err(syntax(line, head.column, format!("`{}` takes one integer", head.text)));
                }
                let v: u32 = toks[1].text.parse().map_err(|_| {
                    syntax(line, toks[1].column, format!("expected integer, found `{}`", toks[1].text))
                })?;
                match head.text {
                    "detectors_per_cycle" => {
                        if v == 0 {
                            return Err(DemError::Inconsistent {
                                line,
                                column: toks[1].column,
                                message: "detectors_per_cycle must be positive".into(),
                            });
                        }
                        model.detectors_per_cycle = v;
                        have_dpc = true;
                    }
                    "observables" => {
                        if v > MAX_OBSERVABLES {
                            return Err(DemError::Inconsistent {
                                line,
                                column: toks[1].column,
                                message: format!("at most {MAX_OBSERVABLES} observables supported"),
                            });
                        }
                        model.num_observables = v;
                    }
                    "period" => {
                        if v == 0 {
                            return Err(DemError::Inconsistent {
                                line,
                                column: toks[1].column,
                                message: "period must be positive".into(),
                            });
                        }
                        model.period = v;
                    }
                    "prologue" => model.prologue_cycles = v,
                    _ => model.epilogue_cycles = v,
                }
            }
            "error" => {
                if !have_dpc {
                    return Err(DemError::Inconsistent {
                        line,
                        column: head.column,
                        message: "mechanism before `detectors_per_cycle` header".into(),
                    });
                }
                let Some(ptok) = toks.get(1) else {
                    return Err(syntax(line, head.column + 5, "missing probability"));
                };
                let p: f64 = ptok.text.parse().map_err(|_| {
                    syntax(line, ptok.column, format!("expected probability, found `{}`", ptok.text))
                })?;
                if !(p > 0.0 && p <= 0.5) {
                    return Err(DemError::ProbabilityOutOfRange {
                        line,
                        column: ptok.column,
                        value: ptok.text.to_string(),
                    });
                }
                let probability: W = ptok.text.parse().map_err(|_| {
                    syntax(line, ptok.column, format!("expected probability, found `{}`", ptok.text))
                })?;
                let mut parts = Vec::new();
                let mut dets = Vec::new();
                let mut obs = 0u64;
                let mut part_col = toks.get(2).map_or(ptok.column, |t| t.column);
                let mut seen_obs = false;
                let finish = |dets: &mut Vec<DetectorId>, obs: &mut u64, col: usize, parts: &mut Vec<Part>| {
                    if dets.is_empty() || dets.len() > 2 {
                        return Err(syntax(
                            line,
                            col,
                            format!("a part needs one or two detectors, found {}", dets.len()),
                        ));
                    }
                    if dets.len() == 2 && dets[0] == dets[1] {
                        return Err(syntax(line, col, "a part repeats the same detector"));
                    }
                    parts.push(Part::new(std::mem::take(dets), std::mem::take(obs)));
                    Ok(())
                };
                for tok in &toks[2..] {
                    if tok.text == "^" {
                        finish(&mut dets, &mut obs, part_col, &mut parts)?;
                        seen_obs = false;
                        part_col = tok.column + 2;
                    } else if tok.text.starts_with('D') {
                        if seen_obs {
                            return Err(syntax(line, tok.column, "detector after observable in one part"));
                        }
                        dets.push(DetectorId(parse_index(tok, line)?));
                    } else if tok.text.starts_with('L') {
                        let l = parse_index(tok, line)?;
                        if l >= model.num_observables as u64 {
                            return Err(DemError::Inconsistent {
                                line,
                                column: tok.column,
                                message: format!(
                                    "observable L{l} exceeds declared count {}",
                                    model.num_observables
                                ),
                            });
                        }
                        obs ^= 1 << l;
                        seen_obs = true;
                    } else {
                        return Err(syntax(line, tok.column, format!("unexpected token `{}`", tok.text)));
                    }
                }
                finish(&mut dets, &mut obs, part_col, &mut parts)?;
                model.mechanisms.push(ErrorMechanism { probability, parts });
            }
            other => return Err(syntax(line, head.column, format!("unknown directive `{other}`"))),
        }
    }
    if !have_dpc {
        return Err(syntax(1, 1, "missing `detectors_per_cycle` header"));
    }
    model.canonicalize();
    Ok(model)
}

/// Canonical text form: headers first, mechanisms in canonical order.
pub fn serialize_dem<W: Real>(model: &NoiseModel<W>) -> String {
    let mut model = model.clone();
    model.canonicalize();
    let mut out = String::new();
    let _ = writeln!(out, "detectors_per_cycle {}", model.detectors_per_cycle);
    let _ = writeln!(out, "observables {}", model.num_observables);
    let _ = writeln!(out, "period {}", model.period);
    let _ = writeln!(out, "prologue {}", model.prologue_cycles);
    let _ = writeln!(out, "epilogue {}", model.epilogue_cycles);
    for m in &model.mechanisms {
        let _ = write!(out, "error {}", m.probability);
        for (i, part) in m.parts.iter().enumerate() {
            if i > 0 {
                out.push_str(" ^");
            }
            for d in &part.detectors {
                let _ = write!(out, " D{}", d.0);
            }
            for l in 0..64 {
                if part.observables >> l & 1 == 1 {
                    let _ = write!(out, " L{l}");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "detectors_per_cycle 4\nobservables 1\n";

    #[test]
    fn minimal_mechanism() {
        let m: NoiseModel<f64> = parse_dem(&format!("{HEADER}error 0.01 D0 D1\n")).unwrap();
        assert_eq!(m.mechanisms.len(), 1);
        let mech = &m.mechanisms[0];
        assert_eq!(mech.probability, 0.01);
        assert_eq!(mech.parts, vec![Part::new(vec![DetectorId(0), DetectorId(1)], 0)]);
    }

    #[test]
    fn hyperedge_with_observable_on_second_part() {
        let text = format!("{HEADER}error 0.004 D0 D1 ^ D2 D3 L0\n");
        let m: NoiseModel<f64> = parse_dem(&text).unwrap();
        let mech = &m.mechanisms[0];
        assert_eq!(mech.parts.len(), 2);
        assert_eq!(mech.parts[0].observables, 0);
        assert_eq!(mech.parts[1].detectors, vec![DetectorId(2), DetectorId(3)]);
        assert_eq!(mech.parts[1].observables, 1);
        let again: NoiseModel<f64> = parse_dem(&serialize_dem(&m)).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn probability_out_of_range() {
        let err = parse_dem::<f64>(&format!("{HEADER}error 1.5 D0\n")).unwrap_err();
        assert!(matches!(err, DemError::ProbabilityOutOfRange { line: 3, column: 7, .. }), "{err:?}");
        assert!(parse_dem::<f64>(&format!("{HEADER}error 0 D0\n")).is_err());
        assert!(parse_dem::<f64>(&format!("{HEADER}error 0.6 D0\n")).is_err());
    }

    #[test]
    fn diagnostics_point_at_offending_token() {
        let err = parse_dem::<f64>(&format!("{HEADER}error 0.1 D0 X3\n")).unwrap_err();
        assert_eq!(
            err,
            DemError::Syntax { line: 3, column: 14, message: "unexpected token `X3`".into() }
        );
        let err = parse_dem::<f64>(&format!("{HEADER}error 0.1 D0 D1 D2\n")).unwrap_err();
        assert!(matches!(err, DemError::Syntax { line: 3, .. }));
        let err = parse_dem::<f64>(&format!("{HEADER}error 0.1 D0 L3\n")).unwrap_err();
        assert!(matches!(err, DemError::Inconsistent { line: 3, column: 14, .. }));
        let err = parse_dem::<f64>("error 0.1 D0\n").unwrap_err();
        assert!(matches!(err, DemError::Inconsistent { line: 1, .. }));
        let err = parse_dem::<f64>(&format!("{HEADER}error 0.1 D0 ^\n")).unwrap_err();
        assert!(matches!(err, DemError::Syntax { line: 3, .. }));
    }

    #[test]
    fn comments_and_headers() {
        let text = "# model\ndetectors_per_cycle 2 # two\nobservables 1\nperiod 3\nprologue 1\nepilogue 2\n\nerror 0.1 D1 L0\n";
        let m: NoiseModel<f32> = parse_dem(text).unwrap();
        assert_eq!((m.period, m.prologue_cycles, m.epilogue_cycles), (3, 1, 2));
        assert_eq!(m.mechanisms[0].parts[0].observables, 1);
    }
}
