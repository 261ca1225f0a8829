//! Plain-text LP export/import (CPLEX LP dialect subset). Coefficients are
//! printed with 17 significant digits so a round trip is lossless.

use super::{LpError, LpInstance, LpRow, Relation};

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_lp_text(instance: &LpInstance) -> String {
    let mut out = String::new();
    out.push_str("Minimize\n obj:");
    let mut first = true;
    for (j, &c) in instance.objective.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let sep = if first { " " } else { " + " };
        out.push_str(&format!("{sep}{} x{j}", fmt(c)));
        first = false;
    }
    if first {
        out.push_str(" 0 x0");
    }
    out.push_str("\nSubject To\n");
    for (r, row) in instance.rows.iter().enumerate() {
        out.push_str(&format!(" c{r}:"));
        let mut any = false;
        for &(v, c) in &row.coeffs {
            let sep = if any { " + " } else { " " };
            out.push_str(&format!("{sep}{} x{v}", fmt(c)));
            any = true;
        }
        if !any {
            out.push_str(" 0 x0");
        }
        out.push_str(&format!(" {} {}\n", row.rel.symbol(), fmt(row.rhs)));
    }
    out.push_str("Bounds\n");
    for (j, &(lo, hi)) in instance.bounds.iter().enumerate() {
        if lo == 0.0 && hi == f64::INFINITY {
            continue;
        }
        if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
            out.push_str(&format!(" x{j} free\n"));
        } else if hi == f64::INFINITY {
            out.push_str(&format!(" x{j} >= {}\n", fmt(lo)));
        } else if lo == f64::NEG_INFINITY {
            out.push_str(&format!(" x{j} <= {}\n", fmt(hi)));
        } else {
            out.push_str(&format!(" {} <= x{j} <= {}\n", fmt(lo), fmt(hi)));
        }
    }
    out.push_str("End\n");
    out
}

fn parse_terms(text: &str, num_vars: &mut usize) -> Result<Vec<(usize, f64)>, LpError> {
    // Terms look like "1.5 x0 + -2 x3"; '+' separators are optional tokens.
    let mut coeffs: Vec<(usize, f64)> = Vec::new();
    let mut pending: Option<f64> = None;
    let mut sign = 1.0;
    for tok in text.split_whitespace() {
        match tok {
            "+" => sign = 1.0,
            "-" => sign = -sign,
            _ if tok.starts_with('x') => {
                let idx: usize = tok[1..]
                    .parse()
                    .map_err(|_| LpError::TextFormat(format!("bad variable token {tok}")))?;
                let c = pending.take().unwrap_or(1.0) * sign;
                *num_vars = (*num_vars).max(idx + 1);
                coeffs.push((idx, c));
                sign = 1.0;
            }
            _ => {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| LpError::TextFormat(format!("bad number token {tok}")))?;
                pending = Some(v);
            }
        }
    }
    if pending.is_some() {
        return Err(LpError::TextFormat("dangling coefficient".into()));
    }
    Ok(coeffs)
}

pub fn parse_lp_text(text: &str) -> Result<LpInstance, LpError> {
    #[derive(PartialEq)]
    enum Section {
        Preamble,
        Objective,
        Rows,
        Bounds,
        Done,
    }
    let mut section = Section::Preamble;
    let mut objective_terms = Vec::new();
    let mut rows: Vec<(Vec<(usize, f64)>, Relation, f64)> = Vec::new();
    let mut bound_lines: Vec<String> = Vec::new();
    let mut num_vars = 0usize;

    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        let lower = line.to_ascii_lowercase();
        match lower.as_str() {
            "minimize" | "min" => {
                section = Section::Objective;
                continue;
            }
            "subject to" | "st" | "s.t." => {
                section = Section::Rows;
                continue;
            }
            "bounds" => {
                section = Section::Bounds;
                continue;
            }
            "end" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        let body = match line.find(':') {
            Some(pos) => &line[pos + 1..],
            None => line,
        };
        match section {
            Section::Objective => {
                objective_terms.extend(parse_terms(body, &mut num_vars)?);
            }
            Section::Rows => {
                let (rel, pos, len) = if let Some(p) = body.find("<=") {
                    (Relation::Le, p, 2)
                } else if let Some(p) = body.find(">=") {
                    (Relation::Ge, p, 2)
                } else if let Some(p) = body.find('=') {
                    (Relation::Eq, p, 1)
                } else {
                    return Err(LpError::TextFormat(format!("row without relation: {line}")));
                };
                let lhs = parse_terms(&body[..pos], &mut num_vars)?;
                let rhs: f64 = body[pos + len..]
                    .trim()
                    .parse()
                    .map_err(|_| LpError::TextFormat(format!("bad rhs in: {line}")))?;
                rows.push((lhs, rel, rhs));
            }
            Section::Bounds => bound_lines.push(body.to_string()),
            Section::Preamble | Section::Done => {
                return Err(LpError::TextFormat(format!("unexpected line: {line}")))
            }
        }
    }

    let mut lp = LpInstance::new(num_vars);
    for (v, c) in objective_terms {
        lp.objective[v] += c;
    }
    for (coeffs, rel, rhs) in rows {
        lp.rows.push(LpRow { coeffs, rel, rhs });
    }
    for l in bound_lines {
        let toks: Vec<&str> = l.split_whitespace().collect();
        let var_of = |tok: &str| -> Result<usize, LpError> {
            tok.strip_prefix('x')
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| LpError::TextFormat(format!("bad bound variable {tok}")))
        };
        let num = |tok: &str| -> Result<f64, LpError> {
            tok.parse()
                .map_err(|_| LpError::TextFormat(format!("bad bound value {tok}")))
        };
        match toks.as_slice() {
            [v, kw] if kw.eq_ignore_ascii_case("free") => {
                lp.bounds[var_of(v)?] = (f64::NEG_INFINITY, f64::INFINITY);
            }
            [v, ">=", val] => lp.bounds[var_of(v)?].0 = num(val)?,
            [v, "<=", val] => lp.bounds[var_of(v)?].1 = num(val)?,
            [lo, "<=", v, "<=", hi] => {
                lp.bounds[var_of(v)?] = (num(lo)?, num(hi)?);
            }
            _ => return Err(LpError::TextFormat(format!("bad bounds line: {l}"))),
        }
    }
    Ok(lp)
}
