//! Plain-text system definitions.
//!
//! ```text
//! [system]
//! name = torus
//! period = 2*pi
//! x0 = 1, 1
//! equilibrium = 0, 0        # optional
//! note = free text          # repeatable
//!
//! [constants]               # optional, substituted into every expression
//! R = 1
//!
//! [manifold]
//! kind = charted            # or so3
//! coords = periodic, linear(-1, 1), linear
//! closed_form = euclidean   # optional
//! g11 = ...                 # upper-triangular metric entries, 1-based
//! embed1 = ...              # optional embedding components
//!
//! [nominal]                 # field before the eps factor
//! f1 = ...
//!
//! [averaged]                # optional reference average
//! [alternate_averaged]      # optional alternative form kept for comparison
//! ```
//!
//! Scalar values may be constant expressions. Fields on `so3` give algebra
//! coordinates and may read the matrix entries `x1..x9` (row-major).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::manifold::{ClosedForm, CoordKind};

#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldDef {
    Charted {
        kinds: Vec<CoordKind>,
        /// Upper-triangular entries `(i, j, g_ij)`, 0-based.
        metric: Vec<(usize, usize, Expr)>,
        embedding: Option<Vec<Expr>>,
        closed_form: ClosedForm,
    },
    RotationGroup,
}

impl ManifoldDef {
    pub fn dim(&self) -> usize {
        match self {
            ManifoldDef::Charted { kinds, .. } => kinds.len(),
            ManifoldDef::RotationGroup => 3,
        }
    }

    pub fn coord_len(&self) -> usize {
        match self {
            ManifoldDef::Charted { kinds, .. } => kinds.len(),
            ManifoldDef::RotationGroup => 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemDefinition {
    pub name: String,
    pub period: f64,
    pub t0: f64,
    /// Principal coordinates (or matrix entries on SO(3)).
    pub x0: Vec<f64>,
    pub equilibrium: Option<Vec<f64>>,
    pub manifold: ManifoldDef,
    pub nominal: Vec<Expr>,
    pub reference_averaged: Option<Vec<Expr>>,
    pub alternate_averaged: Option<Vec<Expr>>,
    pub notes: Vec<String>,
}

#[derive(Debug)]
struct Entry {
    line: usize,
    key: String,
    value: String,
}

fn split_sections(text: &str) -> Result<Vec<(String, usize, Vec<Entry>)>> {
    let mut sections: Vec<(String, usize, Vec<Entry>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(Error::config(Some(line_no), None, "unterminated section header"));
            };
            let name = name.trim().to_string();
            if sections.iter().any(|(n, _, _)| *n == name) {
                return Err(Error::config(Some(line_no), None, format!("duplicate section [{name}]")));
            }
            sections.push((name, line_no, Vec::new()));
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(Some(line_no), None, "expected `key = value`"));
        };
        let Some(section) = sections.last_mut() else {
            return Err(Error::config(Some(line_no), Some(key.trim()), "entry outside of a section"));
        };
        section.2.push(Entry {
            line: line_no,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(sections)
}

struct Ctx {
    constants: BTreeMap<String, f64>,
}

impl Ctx {
    fn expr(&self, e: &Entry) -> Result<Expr> {
        Expr::parse(&e.value, &self.constants)
            .map_err(|pe| Error::config(Some(e.line), Some(&e.key), pe.to_string()))
    }

    fn scalar(&self, e: &Entry) -> Result<f64> {
        let ex = self.expr(e)?;
        if ex.coord_arity() > 0 || ex.depends_on_time() {
            return Err(Error::config(Some(e.line), Some(&e.key), "expected a constant expression"));
        }
        Ok(ex.eval(&[], 0.0))
    }

    fn list(&self, e: &Entry) -> Result<Vec<f64>> {
        split_top_level(&e.value)
            .into_iter()
            .map(|part| {
                self.scalar(&Entry {
                    line: e.line,
                    key: e.key.clone(),
                    value: part,
                })
            })
            .collect()
    }
}

/// Splits on commas that are not nested inside parentheses.
fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur.trim().to_string());
    out
}

fn parse_kind(src: &str, line: usize) -> Result<CoordKind> {
    let s = src.trim();
    if s == "periodic" {
        return Ok(CoordKind::Periodic);
    }
    if s == "linear" {
        return Ok(CoordKind::Linear {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        });
    }
    if let Some(inner) = s.strip_prefix("linear(").and_then(|r| r.strip_suffix(')')) {
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() == 2 {
            let parse = |p: &str| -> Option<f64> {
                match p.trim() {
                    "-inf" => Some(f64::NEG_INFINITY),
                    "inf" => Some(f64::INFINITY),
                    v => v.parse().ok(),
                }
            };
            if let (Some(lo), Some(hi)) = (parse(parts[0]), parse(parts[1])) {
                if lo < hi {
                    return Ok(CoordKind::Linear { lo, hi });
                }
            }
        }
    }
    Err(Error::config(
        Some(line),
        Some("coords"),
        format!("unknown coordinate kind `{s}` (periodic, linear, linear(lo, hi))"),
    ))
}

/// Collects `prefix1..prefixN` keys into a dense vector.
fn indexed(ctx: &Ctx, entries: &[Entry], prefix: &str, section: &str) -> Result<Vec<(usize, Expr, usize)>> {
    let mut out = Vec::new();
    for e in entries {
        let Some(idx) = e.key.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok()) else {
            return Err(Error::config(
                Some(e.line),
                Some(&e.key),
                format!("unexpected key in [{section}] (expected {prefix}1, {prefix}2, ...)"),
            ));
        };
        if idx == 0 {
            return Err(Error::config(Some(e.line), Some(&e.key), "indices are 1-based"));
        }
        out.push((idx - 1, ctx.expr(e)?, e.line));
    }
    Ok(out)
}

fn dense(items: Vec<(usize, Expr, usize)>, n: usize, section: &str, coord_len: usize) -> Result<Vec<Expr>> {
    let mut slots: Vec<Option<Expr>> = vec![None; n];
    for (i, e, line) in items {
        if i >= n {
            return Err(Error::config(Some(line), None, format!("[{section}] index {} exceeds dimension {n}", i + 1)));
        }
        if e.coord_arity() > coord_len {
            return Err(Error::config(
                Some(line),
                None,
                format!("expression references x{} but points have {coord_len} coordinates", e.coord_arity()),
            ));
        }
        if slots[i].is_some() {
            return Err(Error::config(Some(line), None, format!("duplicate component {}", i + 1)));
        }
        slots[i] = Some(e);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::config(None, Some(&format!("{section}.f{}", i + 1)), "missing component")))
        .collect()
}

impl SystemDefinition {
    pub fn parse(text: &str) -> Result<Self> {
        let sections = split_sections(text)?;
        let find = |name: &str| sections.iter().find(|(n, _, _)| n == name);
        for (name, line, _) in &sections {
            if !matches!(
                name.as_str(),
                "system" | "constants" | "manifold" | "nominal" | "averaged" | "alternate_averaged"
            ) {
                return Err(Error::config(Some(*line), None, format!("unknown section [{name}]")));
            }
        }

        let mut ctx = Ctx {
            constants: BTreeMap::new(),
        };
        if let Some((_, _, entries)) = find("constants") {
            for e in entries {
                let v = ctx.scalar(e)?;
                ctx.constants.insert(e.key.clone(), v);
            }
        }

        let (_, sys_line, sys) = find("system").ok_or_else(|| Error::config(None, None, "missing [system] section"))?;
        let mut name = None;
        let mut period = None;
        let mut t0 = 0.0;
        let mut x0 = None;
        let mut equilibrium = None;
        let mut notes = Vec::new();
        for e in sys {
            match e.key.as_str() {
                "name" => name = Some(e.value.clone()),
                "period" => period = Some(ctx.scalar(e)?),
                "t0" => t0 = ctx.scalar(e)?,
                "x0" => x0 = Some((ctx.list(e)?, e.line)),
                "equilibrium" => equilibrium = Some((ctx.list(e)?, e.line)),
                "note" => notes.push(e.value.clone()),
                _ => return Err(Error::config(Some(e.line), Some(&e.key), "unknown key in [system]")),
            }
        }
        let name = name.ok_or_else(|| Error::config(Some(*sys_line), Some("name"), "missing"))?;
        let period = period.ok_or_else(|| Error::config(Some(*sys_line), Some("period"), "missing"))?;
        if !(period > 0.0) {
            return Err(Error::config(Some(*sys_line), Some("period"), "must be positive"));
        }

        let (_, man_line, man) =
            find("manifold").ok_or_else(|| Error::config(None, None, "missing [manifold] section"))?;
        let kind = man
            .iter()
            .find(|e| e.key == "kind")
            .map(|e| e.value.as_str())
            .unwrap_or("charted");
        let manifold = match kind {
            "so3" => {
                if let Some(e) = man.iter().find(|e| e.key != "kind") {
                    return Err(Error::config(Some(e.line), Some(&e.key), "so3 takes no further manifold keys"));
                }
                ManifoldDef::RotationGroup
            }
            "charted" => {
                let coords = man
                    .iter()
                    .find(|e| e.key == "coords")
                    .ok_or_else(|| Error::config(Some(*man_line), Some("coords"), "missing"))?;
                let kinds = split_top_level(&coords.value)
                    .iter()
                    .map(|k| parse_kind(k, coords.line))
                    .collect::<Result<Vec<_>>>()?;
                let n = kinds.len();
                let mut metric = Vec::new();
                let mut embedding = Vec::new();
                let mut closed_form = ClosedForm::None;
                for e in man {
                    match e.key.as_str() {
                        "kind" | "coords" => {}
                        "closed_form" => {
                            closed_form = match e.value.as_str() {
                                "none" => ClosedForm::None,
                                "euclidean" => ClosedForm::Euclidean,
                                other => {
                                    return Err(Error::config(
                                        Some(e.line),
                                        Some(&e.key),
                                        format!("unknown closed form `{other}`"),
                                    ))
                                }
                            }
                        }
                        k if k.starts_with("embed") => {
                            let idx: usize = k[5..]
                                .parse()
                                .map_err(|_| Error::config(Some(e.line), Some(k), "expected embed<index>"))?;
                            embedding.push((idx.saturating_sub(1), ctx.expr(e)?, e.line));
                        }
                        k if k.starts_with('g') && k.len() == 3 => {
                            let digits: Vec<usize> = k[1..]
                                .chars()
                                .map(|c| c.to_digit(10).map(|d| d as usize))
                                .collect::<Option<_>>()
                                .ok_or_else(|| Error::config(Some(e.line), Some(k), "expected g<i><j>"))?;
                            let (i, j) = (digits[0], digits[1]);
                            if i == 0 || j == 0 || i > n || j > n {
                                return Err(Error::config(Some(e.line), Some(k), "metric index out of range"));
                            }
                            let (i, j) = (i.min(j) - 1, i.max(j) - 1);
                            if metric.iter().any(|(a, b, _)| *a == i && *b == j) {
                                return Err(Error::config(Some(e.line), Some(k), "duplicate metric entry"));
                            }
                            let ex = ctx.expr(e)?;
                            if ex.depends_on_time() || ex.coord_arity() > n {
                                return Err(Error::config(Some(e.line), Some(k), "metric may only depend on x1..xn"));
                            }
                            metric.push((i, j, ex));
                        }
                        _ => return Err(Error::config(Some(e.line), Some(&e.key), "unknown key in [manifold]")),
                    }
                }
                if metric.is_empty() {
                    return Err(Error::config(Some(*man_line), Some("g11"), "metric entries missing"));
                }
                if closed_form == ClosedForm::Euclidean {
                    let flat = metric.iter().all(|(i, j, e)| match e {
                        Expr::Num(v) => *v == if i == j { 1.0 } else { 0.0 },
                        _ => false,
                    }) && (0..n).all(|i| metric.iter().any(|(a, b, _)| *a == i && *b == i));
                    if !flat {
                        return Err(Error::config(
                            Some(*man_line),
                            Some("closed_form"),
                            "euclidean closed form requires g_ij = delta_ij",
                        ));
                    }
                }
                metric.sort_by_key(|(i, j, _)| (*i, *j));
                let embedding = if embedding.is_empty() {
                    None
                } else {
                    let m = embedding.iter().map(|(i, _, _)| i + 1).max().unwrap_or(0);
                    Some(dense(embedding, m, "manifold.embed", n)?)
                };
                ManifoldDef::Charted {
                    kinds,
                    metric,
                    embedding,
                    closed_form,
                }
            }
            other => {
                return Err(Error::config(Some(*man_line), Some("kind"), format!("unknown manifold kind `{other}`")))
            }
        };

        let dim = manifold.dim();
        let coord_len = manifold.coord_len();
        let field = |section: &str| -> Result<Option<Vec<Expr>>> {
            match find(section) {
                None => Ok(None),
                Some((_, _, entries)) => {
                    let items = indexed(&ctx, entries, "f", section)?;
                    Ok(Some(dense(items, dim, section, coord_len)?))
                }
            }
        };
        let nominal = field("nominal")?.ok_or_else(|| Error::config(None, None, "missing [nominal] section"))?;
        let reference_averaged = field("averaged")?;
        let alternate_averaged = field("alternate_averaged")?;
        for (label, f) in [("averaged", &reference_averaged), ("alternate_averaged", &alternate_averaged)] {
            if f.as_ref().is_some_and(|f| f.iter().any(Expr::depends_on_time)) {
                return Err(Error::config(None, Some(label), "averaged fields must not depend on t"));
            }
        }

        let check_len = |v: Option<(Vec<f64>, usize)>, key: &str| -> Result<Option<Vec<f64>>> {
            match v {
                Some((v, line)) if v.len() != coord_len => Err(Error::config(
                    Some(line),
                    Some(key),
                    format!("expected {coord_len} values, got {}", v.len()),
                )),
                other => Ok(other.map(|(v, _)| v)),
            }
        };
        let x0 = match check_len(x0, "x0")? {
            Some(v) => v,
            None if manifold == ManifoldDef::RotationGroup => {
                vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
            }
            None => return Err(Error::config(Some(*sys_line), Some("x0"), "missing")),
        };
        let equilibrium = check_len(equilibrium, "equilibrium")?;

        Ok(SystemDefinition {
            name,
            period,
            t0,
            x0,
            equilibrium,
            manifold,
            nominal,
            reference_averaged,
            alternate_averaged,
            notes,
        })
    }

    /// Canonical text form; constants are inlined at full precision so that
    /// parsing the output reproduces every expression bit for bit.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "[system]");
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "period = {:?}", self.period);
        let _ = writeln!(s, "t0 = {:?}", self.t0);
        let _ = writeln!(s, "x0 = {}", list(&self.x0));
        if let Some(eq) = &self.equilibrium {
            let _ = writeln!(s, "equilibrium = {}", list(eq));
        }
        for n in &self.notes {
            let _ = writeln!(s, "note = {}", n.replace('#', ""));
        }
        let _ = writeln!(s, "\n[manifold]");
        match &self.manifold {
            ManifoldDef::RotationGroup => {
                let _ = writeln!(s, "kind = so3");
            }
            ManifoldDef::Charted {
                kinds,
                metric,
                embedding,
                closed_form,
            } => {
                let _ = writeln!(s, "kind = charted");
                let kinds: Vec<String> = kinds
                    .iter()
                    .map(|k| match *k {
                        CoordKind::Periodic => "periodic".to_string(),
                        CoordKind::Linear { lo, hi } if lo.is_infinite() && hi.is_infinite() => "linear".to_string(),
                        CoordKind::Linear { lo, hi } => {
                            let b = |v: f64| {
                                if v.is_infinite() {
                                    if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
                                } else {
                                    format!("{v:?}")
                                }
                            };
                            format!("linear({}, {})", b(lo), b(hi))
                        }
                    })
                    .collect();
                let _ = writeln!(s, "coords = {}", kinds.join(", "));
                if *closed_form == ClosedForm::Euclidean {
                    let _ = writeln!(s, "closed_form = euclidean");
                }
                for (i, j, e) in metric {
                    let _ = writeln!(s, "g{}{} = {e}", i + 1, j + 1);
                }
                if let Some(emb) = embedding {
                    for (i, e) in emb.iter().enumerate() {
                        let _ = writeln!(s, "embed{} = {e}", i + 1);
                    }
                }
            }
        }
        let mut field = |title: &str, f: &[Expr]| {
            let _ = writeln!(s, "\n[{title}]");
            for (i, e) in f.iter().enumerate() {
                let _ = writeln!(s, "f{} = {e}", i + 1);
            }
        };
        field("nominal", &self.nominal);
        if let Some(f) = &self.reference_averaged {
            field("averaged", f);
        }
        if let Some(f) = &self.alternate_averaged {
            field("alternate_averaged", f);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = "
[system]
name = demo
period = 2*pi
x0 = 1

[manifold]
coords = linear
closed_form = euclidean
g11 = 1

[nominal]
f1 = -x1 + sin(t)
";

    #[test]
    fn parses_minimal_definition() {
        let d = SystemDefinition::parse(SCALAR).unwrap();
        assert_eq!(d.name, "demo");
        assert_eq!(d.period, 2.0 * std::f64::consts::PI);
        assert_eq!(d.x0, vec![1.0]);
        assert_eq!(d.nominal.len(), 1);
        assert_eq!(SystemDefinition::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let bad = SCALAR.replace("f1 = -x1 + sin(t)", "f1 = -x1 + sinn(t)");
        match SystemDefinition::parse(&bad) {
            Err(Error::Config { line, field, message }) => {
                assert_eq!(line, Some(13));
                assert_eq!(field.as_deref(), Some("f1"));
                assert!(message.contains("sinn"));
            }
            other => panic!("{other:?}"),
        }
        let bad = SCALAR.replace("x0 = 1", "x0 = 1, 2");
        assert!(matches!(SystemDefinition::parse(&bad), Err(Error::Config { field: Some(f), .. }) if f == "x0"));
        let bad = SCALAR.replace("period = 2*pi", "period = t");
        assert!(SystemDefinition::parse(&bad).is_err());
        let bad = SCALAR.replace("[nominal]", "[nominl]");
        assert!(SystemDefinition::parse(&bad).is_err());
        let bad = SCALAR.replace("g11 = 1", "g11 = 2");
        assert!(SystemDefinition::parse(&bad).is_err());
        let bad = SCALAR.replace("f1 = -x1 + sin(t)", "f1 = x2");
        assert!(SystemDefinition::parse(&bad).is_err());
        assert!(SystemDefinition::parse("name = x").is_err());
    }

    #[test]
    fn bounded_linear_coordinates() {
        let src = SCALAR.replace("coords = linear", "coords = linear(-2, 3.5)").replace("closed_form = euclidean\n", "");
        let d = SystemDefinition::parse(&src).unwrap();
        match &d.manifold {
            ManifoldDef::Charted { kinds, .. } => assert_eq!(kinds[0], CoordKind::Linear { lo: -2.0, hi: 3.5 }),
            _ => unreachable!(),
        }
        assert_eq!(SystemDefinition::parse(&d.to_text()).unwrap(), d);
    }
}
