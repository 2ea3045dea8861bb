//! Plain-text environment serialization.
//!
//! Layout:
//!
//! ```text
//! d L kappa model seed
//! id x1 .. xd n        (one line per atom, ids 0..count in order)
//!                      (blank separator line)
//! id_from id_to rate   (one line per unordered edge, lower id first)
//! ```
//!
//! Only the canonical direction of each edge is stored; the reverse rate is
//! derived through detailed balance on read. Floats are written in Rust's
//! shortest round-trip form, so read-back is bit-exact.

use super::{Environment, GenerationInfo};
use crate::error::{Error, Result};
use crate::geom::{LatticeMap, Norm, Torus};
use std::fmt::Write as _;
use std::path::Path;

/// Serializes the environment to its text form.
#[must_use]
pub fn to_text(env: &Environment) -> String {
    let d = env.torus.d;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {} {} {}",
        d,
        env.torus.side,
        env.norm.tag(),
        env.model_tag,
        env.seed
    );
    for a in 0..env.atom_count() {
        let _ = write!(out, "{a}");
        for c in env.position(a) {
            let _ = write!(out, " {c}");
        }
        let _ = writeln!(out, " {}", env.multiplicity[a]);
    }
    out.push('\n');
    for e in &env.edges {
        // canonical directed rate; the partner is derived on read
        let rate = e.conductance / env.multiplicity[e.a];
        let _ = writeln!(out, "{} {} {}", e.a, e.b, rate);
    }
    out
}

/// Writes the environment to a file.
pub fn write_file(env: &Environment, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(env))?;
    Ok(())
}

/// Parses an environment from its text form.
pub fn from_text(text: &str) -> Result<Environment> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty input".into()))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 5 {
        return Err(Error::Format(format!(
            "header must be 'd L kappa model seed', got {header:?}"
        )));
    }
    let d: usize = parse(tokens[0], "dimension")?;
    let side: i64 = parse(tokens[1], "torus side")?;
    let norm = Norm::from_tag(tokens[2])?;
    let model_tag = tokens[3].to_string();
    let seed: u64 = parse(tokens[4], "seed")?;
    let map = if model_tag == "tri" {
        LatticeMap::triangular()
    } else {
        LatticeMap::identity(d)
    };
    let torus = Torus { d, side, map };

    let mut positions: Vec<f64> = Vec::new();
    let mut multiplicity: Vec<f64> = Vec::new();
    let mut in_edges = false;
    let mut raw_edges: Vec<(usize, usize, f64)> = Vec::new();
    let mut seen: std::collections::BTreeSet<(usize, usize)> = std::collections::BTreeSet::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            in_edges = true;
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if !in_edges {
            if toks.len() != d + 2 {
                return Err(Error::Format(format!(
                    "atom line needs {} fields, got {line:?}",
                    d + 2
                )));
            }
            let id: usize = parse(toks[0], "atom id")?;
            if id != multiplicity.len() {
                return Err(Error::Format(format!(
                    "atom ids must be sequential, expected {}, got {id}",
                    multiplicity.len()
                )));
            }
            for t in &toks[1..=d] {
                positions.push(parse(t, "coordinate")?);
            }
            multiplicity.push(parse(toks[d + 1], "multiplicity")?);
        } else {
            if toks.len() != 3 {
                return Err(Error::Format(format!("edge line needs 3 fields: {line:?}")));
            }
            let a: usize = parse(toks[0], "edge endpoint")?;
            let b: usize = parse(toks[1], "edge endpoint")?;
            let rate: f64 = parse(toks[2], "rate")?;
            if a >= multiplicity.len() || b >= multiplicity.len() || a == b {
                return Err(Error::Format(format!("edge endpoints {a} {b}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::Format(format!(
                    "duplicate edge between {a} and {b}; store each unordered pair once"
                )));
            }
            // recover the symmetric conductance from the stored direction
            raw_edges.push((a, b, multiplicity[a] * rate));
        }
    }
    Environment::assemble(
        torus,
        norm,
        seed,
        model_tag,
        positions,
        multiplicity,
        raw_edges,
        None,
        GenerationInfo::default(),
    )
}

/// Reads an environment from a file.
pub fn read_file(path: &Path) -> Result<Environment> {
    let text = std::fs::read_to_string(path)?;
    from_text(&text)
}

fn parse<T: std::str::FromStr>(token: &str, what: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| Error::Format(format!("bad {what}: {token:?}")))
}
