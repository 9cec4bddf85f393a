//! Tab-separated input and output formats. All files are plain UTF-8 with
//! one record per line and no header unless noted:
//!
//! - edges:       `child_id<TAB>parent_id`
//! - vocabulary:  `id<TAB>display name` (optional)
//! - features:    `id<TAB>f1<TAB>f2<TAB>...` (fixed width per file)
//! - queries:     `query_id<TAB>gold1[,gold2,...]`
//! - predictions: `query_id<TAB>rank<TAB>candidate_id<TAB>score`

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::inference::RankedList;
use crate::taxonomy::Query;

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> CoreError {
    CoreError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Loads (child_id, parent_id) records. Blank lines and `#` comments are
/// skipped.
pub fn load_edges(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let child = parts.next().unwrap_or("").trim();
        let parent = parts.next().map(str::trim);
        match parent {
            Some(p) if !child.is_empty() && !p.is_empty() && parts.next().is_none() => {
                out.push((child.to_string(), p.to_string()));
            }
            _ => {
                return Err(parse_err(
                    path,
                    line_no,
                    "expected exactly two tab-separated ids",
                ))
            }
        }
    }
    Ok(out)
}

/// Loads (id, display name) records.
pub fn load_vocab(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match line.split_once('\t') {
            Some((id, name)) if !id.trim().is_empty() => {
                out.push((id.trim().to_string(), name.trim().to_string()));
            }
            _ => return Err(parse_err(path, line_no, "expected `id<TAB>name`")),
        }
    }
    Ok(out)
}

/// Loads feature rows keyed by node id; every row must share one width.
pub fn load_features(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut width: Option<usize> = None;
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let id = parts.next().unwrap_or("").trim();
        if id.is_empty() {
            return Err(parse_err(path, line_no, "missing node id"));
        }
        let mut row = Vec::new();
        for tok in parts {
            let v: f64 = tok.trim().parse().map_err(|_| {
                parse_err(path, line_no, format!("bad float `{}`", tok.trim()))
            })?;
            if !v.is_finite() {
                return Err(parse_err(path, line_no, "non-finite feature value"));
            }
            row.push(v);
        }
        if row.is_empty() {
            return Err(parse_err(path, line_no, "feature row has no values"));
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("feature width {} differs from {}", row.len(), w),
                ))
            }
            _ => {}
        }
        if out.insert(id.to_string(), row).is_some() {
            return Err(parse_err(path, line_no, format!("duplicate id `{id}`")));
        }
    }
    Ok(out)
}

/// Loads held-out queries with comma-separated gold parents.
pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match line.split_once('\t') {
            Some((id, golds)) if !id.trim().is_empty() => {
                let gold_parents: Vec<String> = golds
                    .split(',')
                    .map(|g| g.trim().to_string())
                    .filter(|g| !g.is_empty())
                    .collect();
                if gold_parents.is_empty() {
                    return Err(parse_err(path, line_no, "query has no gold parents"));
                }
                out.push(Query {
                    id: id.trim().to_string(),
                    gold_parents,
                });
            }
            _ => return Err(parse_err(path, line_no, "expected `query_id<TAB>golds`")),
        }
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    f.write_all(text.as_bytes()).map_err(|e| CoreError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn write_edges(path: &Path, edges: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    for (c, p) in edges {
        s.push_str(&format!("{c}\t{p}\n"));
    }
    write_text(path, &s)
}

pub fn write_queries(path: &Path, queries: &[Query]) -> Result<()> {
    let mut s = String::new();
    for q in queries {
        s.push_str(&format!("{}\t{}\n", q.id, q.gold_parents.join(",")));
    }
    write_text(path, &s)
}

/// Serializes ranked lists as `query_id<TAB>rank<TAB>candidate<TAB>score`.
/// Scores use the exponential float form, which round-trips exactly.
pub fn write_predictions(path: &Path, lists: &[RankedList]) -> Result<()> {
    let mut s = String::new();
    for l in lists {
        for (rank, (cand, score)) in l.entries.iter().enumerate() {
            s.push_str(&format!("{}\t{}\t{}\t{:e}\n", l.query_id, rank + 1, cand, score));
        }
    }
    write_text(path, &s)
}

/// Parses a predictions file back into ranked lists, preserving rank order.
pub fn load_predictions(path: &Path) -> Result<Vec<RankedList>> {
    let mut lists: Vec<RankedList> = Vec::new();
    let mut last_query: Option<String> = None;
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                "expected `query<TAB>rank<TAB>candidate<TAB>score`",
            ));
        }
        let rank: usize = parts[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, "bad rank"))?;
        let score: f64 = parts[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, "bad score"))?;
        let query = parts[0].trim().to_string();
        if last_query.as_deref() != Some(query.as_str()) {
            lists.push(RankedList {
                query_id: query.clone(),
                entries: Vec::new(),
            });
            last_query = Some(query);
        }
        let entries = &mut lists.last_mut().unwrap().entries;
        if rank != entries.len() + 1 {
            return Err(parse_err(
                path,
                line_no,
                format!("rank {rank} out of sequence"),
            ));
        }
        entries.push((parts[2].trim().to_string(), score));
    }
    Ok(lists)
}
