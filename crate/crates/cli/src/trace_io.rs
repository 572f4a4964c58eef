//! Trace files.
//!
//! A run writes two CSVs sharing a `#key=value` header block:
//!
//! * `<name>.csv` with rows `round,t,agent,element,x_value` for `t = 0..=T`;
//! * `<name>.sets.csv` with rows `round,t,agent,candidate_set` for
//!   `t = T+1..=T'`, sets written as pipe-joined element ids.
//!
//! Rounds, agents and elements are 1-based. Floats carry 17 significant
//! digits, so a trace read back is bit-identical to the one written.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dgreedy::protocol::{IntersectionRule, RoundTrace, RunTrace, TraceHeader};
use dgreedy::{Element, Subset};

use crate::error::CliError;
use crate::json::format_f64;

const FORMAT: &str = "dgreedy-trace-1";

pub fn sets_path(trace: &Path) -> PathBuf {
    let stem = trace
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    trace.with_file_name(format!("{stem}.sets.csv"))
}

fn header_lines(trace: &RunTrace) -> String {
    let h = &trace.header;
    let selected: Vec<String> = trace.selected.iter().map(|e| e.id().to_string()).collect();
    let pairs: Vec<(&str, String)> = vec![
        ("format", FORMAT.to_string()),
        ("n", h.n.to_string()),
        ("ground", h.ground.to_string()),
        ("K", h.k.to_string()),
        ("T", h.t.to_string()),
        ("T_prime", h.t_prime.to_string()),
        ("diameter", h.diameter.to_string()),
        ("psi", format_f64(h.psi)),
        ("mu", format_f64(h.mu)),
        ("F_h", format_f64(h.f_h)),
        ("epsilon_T", format_f64(h.epsilon_t)),
        ("intersection", h.intersection.to_string()),
        ("threshold_slack", format_f64(h.threshold_slack)),
        ("selected", selected.join("|")),
        ("value", format_f64(trace.value)),
    ];
    pairs
        .into_iter()
        .map(|(k, v)| format!("#{k}={v}\n"))
        .collect()
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(contents))
        .map_err(|e| CliError::io(path, e))
}

/// Write `path` and its sibling sets file.
pub fn write_trace(trace: &RunTrace, path: &Path) -> Result<(), CliError> {
    let header = header_lines(trace);
    let csv_err = |e: csv::Error| CliError::io(path, std::io::Error::other(e));

    let mut x = csv::Writer::from_writer(header.clone().into_bytes());
    x.write_record(["round", "t", "agent", "element", "x_value"])
        .map_err(csv_err)?;
    for r in &trace.rounds {
        for (t, snapshot) in r.x.iter().enumerate() {
            for (i, row) in snapshot.iter().enumerate() {
                for (e, v) in r.elements.iter().zip(row) {
                    let fields = [
                        (r.round + 1).to_string(),
                        t.to_string(),
                        (i + 1).to_string(),
                        e.id().to_string(),
                        format_f64(*v),
                    ];
                    x.write_record(&fields).map_err(csv_err)?;
                }
            }
        }
    }
    let x = x
        .into_inner()
        .map_err(|e| CliError::io(path, e.into_error()))?;
    write_file(path, &x)?;

    let mut sets = csv::Writer::from_writer(header.into_bytes());
    sets.write_record(["round", "t", "agent", "candidate_set"])
        .map_err(csv_err)?;
    for r in &trace.rounds {
        for (s, snapshot) in r.candidates.iter().enumerate() {
            let t = trace.header.t + 1 + s;
            for (i, set) in snapshot.iter().enumerate() {
                let fields = [
                    (r.round + 1).to_string(),
                    t.to_string(),
                    (i + 1).to_string(),
                    set.to_pipe_string(),
                ];
                sets.write_record(&fields).map_err(csv_err)?;
            }
        }
    }
    let sets = sets
        .into_inner()
        .map_err(|e| CliError::io(path, e.into_error()))?;
    write_file(&sets_path(path), &sets)
}

struct Parsed {
    header: BTreeMap<String, String>,
    rows: Vec<csv::StringRecord>,
}

fn parse_file(path: &Path, columns: &[&str]) -> Result<Parsed, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |message: String| CliError::Trace {
        path: path.to_path_buf(),
        message,
    };
    let mut header = BTreeMap::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let (k, v) = line[1..]
            .split_once('=')
            .ok_or_else(|| bad(format!("header line `{line}` lacks `=`")))?;
        header.insert(k.to_string(), v.to_string());
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let found = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if found.iter().collect::<Vec<_>>() != columns {
        return Err(bad(format!(
            "expected columns {columns:?}, found {:?}",
            found.iter().collect::<Vec<_>>()
        )));
    }
    let rows = reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad(e.to_string()))?;
    Ok(Parsed { header, rows })
}

fn field<T: std::str::FromStr>(
    path: &Path,
    map: &BTreeMap<String, String>,
    key: &str,
) -> Result<T, CliError> {
    let raw = map.get(key).ok_or_else(|| CliError::Trace {
        path: path.to_path_buf(),
        message: format!("missing header `{key}`"),
    })?;
    parse_value(path, raw, key)
}

fn parse_value<T: std::str::FromStr>(path: &Path, raw: &str, what: &str) -> Result<T, CliError> {
    raw.trim().parse().map_err(|_| CliError::Trace {
        path: path.to_path_buf(),
        message: format!("cannot parse {what} from `{raw}`"),
    })
}

fn float(path: &Path, map: &BTreeMap<String, String>, key: &str) -> Result<f64, CliError> {
    let raw: String = field(path, map, key)?;
    if raw == "null" {
        return Ok(f64::INFINITY);
    }
    parse_value(path, &raw, key)
}

fn index(path: &Path, raw: &str, what: &str, limit: usize) -> Result<usize, CliError> {
    let v: usize = parse_value(path, raw, what)?;
    if v == 0 || v > limit {
        return Err(CliError::Dimension(format!(
            "{}: {what} {v} outside 1..={limit}",
            path.display()
        )));
    }
    Ok(v - 1)
}

/// Read a trace written by [`write_trace`]. Missing or extra cells are dimension errors.
pub fn read_trace(path: &Path) -> Result<RunTrace, CliError> {
    let x = parse_file(path, &["round", "t", "agent", "element", "x_value"])?;
    let sets_file = sets_path(path);
    let sets = parse_file(&sets_file, &["round", "t", "agent", "candidate_set"])?;
    if sets.header != x.header {
        return Err(CliError::Dimension(format!(
            "{} and {} have different headers",
            path.display(),
            sets_file.display()
        )));
    }
    let h = &x.header;
    let format: String = field(path, h, "format")?;
    if format != FORMAT {
        return Err(CliError::Trace {
            path: path.to_path_buf(),
            message: format!("unknown format `{format}`"),
        });
    }
    let intersection: String = field(path, h, "intersection")?;
    let header = TraceHeader {
        n: field(path, h, "n")?,
        ground: field(path, h, "ground")?,
        k: field(path, h, "K")?,
        t: field(path, h, "T")?,
        t_prime: field(path, h, "T_prime")?,
        diameter: field(path, h, "diameter")?,
        psi: float(path, h, "psi")?,
        mu: float(path, h, "mu")?,
        f_h: float(path, h, "F_h")?,
        epsilon_t: float(path, h, "epsilon_T")?,
        intersection: intersection
            .parse::<IntersectionRule>()
            .map_err(|message| CliError::Trace {
                path: path.to_path_buf(),
                message,
            })?,
        threshold_slack: float(path, h, "threshold_slack")?,
    };
    let selected_raw: String = field(path, h, "selected")?;
    let selected: Vec<Element> = if selected_raw.is_empty() {
        Vec::new()
    } else {
        selected_raw
            .split('|')
            .map(|s| index(path, s, "selected element", header.ground).map(Element))
            .collect::<Result<_, _>>()?
    };
    if selected.len() != header.k {
        return Err(CliError::Dimension(format!(
            "header lists {} selected elements for K = {}",
            selected.len(),
            header.k
        )));
    }
    if header.t_prime < header.t + 1 {
        return Err(CliError::Dimension(format!(
            "T' = {} < T + 1",
            header.t_prime
        )));
    }
    let value = float(path, h, "value")?;

    // x[round][t][agent] -> element -> value
    let (k, t, n) = (header.k, header.t, header.n);
    let mut cells: Vec<Vec<Vec<BTreeMap<usize, f64>>>> =
        vec![vec![vec![BTreeMap::new(); n]; t + 1]; k];
    for row in &x.rows {
        let r = index(path, &row[0], "round", k)?;
        let step: usize = parse_value(path, &row[1], "t")?;
        if step > t {
            return Err(CliError::Dimension(format!(
                "{}: t = {step} exceeds T = {t}",
                path.display()
            )));
        }
        let agent = index(path, &row[2], "agent", n)?;
        let e = index(path, &row[3], "element", header.ground)?;
        let v: f64 = parse_value(path, &row[4], "x_value")?;
        if cells[r][step][agent].insert(e, v).is_some() {
            return Err(CliError::Dimension(format!(
                "{}: duplicate cell round {}, t {step}, agent {}, element {}",
                path.display(),
                r + 1,
                agent + 1,
                e + 1
            )));
        }
    }
    let steps = header.t_prime - header.t;
    let mut candidates: Vec<Vec<Vec<Option<Subset>>>> = vec![vec![vec![None; n]; steps]; k];
    for row in &sets.rows {
        let r = index(&sets_file, &row[0], "round", k)?;
        let step: usize = parse_value(&sets_file, &row[1], "t")?;
        if step <= t || step > header.t_prime {
            return Err(CliError::Dimension(format!(
                "{}: t = {step} outside T+1..=T'",
                sets_file.display()
            )));
        }
        let agent = index(&sets_file, &row[2], "agent", n)?;
        let set = Subset::parse_pipe_string(&row[3])
            .filter(|s| s.is_subset_of(Subset::full(header.ground)))
            .ok_or_else(|| CliError::Trace {
                path: sets_file.clone(),
                message: format!("bad candidate set `{}`", &row[3]),
            })?;
        candidates[r][step - t - 1][agent] = Some(set);
    }

    let mut rounds = Vec::with_capacity(k);
    for (r, (x_round, c_round)) in cells.into_iter().zip(candidates).enumerate() {
        let elements: Vec<Element> = x_round[0][0].keys().map(|&e| Element(e)).collect();
        if elements.is_empty() {
            return Err(CliError::Dimension(format!(
                "{}: round {} has no x rows",
                path.display(),
                r + 1
            )));
        }
        let mut x = Vec::with_capacity(t + 1);
        for (step, snapshot) in x_round.into_iter().enumerate() {
            let mut rows = Vec::with_capacity(n);
            for (agent, map) in snapshot.into_iter().enumerate() {
                if map.keys().ne(elements.iter().map(|e| &e.0)) {
                    return Err(CliError::Dimension(format!(
                        "{}: round {}, t {step}, agent {} does not cover the round's elements",
                        path.display(),
                        r + 1,
                        agent + 1
                    )));
                }
                rows.push(map.into_values().collect::<Vec<f64>>());
            }
            x.push(rows);
        }
        let candidates = c_round
            .into_iter()
            .enumerate()
            .map(|(s, snap)| {
                snap.into_iter()
                    .collect::<Option<Vec<Subset>>>()
                    .ok_or_else(|| {
                        CliError::Dimension(format!(
                            "{}: round {}, t {} is missing agents",
                            sets_file.display(),
                            r + 1,
                            t + 1 + s
                        ))
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        // the recorded maximizer is the lowest-index argmax at t = T
        let argmax = x[t]
            .iter()
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                elements[best]
            })
            .collect();
        rounds.push(RoundTrace {
            round: r,
            elements,
            x,
            argmax,
            candidates,
            chosen: selected[r],
        });
    }
    Ok(RunTrace {
        header,
        rounds,
        selected,
        value,
    })
}
