//! JSON game and strategy files.
//!
//! A game file lists per-player labels, the query distribution as
//! `{"q": [labels], "p": weight}` records (omitted queries weigh 0), and the
//! predicate either as a list of accepted `(q, a)` label tuples or as a dense
//! 0/1 table, queries outermost and players left to right.
//!
//! A strategy file lists `{"q": [labels], "dist": [{"a": [labels], "p": x}]}`
//! per query; leftover mass is ⊥ and absent queries abort outright. The star
//! label `"*"` is only accepted when reading an extended strategy.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{decode, encode, Game, Strategy, SubDist, MASS_TOL};
use crate::transforms::STAR;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedQuery {
    pub q: Vec<String>,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptEntry {
    pub q: Vec<String>,
    pub a: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PredicateSpec {
    AcceptList { entries: Vec<AcceptEntry> },
    Dense { table: Vec<u8> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    pub k: usize,
    pub queries: Vec<Vec<String>>,
    pub answers: Vec<Vec<String>>,
    pub pi: Vec<WeightedQuery>,
    pub predicate: PredicateSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedAnswer {
    pub a: Vec<String>,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyEntry {
    pub q: Vec<String>,
    pub dist: Vec<WeightedAnswer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyFile {
    pub entries: Vec<StrategyEntry>,
}

/// 1-based line of the first occurrence of `needle`, for diagnostics.
fn line_of(text: &str, needle: &str) -> Option<usize> {
    text.find(needle).map(|pos| text[..pos].matches('\n').count() + 1)
}

fn parse_error(text: &str, needle: &str, msg: String) -> Error {
    match line_of(text, needle) {
        Some(line) => Error::Parse(format!("line {line}: {msg}")),
        None => Error::Parse(msg),
    }
}

fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("line {}: {e}", e.line())))
}

struct Resolver {
    maps: Vec<HashMap<String, usize>>,
}

impl Resolver {
    fn new(alphabets: &[Vec<String>]) -> Self {
        Resolver {
            maps: alphabets
                .iter()
                .map(|alpha| alpha.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect())
                .collect(),
        }
    }

    fn digits(&self, labels: &[String], star: Option<&[usize]>, text: &str, what: &str) -> Result<Vec<usize>> {
        if labels.len() != self.maps.len() {
            return Err(parse_error(
                text,
                &format!("\"{}\"", labels.first().map(String::as_str).unwrap_or("")),
                format!("{what} tuple {labels:?} has {} labels, expected {}", labels.len(), self.maps.len()),
            ));
        }
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if l == STAR {
                    return star.map(|s| s[i]).ok_or_else(|| {
                        parse_error(text, "\"*\"", format!("star answer in {what} tuple {labels:?} outside an extended strategy"))
                    });
                }
                self.maps[i].get(l).copied().ok_or_else(|| {
                    parse_error(text, &format!("\"{l}\""), format!("unknown {what} label {l:?} for player {}", i + 1))
                })
            })
            .collect()
    }
}

pub fn parse_game(text: &str) -> Result<Game> {
    let file: GameFile = from_json(text)?;
    game_from_file(&file, text)
}

fn game_from_file(file: &GameFile, text: &str) -> Result<Game> {
    if file.queries.len() != file.k || file.answers.len() != file.k {
        return Err(parse_error(text, "\"k\"", format!("k = {} does not match the alphabet lists", file.k)));
    }
    for alpha in file.queries.iter().chain(&file.answers) {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = alpha.iter().find(|l| !seen.insert(*l)) {
            return Err(parse_error(text, &format!("\"{dup}\""), format!("duplicate label {dup:?}")));
        }
    }
    if file.answers.iter().flatten().any(|l| l == STAR) {
        return Err(parse_error(text, "\"*\"", format!("answer label {STAR:?} is reserved")));
    }
    let qdims: Vec<usize> = file.queries.iter().map(Vec::len).collect();
    let adims: Vec<usize> = file.answers.iter().map(Vec::len).collect();
    let nq: usize = qdims.iter().product();
    let na: usize = adims.iter().product();
    let qres = Resolver::new(&file.queries);
    let ares = Resolver::new(&file.answers);

    let mut pi = vec![0.0; nq];
    let mut seen = vec![false; nq];
    for w in &file.pi {
        let q = encode(&qdims, &qres.digits(&w.q, None, text, "query")?);
        if seen[q] {
            return Err(parse_error(text, "\"pi\"", format!("query {:?} listed twice in pi", w.q)));
        }
        if !w.p.is_finite() || w.p < 0.0 {
            return Err(parse_error(text, "\"pi\"", format!("weight {} of query {:?} is invalid", w.p, w.q)));
        }
        seen[q] = true;
        pi[q] = w.p;
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(parse_error(text, "\"pi\"", format!("pi mass {total} differs from 1")));
    }

    let predicate = match &file.predicate {
        PredicateSpec::AcceptList { entries } => {
            let mut table = vec![false; nq * na];
            for e in entries {
                let q = encode(&qdims, &qres.digits(&e.q, None, text, "query")?);
                let a = encode(&adims, &ares.digits(&e.a, None, text, "answer")?);
                table[q * na + a] = true;
            }
            table
        }
        PredicateSpec::Dense { table } => {
            if table.len() != nq * na {
                return Err(parse_error(
                    text,
                    "\"table\"",
                    format!("dense table has {} entries, expected {}", table.len(), nq * na),
                ));
            }
            if let Some(bad) = table.iter().find(|&&b| b > 1) {
                return Err(parse_error(text, "\"table\"", format!("dense table entry {bad} is not 0 or 1")));
            }
            table.iter().map(|&b| b == 1).collect()
        }
    };
    Game::new(file.queries.clone(), file.answers.clone(), pi, predicate)
        .map_err(|e| parse_error(text, "\"k\"", e.to_string()))
}

/// Canonical form: supported queries and accepted pairs in index order.
pub fn game_to_file(game: &Game) -> GameFile {
    let labels = |alpha: &[Vec<String>], digits: Vec<usize>| -> Vec<String> {
        digits.iter().enumerate().map(|(i, &d)| alpha[i][d].clone()).collect()
    };
    let pi = game
        .support()
        .map(|q| WeightedQuery { q: labels(game.query_labels(), game.decode_query(q)), p: game.pi()[q] })
        .collect();
    let mut entries = Vec::new();
    for q in 0..game.num_queries() {
        for a in (0..game.num_answers()).filter(|&a| game.accepts(q, a)) {
            entries.push(AcceptEntry {
                q: labels(game.query_labels(), game.decode_query(q)),
                a: labels(game.answer_labels(), game.decode_answer(a)),
            });
        }
    }
    GameFile {
        k: game.k(),
        queries: game.query_labels().to_vec(),
        answers: game.answer_labels().to_vec(),
        pi,
        predicate: PredicateSpec::AcceptList { entries },
    }
}

pub fn write_game(game: &Game) -> String {
    serde_json::to_string_pretty(&game_to_file(game)).expect("game files always serialize") + "\n"
}

/// Reads a strategy for `game`. With `extended`, every answer alphabet gains
/// the star symbol at index `|A_i|`.
pub fn parse_strategy(game: &Game, text: &str, extended: bool) -> Result<Strategy> {
    let file: StrategyFile = from_json(text)?;
    let qdims = game.query_sizes().to_vec();
    let base = game.answer_sizes().to_vec();
    let adims: Vec<usize> = if extended { base.iter().map(|n| n + 1).collect() } else { base.clone() };
    let star = if extended { Some(base.as_slice()) } else { None };
    let size: usize = adims.iter().product();
    let qres = Resolver::new(game.query_labels());
    let ares = Resolver::new(game.answer_labels());

    let mut probs: Vec<Option<Vec<f64>>> = vec![None; game.num_queries()];
    for e in &file.entries {
        let q = encode(&qdims, &qres.digits(&e.q, None, text, "query")?);
        if probs[q].is_some() {
            return Err(parse_error(text, "\"entries\"", format!("query {:?} listed twice", e.q)));
        }
        let mut v = vec![0.0; size];
        for w in &e.dist {
            if !w.p.is_finite() || w.p < 0.0 {
                return Err(parse_error(text, "\"dist\"", format!("probability {} at query {:?} is invalid", w.p, e.q)));
            }
            v[encode(&adims, &ares.digits(&w.a, star, text, "answer")?)] += w.p;
        }
        let total: f64 = v.iter().sum();
        if total > 1.0 + MASS_TOL {
            return Err(parse_error(text, "\"dist\"", format!("entry for query {:?} has mass {total} > 1", e.q)));
        }
        probs[q] = Some(v);
    }
    let entries = probs
        .into_iter()
        .map(|v| SubDist::new(game.full(), adims.clone(), v.unwrap_or_else(|| vec![0.0; size])))
        .collect::<Result<Vec<_>>>()?;
    if extended {
        Ok(Strategy::from_entries_unchecked(entries))
    } else {
        Strategy::new(game, entries)
    }
}

/// Canonical form: every query in index order, nonzero answers in index order.
pub fn strategy_to_file(game: &Game, p: &Strategy) -> StrategyFile {
    let entries = p
        .entries()
        .iter()
        .enumerate()
        .map(|(q, d)| {
            let dims = d.dims().to_vec();
            let dist = d
                .probs()
                .iter()
                .enumerate()
                .filter(|(_, &x)| x > 0.0)
                .map(|(a, &x)| {
                    let digits = decode(&dims, a);
                    let a = digits
                        .iter()
                        .enumerate()
                        .map(|(i, &j)| game.answer_labels()[i].get(j).cloned().unwrap_or_else(|| STAR.to_string()))
                        .collect();
                    WeightedAnswer { a, p: x }
                })
                .collect();
            let q = game.decode_query(q).iter().enumerate().map(|(i, &j)| game.query_labels()[i][j].clone()).collect();
            StrategyEntry { q, dist }
        })
        .collect();
    StrategyFile { entries }
}

pub fn write_strategy(game: &Game, p: &Strategy) -> String {
    serde_json::to_string_pretty(&strategy_to_file(game, p)).expect("strategy files always serialize") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::tests::{chsh, pr_box};
    use crate::transforms::run_subns_to_hrns;

    const CHSH_DENSE: &str = r#"{
  "k": 2,
  "queries": [["x0", "x1"], ["y0", "y1"]],
  "answers": [["0", "1"], ["0", "1"]],
  "pi": [
    {"q": ["x0", "y0"], "p": 0.25},
    {"q": ["x0", "y1"], "p": 0.25},
    {"q": ["x1", "y0"], "p": 0.25},
    {"q": ["x1", "y1"], "p": 0.25}
  ],
  "predicate": {"mode": "dense", "table": [1,0,0,1, 1,0,0,1, 1,0,0,1, 0,1,1,0]}
}"#;

    #[test]
    fn round_trip_is_stable() {
        let g = parse_game(CHSH_DENSE).unwrap();
        assert_eq!(g.predicate_table(), chsh().predicate_table());
        let once = write_game(&g);
        let twice = write_game(&parse_game(&once).unwrap());
        assert_eq!(once, twice);
        let p = pr_box(&chsh());
        let s = write_strategy(&g, &p);
        let back = parse_strategy(&g, &s, false).unwrap();
        assert_eq!(back, p);
        assert_eq!(write_strategy(&g, &back), s);
    }

    #[test]
    fn pi_mass_is_checked() {
        let bad = CHSH_DENSE.replacen("\"p\": 0.25}", "\"p\": 0.15}", 1);
        let err = parse_game(&bad).unwrap_err().to_string();
        assert!(err.contains("pi mass"), "{err}");
        assert!(err.contains("line 5"), "{err}");
    }

    #[test]
    fn unknown_labels_and_bad_tables() {
        let bad = CHSH_DENSE.replace("[\"x1\", \"y1\"]", "[\"x1\", \"y9\"]");
        assert!(parse_game(&bad).unwrap_err().to_string().contains("y9"));
        let bad = CHSH_DENSE.replace("0,1,1,0]", "0,1,1]");
        assert!(parse_game(&bad).unwrap_err().to_string().contains("dense table"));
        assert!(matches!(parse_game("{\"k\": 2,"), Err(Error::Parse(_))));
    }

    #[test]
    fn stars_need_extended_context() {
        let g = chsh();
        let text = r#"{"entries": [{"q": ["q0", "q0"], "dist": [{"a": ["a0", "*"], "p": 0.5}]}]}"#;
        let err = parse_strategy(&g, text, false).unwrap_err().to_string();
        assert!(err.contains("extended"), "{err}");
        let p = parse_strategy(&g, text, true).unwrap();
        // (a0, *) is index 0 * 3 + 2
        assert_eq!(p.get(0).get(2), 0.5);
        assert_eq!(p.get(1).total(), 0.0);
    }

    #[test]
    fn extended_strategies_round_trip() {
        let g = chsh();
        let t = run_subns_to_hrns(&g, &pr_box(&g), 0.5).unwrap();
        let s = write_strategy(&g, &t.p_star_star);
        assert!(s.contains("\"*\""));
        let back = parse_strategy(&g, &s, true).unwrap();
        assert_eq!(back, t.p_star_star);
    }

    #[test]
    fn overfull_entries_are_rejected() {
        let g = chsh();
        let text = r#"{"entries": [{"q": ["q0", "q0"], "dist": [{"a": ["a0", "a0"], "p": 0.7}, {"a": ["a1", "a1"], "p": 0.4}]}]}"#;
        assert!(parse_strategy(&g, text, false).unwrap_err().to_string().contains("mass"));
    }
}
