//! Combining systems: early fusion of embeddings and late fusion by vote.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::embeddings::{EmbeddingSource, EmbeddingVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    Concat,
    Mean,
    Vote,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(FusionMode::Concat),
            "mean" => Ok(FusionMode::Mean),
            "vote" => Ok(FusionMode::Vote),
            other => Err(Error::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Concat => "concat",
            FusionMode::Mean => "mean",
            FusionMode::Vote => "vote",
        })
    }
}

/// Fusion mode plus member systems in priority order; the first member
/// breaks voting ties.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSpec {
    pub mode: FusionMode,
    pub members: Vec<String>,
}

impl FusionSpec {
    pub fn new(mode: FusionMode, members: Vec<String>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Config("fusion needs at least two members".into()));
        }
        Ok(Self { mode, members })
    }
}

/// Fuses one embedding per system for every utterance. Each inner slice is
/// one system; all systems must cover the same ids. Output follows the id
/// order of the first system.
pub fn early_fuse(systems: &[Vec<EmbeddingVector>], mode: FusionMode) -> Result<Vec<EmbeddingVector>> {
    if systems.len() < 2 {
        return Err(Error::InvalidInput("early fusion needs at least two systems".into()));
    }
    let lookups: Vec<BTreeMap<&str, &EmbeddingVector>> = systems
        .iter()
        .map(|s| s.iter().map(|e| (e.utterance_id.as_str(), e)).collect())
        .collect();
    for (i, l) in lookups.iter().enumerate() {
        if l.len() != systems[0].len() || systems[i].len() != systems[0].len() {
            return Err(Error::InvalidInput(format!(
                "system {i} covers {} utterances, system 0 covers {}",
                systems[i].len(),
                systems[0].len()
            )));
        }
    }

    systems[0]
        .iter()
        .map(|first| {
            let id = first.utterance_id.as_str();
            let members: Vec<&EmbeddingVector> = lookups
                .iter()
                .map(|l| l.get(id).copied().ok_or_else(|| Error::MissingId(id.to_string())))
                .collect::<Result<_>>()?;
            let values = match mode {
                FusionMode::Concat => members.iter().flat_map(|m| m.values.iter().copied()).collect(),
                FusionMode::Mean => {
                    let dim = first.values.len();
                    if let Some(bad) = members.iter().find(|m| m.values.len() != dim) {
                        return Err(Error::Dimension {
                            expected: dim,
                            got: bad.values.len(),
                        });
                    }
                    let n = members.len() as f64;
                    (0..dim)
                        .map(|j| members.iter().map(|m| m.values[j]).sum::<f64>() / n)
                        .collect()
                }
                FusionMode::Vote => {
                    return Err(Error::InvalidInput(
                        "vote is a late-fusion mode; use late_fuse_vote".into(),
                    ))
                }
            };
            Ok(EmbeddingVector {
                utterance_id: id.to_string(),
                values,
                source: EmbeddingSource::Fused,
            })
        })
        .collect()
}

/// Strict-majority vote over member predictions given in member order; with
/// no strict majority the first member wins.
pub fn late_fuse_vote(predictions: &[usize]) -> Result<usize> {
    let first = *predictions
        .first()
        .ok_or_else(|| Error::InvalidInput("no member predictions".into()))?;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &p in predictions {
        *counts.entry(p).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .find(|&(_, n)| 2 * n > predictions.len())
        .map_or(first, |(class, _)| class))
}

pub type Predictions = Vec<(String, usize)>;

pub fn parse_predictions(text: &str) -> Result<Predictions> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "id,label" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header \"id,label\"".into(),
            })
        }
    }
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "expected id,label".into(),
        })?;
        let label = label.trim().parse().map_err(|_| Error::InvalidLabel {
            line: line_no,
            token: label.trim().to_string(),
        })?;
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId {
                line: line_no,
                id: id.to_string(),
            });
        }
        out.push((id.to_string(), label));
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Predictions> {
    let path = path.as_ref();
    parse_predictions(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn predictions_to_csv(preds: &[(String, usize)]) -> String {
    let mut out = String::from("id,label\n");
    for (id, label) in preds {
        out.push_str(&format!("{id},{label}\n"));
    }
    out
}

pub fn save_predictions(path: impl AsRef<Path>, preds: &[(String, usize)]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, predictions_to_csv(preds)).map_err(|e| Error::io(path, e))
}

/// Votes per utterance across member prediction sets (member order = slice
/// order). Every member must cover the ids of the first.
pub fn vote_predictions(members: &[Predictions]) -> Result<Predictions> {
    if members.len() < 2 {
        return Err(Error::InvalidInput("voting needs at least two members".into()));
    }
    let maps: Vec<BTreeMap<&str, usize>> = members
        .iter()
        .map(|m| m.iter().map(|(id, l)| (id.as_str(), *l)).collect())
        .collect();
    for (i, m) in members.iter().enumerate() {
        if m.len() != members[0].len() {
            return Err(Error::InvalidInput(format!(
                "member {i} has {} predictions, member 0 has {}",
                m.len(),
                members[0].len()
            )));
        }
    }
    members[0]
        .iter()
        .map(|(id, _)| {
            let votes: Vec<usize> = maps
                .iter()
                .map(|m| m.get(id.as_str()).copied().ok_or_else(|| Error::MissingId(id.clone())))
                .collect::<Result<_>>()?;
            Ok((id.clone(), late_fuse_vote(&votes)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(id: &str, v: &[f64]) -> EmbeddingVector {
        EmbeddingVector {
            utterance_id: id.into(),
            values: v.to_vec(),
            source: EmbeddingSource::Acoustic,
        }
    }

    #[test]
    fn vote_examples() {
        assert_eq!(late_fuse_vote(&[0, 0, 1]).unwrap(), 0);
        assert_eq!(late_fuse_vote(&[0, 1, 2]).unwrap(), 0);
        assert_eq!(late_fuse_vote(&[2, 1, 0]).unwrap(), 2);
        assert_eq!(late_fuse_vote(&[1, 1, 1]).unwrap(), 1);
        assert_eq!(late_fuse_vote(&[1, 2]).unwrap(), 1);
        assert!(late_fuse_vote(&[]).is_err());
    }

    #[test]
    fn mean_and_concat() {
        let a = vec![emb("u", &[1.0, 3.0])];
        let b = vec![emb("u", &[3.0, 1.0])];
        let m = early_fuse(&[a.clone(), b.clone()], FusionMode::Mean).unwrap();
        assert_eq!(m[0].values, vec![2.0, 2.0]);
        assert_eq!(m[0].source, EmbeddingSource::Fused);
        let c = early_fuse(&[a.clone(), b], FusionMode::Concat).unwrap();
        assert_eq!(c[0].values, vec![1.0, 3.0, 3.0, 1.0]);
        let same = early_fuse(&[a.clone(), a.clone(), a.clone()], FusionMode::Mean).unwrap();
        assert_eq!(same[0].values, a[0].values);
    }

    #[test]
    fn concat_512_triplet() {
        let v: Vec<Vec<EmbeddingVector>> = (0..3).map(|_| vec![emb("x", &[0.5; 512])]).collect();
        assert_eq!(early_fuse(&v, FusionMode::Concat).unwrap()[0].values.len(), 1536);
    }

    #[test]
    fn coverage_and_dim_errors() {
        let a = vec![emb("u", &[1.0]), emb("v", &[1.0])];
        let b = vec![emb("u", &[1.0]), emb("w", &[1.0])];
        assert!(matches!(early_fuse(&[a.clone(), b], FusionMode::Concat), Err(Error::MissingId(_))));
        let c = vec![emb("u", &[1.0, 2.0]), emb("v", &[1.0, 2.0])];
        assert!(matches!(early_fuse(&[a.clone(), c], FusionMode::Mean), Err(Error::Dimension { .. })));
        assert!(early_fuse(&[a.clone()], FusionMode::Mean).is_err());
        assert!(early_fuse(&[a.clone(), a], FusionMode::Vote).is_err());
    }

    #[test]
    fn prediction_csv() {
        let preds = vec![("a".to_string(), 1), ("b".to_string(), 0)];
        let text = predictions_to_csv(&preds);
        assert_eq!(text, "id,label\na,1\nb,0\n");
        assert_eq!(parse_predictions(&text).unwrap(), preds);
        assert!(parse_predictions("id,label\na,1\na,2\n").is_err());
    }

    #[test]
    fn vote_over_files() {
        let p = |v: &[(&str, usize)]| v.iter().map(|(i, l)| (i.to_string(), *l)).collect::<Predictions>();
        let m1 = p(&[("a", 0), ("b", 1), ("c", 2)]);
        let m2 = p(&[("c", 2), ("a", 1), ("b", 1)]);
        let m3 = p(&[("a", 2), ("b", 0), ("c", 0)]);
        let fused = vote_predictions(&[m1, m2, m3]).unwrap();
        assert_eq!(fused, p(&[("a", 0), ("b", 1), ("c", 2)]));
    }

    proptest! {
        #[test]
        fn majority_is_permutation_invariant(mut v in proptest::collection::vec(0usize..3, 3..8), rot in 0usize..8) {
            let first = late_fuse_vote(&v).unwrap();
            let has_majority = (0..3).any(|c| 2 * v.iter().filter(|&&x| x == c).count() > v.len());
            let n = v.len();
            v.rotate_left(rot % n);
            if has_majority {
                prop_assert_eq!(late_fuse_vote(&v).unwrap(), first);
            }
        }
    }
}
