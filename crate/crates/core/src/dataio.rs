//! Dataset ingestion and fold schemes.
//!
//! Instances are sparse concept vectors read from LIBSVM text
//! (`<label> <idx>:<val> ...`, 1-based indices) or drawn from a seeded
//! Gaussian-mixture generator. Missing concepts are implicit zeros.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::seed;

pub type InstanceId = usize;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate concept index {index}")]
    DuplicateIndex { line: usize, index: usize },
    #[error("line {line}: concept indices not increasing ({prev} then {index})")]
    NotIncreasing { line: usize, prev: usize, index: usize },
    #[error("line {line}: label `{label}` not in label map")]
    UnknownLabel { line: usize, label: String },
    #[error("concept index {index} does not fit vocabulary size {vocab_size}")]
    VocabMismatch { index: usize, vocab_size: usize },
    #[error("invalid concept vector: {0}")]
    Concept(String),
    #[error("invalid label space: {0}")]
    LabelSpace(String),
    #[error("invalid fold scheme: {0}")]
    Folds(String),
    #[error("unknown instance id {0}")]
    UnknownInstance(InstanceId),
    #[error("invalid synthetic spec: {0}")]
    Synth(String),
    #[error("empty dataset")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Sparse concept vector: strictly increasing indices, finite intensities.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConceptVector {
    entries: Vec<(usize, f64)>,
}

impl ConceptVector {
    pub fn new(entries: Vec<(usize, f64)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(DataError::Concept(format!(
                    "indices not strictly increasing: {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(i, v)) = entries.iter().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::Concept(format!("non-finite intensity {v} at index {i}")));
        }
        Ok(Self { entries })
    }

    /// Encodes every coordinate of a dense vector, zeros included.
    pub fn from_dense(x: &[f64]) -> Result<Self> {
        Self::new(x.iter().copied().enumerate().collect())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|e| e.0)
    }

    /// Writes into a zeroed buffer. Panics if an index is out of range.
    pub fn scatter_into(&self, out: &mut [f64]) {
        for &(i, v) in &self.entries {
            out[i] = v;
        }
    }

    pub fn densify(&self, width: usize) -> Result<Vec<f64>> {
        if let Some(index) = self.max_index().filter(|&m| m >= width) {
            return Err(DataError::VocabMismatch {
                index,
                vocab_size: width,
            });
        }
        let mut out = vec![0.0; width];
        self.scatter_into(&mut out);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Binary,
    Multiclass,
    /// Ordered classes of a discretized range, handled as plain multiclass.
    DiscretizedRange,
}

/// Ordered class identifiers; the position of an identifier is its class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    classes: Vec<String>,
    kind: LabelKind,
}

impl LabelSpace {
    pub fn new(classes: Vec<String>, kind: LabelKind) -> Result<Self> {
        if classes.len() < 2 {
            return Err(DataError::LabelSpace(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let distinct: BTreeSet<&str> = classes.iter().map(String::as_str).collect();
        if distinct.len() != classes.len() {
            return Err(DataError::LabelSpace("duplicate class identifiers".into()));
        }
        if kind == LabelKind::Binary && classes.len() != 2 {
            return Err(DataError::LabelSpace(
                "binary label space needs exactly 2 classes".into(),
            ));
        }
        Ok(Self { classes, kind })
    }

    /// Binary for two classes, multiclass otherwise.
    pub fn from_classes<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        let kind = if classes.len() == 2 {
            LabelKind::Binary
        } else {
            LabelKind::Multiclass
        };
        Self::new(classes, kind)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Maps a file label token to its class index. Tokens match exactly, or
    /// numerically when both sides parse as numbers (`+1` matches `1`).
    pub fn class_of(&self, token: &str) -> Option<usize> {
        if let Some(i) = self.classes.iter().position(|c| c == token) {
            return Some(i);
        }
        let t: f64 = token.parse().ok()?;
        self.classes.iter().position(|c| c.parse::<f64>().is_ok_and(|v| v == t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub concepts: ConceptVector,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vocab_size: usize,
    label_space: LabelSpace,
    instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(vocab_size: usize, label_space: LabelSpace, instances: Vec<Instance>) -> Result<Self> {
        if vocab_size == 0 {
            return Err(DataError::Concept("vocabulary size must be positive".into()));
        }
        let mut ids = BTreeSet::new();
        for inst in &instances {
            if inst.label >= label_space.len() {
                return Err(DataError::LabelSpace(format!(
                    "instance {} has label index {} outside {} classes",
                    inst.id,
                    inst.label,
                    label_space.len()
                )));
            }
            if !ids.insert(inst.id) {
                return Err(DataError::Concept(format!("duplicate instance id {}", inst.id)));
            }
            if let Some(index) = inst.concepts.max_index().filter(|&m| m >= vocab_size) {
                return Err(DataError::VocabMismatch { index, vocab_size });
            }
        }
        Ok(Self {
            vocab_size,
            label_space,
            instances,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.len()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.label).collect()
    }

    pub fn ids(&self) -> Vec<InstanceId> {
        self.instances.iter().map(|i| i.id).collect()
    }

    pub fn position_of(&self, id: InstanceId) -> Option<usize> {
        self.instances.iter().position(|i| i.id == id)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for inst in &self.instances {
            counts[inst.label] += 1;
        }
        counts
    }

    /// Re-declares the vocabulary size, e.g. to align a test file with its
    /// training file. Shrinking below an index in use is an error.
    pub fn with_vocab_size(mut self, vocab_size: usize) -> Result<Self> {
        if let Some(index) = self.instances.iter().filter_map(|i| i.concepts.max_index()).max() {
            if index >= vocab_size {
                return Err(DataError::VocabMismatch { index, vocab_size });
            }
        }
        self.vocab_size = vocab_size;
        Ok(self)
    }

    pub fn densify(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), self.vocab_size);
        for (r, inst) in self.instances.iter().enumerate() {
            inst.concepts.scatter_into(m.row_mut(r));
        }
        m
    }

    /// Subset by row positions, keeping ids.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        Dataset {
            vocab_size: self.vocab_size,
            label_space: self.label_space.clone(),
            instances: positions.iter().map(|&p| self.instances[p].clone()).collect(),
        }
    }
}

fn split_label(line: &str) -> (&str, &str) {
    match line.find(char::is_whitespace) {
        Some(p) => (&line[..p], &line[p..]),
        None => (line, ""),
    }
}

fn content_of(raw: &str) -> &str {
    // trailing `# comment` is permitted by LIBSVM tooling
    raw.split('#').next().unwrap_or("").trim()
}

/// Collects the distinct label tokens of a LIBSVM stream, ordered numerically
/// when every token is numeric and lexically otherwise.
pub fn scan_labels<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut tokens = Vec::<String>::new();
    for (lineno, raw) in reader.lines().enumerate() {
        let raw = raw?;
        let line = content_of(&raw);
        if line.is_empty() {
            continue;
        }
        let (label, _) = split_label(line);
        let is_new = match label.parse::<f64>() {
            Ok(v) => !tokens.iter().any(|t| t.parse::<f64>().is_ok_and(|u| u == v)),
            Err(_) => !tokens.iter().any(|t| t == label),
        };
        if is_new {
            if tokens.len() > 10_000 {
                return Err(DataError::Malformed {
                    line: lineno + 1,
                    reason: "more than 10000 distinct labels".into(),
                });
            }
            tokens.push(label.to_string());
        }
    }
    let all_numeric = tokens.iter().all(|t| t.parse::<f64>().is_ok());
    if all_numeric {
        tokens.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    } else {
        tokens.sort();
    }
    Ok(tokens)
}

/// Parses LIBSVM text. File indices are 1-based and become 0-based concept
/// indices. The vocabulary size is `max index + 1` unless `vocab_size`
/// overrides it; an override smaller than an index in the file is an error.
/// Instance ids are 0-based line numbers.
pub fn parse_libsvm<R: BufRead>(reader: R, labels: &LabelSpace, vocab_size: Option<usize>) -> Result<Dataset> {
    let mut instances = Vec::new();
    let mut max_index: Option<usize> = None;
    for (lineno, raw) in reader.lines().enumerate() {
        let raw = raw?;
        let line_no = lineno + 1;
        let line = content_of(&raw);
        if line.is_empty() {
            continue;
        }
        let (label_tok, rest) = split_label(line);
        let label = labels.class_of(label_tok).ok_or_else(|| DataError::UnknownLabel {
            line: line_no,
            label: label_tok.to_string(),
        })?;
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for tok in rest.split_whitespace() {
            let (idx, val) = tok.split_once(':').ok_or_else(|| DataError::Malformed {
                line: line_no,
                reason: format!("expected `<index>:<value>`, got `{tok}`"),
            })?;
            let idx: usize = idx.parse().map_err(|_| DataError::Malformed {
                line: line_no,
                reason: format!("bad index `{idx}`"),
            })?;
            if idx == 0 {
                return Err(DataError::Malformed {
                    line: line_no,
                    reason: "indices are 1-based; found 0".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| DataError::Malformed {
                line: line_no,
                reason: format!("bad value `{val}`"),
            })?;
            if !val.is_finite() {
                return Err(DataError::Malformed {
                    line: line_no,
                    reason: format!("non-finite value at index {idx}"),
                });
            }
            let index = idx - 1;
            if let Some(&(prev, _)) = entries.last() {
                if index == prev {
                    return Err(DataError::DuplicateIndex {
                        line: line_no,
                        index: idx,
                    });
                }
                if index < prev {
                    return Err(DataError::NotIncreasing {
                        line: line_no,
                        prev: prev + 1,
                        index: idx,
                    });
                }
            }
            entries.push((index, val));
        }
        if let Some(&(last, _)) = entries.last() {
            max_index = Some(max_index.map_or(last, |m| m.max(last)));
        }
        instances.push(Instance {
            id: lineno,
            concepts: ConceptVector { entries },
            label,
        });
    }
    let needed = max_index.map_or(1, |m| m + 1);
    let vocab = match vocab_size {
        Some(v) if v < needed => {
            return Err(DataError::VocabMismatch {
                index: needed - 1,
                vocab_size: v,
            })
        }
        Some(v) => v,
        None => needed,
    };
    Dataset::new(vocab, labels.clone(), instances)
}

/// Writes LIBSVM text using class identifiers as labels and 1-based indices.
/// Values use the shortest representation that parses back to the same bits.
pub fn write_libsvm<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for inst in dataset.instances() {
        write!(out, "{}", dataset.label_space.classes[inst.label])?;
        for &(i, v) in inst.concepts.entries() {
            write!(out, " {}:{}", i + 1, v)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-level cross-validation scheme over row positions `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldMap {
    level: usize,
    folds: usize,
    assignment: Vec<usize>,
}

impl FoldMap {
    /// Builds from an explicit assignment; folds are 0-based.
    pub fn from_assignment(level: usize, folds: usize, assignment: Vec<usize>) -> Result<Self> {
        if folds < 2 {
            return Err(DataError::Folds(format!("need at least 2 folds, got {folds}")));
        }
        let mut sizes = vec![0usize; folds];
        for &f in &assignment {
            if f >= folds {
                return Err(DataError::Folds(format!("fold {f} out of range 0..{folds}")));
            }
            sizes[f] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(DataError::Folds(format!("fold {empty} is empty")));
        }
        Ok(Self {
            level,
            folds,
            assignment,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn fold_of(&self, position: usize) -> usize {
        self.assignment[position]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Row positions in `fold`, ascending.
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&p| self.assignment[p] == fold).collect()
    }

    /// Row positions outside `fold`, ascending.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&p| self.assignment[p] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Balanced fold assignment: a seeded shuffle of `0..n` followed by
/// round-robin dealing, so fold sizes differ by at most one.
pub fn assign_folds(n: usize, folds: usize, level: usize, seed: u64) -> Result<FoldMap> {
    if folds < 2 {
        return Err(DataError::Folds(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(DataError::Folds(format!("{n} instances cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, &[0xF01D, level as u64]));
    let mut assignment = vec![0; n];
    for (k, &p) in order.iter().enumerate() {
        assignment[p] = k % folds;
    }
    FoldMap::from_assignment(level, folds, assignment)
}

/// Ids of every instance not sharing a fold with instance `s`.
pub fn fold_complement(fold_map: &FoldMap, s: InstanceId, dataset: &Dataset) -> Result<Vec<InstanceId>> {
    if fold_map.len() != dataset.len() {
        return Err(DataError::Folds(format!(
            "fold map covers {} rows but dataset has {}",
            fold_map.len(),
            dataset.len()
        )));
    }
    let pos = dataset.position_of(s).ok_or(DataError::UnknownInstance(s))?;
    let fold = fold_map.fold_of(pos);
    Ok(fold_map
        .complement(fold)
        .into_iter()
        .map(|p| dataset.instances[p].id)
        .collect())
}

/// Isotropic unit-variance Gaussian clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub n: usize,
    /// Distance between neighbouring class means.
    pub class_separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(DataError::Synth("num_classes must be at least 2".into()));
        }
        if self.dim == 0 {
            return Err(DataError::Synth("dim must be at least 1".into()));
        }
        if self.n < self.num_classes {
            return Err(DataError::Synth(format!(
                "n = {} is smaller than num_classes = {}",
                self.n, self.num_classes
            )));
        }
        if !self.class_separation.is_finite() || self.class_separation < 0.0 {
            return Err(DataError::Synth(
                "class_separation must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Class means. Two classes sit at `±sep/2` on axis 0; more classes sit
    /// on a line (dim 1) or on a circle in the first two axes, neighbours
    /// `sep` apart.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let c = self.num_classes;
        let sep = self.class_separation;
        (0..c)
            .map(|k| {
                let mut mu = vec![0.0; self.dim];
                if c == 2 {
                    mu[0] = if k == 0 { -sep / 2.0 } else { sep / 2.0 };
                } else if self.dim == 1 {
                    mu[0] = sep * (k as f64 - (c - 1) as f64 / 2.0);
                } else {
                    let r = sep / (2.0 * (std::f64::consts::PI / c as f64).sin());
                    let a = 2.0 * std::f64::consts::PI * k as f64 / c as f64;
                    mu[0] = r * a.cos();
                    mu[1] = r * a.sin();
                }
                mu
            })
            .collect()
    }
}

/// Class-balanced Gaussian mixture; class names are `"0"`, `"1"`, ...
pub fn synth_gaussian_mixture(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let c = spec.num_classes;
    let mut labels: Vec<usize> = (0..spec.n).map(|i| i % c).collect();
    let mut rng = seed::rng(spec.seed, &[0x5EED]);
    labels.shuffle(&mut rng);
    let means = spec.class_means();
    let instances = labels
        .into_iter()
        .enumerate()
        .map(|(id, label)| {
            let x: Vec<f64> = means[label]
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            Ok(Instance {
                id,
                concepts: ConceptVector::from_dense(&x)?,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let space = LabelSpace::from_classes((0..c).map(|k| k.to_string()))?;
    Dataset::new(spec.dim, space, instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pm1() -> LabelSpace {
        LabelSpace::from_classes(["-1", "+1"]).unwrap()
    }

    #[test]
    fn parses_two_line_example() {
        let d = parse_libsvm("1 3:0.5 7:1.0\n-1 1:2.0".as_bytes(), &pm1(), None).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), vec![1, 0]);
        assert_eq!(d.instances()[0].concepts.entries(), &[(2, 0.5), (6, 1.0)]);
        assert_eq!(d.instances()[1].concepts.entries(), &[(0, 2.0)]);
        assert_eq!(d.vocab_size(), 7);
        assert_eq!(d.ids(), vec![0, 1]);
    }

    #[test]
    fn parse_errors_report_lines() {
        let space = pm1();
        let dup = parse_libsvm("1 1:1\n1 2:1 2:3".as_bytes(), &space, None).unwrap_err();
        assert!(matches!(dup, DataError::DuplicateIndex { line: 2, index: 2 }));
        let dec = parse_libsvm("1 3:1 2:1".as_bytes(), &space, None).unwrap_err();
        assert!(matches!(dec, DataError::NotIncreasing { line: 1, .. }));
        let lab = parse_libsvm("1 1:1\n2 1:1".as_bytes(), &space, None).unwrap_err();
        assert!(matches!(lab, DataError::UnknownLabel { line: 2, .. }));
        let bad = parse_libsvm("1 1-1".as_bytes(), &space, None).unwrap_err();
        assert!(matches!(bad, DataError::Malformed { line: 1, .. }));
        let zero = parse_libsvm("1 0:1".as_bytes(), &space, None).unwrap_err();
        assert!(matches!(zero, DataError::Malformed { .. }));
        let nan = parse_libsvm("1 1:nan".as_bytes(), &space, None).unwrap_err();
        assert!(matches!(nan, DataError::Malformed { .. }));
    }

    #[test]
    fn vocab_override_aligns_or_rejects() {
        let space = pm1();
        let d = parse_libsvm("1 3:1".as_bytes(), &space, Some(10)).unwrap();
        assert_eq!(d.vocab_size(), 10);
        assert!(matches!(
            parse_libsvm("1 3:1".as_bytes(), &space, Some(2)),
            Err(DataError::VocabMismatch { .. })
        ));
    }

    #[test]
    fn blank_lines_and_comments() {
        let d = parse_libsvm("# header\n1 1:1 # note\n\n-1 2:1\n".as_bytes(), &pm1(), None).unwrap();
        assert_eq!(d.ids(), vec![1, 3]);
    }

    #[test]
    fn scan_labels_orders_numerically() {
        let labels = scan_labels("+1 1:1\n-1 1:1\n1 2:1\n10 1:1\n2 1:1".as_bytes()).unwrap();
        assert_eq!(labels, vec!["-1", "+1", "2", "10"]);
    }

    #[test]
    fn label_space_rules() {
        assert!(LabelSpace::from_classes(["a"]).is_err());
        assert!(LabelSpace::from_classes(["a", "a"]).is_err());
        assert!(LabelSpace::new(vec!["a".into(), "b".into(), "c".into()], LabelKind::Binary).is_err());
        let s = LabelSpace::new(
            vec!["lo".into(), "mid".into(), "hi".into()],
            LabelKind::DiscretizedRange,
        )
        .unwrap();
        assert_eq!(s.class_of("mid"), Some(1));
        assert_eq!(pm1().class_of("1"), Some(1));
        assert_eq!(pm1().class_of("-1.0"), Some(0));
    }

    #[test]
    fn concept_vector_invariants() {
        assert!(ConceptVector::new(vec![(1, 1.0), (1, 2.0)]).is_err());
        assert!(ConceptVector::new(vec![(0, f64::INFINITY)]).is_err());
        let c = ConceptVector::new(vec![(0, 1.0), (4, 2.0)]).unwrap();
        assert_eq!(c.densify(5).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 2.0]);
        assert!(c.densify(4).is_err());
    }

    #[test]
    fn folds_balanced_and_deterministic() {
        let f = assign_folds(6, 3, 1, 42).unwrap();
        assert_eq!(f.fold_sizes(), vec![2, 2, 2]);
        assert_eq!(f, assign_folds(6, 3, 1, 42).unwrap());
        let g = assign_folds(5, 5, 1, 9).unwrap();
        assert_eq!(g.fold_sizes(), vec![1; 5]);
        assert!(assign_folds(2, 3, 1, 0).is_err());
        assert!(assign_folds(5, 1, 1, 0).is_err());
        // levels draw independent schemes
        let a = assign_folds(200, 3, 1, 5).unwrap();
        let b = assign_folds(200, 3, 2, 5).unwrap();
        assert_ne!(a.assignment(), b.assignment());
    }

    fn tiny(n: usize) -> Dataset {
        let text: String = (0..n)
            .map(|i| format!("{} 1:{}\n", if i % 2 == 0 { "-1" } else { "1" }, i))
            .collect();
        parse_libsvm(text.as_bytes(), &pm1(), None).unwrap()
    }

    #[test]
    fn complement_examples() {
        let d = tiny(4);
        let f = FoldMap::from_assignment(1, 2, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(fold_complement(&f, 0, &d).unwrap(), vec![2, 3]);
        assert!(matches!(
            fold_complement(&f, 99, &d),
            Err(DataError::UnknownInstance(99))
        ));

        let d6 = tiny(6);
        let f6 = assign_folds(6, 3, 1, 3).unwrap();
        for s in d6.ids() {
            let comp = fold_complement(&f6, s, &d6).unwrap();
            assert_eq!(comp.len(), 4);
            let fs = f6.fold_of(s);
            assert!(comp.iter().all(|&c| f6.fold_of(c) != fs));
        }

        let f3 = FoldMap::from_assignment(1, 3, vec![0, 1, 2, 0, 1, 2]).unwrap();
        assert_eq!(fold_complement(&f3, 1, &d6).unwrap(), vec![0, 2, 3, 5]);
    }

    #[test]
    fn from_assignment_rejects_empty_folds() {
        assert!(FoldMap::from_assignment(1, 3, vec![0, 0, 1]).is_err());
        assert!(FoldMap::from_assignment(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn synth_balanced_and_seeded() {
        let spec = SynthSpec {
            num_classes: 2,
            dim: 3,
            n: 100,
            class_separation: 2.0,
            seed: 1,
        };
        let d = synth_gaussian_mixture(&spec).unwrap();
        assert_eq!(d.class_counts(), vec![50, 50]);
        assert_eq!(d.vocab_size(), 3);
        assert!(d.instances().iter().all(|i| i.concepts.entries().len() == 3));
        assert_eq!(d, synth_gaussian_mixture(&spec).unwrap());
        let three = synth_gaussian_mixture(&SynthSpec {
            num_classes: 3,
            n: 10,
            ..spec.clone()
        })
        .unwrap();
        assert_eq!(three.class_counts(), vec![4, 3, 3]);
        assert!(synth_gaussian_mixture(&SynthSpec {
            num_classes: 1,
            ..spec.clone()
        })
        .is_err());
        assert!(synth_gaussian_mixture(&SynthSpec { n: 1, ..spec.clone() }).is_err());
        assert!(synth_gaussian_mixture(&SynthSpec { dim: 0, ..spec }).is_err());
    }

    #[test]
    fn class_means_have_requested_spacing() {
        for (c, dim) in [(2, 1), (3, 1), (3, 2), (5, 4)] {
            let spec = SynthSpec {
                num_classes: c,
                dim,
                n: c,
                class_separation: 3.0,
                seed: 0,
            };
            let m = spec.class_means();
            let d: f64 = m[0].iter().zip(&m[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((d - 3.0).abs() < 1e-12, "c={c} dim={dim} d={d}");
        }
    }

    /// Monte-Carlo check of the Bayes rule: for means ±1 on axis 0 the optimal
    /// rule is `sign(x0)` with accuracy Φ(1) ≈ 0.8413.
    #[test]
    fn separation_two_bayes_accuracy_monte_carlo() {
        let spec = SynthSpec {
            num_classes: 2,
            dim: 2,
            n: 200_000,
            class_separation: 2.0,
            seed: 11,
        };
        let d = synth_gaussian_mixture(&spec).unwrap();
        let hits = d
            .instances()
            .iter()
            .filter(|i| (i.concepts.entries()[0].1 > 0.0) == (i.label == 1))
            .count();
        let acc = hits as f64 / d.len() as f64;
        // Φ(1) = 0.841344746; MC std error ≈ 0.0008
        assert!((acc - 0.841_344_746).abs() < 0.004, "acc = {acc}");
    }

    #[test]
    fn zero_separation_is_uninformative() {
        let spec = SynthSpec {
            num_classes: 2,
            dim: 1,
            n: 100_000,
            class_separation: 0.0,
            seed: 5,
        };
        let d = synth_gaussian_mixture(&spec).unwrap();
        let hits = d
            .instances()
            .iter()
            .filter(|i| (i.concepts.entries()[0].1 > 0.0) == (i.label == 1))
            .count();
        let acc = hits as f64 / d.len() as f64;
        assert!((acc - 0.5).abs() < 0.01, "acc = {acc}");
    }

    proptest! {
        #[test]
        fn libsvm_round_trip(rows in proptest::collection::vec(
            (any::<bool>(), proptest::collection::btree_map(0usize..50, -1e6f64..1e6, 0..8)), 1..20)
        ) {
            let text: String = rows.iter().map(|(pos, m)| {
                let mut s = String::from(if *pos { "+1" } else { "-1" });
                for (i, v) in m { s.push_str(&format!(" {}:{}", i + 1, v)); }
                s.push('\n');
                s
            }).collect();
            let d = parse_libsvm(text.as_bytes(), &pm1(), None).unwrap();
            let mut buf = Vec::new();
            write_libsvm(&d, &mut buf).unwrap();
            let back = parse_libsvm(buf.as_slice(), &pm1(), Some(d.vocab_size())).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn folds_partition_rows(n in 2usize..300, v in 2usize..7, level in 1usize..4, seed in any::<u64>()) {
            prop_assume!(n >= v);
            let f = assign_folds(n, v, level, seed).unwrap();
            let sizes = f.fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            let mut seen = vec![false; n];
            for fold in 0..v {
                for p in f.members(fold) {
                    prop_assert!(!seen[p]);
                    seen[p] = true;
                }
            }
            prop_assert!(seen.into_iter().all(|s| s));
        }
    }
}
