//! Deterministic partitioning of an example catalog into the private sets
//! `A` and `B` (annotated examples), the public set `X`, and the remaining
//! unannotated pool `C`.
//!
//! Annotated examples of each class are shuffled under the plan seed and
//! dealt alternately to `A` and `B`, with `A` taking the extra example when a
//! class quota is odd. `X` is drawn from the unannotated examples and `C` is
//! whatever is left over. Optional augmentation draws class-balanced samples
//! from `C` for each private set independently.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("duplicate example id `{0}` in catalog")]
    DuplicateId(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("class labels are not contiguous: class {0} has no entries")]
    NonContiguousClasses(u32),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub example_id: String,
    pub class_label: u32,
    pub has_bbox: bool,
}

/// The full list of examples available for splitting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExampleCatalog {
    entries: Vec<CatalogEntry>,
}

impl ExampleCatalog {
    /// Validates id uniqueness and class contiguity.
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self, SplitError> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.example_id.as_str()) {
                return Err(SplitError::DuplicateId(e.example_id.clone()));
            }
        }
        let classes: BTreeSet<u32> = entries.iter().map(|e| e.class_label).collect();
        if let Some(&max) = classes.iter().next_back() {
            if let Some(missing) = (0..=max).find(|c| !classes.contains(c)) {
                return Err(SplitError::NonContiguousClasses(missing));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.entries.iter().map(|e| e.class_label as usize + 1).max().unwrap_or(0)
    }

    /// Parses `example_id<TAB>class<TAB>has_bbox` lines; `#` starts a comment.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self, SplitError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| SplitError::Manifest { line: i + 1, reason: reason.to_string() };
            let mut cols = line.split('\t');
            let id = cols.next().filter(|s| !s.is_empty()).ok_or_else(|| bad("missing id"))?;
            let class = cols
                .next()
                .and_then(|s| s.parse::<u32>().ok())
                .ok_or_else(|| bad("missing or invalid class"))?;
            let has_bbox = match cols.next() {
                Some("1") | Some("true") => true,
                Some("0") | Some("false") => false,
                _ => return Err(bad("has_bbox must be 0/1")),
            };
            entries.push(CatalogEntry { example_id: id.to_string(), class_label: class, has_bbox });
        }
        Self::new(entries)
    }
}

/// How many annotated examples go to each private set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrivateSizing {
    /// Exactly `a` and `b` examples, spread evenly over classes.
    Fixed { a: usize, b: usize },
    /// Every annotated example, each class divided evenly between the sets.
    AllAnnotated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub private: PrivateSizing,
    pub public: usize,
    /// Number of `C` examples added to each private set's training data.
    pub augment: usize,
}

impl SplitSizes {
    pub fn new(a: usize, b: usize, x: usize) -> Self {
        Self { private: PrivateSizing::Fixed { a, b }, public: x, augment: 0 }
    }

    /// Parses `A,B,X` where `A` and `B` may be `all`.
    pub fn parse(s: &str) -> Result<Self, SplitError> {
        let bad = || SplitError::InfeasibleSplit(format!("cannot parse sizes `{s}`, expected A,B,X"));
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let x = parts[2].parse().map_err(|_| bad())?;
        let private = match (parts[0], parts[1]) {
            ("all", "all") => PrivateSizing::AllAnnotated,
            (a, b) => PrivateSizing::Fixed {
                a: a.parse().map_err(|_| bad())?,
                b: b.parse().map_err(|_| bad())?,
            },
        };
        Ok(Self { private, public: x, augment: 0 })
    }
}

impl fmt::Display for SplitSizes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.private {
            PrivateSizing::Fixed { a, b } => write!(f, "{a},{b},{}", self.public),
            PrivateSizing::AllAnnotated => write!(f, "all,all,{}", self.public),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub set_a: Vec<String>,
    pub set_b: Vec<String>,
    pub set_x: Vec<String>,
    pub set_c: Vec<String>,
    /// Draws from `C` added to the training data of the model trained on `A`.
    pub augment_a: Vec<String>,
    /// Draws from `C` added to the training data of the model trained on `B`.
    pub augment_b: Vec<String>,
    pub seed: u64,
    pub sizes: SplitSizes,
    /// Per class: (annotated examples in A, annotated examples in B).
    pub per_class_counts: BTreeMap<u32, (usize, usize)>,
}

/// Which set an id was assigned to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SetName {
    A,
    B,
    X,
    C,
    AugA,
    AugB,
}

impl SetName {
    pub fn as_str(self) -> &'static str {
        match self {
            SetName::A => "A",
            SetName::B => "B",
            SetName::X => "X",
            SetName::C => "C",
            SetName::AugA => "augA",
            SetName::AugB => "augB",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "A" => SetName::A,
            "B" => SetName::B,
            "X" => SetName::X,
            "C" => SetName::C,
            "augA" => SetName::AugA,
            "augB" => SetName::AugB,
            _ => return None,
        })
    }
}

/// Splits `total` into `parts` near-equal quotas, earlier parts taking the remainder.
fn even_quotas(total: usize, parts: usize) -> Vec<usize> {
    if parts == 0 {
        return Vec::new();
    }
    let base = total / parts;
    let rem = total % parts;
    (0..parts).map(|i| base + usize::from(i < rem)).collect()
}

fn sorted_by_id<'a>(entries: impl Iterator<Item = &'a CatalogEntry>) -> Vec<&'a CatalogEntry> {
    let mut v: Vec<_> = entries.collect();
    v.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    v
}

/// Seeded per-purpose stream so adding one draw never perturbs another.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn plan_splits(
    catalog: &ExampleCatalog,
    sizes: SplitSizes,
    seed: u64,
    augment_from_c: bool,
) -> Result<SplitPlan, SplitError> {
    let num_classes = catalog.num_classes();
    let mut bbox_by_class: Vec<Vec<&CatalogEntry>> = vec![Vec::new(); num_classes];
    for e in sorted_by_id(catalog.entries().iter().filter(|e| e.has_bbox)) {
        bbox_by_class[e.class_label as usize].push(e);
    }

    let (quota_a, quota_b) = match sizes.private {
        PrivateSizing::Fixed { a, b } => {
            if a != b {
                return Err(SplitError::InfeasibleSplit(format!(
                    "private sets must be the same size for class balance (got |A|={a}, |B|={b})"
                )));
            }
            (even_quotas(a, num_classes), even_quotas(b, num_classes))
        }
        PrivateSizing::AllAnnotated => bbox_by_class
            .iter()
            .map(|v| (v.len() - v.len() / 2, v.len() / 2))
            .unzip(),
    };
    if num_classes == 0 {
        if let PrivateSizing::Fixed { a, .. } = sizes.private {
            if a > 0 {
                return Err(SplitError::InfeasibleSplit("catalog has no classes".into()));
            }
        }
    }

    let mut set_a = Vec::new();
    let mut set_b = Vec::new();
    let mut per_class_counts = BTreeMap::new();
    for (class, members) in bbox_by_class.iter().enumerate() {
        let (qa, qb) = (quota_a[class], quota_b[class]);
        if qa + qb > members.len() {
            return Err(SplitError::InfeasibleSplit(format!(
                "class {class} has {} annotated examples, needs {}",
                members.len(),
                qa + qb
            )));
        }
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut stream_rng(seed, class as u64));
        let (mut na, mut nb) = (0, 0);
        for e in shuffled {
            // Alternate A, B, A, ... until each quota is met.
            let to_a = if na < qa && nb < qb { na <= nb } else { na < qa };
            if to_a {
                set_a.push(e.example_id.clone());
                na += 1;
            } else if nb < qb {
                set_b.push(e.example_id.clone());
                nb += 1;
            } else {
                break;
            }
        }
        per_class_counts.insert(class as u32, (na, nb));
    }

    let mut unannotated = sorted_by_id(catalog.entries().iter().filter(|e| !e.has_bbox));
    if sizes.public > unannotated.len() {
        return Err(SplitError::InfeasibleSplit(format!(
            "public set needs {} unannotated examples, catalog has {}",
            sizes.public,
            unannotated.len()
        )));
    }
    unannotated.shuffle(&mut stream_rng(seed, u64::MAX));
    let set_c_entries = unannotated.split_off(sizes.public);
    let set_x: Vec<String> = unannotated.iter().map(|e| e.example_id.clone()).collect();

    let (augment_a, augment_b) = if augment_from_c && sizes.augment > 0 {
        let pool = sorted_by_id(set_c_entries.iter().copied());
        (
            draw_balanced(&pool, sizes.augment, num_classes, seed, u64::MAX - 1)?,
            draw_balanced(&pool, sizes.augment, num_classes, seed, u64::MAX - 2)?,
        )
    } else {
        (Vec::new(), Vec::new())
    };

    let mut plan = SplitPlan {
        set_a,
        set_b,
        set_x,
        set_c: set_c_entries.iter().map(|e| e.example_id.clone()).collect(),
        augment_a,
        augment_b,
        seed,
        sizes,
        per_class_counts,
    };
    for v in [
        &mut plan.set_a,
        &mut plan.set_b,
        &mut plan.set_x,
        &mut plan.set_c,
        &mut plan.augment_a,
        &mut plan.augment_b,
    ] {
        v.sort();
    }
    Ok(plan)
}

/// Class-balanced draw without replacement from `pool` (sorted by id).
fn draw_balanced(
    pool: &[&CatalogEntry],
    count: usize,
    num_classes: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<String>, SplitError> {
    let mut by_class: Vec<Vec<&CatalogEntry>> = vec![Vec::new(); num_classes];
    for e in pool {
        by_class[e.class_label as usize].push(e);
    }
    let mut rng = stream_rng(seed, stream);
    let mut out = Vec::with_capacity(count);
    for (class, quota) in even_quotas(count, num_classes).into_iter().enumerate() {
        let members = &mut by_class[class];
        if quota > members.len() {
            return Err(SplitError::InfeasibleSplit(format!(
                "augmentation needs {quota} examples of class {class} from C, found {}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        out.extend(members[..quota].iter().map(|e| e.example_id.clone()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Id appears in two sets that must be disjoint.
    DisjointnessViolation { id: String, sets: (SetName, SetName) },
    /// A private set holds an unannotated example, or X/C holds an annotated one.
    AnnotationMismatch { id: String, set: SetName },
    /// Per-class A/B counts differ by more than one.
    ClassImbalance { class: u32, a: usize, b: usize },
    UnknownId { id: String, set: SetName },
    DuplicateInSet { id: String, set: SetName },
    /// An augmentation id is not a member of C.
    AugmentOutsideC { id: String, set: SetName },
}

/// Checks every plan invariant against the catalog; an empty result means valid.
pub fn verify_plan(plan: &SplitPlan, catalog: &ExampleCatalog) -> Vec<Violation> {
    let lookup: BTreeMap<&str, &CatalogEntry> =
        catalog.entries().iter().map(|e| (e.example_id.as_str(), e)).collect();
    let mut violations = Vec::new();
    let mut owner: BTreeMap<&str, SetName> = BTreeMap::new();

    for (set, ids) in [
        (SetName::A, &plan.set_a),
        (SetName::B, &plan.set_b),
        (SetName::X, &plan.set_x),
        (SetName::C, &plan.set_c),
    ] {
        let mut local = HashSet::new();
        for id in ids {
            if !local.insert(id.as_str()) {
                violations.push(Violation::DuplicateInSet { id: id.clone(), set });
                continue;
            }
            match lookup.get(id.as_str()) {
                None => violations.push(Violation::UnknownId { id: id.clone(), set }),
                Some(e) => {
                    let wants_bbox = matches!(set, SetName::A | SetName::B);
                    if e.has_bbox != wants_bbox {
                        violations.push(Violation::AnnotationMismatch { id: id.clone(), set });
                    }
                }
            }
            if let Some(prev) = owner.insert(id.as_str(), set) {
                violations.push(Violation::DisjointnessViolation { id: id.clone(), sets: (prev, set) });
            }
        }
    }

    let set_c: HashSet<&str> = plan.set_c.iter().map(String::as_str).collect();
    for (set, ids) in [(SetName::AugA, &plan.augment_a), (SetName::AugB, &plan.augment_b)] {
        let mut local = HashSet::new();
        for id in ids {
            if !local.insert(id.as_str()) {
                violations.push(Violation::DuplicateInSet { id: id.clone(), set });
            }
            if !set_c.contains(id.as_str()) {
                violations.push(Violation::AugmentOutsideC { id: id.clone(), set });
            }
        }
    }

    let mut counts: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (ids, is_a) in [(&plan.set_a, true), (&plan.set_b, false)] {
        for id in ids {
            if let Some(e) = lookup.get(id.as_str()) {
                let c = counts.entry(e.class_label).or_default();
                if is_a {
                    c.0 += 1;
                } else {
                    c.1 += 1;
                }
            }
        }
    }
    for (class, (a, b)) in counts {
        if a.abs_diff(b) > 1 {
            violations.push(Violation::ClassImbalance { class, a, b });
        }
    }
    violations
}

impl SplitPlan {
    /// Maps every id to its primary set (A, B, X or C).
    pub fn membership(&self) -> BTreeMap<&str, SetName> {
        let mut m = BTreeMap::new();
        for (set, ids) in [
            (SetName::A, &self.set_a),
            (SetName::B, &self.set_b),
            (SetName::X, &self.set_x),
            (SetName::C, &self.set_c),
        ] {
            for id in ids {
                m.insert(id.as_str(), set);
            }
        }
        m
    }

    /// Writes the line-oriented manifest: header comments then
    /// `example_id<TAB>set<TAB>class`, sorted by set then id.
    pub fn write_manifest<W: Write>(&self, catalog: &ExampleCatalog, mut w: W) -> Result<(), SplitError> {
        let classes: BTreeMap<&str, u32> =
            catalog.entries().iter().map(|e| (e.example_id.as_str(), e.class_label)).collect();
        writeln!(w, "# dejavu split manifest v1")?;
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "# sizes={}", self.sizes)?;
        writeln!(w, "# augment={}", self.sizes.augment)?;
        for (set, ids) in [
            (SetName::A, &self.set_a),
            (SetName::B, &self.set_b),
            (SetName::X, &self.set_x),
            (SetName::C, &self.set_c),
            (SetName::AugA, &self.augment_a),
            (SetName::AugB, &self.augment_b),
        ] {
            for id in ids {
                let class = classes.get(id.as_str()).copied().unwrap_or(u32::MAX);
                writeln!(w, "{id}\t{}\t{class}", set.as_str())?;
            }
        }
        Ok(())
    }
}

/// One parsed manifest row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub example_id: String,
    pub set: SetName,
    pub class_label: u32,
}

/// Parsed split manifest: header fields plus rows.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitManifest {
    pub seed: Option<u64>,
    pub sizes: Option<String>,
    pub rows: Vec<ManifestRow>,
}

impl SplitManifest {
    pub fn read<R: BufRead>(reader: R) -> Result<Self, SplitError> {
        let mut out = SplitManifest::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment.strip_prefix("seed=") {
                    out.seed = v.parse().ok();
                } else if let Some(v) = comment.strip_prefix("sizes=") {
                    out.sizes = Some(v.to_string());
                }
                continue;
            }
            let bad = |reason: &str| SplitError::Manifest { line: i + 1, reason: reason.to_string() };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected 3 tab-separated columns"));
            }
            let set = SetName::parse(cols[1]).ok_or_else(|| bad("unknown set name"))?;
            let class_label = cols[2].parse().map_err(|_| bad("invalid class"))?;
            out.rows.push(ManifestRow { example_id: cols[0].to_string(), set, class_label });
        }
        Ok(out)
    }

    /// Writes the manifest back out; rows keep their order.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), SplitError> {
        writeln!(w, "# dejavu split manifest v1")?;
        if let Some(seed) = self.seed {
            writeln!(w, "# seed={seed}")?;
        }
        if let Some(sizes) = &self.sizes {
            writeln!(w, "# sizes={sizes}")?;
        }
        for r in &self.rows {
            writeln!(w, "{}\t{}\t{}", r.example_id, r.set.as_str(), r.class_label)?;
        }
        Ok(())
    }

    /// Ids of one set, in file order.
    pub fn ids(&self, set: SetName) -> Vec<&str> {
        self.rows.iter().filter(|r| r.set == set).map(|r| r.example_id.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(classes: u32, bbox_per_class: usize, unannotated: usize) -> ExampleCatalog {
        let mut entries = Vec::new();
        for c in 0..classes {
            for i in 0..bbox_per_class {
                entries.push(CatalogEntry { example_id: format!("c{c}_b{i}"), class_label: c, has_bbox: true });
            }
        }
        for i in 0..unannotated {
            entries.push(CatalogEntry {
                example_id: format!("u{i}"),
                class_label: (i as u32) % classes.max(1),
                has_bbox: false,
            });
        }
        ExampleCatalog::new(entries).unwrap()
    }

    #[test]
    fn ten_classes_even_division() {
        let cat = catalog(10, 20, 100);
        let plan = plan_splits(&cat, SplitSizes::new(100, 100, 50), 7, false).unwrap();
        assert_eq!(plan.set_a.len(), 100);
        assert_eq!(plan.set_b.len(), 100);
        assert_eq!(plan.set_x.len(), 50);
        assert_eq!(plan.set_c.len(), 50);
        for &(a, b) in plan.per_class_counts.values() {
            assert_eq!((a, b), (10, 10));
        }
        // Brute-force membership check.
        let a: HashSet<_> = plan.set_a.iter().collect();
        let b: HashSet<_> = plan.set_b.iter().collect();
        assert!(a.is_disjoint(&b));
        assert!(plan.set_x.iter().all(|id| id.starts_with('u')));
        assert!(plan.set_a.iter().chain(&plan.set_b).all(|id| id.contains("_b")));
        assert!(verify_plan(&plan, &cat).is_empty());
    }

    #[test]
    fn empty_catalog() {
        let cat = ExampleCatalog::new(vec![]).unwrap();
        let plan = plan_splits(&cat, SplitSizes::new(0, 0, 0), 1, false).unwrap();
        assert!(plan.set_a.is_empty() && plan.set_b.is_empty() && plan.set_x.is_empty() && plan.set_c.is_empty());
        assert!(verify_plan(&plan, &cat).is_empty());
    }

    #[test]
    fn odd_class_gives_extra_to_a() {
        let cat = catalog(3, 7, 0);
        let plan = plan_splits(&cat, SplitSizes::parse("all,all,0").unwrap(), 3, false).unwrap();
        for &(a, b) in plan.per_class_counts.values() {
            assert_eq!((a, b), (4, 3));
        }
        assert!(verify_plan(&plan, &cat).is_empty());
    }

    #[test]
    fn infeasible_and_duplicate() {
        let cat = catalog(2, 5, 10);
        assert!(matches!(
            plan_splits(&cat, SplitSizes::new(8, 8, 0), 0, false),
            Err(SplitError::InfeasibleSplit(_))
        ));
        assert!(matches!(
            plan_splits(&cat, SplitSizes::new(2, 2, 11), 0, false),
            Err(SplitError::InfeasibleSplit(_))
        ));
        let dup = vec![
            CatalogEntry { example_id: "a".into(), class_label: 0, has_bbox: true },
            CatalogEntry { example_id: "a".into(), class_label: 0, has_bbox: false },
        ];
        assert!(matches!(ExampleCatalog::new(dup), Err(SplitError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn shared_id_is_reported() {
        let cat = catalog(2, 4, 4);
        let mut plan = plan_splits(&cat, SplitSizes::new(4, 4, 2), 5, false).unwrap();
        assert!(verify_plan(&plan, &cat).is_empty());
        let stolen = plan.set_a[0].clone();
        plan.set_b.push(stolen.clone());
        let v = verify_plan(&plan, &cat);
        assert_eq!(
            v,
            vec![Violation::DisjointnessViolation { id: stolen, sets: (SetName::A, SetName::B) }]
        );
    }

    #[test]
    fn augmentation_draws_are_balanced_and_within_c() {
        let cat = catalog(4, 6, 200);
        let mut sizes = SplitSizes::new(12, 12, 80);
        sizes.augment = 40;
        let plan = plan_splits(&cat, sizes, 11, true).unwrap();
        assert_eq!(plan.augment_a.len(), 40);
        assert_eq!(plan.augment_b.len(), 40);
        assert!(verify_plan(&plan, &cat).is_empty());
        let class_of: BTreeMap<_, _> =
            cat.entries().iter().map(|e| (e.example_id.clone(), e.class_label)).collect();
        let mut per = [0usize; 4];
        for id in &plan.augment_a {
            per[class_of[id] as usize] += 1;
        }
        assert_eq!(per, [10, 10, 10, 10]);
    }

    #[test]
    fn manifest_round_trip() {
        let cat = catalog(3, 4, 9);
        let plan = plan_splits(&cat, SplitSizes::new(6, 6, 4), 2, false).unwrap();
        let mut buf = Vec::new();
        plan.write_manifest(&cat, &mut buf).unwrap();
        let m = SplitManifest::read(buf.as_slice()).unwrap();
        assert_eq!(m.seed, Some(2));
        assert_eq!(m.sizes.as_deref(), Some("6,6,4"));
        assert_eq!(m.ids(SetName::A), plan.set_a.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(m.rows.len(), cat.len());
        let mut again = Vec::new();
        m.write(&mut again).unwrap();
        assert_eq!(SplitManifest::read(again.as_slice()).unwrap(), m);
    }

    #[test]
    fn catalog_tsv_parsing() {
        let text = "# header\nimg1\t0\t1\nimg2\t1\t0\n";
        let cat = ExampleCatalog::read_tsv(text.as_bytes()).unwrap();
        assert_eq!(cat.len(), 2);
        assert!(cat.entries()[0].has_bbox);
        assert!(ExampleCatalog::read_tsv("img\tx\t1\n".as_bytes()).is_err());
        assert!(matches!(
            ExampleCatalog::read_tsv("a\t0\t1\nb\t2\t1\n".as_bytes()),
            Err(SplitError::NonContiguousClasses(1))
        ));
    }
}
