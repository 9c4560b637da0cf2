use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AnnotationDocument, Store, StoreError};
use crate::domain::{common_family, Biomarker, CellClass, StainKind};

/// How patches are assigned to train and test. Splits are by slide so that
/// no slide contributes to both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Patches of these slides are test; everything else is train.
    TestSlides { slides: BTreeSet<String> },
    /// Hash split of slide ids; the same seed always gives the same split.
    Fraction { test_fraction: f64, seed: u64 },
}

impl SplitSpec {
    pub fn is_test(&self, slide_id: &str) -> bool {
        match self {
            SplitSpec::TestSlides { slides } => slides.contains(slide_id),
            SplitSpec::Fraction {
                test_fraction,
                seed,
            } => {
                // FNV-1a
                let mut h: u64 = 0xcbf2_9ce4_8422_2325;
                for b in seed.to_le_bytes().iter().chain(slide_id.as_bytes()) {
                    h ^= u64::from(*b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
                // FNV leaves the high bits poorly mixed; finish with splitmix64.
                h ^= h >> 30;
                h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
                h ^= h >> 27;
                h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
                h ^= h >> 31;
                ((h >> 11) as f64 / (1u64 << 53) as f64) < *test_fraction
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub key: String,
    pub slide_id: String,
    pub version: u64,
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub biomarker: Option<Biomarker>,
    pub counts: BTreeMap<CellClass, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub biomarker: Option<Biomarker>,
    pub class: CellClass,
    pub train: u64,
    pub test: u64,
    pub total: u64,
}

/// Per-class breakdown for one stain family, with an `All` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTable {
    pub stain_kind: StainKind,
    pub rows: Vec<ManifestRow>,
    pub train: u64,
    pub test: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: SplitSpec,
    pub entries: Vec<ManifestEntry>,
    pub tables: Vec<ManifestTable>,
}

impl DatasetManifest {
    /// Builds the manifest from documents paired with their slide's
    /// biomarker (when known). Fails if either side of the split is empty.
    pub fn from_documents(
        docs: &[(AnnotationDocument, Option<Biomarker>)],
        split: &SplitSpec,
    ) -> Result<Self, StoreError> {
        let mut entries = Vec::with_capacity(docs.len());
        let mut rows: BTreeMap<(StainKind, Option<Biomarker>, CellClass), (u64, u64)> =
            BTreeMap::new();
        for (doc, biomarker) in docs {
            let side = if split.is_test(&doc.patch.slide_id) {
                Split::Test
            } else {
                Split::Train
            };
            let mut counts = BTreeMap::new();
            for a in &doc.annotations {
                *counts.entry(a.class).or_insert(0u64) += 1;
            }
            let family = common_family(doc.annotations.iter().map(|a| a.class))?;
            for (&class, &n) in &counts {
                // Membrane has a single biomarker; nuclear rows group by it.
                let group = match family {
                    Some(StainKind::Nuclear) => *biomarker,
                    _ => None,
                };
                let cell = rows.entry((class.family(), group, class)).or_default();
                match side {
                    Split::Train => cell.0 += n,
                    Split::Test => cell.1 += n,
                }
            }
            entries.push(ManifestEntry {
                key: doc.key(),
                slide_id: doc.patch.slide_id.clone(),
                version: doc.version,
                split: side,
                biomarker: *biomarker,
                counts,
            });
        }
        let has = |s: Split| entries.iter().any(|e| e.split == s);
        if !has(Split::Train) || !has(Split::Test) {
            return Err(StoreError::EmptyDataset);
        }

        let mut tables: Vec<ManifestTable> = Vec::new();
        for ((kind, biomarker, class), (train, test)) in rows {
            if tables.last().map(|t| t.stain_kind) != Some(kind) {
                tables.push(ManifestTable {
                    stain_kind: kind,
                    rows: Vec::new(),
                    train: 0,
                    test: 0,
                    total: 0,
                });
            }
            let t = tables.last_mut().expect("pushed above");
            t.rows.push(ManifestRow {
                biomarker,
                class,
                train,
                test,
                total: train + test,
            });
            t.train += train;
            t.test += test;
            t.total += train + test;
        }
        Ok(DatasetManifest {
            split: split.clone(),
            entries,
            tables,
        })
    }

    pub fn patches(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn table(&self, kind: StainKind) -> Option<&ManifestTable> {
        self.tables.iter().find(|t| t.stain_kind == kind)
    }

    /// Tab-separated breakdown: one block per stain family.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            if !out.is_empty() {
                out.push('\n');
            }
            match t.stain_kind {
                StainKind::Membrane => out.push_str("Membrane staining\tTrain\tTest\tTotal\n"),
                StainKind::Nuclear => {
                    out.push_str("Biomarker\tNuclear staining\tTrain\tTest\tTotal\n")
                }
            }
            for r in &t.rows {
                if t.stain_kind == StainKind::Nuclear {
                    let name = r.biomarker.map_or("-", |b| b.name());
                    let _ = write!(out, "{name}\t");
                }
                let _ = writeln!(out, "{}\t{}\t{}\t{}", r.class.label(), r.train, r.test, r.total);
            }
            let lead = if t.stain_kind == StainKind::Nuclear { "All\t" } else { "" };
            let _ = writeln!(out, "{lead}All\t{}\t{}\t{}", t.train, t.test, t.total);
        }
        out
    }
}

pub(super) fn export(store: &Store, split: &SplitSpec) -> Result<DatasetManifest, StoreError> {
    let mut docs = Vec::new();
    for key in store.document_keys()? {
        let doc = store.load_document(&key, None)?;
        let biomarker = store.slide(&doc.patch.slide_id).ok().map(|s| s.biomarker);
        docs.push((doc, biomarker));
    }
    if docs.is_empty() {
        return Err(StoreError::EmptyDataset);
    }
    DatasetManifest::from_documents(&docs, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PatchRegion;
    use crate::maskops::Polygon;
    use crate::store::{Annotation, Provenance};
    use proptest::prelude::*;

    fn doc(slide: &str, x: u32, classes: &[(CellClass, usize)]) -> AnnotationDocument {
        let mut d = AnnotationDocument::new(PatchRegion::new(slide, x, 0));
        let mut i = 0;
        for &(class, n) in classes {
            for _ in 0..n {
                d.annotations.push(Annotation {
                    id: format!("a{i}"),
                    class,
                    polygon: Polygon::rect(1.0, 1.0, 2.0, 2.0).unwrap(),
                    provenance: Provenance::Manual,
                    confidence: None,
                    author: String::new(),
                    timestamp: None,
                });
                i += 1;
            }
        }
        d
    }

    fn test_slides(ids: &[&str]) -> SplitSpec {
        SplitSpec::TestSlides {
            slides: ids.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn her2_breakdown_totals() {
        use CellClass::*;
        let train = doc(
            "train",
            0,
            &[
                (M0NoStaining, 2994),
                (M1FaintIncomplete, 340),
                (M2ModerateComplete, 804),
                (M3IntenseComplete, 1137),
            ],
        );
        let test = doc(
            "test",
            0,
            &[
                (M0NoStaining, 624),
                (M1FaintIncomplete, 160),
                (M2ModerateComplete, 189),
                (M3IntenseComplete, 256),
            ],
        );
        let her2 = Some(Biomarker::Her2);
        let m = DatasetManifest::from_documents(&[(train, her2), (test, her2)], &test_slides(&["test"]))
            .unwrap();
        let t = m.table(StainKind::Membrane).unwrap();
        assert_eq!((t.train, t.test, t.total), (5275, 1229, 6504));
        let totals: Vec<u64> = t.rows.iter().map(|r| r.total).collect();
        assert_eq!(totals, [3618, 500, 993, 1393]);
        let text = m.render();
        assert!(text.starts_with("Membrane staining\tTrain\tTest\tTotal\n0: No membrane staining\t2994\t624\t3618\n"));
        assert!(text.ends_with("All\t5275\t1229\t6504\n"));
    }

    #[test]
    fn nuclear_rows_grouped_by_biomarker() {
        use CellClass::*;
        let docs = [
            (doc("k", 0, &[(Immunopositive, 3), (Immunonegative, 1)]), Some(Biomarker::Ki67)),
            (doc("e", 0, &[(Immunopositive, 2)]), Some(Biomarker::Er)),
        ];
        let m = DatasetManifest::from_documents(&docs, &test_slides(&["e"])).unwrap();
        let t = m.table(StainKind::Nuclear).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0].biomarker, Some(Biomarker::Ki67));
        assert!(m.render().contains("ER\tImmunopositive cells\t0\t2\t2\n"));
        assert_eq!(m.patches(Split::Test).count(), 1);
    }

    #[test]
    fn empty_split_is_an_error() {
        let docs = [(doc("a", 0, &[(CellClass::Immunopositive, 1)]), None)];
        assert!(matches!(
            DatasetManifest::from_documents(&docs, &test_slides(&[])),
            Err(StoreError::EmptyDataset)
        ));
        assert!(matches!(
            DatasetManifest::from_documents(&[], &test_slides(&["a"])),
            Err(StoreError::EmptyDataset)
        ));
    }

    #[test]
    fn fraction_split_is_deterministic() {
        let s = SplitSpec::Fraction {
            test_fraction: 0.3,
            seed: 4,
        };
        let picks: Vec<bool> = (0..200).map(|i| s.is_test(&format!("slide{i}"))).collect();
        let again: Vec<bool> = (0..200).map(|i| s.is_test(&format!("slide{i}"))).collect();
        assert_eq!(picks, again);
        let n = picks.iter().filter(|&&b| b).count();
        assert!((30..90).contains(&n), "{n}");
    }

    #[test]
    fn export_from_store() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(matches!(
            store.export_dataset(&test_slides(&["b"])),
            Err(StoreError::EmptyDataset)
        ));
        store.save_document(&doc("a", 0, &[(CellClass::Immunonegative, 2)])).unwrap();
        store.save_document(&doc("b", 0, &[(CellClass::Immunopositive, 1)])).unwrap();
        let m = store.export_dataset(&test_slides(&["b"])).unwrap();
        let t = m.table(StainKind::Nuclear).unwrap();
        assert_eq!((t.train, t.test, t.total), (2, 1, 3));
    }

    proptest! {
        #[test]
        fn counts_equal_recount(
            spec in prop::collection::vec((0usize..4, 0usize..6, 0usize..6, any::<bool>()), 2..12),
        ) {
            use CellClass::*;
            let mut docs = Vec::new();
            for (i, &(slide, pos, neg, _)) in spec.iter().enumerate() {
                let d = doc(&format!("s{slide}"), i as u32 * 400, &[(Immunopositive, pos), (Immunonegative, neg)]);
                docs.push((d, Some(Biomarker::Pr)));
            }
            let split = SplitSpec::TestSlides {
                slides: spec.iter().filter(|s| s.3).map(|s| format!("s{}", s.0)).collect(),
            };
            match DatasetManifest::from_documents(&docs, &split) {
                Ok(m) => {
                    for class in [Immunopositive, Immunonegative] {
                        let (mut tr, mut te) = (0u64, 0u64);
                        for (d, _) in &docs {
                            let n = d.annotations.iter().filter(|a| a.class == class).count() as u64;
                            if split.is_test(&d.patch.slide_id) { te += n } else { tr += n }
                        }
                        let row = m.tables.iter().flat_map(|t| &t.rows).find(|r| r.class == class);
                        let got = row.map_or((0, 0), |r| (r.train, r.test));
                        prop_assert_eq!(got, (tr, te));
                    }
                    let total: u64 = m.tables.iter().map(|t| t.total).sum();
                    let direct: u64 = docs.iter().map(|(d, _)| d.annotations.len() as u64).sum();
                    prop_assert_eq!(total, direct);
                }
                Err(StoreError::EmptyDataset) => {
                    let tests = docs.iter().filter(|(d, _)| split.is_test(&d.patch.slide_id)).count();
                    prop_assert!(tests == 0 || tests == docs.len());
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
