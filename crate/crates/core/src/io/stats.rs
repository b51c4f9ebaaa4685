use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::document::AnnotationDocument;
use crate::metrics::{LabelFrequencies, Vocabulary};
use crate::model::normalize_predicate;

/// Corpus tallies. Object counts are per instance, predicate and triplet
/// counts per relation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub videos: usize,
    pub objects: usize,
    pub relations: usize,
    pub object_categories: BTreeMap<String, u64>,
    pub predicate_categories: BTreeMap<String, u64>,
    /// Keyed `"subject|predicate|object"` by category.
    pub triplets: BTreeMap<String, u64>,
}

impl DatasetStats {
    /// `(object categories, predicate categories, distinct triplets)`.
    pub fn category_counts(&self) -> (usize, usize, usize) {
        (self.object_categories.len(), self.predicate_categories.len(), self.triplets.len())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            objects: self.object_categories.keys().cloned().collect(),
            predicates: self.predicate_categories.keys().cloned().collect(),
        }
    }

    pub fn frequencies(&self) -> LabelFrequencies {
        LabelFrequencies { objects: self.object_categories.clone(), predicates: self.predicate_categories.clone() }
    }
}

pub fn dataset_stats(docs: &[AnnotationDocument]) -> DatasetStats {
    let mut s = DatasetStats { videos: docs.len(), ..Default::default() };
    for d in docs {
        let cat: BTreeMap<u32, &str> = d.objects.iter().map(|o| (o.id, o.category.as_str())).collect();
        for o in &d.objects {
            *s.object_categories.entry(o.category.clone()).or_default() += 1;
        }
        s.objects += d.objects.len();
        for r in &d.relations {
            let p = normalize_predicate(&r.predicate);
            let subject = cat.get(&r.subject_id).copied().unwrap_or("?");
            let object = cat.get(&r.object_id).copied().unwrap_or("?");
            *s.triplets.entry(format!("{subject}|{p}|{object}")).or_default() += 1;
            *s.predicate_categories.entry(p).or_default() += 1;
        }
        s.relations += d.relations.len();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::document::{ObjectRecord, RelationRecord, SCHEMA_VERSION};

    fn doc(objects: &[&str], relations: &[(u32, &str, u32)]) -> AnnotationDocument {
        AnnotationDocument {
            schema: SCHEMA_VERSION,
            video_id: "v".into(),
            duration: 1.0,
            frames: 1,
            width: 1,
            height: 1,
            objects: objects
                .iter()
                .enumerate()
                .map(|(i, c)| ObjectRecord {
                    id: i as u32 + 1,
                    category: c.to_string(),
                    instance: None,
                    description: None,
                    mask_rle: None,
                })
                .collect(),
            relations: relations
                .iter()
                .map(|&(s, p, o)| RelationRecord {
                    subject_id: s,
                    object_id: o,
                    predicate: p.into(),
                    begin: 0.0,
                    end: 1.0,
                    confidence: None,
                })
                .collect(),
        }
    }

    #[test]
    fn empty_corpus() {
        let s = dataset_stats(&[]);
        assert_eq!(s.category_counts(), (0, 0, 0));
        assert_eq!(s.videos, 0);
    }

    #[test]
    fn tally() {
        let docs = [
            doc(&["person", "ball", "person"], &[(1, "kicking", 2), (3, "kicking", 2), (1, "Next  to", 3)]),
            doc(&["dog"], &[]),
        ];
        let s = dataset_stats(&docs);
        assert_eq!(s.category_counts(), (3, 2, 2));
        assert_eq!(s.object_categories["person"], 2);
        assert_eq!(s.triplets["person|kicking|ball"], 2);
        assert_eq!(s.predicate_categories["next to"], 1);
        assert_eq!((s.videos, s.objects, s.relations), (2, 4, 3));
    }
}
