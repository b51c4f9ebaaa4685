mod common;

use std::path::Path;

use proptest::prelude::*;
use rand::Rng;

use common::{random_scene, rng};
use psg4d_core::io::{parse_document, render_document, AnnotationDocument};
use psg4d_core::mask::MaskTube;

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn document_save_load_identity(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dims = (r.gen_range(1..=4), r.gen_range(1..=6), r.gen_range(1..=6));
        let objects = r.gen_range(0..=6);
        let rels = r.gen_range(0..=8);
        let scene = random_scene(&mut r, dims, objects, rels);
        let duration = r.gen_range(0.5..100.0);
        let mut doc = AnnotationDocument::from_scene(format!("vid-{seed}"), duration, dims, &scene);
        if r.gen_bool(0.5) {
            for rel in &mut doc.relations {
                rel.confidence = Some(r.gen_range(-1.0..1.0));
            }
        }
        let text = render_document(&doc);
        let back = parse_document(&text, Path::new("mem.json")).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(back.to_scene().unwrap(), scene);
        prop_assert_eq!(render_document(&back), text);
    }

    #[test]
    fn rle_encode_decode_identity(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (t, h, w) = (r.gen_range(1..=8), r.gen_range(1..=8), r.gen_range(1..=8));
        let density = r.gen_range(0.0..=1.0);
        let v: Vec<bool> = (0..t * h * w).map(|_| r.gen_bool(density)).collect();
        let tube = MaskTube::from_dense(t, h, w, &v).unwrap();
        prop_assert_eq!(tube.to_dense().unwrap(), v);
        let again = MaskTube::from_runs(h, w, tube.runs().to_vec()).unwrap();
        prop_assert_eq!(again, tube);
    }
}
