//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod oracle;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psg4d_core::mask::MaskTube;
use psg4d_core::model::{ObjectInstance, SceneGraph4D, Span, TimedRelation};

pub const CATEGORIES: [&str; 5] = ["person", "cup", "table", "railroad track", "dog"];
pub const PREDICATES: [&str; 4] = ["holding", "on", "next to", "looking at"];

/// A random valid scene: distinct ids, canonical categories, masks on
/// `dims` with the given foreground density, and relations between distinct
/// objects with spans inside [0, 1].
pub fn random_scene(
    rng: &mut ChaCha8Rng,
    dims: (usize, usize, usize),
    objects: usize,
    relations: usize,
) -> SceneGraph4D {
    let (t, h, w) = dims;
    let mut ids: Vec<u32> = (1..=(objects as u32 * 3)).collect();
    ids.shuffle(rng);
    ids.truncate(objects);
    let mut scene = SceneGraph4D::default();
    let density = rng.gen_range(0.1..0.9);
    for &id in &ids {
        let mut o = ObjectInstance::new(id, *CATEGORIES.choose(rng).unwrap());
        if rng.gen_bool(0.3) {
            o.instance_index = Some(rng.gen_range(1..4));
        }
        if rng.gen_bool(0.3) {
            o.description = Some(format!("thing {}", rng.gen::<u16>()));
        }
        if rng.gen_bool(0.9) {
            let v: Vec<bool> = (0..t * h * w).map(|_| rng.gen_bool(density)).collect();
            scene.masks.insert(id, MaskTube::from_dense(t, h, w, &v).unwrap());
        }
        scene.objects.push(o);
    }
    if objects >= 2 {
        for _ in 0..relations {
            let pair: Vec<&u32> = ids.choose_multiple(rng, 2).collect();
            let (a, b) = (rng.gen::<f64>(), rng.gen::<f64>());
            let span = if rng.gen_bool(0.2) { Span::full() } else { Span::new(a.min(b), a.max(b)) };
            scene.relations.push(TimedRelation {
                subject_id: *pair[0],
                object_id: *pair[1],
                predicate: PREDICATES.choose(rng).unwrap().to_string(),
                span,
            });
        }
    }
    scene
}

/// A prediction derived from `gold`: masks perturbed voxel-wise, labels
/// occasionally swapped, extra relations, shuffled order.
pub fn perturbed(rng: &mut ChaCha8Rng, gold: &SceneGraph4D, extra: usize) -> SceneGraph4D {
    let mut pred = gold.clone();
    let flip = rng.gen_range(0.0..0.4);
    for tube in pred.masks.values_mut() {
        let (t, h, w) = tube.dims();
        let v: Vec<bool> = tube.to_dense().unwrap().into_iter().map(|x| x ^ rng.gen_bool(flip)).collect();
        *tube = MaskTube::from_dense(t, h, w, &v).unwrap();
    }
    for r in &mut pred.relations {
        if rng.gen_bool(0.2) {
            r.predicate = PREDICATES.choose(rng).unwrap().to_string();
        }
    }
    let ids: Vec<u32> = pred.objects.iter().map(|o| o.id).collect();
    if ids.len() >= 2 {
        for _ in 0..extra {
            let pair: Vec<&u32> = ids.choose_multiple(rng, 2).collect();
            pred.relations.push(TimedRelation {
                subject_id: *pair[0],
                object_id: *pair[1],
                predicate: PREDICATES.choose(rng).unwrap().to_string(),
                span: Span::full(),
            });
        }
    }
    pred.relations.shuffle(rng);
    pred
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
