//! Rank-ordered injective matching.
//!
//! Predictions are visited in rank order; each one claims a free compatible
//! gold item, or reassigns an earlier claim along an augmenting path when
//! that frees a gold item for it. The result is a maximum-cardinality
//! matching, which is what an exhaustive search over all matchings finds.

/// Returns, for every left (prediction) index, the matched right (gold) index.
pub fn max_matching<F>(n_left: usize, n_right: usize, mut compatible: F) -> Vec<Option<usize>>
where
    F: FnMut(usize, usize) -> bool,
{
    let mut adj: Vec<Vec<usize>> = Vec::with_capacity(n_left);
    for l in 0..n_left {
        let mut row = Vec::new();
        for r in 0..n_right {
            if compatible(l, r) {
                row.push(r);
            }
        }
        adj.push(row);
    }
    let mut right_owner: Vec<Option<usize>> = vec![None; n_right];
    let mut seen = vec![false; n_right];
    for l in 0..n_left {
        if adj[l].is_empty() {
            continue;
        }
        seen.iter_mut().for_each(|s| *s = false);
        augment(l, &adj, &mut right_owner, &mut seen);
    }
    let mut left = vec![None; n_left];
    for (r, owner) in right_owner.iter().enumerate() {
        if let Some(l) = owner {
            left[*l] = Some(r);
        }
    }
    left
}

fn augment(l: usize, adj: &[Vec<usize>], right_owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    // a free item first, so earlier claims are only moved when necessary
    if let Some(&r) = adj[l].iter().find(|&&r| !seen[r] && right_owner[r].is_none()) {
        seen[r] = true;
        right_owner[r] = Some(l);
        return true;
    }
    for &r in &adj[l] {
        if seen[r] {
            continue;
        }
        seen[r] = true;
        let free = match right_owner[r] {
            None => true,
            Some(other) => augment(other, adj, right_owner, seen),
        };
        if free {
            right_owner[r] = Some(l);
            return true;
        }
    }
    false
}

/// Matched `(left, right)` pairs in left order.
pub fn pairs(matching: &[Option<usize>]) -> Vec<(usize, usize)> {
    matching.iter().enumerate().filter_map(|(l, r)| r.map(|r| (l, r))).collect()
}
