use crate::error::{Error, Result};
use crate::weight_space::{NormalizationStats, Subspace, WeightSpaceSpec};

use super::{enumerate_group_with_limit, flat_coordinate_map};

/// One orbit of `G` on the coordinates of a single-channel weight vector.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Orbit {
    pub subspace: Subspace,
    /// Flat coordinates, ascending.
    pub indices: Vec<usize>,
}

/// Orbits read off from which axes of each sub-space are fixed: coordinates
/// sharing the same values on the free axes (`0` and `M`) form one orbit.
/// So `W_1` splits by column, `W_M` and `b_M` by row, and every other
/// sub-space is a single orbit.
pub fn enumerate_orbits(spec: &WeightSpaceSpec) -> Vec<Orbit> {
    let mut out = Vec::new();
    for s in spec.subspaces() {
        let axes = s.axes();
        let shape = spec.subspace_shape(s);
        let free: Vec<usize> = (0..axes.len())
            .filter(|&a| !spec.is_set_index(axes[a]))
            .collect();
        let n_orbits: usize = free.iter().map(|&a| shape[a]).product();
        let mut buckets = vec![Vec::new(); n_orbits];
        let off = spec.subspace_offset(s);
        let len = spec.subspace_len(s);
        for flat in 0..len {
            let mut rem = flat;
            let mut idx = vec![0; axes.len()];
            for a in (0..axes.len()).rev() {
                idx[a] = rem % shape[a];
                rem /= shape[a];
            }
            let key = free.iter().fold(0, |acc, &a| acc * shape[a] + idx[a]);
            buckets[key].push(off + flat);
        }
        out.extend(buckets.into_iter().map(|indices| Orbit {
            subspace: s,
            indices,
        }));
    }
    out
}

/// Mean and standard deviation pooled over each orbit and over `rows`, written
/// back per coordinate. Statistics that are constant on orbits commute with
/// the group action, so normalizing never breaks invariance.
pub fn orbit_normalization<'a>(
    spec: &WeightSpaceSpec,
    rows: impl IntoIterator<Item = &'a [f64]>,
    floor: f64,
) -> Result<NormalizationStats> {
    let rows: Vec<&[f64]> = rows.into_iter().collect();
    let n = spec.flat_dim();
    if rows.is_empty() {
        return Err(Error::Dataset(
            "cannot compute statistics of an empty split".into(),
        ));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::Dataset(format!(
            "row of length {}, expected {n}",
            r.len()
        )));
    }
    let mut mean = vec![0.0; n];
    let mut std = vec![0.0; n];
    for orbit in enumerate_orbits(spec) {
        let count = (orbit.indices.len() * rows.len()) as f64;
        let mu = rows
            .iter()
            .flat_map(|r| orbit.indices.iter().map(move |&i| r[i]))
            .sum::<f64>()
            / count;
        let var = rows
            .iter()
            .flat_map(|r| {
                orbit
                    .indices
                    .iter()
                    .map(move |&i| (r[i] - mu) * (r[i] - mu))
            })
            .sum::<f64>()
            / count;
        let mut s = var.sqrt();
        if s < floor {
            s = floor;
        } else if s == 0.0 {
            return Err(Error::ZeroStd(orbit.indices[0]));
        }
        for &i in &orbit.indices {
            mean[i] = mu;
            std[i] = s;
        }
    }
    Ok(NormalizationStats { mean, std })
}

/// `O = d_0 + (M-2) + d_M + (M-1) + d_M`.
pub fn orbit_count(spec: &WeightSpaceSpec) -> usize {
    let m = spec.layers();
    spec.dim(0) + (m - 2) + spec.dim(m) + (m - 1) + spec.dim(m)
}

/// Orbits found by merging every coordinate with its image under every
/// group element (union-find), for groups of at most `limit` elements.
pub fn brute_force_orbits(spec: &WeightSpaceSpec, limit: u64) -> Result<Vec<Vec<usize>>> {
    let n = spec.flat_dim();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for g in enumerate_group_with_limit(spec, limit)? {
        for (i, j) in flat_coordinate_map(spec, &g).into_iter().enumerate() {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    Ok(groups.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn analytic_sets(spec: &WeightSpaceSpec) -> Vec<Vec<usize>> {
        let mut v: Vec<Vec<usize>> = enumerate_orbits(spec)
            .into_iter()
            .map(|o| o.indices)
            .collect();
        v.sort();
        v
    }

    #[test]
    fn orbit_counts_match_brute_force() {
        for (dims, o) in [("2,3,3,2", 9), ("1,2,1", 4)] {
            let spec = WeightSpaceSpec::parse(dims).unwrap();
            let brute = brute_force_orbits(&spec, 10_000).unwrap();
            assert_eq!(brute.len(), o);
            assert_eq!(orbit_count(&spec), o);
            assert_eq!(analytic_sets(&spec), brute);
        }
    }

    #[test]
    fn orbits_partition_coordinates() {
        let spec = WeightSpaceSpec::parse("3,2,4,2,2").unwrap();
        let mut all: Vec<usize> = enumerate_orbits(&spec)
            .into_iter()
            .flat_map(|o| o.indices)
            .collect();
        all.sort();
        assert_eq!(all, (0..spec.flat_dim()).collect::<Vec<_>>());
        assert_eq!(
            analytic_sets(&spec),
            brute_force_orbits(&spec, 10_000).unwrap()
        );
    }

    #[test]
    fn orbit_normalization_commutes_with_the_action() {
        use crate::symmetry::sample_group_element;
        use crate::weight_space::WeightSpaceVector;
        use rand::SeedableRng;
        let spec = WeightSpaceSpec::parse("2,3,4,2").unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                WeightSpaceVector::random(&spec, 1, &mut rng)
                    .flatten()
                    .into_data()
            })
            .collect();
        let stats = orbit_normalization(&spec, rows.iter().map(Vec::as_slice), 1e-8).unwrap();
        for o in enumerate_orbits(&spec) {
            assert!(o
                .indices
                .iter()
                .all(|&i| stats.mean[i] == stats.mean[o.indices[0]]));
        }
        let v = WeightSpaceVector::unflatten(&spec, 1, &rows[0]).unwrap();
        let g = sample_group_element(&spec, &mut rng);
        let a = stats.normalize(v.act(&g).unwrap().flatten().data());
        let b = WeightSpaceVector::unflatten(&spec, 1, &stats.normalize(&rows[0]))
            .unwrap()
            .act(&g)
            .unwrap();
        assert_eq!(a, b.flatten().into_data());
    }

    #[test]
    fn orbit_normalization_pools_entries() {
        let spec = WeightSpaceSpec::parse("1,2,1").unwrap();
        // W1 (2x1), b1 (2), W2 (1x2), b2 (1)
        let rows = [
            vec![1.0, 3.0, 0.0, 0.0, 2.0, 2.0, 5.0],
            vec![1.0, 3.0, 0.0, 0.0, 2.0, 2.0, 7.0],
        ];
        let s = orbit_normalization(&spec, rows.iter().map(Vec::as_slice), 1e-8).unwrap();
        assert_eq!(s.mean, vec![2.0, 2.0, 0.0, 0.0, 2.0, 2.0, 6.0]);
        assert_eq!(s.std, vec![1.0, 1.0, 1e-8, 1e-8, 1e-8, 1e-8, 1.0]);
        assert!(orbit_normalization(&spec, rows.iter().map(Vec::as_slice), 0.0).is_err());
    }
}
