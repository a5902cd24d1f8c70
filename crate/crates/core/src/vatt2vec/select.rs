use super::schema::AttributeSchema;
use crate::error::{Error, Result};
use crate::nn::GruCell;
use crate::tensor::{ParamStore, Tensor};

/// Flat index of the most probable tag in each group; ties go to the lowest index.
pub fn select_group_argmax(probs: &[f64], schema: &AttributeSchema) -> Vec<usize> {
    schema
        .group_ranges()
        .into_iter()
        .map(|r| {
            let mut best = r.start;
            for i in r {
                if probs[i] > probs[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Rows of `table: [tags, d]` for each selection, stacked to `[N, groups, d]`.
pub fn gather_attribute_embeddings(table: &Tensor, selected: &[Vec<usize>]) -> Result<Tensor> {
    let groups = selected.first().map_or(0, Vec::len);
    if groups == 0 || selected.iter().any(|s| s.len() != groups) {
        return Err(Error::InvalidArgument("selections must be nonempty and of equal length".into()));
    }
    let rows: Vec<usize> = selected.iter().flatten().copied().collect();
    table.index_select(&rows)?.reshape(&[selected.len(), groups, table.shape()[1]])
}

/// Runs the GRU over the group axis of `a: [N, groups, d]`; the final hidden
/// state `[N, hidden]` is the unified attribute vector.
pub fn fuse_attributes(gru: &GruCell, store: &ParamStore, a: &Tensor, groups: usize) -> Result<Tensor> {
    if a.ndim() != 3 || a.shape()[1] != groups {
        return Err(Error::ShapeMismatch {
            op: "fuse_attributes",
            lhs: a.shape().to_vec(),
            rhs: vec![groups, gru.input_dim],
        });
    }
    let (n, d) = (a.shape()[0], a.shape()[2]);
    let steps = (0..groups).map(|g| a.slice(1, g, g + 1)?.reshape(&[n, d])).collect::<Result<Vec<_>>>()?;
    Ok(gru.fuse_sequence(store, &steps, None)?.last().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Group maximum first, then the first tag attaining it.
    fn brute_force(probs: &[f64], schema: &AttributeSchema) -> Vec<usize> {
        schema
            .group_ranges()
            .into_iter()
            .map(|r| {
                let max = r.clone().map(|i| probs[i]).fold(f64::NEG_INFINITY, f64::max);
                r.clone().find(|&i| probs[i] == max).unwrap()
            })
            .collect()
    }

    #[test]
    fn one_hot_and_ties() {
        let s = AttributeSchema::vehicle();
        let mut m = vec![0.0; 47];
        for &i in &[3, 20, 26, 28, 36, 45] {
            m[i] = 1.0;
        }
        assert_eq!(select_group_argmax(&m, &s), vec![3, 20, 26, 28, 36, 45]);
        let flat = vec![0.5; 47];
        let starts: Vec<usize> = s.group_ranges().iter().map(|r| r.start).collect();
        assert_eq!(select_group_argmax(&flat, &s), starts);
    }

    proptest! {
        #[test]
        fn matches_brute_force(m in prop::collection::vec(prop_oneof![0.0..1.0f64, Just(0.5)], 47)) {
            let s = AttributeSchema::vehicle();
            let got = select_group_argmax(&m, &s);
            prop_assert_eq!(got.len(), 6);
            for (g, &i) in got.iter().enumerate() {
                prop_assert_eq!(s.group_of(i), Some(g));
            }
            prop_assert_eq!(got.clone(), brute_force(&m, &s));
            // Strictly increasing transforms keep the selection.
            let warped: Vec<f64> = m.iter().map(|p| (3.0 * p).exp() - 7.0).collect();
            prop_assert_eq!(select_group_argmax(&warped, &s), got);
        }
    }

    #[test]
    fn gather_and_fuse_shapes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gru = GruCell::new(&mut store, "gru", 768, 256, Init::FanIn(1.0), true, &mut rng).unwrap();
        let table = Tensor::from_vec((0..47 * 768).map(|i| (i as f64 * 0.01).sin()).collect(), &[47, 768]).unwrap();
        let sel = vec![vec![0, 11, 23, 27, 32, 37], vec![1, 12, 24, 28, 33, 38]];
        let a = gather_attribute_embeddings(&table, &sel).unwrap();
        assert_eq!(a.shape(), &[2, 6, 768]);
        assert_eq!(&a.data()[768..1536], &table.data()[11 * 768..12 * 768]);
        let va = fuse_attributes(&gru, &store, &a, 6).unwrap();
        assert_eq!(va.shape(), &[2, 256]);
        assert_eq!(va.data(), fuse_attributes(&gru, &store, &a, 6).unwrap().data());
        assert!(fuse_attributes(&gru, &store, &a.slice(1, 0, 5).unwrap(), 6).is_err());
    }

    #[test]
    fn zero_gru_gives_zero_vector() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gru = GruCell::new(&mut store, "gru", 4, 6, Init::Zeros, true, &mut rng).unwrap();
        let a = Tensor::full(&[1, 6, 4], 0.7);
        assert!(fuse_attributes(&gru, &store, &a, 6).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
