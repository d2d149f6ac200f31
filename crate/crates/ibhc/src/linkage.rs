//! Average-linkage (UPGMA) agglomerative clustering.

use ibhc_core::{Tree, TreeBuilder};

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Average-linkage tree over the rows, leaves labelled by row index.
///
/// Each merge joins the closest pair of clusters; ties go to the pair whose
/// smallest members are lexicographically first. The cluster with the
/// smaller minimum member becomes the left child. Times are uniform.
pub fn average_linkage(rows: &[Vec<f64>]) -> Tree {
    let n = rows.len();
    let mut b = TreeBuilder::new();
    // slot i holds the cluster whose smallest member is i
    let mut slots: Vec<Option<(ibhc_core::tree::BuildId, usize)>> = (0..n).map(|i| Some((b.leaf(i), 1))).collect();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = euclidean(&rows[i], &rows[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    for _ in 1..n {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if slots[i].is_none() {
                continue;
            }
            for j in (i + 1)..n {
                if slots[j].is_some() && best.is_none_or(|(v, _, _)| d[i][j] < v) {
                    best = Some((d[i][j], i, j));
                }
            }
        }
        let (_, i, j) = best.expect("two live clusters");
        let (li, si) = slots[i].take().expect("live");
        let (lj, sj) = slots[j].take().expect("live");
        for k in 0..n {
            if k != i && k != j && slots[k].is_some() {
                let v = (si as f64 * d[i][k] + sj as f64 * d[j][k]) / (si + sj) as f64;
                d[i][k] = v;
                d[k][i] = v;
            }
        }
        slots[i] = Some((b.internal(vec![li, lj], None), si + sj));
    }
    let root = slots.into_iter().flatten().next().expect("nonempty input").0;
    b.finish(root).expect("agglomeration gives a well-formed tree")
}
