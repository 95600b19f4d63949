//! Triplet margin loss and in-batch semi-hard negative mining.

use ndarray::{Array1, ArrayView1};

use super::EmbedderError;

/// Default triplet margin.
pub const DEFAULT_MARGIN: f64 = 0.2;

pub fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `max(0, |a-p|^2 - |a-n|^2 + margin)`.
pub fn triplet_loss(
    anchor: ArrayView1<'_, f64>,
    positive: ArrayView1<'_, f64>,
    negative: ArrayView1<'_, f64>,
    margin: f64,
) -> Result<f64, EmbedderError> {
    if anchor.len() != positive.len() {
        return Err(EmbedderError::Dimension(anchor.len(), positive.len()));
    }
    if anchor.len() != negative.len() {
        return Err(EmbedderError::Dimension(anchor.len(), negative.len()));
    }
    Ok((squared_distance(anchor, positive) - squared_distance(anchor, negative) + margin).max(0.0))
}

/// Indices of (anchor, positive, negative) rows in a batch of embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TripletIndex {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Picks a negative for each (anchor, positive) pair: the closest negative
/// that is still farther from the anchor than the positive, or the closest
/// negative overall when none is. Ties resolve to the lowest index.
/// Pairs with no candidate negative are skipped.
pub fn mine_semi_hard(embeddings: &[Array1<f64>], labels: &[usize], pairs: &[(usize, usize)]) -> Vec<TripletIndex> {
    let mut out = Vec::with_capacity(pairs.len());
    for &(a, p) in pairs {
        let d_ap = squared_distance(embeddings[a].view(), embeddings[p].view());
        let mut semi: Option<(f64, usize)> = None;
        let mut hardest: Option<(f64, usize)> = None;
        for (n, e) in embeddings.iter().enumerate() {
            if labels[n] == labels[a] {
                continue;
            }
            let d_an = squared_distance(embeddings[a].view(), e.view());
            if hardest.is_none_or(|(d, _)| d_an < d) {
                hardest = Some((d_an, n));
            }
            if d_an > d_ap && semi.is_none_or(|(d, _)| d_an < d) {
                semi = Some((d_an, n));
            }
        }
        if let Some((_, negative)) = semi.or(hardest) {
            out.push(TripletIndex { anchor: a, positive: p, negative });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn loss_examples() {
        let a = arr1(&[1.0, 0.0]);
        let far = arr1(&[-1.0, 0.0]);
        assert_eq!(triplet_loss(a.view(), a.view(), far.view(), 0.2).unwrap(), 0.0);
        assert!((triplet_loss(a.view(), a.view(), a.view(), 0.2).unwrap() - 0.2).abs() < 1e-15);
        let p = arr1(&[0.0, 1.0]);
        // 2 - 4 + 0.2 < 0
        assert_eq!(triplet_loss(a.view(), p.view(), far.view(), 0.2).unwrap(), 0.0);
        assert!(triplet_loss(a.view(), arr1(&[1.0]).view(), far.view(), 0.2).is_err());
    }

    #[test]
    fn mining_prefers_semi_hard_then_hardest() {
        let e = vec![arr1(&[0.0]), arr1(&[1.0]), arr1(&[0.5]), arr1(&[1.5]), arr1(&[3.0])];
        let labels = [0, 0, 1, 1, 1];
        // d_ap = 1; negatives at 0.25, 2.25, 9 -> semi-hard is index 3.
        let t = mine_semi_hard(&e, &labels, &[(0, 1)]);
        assert_eq!(t, vec![TripletIndex { anchor: 0, positive: 1, negative: 3 }]);
        // Anchor 1 / positive 0: negatives at 0.25, 0.25, 4 -> semi-hard is 4.
        let t = mine_semi_hard(&e, &labels, &[(1, 0)]);
        assert_eq!(t[0].negative, 4);
        // No negative farther than the positive: fall back to the closest.
        let e2 = vec![arr1(&[0.0]), arr1(&[5.0]), arr1(&[1.0]), arr1(&[2.0])];
        let t = mine_semi_hard(&e2, &[0, 0, 1, 1], &[(0, 1)]);
        assert_eq!(t[0].negative, 2);
    }
}
