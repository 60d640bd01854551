use hitter_tensor::{Scalar, Tensor};

use crate::error::{CoreError, Result};
use crate::kg::EntityId;

/// The `k` rows most cosine-similar to row `entity`, excluding itself.
/// Ties break toward the smaller id; zero rows are skipped.
pub fn nearest_entities<T: Scalar>(table: &Tensor<T>, entity: EntityId, k: usize) -> Result<Vec<(EntityId, f64)>> {
    let n = table.rows();
    if entity >= n {
        return Err(CoreError::Index {
            kind: "entity",
            id: entity,
            size: n,
        });
    }
    if k >= n {
        return Err(CoreError::Config(format!("k = {k} must be below the entity count {n}")));
    }
    let norm = |i: usize| table.row(i).iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    let q = table.row(entity);
    let qn = norm(entity);
    if qn == 0.0 {
        return Err(CoreError::Contract(format!("entity {entity} has a zero embedding")));
    }
    let mut skipped = 0;
    let mut sims = Vec::with_capacity(n - 1);
    for i in (0..n).filter(|&i| i != entity) {
        let ni = norm(i);
        if ni == 0.0 {
            skipped += 1;
            continue;
        }
        let dot: f64 = q.iter().zip(table.row(i)).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
        sims.push((i, dot / (qn * ni)));
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} zero-norm embeddings");
    }
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims.truncate(k);
    Ok(sims)
}
