use rand::seq::SliceRandom;
use rand::Rng;

use crate::domain::{sample_feasible_region, take_with_restart, AnnotationState, ImageId, Region, Shape};
use crate::error::Result;

/// Uniformly random images among those not yet visited in the current loop.
pub fn rand_select_images<R: Rng + ?Sized>(
    pool: &[ImageId],
    state: &mut AnnotationState,
    n_image: usize,
    rng: &mut R,
) -> Result<Vec<ImageId>> {
    let mut order = pool.to_vec();
    order.shuffle(rng);
    take_with_restart(&order, state.loop_visited_mut(), n_image)
}

/// Up to `n_region` uniformly random regions that avoid `existing` and
/// each other.
pub fn rand_select_regions<R: Rng + ?Sized>(
    image_id: ImageId,
    shape: &Shape,
    side: usize,
    n_region: usize,
    existing: &[Region],
    cycle: u32,
    rng: &mut R,
) -> Vec<Region> {
    let mut taken: Vec<Region> = existing.iter().filter(|r| r.image_id == image_id).copied().collect();
    let mut out = Vec::with_capacity(n_region);
    for _ in 0..n_region {
        match sample_feasible_region(image_id, shape, side, &taken, cycle, rng) {
            Some(r) => {
                taken.push(r);
                out.push(r);
            }
            None => break,
        }
    }
    out
}
