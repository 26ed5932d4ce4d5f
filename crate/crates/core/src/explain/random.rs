//! Zero-mean uniform noise attributions, used as a chance-level reference.

use rand::Rng;

use super::{Explanation, MethodId};
use crate::render::Image;
use crate::seed;

/// I.i.d. `U(-1, 1)` per pixel, seeded by `seed`, the image content and the
/// target class.
pub fn random_attribution(image: &Image, target: usize, seed: u64) -> Explanation {
    let mut rng = seed::rng(
        seed ^ image.fingerprint(),
        "random-attribution",
        target as u64,
    );
    let map = (0..image.pixels())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Explanation::attribution(image.width, image.height, map, MethodId::Random, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_image_and_target() {
        let img = Image::filled(8, 8, 0.2);
        let a = random_attribution(&img, 3, 1);
        assert_eq!(a, random_attribution(&img, 3, 1));
        assert_ne!(a, random_attribution(&img, 4, 1));
        assert_ne!(a, random_attribution(&Image::filled(8, 8, 0.3), 3, 1));
        let m = a.as_attribution().unwrap();
        assert!(m.iter().all(|v| (-1.0..1.0).contains(v)));
    }
}
