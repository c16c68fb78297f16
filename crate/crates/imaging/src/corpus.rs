//! Procedural desk-scale test corpus: small synthetic "photos" with soft
//! gradients and a few colored shapes, giving every image nonzero spread
//! on all three parameter axes at moderate brightness. Deterministic in
//! the seed, so round-trip gates reproduce exactly.

use crate::ImageRGB;
use fbptf_core::rng::RngStream;
use rand::Rng;

const WIDTH: usize = 64;
const HEIGHT: usize = 48;

fn blend(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Generates `count` images, each derived from `root.child("image", i)`.
pub fn desk_corpus(count: usize, seed: u64) -> Vec<ImageRGB> {
    let root = RngStream::root(seed);
    (0..count).map(|i| desk_image(&root, i as u64)).collect()
}

fn desk_image(root: &RngStream, index: u64) -> ImageRGB {
    let mut rng = root.child("image", index).rng();
    let mut color = |lo: f64, hi: f64| -> [f64; 3] {
        [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
    };
    // Mid-range gradient endpoints keep mean V away from the clamp walls.
    let c0 = color(60.0, 190.0);
    let c1 = color(60.0, 190.0);
    struct Shape {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        disk: bool,
        color: [f64; 3],
    }
    let shapes: Vec<Shape> = (0..rng.random_range(3..=6))
        .map(|_| {
            let x0 = rng.random_range(0..WIDTH - 8);
            let y0 = rng.random_range(0..HEIGHT - 8);
            let w = rng.random_range(8..=24).min(WIDTH - x0);
            let h = rng.random_range(8..=20).min(HEIGHT - y0);
            Shape {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
                disk: rng.random::<bool>(),
                color: [
                    rng.random_range(35.0..225.0),
                    rng.random_range(35.0..225.0),
                    rng.random_range(35.0..225.0),
                ],
            }
        })
        .collect();
    ImageRGB::from_fn(WIDTH, HEIGHT, |x, y| {
        let t = 0.5 * (x as f64 / (WIDTH - 1) as f64) + 0.5 * (y as f64 / (HEIGHT - 1) as f64);
        let mut col = blend(c0, c1, t);
        for sh in &shapes {
            let inside = if sh.disk {
                let cx = 0.5 * (sh.x0 + sh.x1) as f64;
                let cy = 0.5 * (sh.y0 + sh.y1) as f64;
                let rx = 0.5 * (sh.x1 - sh.x0) as f64;
                let ry = 0.5 * (sh.y1 - sh.y0) as f64;
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            } else {
                (sh.x0..sh.x1).contains(&x) && (sh.y0..sh.y1).contains(&y)
            };
            if inside {
                col = blend(col, sh.color, 0.75);
            }
        }
        [col[0].round() as u8, col[1].round() as u8, col[2].round() as u8]
    })
    .expect("fixed dimensions are valid")
}
