//! On-the-fly flip and shift augmentation.
//!
//! Shifting "left" moves image content toward smaller `x`; zeros enter on
//! the right. "Up" moves content toward `y = 0`.

use crate::numerics::{Rng, Scalar, Tensor};

pub const SHIFT_PIXELS: isize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentFlags {
    pub flip: bool,
    pub shift: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flip {
    Horizontal,
    Vertical,
    None,
}

/// Direction of a shift along one axis: `Negative` is left (or up).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shift {
    Negative,
    Positive,
    None,
}

impl Shift {
    pub fn offset(self) -> isize {
        match self {
            Shift::Negative => -SHIFT_PIXELS,
            Shift::Positive => SHIFT_PIXELS,
            Shift::None => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentPlan {
    pub flip: Flip,
    pub shift_x: Shift,
    pub shift_y: Shift,
}

impl AugmentPlan {
    pub const IDENTITY: Self = Self {
        flip: Flip::None,
        shift_x: Shift::None,
        shift_y: Shift::None,
    };

    /// Draws flip, then horizontal shift, then vertical shift, each with
    /// outcome probabilities (.25, .25, .50). Disabled stages draw nothing.
    pub fn draw(rng: &mut Rng, flags: AugmentFlags) -> Self {
        let mut plan = Self::IDENTITY;
        if flags.flip {
            plan.flip = match rng.below(4) {
                0 => Flip::Horizontal,
                1 => Flip::Vertical,
                _ => Flip::None,
            };
        }
        if flags.shift {
            let mut draw = || match rng.below(4) {
                0 => Shift::Negative,
                1 => Shift::Positive,
                _ => Shift::None,
            };
            plan.shift_x = draw();
            plan.shift_y = draw();
        }
        plan
    }

    pub fn apply<T: Scalar>(&self, image: &Tensor<T>) -> Tensor<T> {
        let flipped = match self.flip {
            Flip::Horizontal => flip_horizontal(image),
            Flip::Vertical => flip_vertical(image),
            Flip::None => image.clone(),
        };
        match (self.shift_x, self.shift_y) {
            (Shift::None, Shift::None) => flipped,
            (sx, sy) => shift(&flipped, sx.offset(), sy.offset()),
        }
    }
}

pub fn augment<T: Scalar>(image: &Tensor<T>, rng: &mut Rng, flags: AugmentFlags) -> Tensor<T> {
    AugmentPlan::draw(rng, flags).apply(image)
}

fn dims<T: Scalar>(image: &Tensor<T>) -> (usize, usize, usize) {
    match image.shape() {
        &[w, h, c] => (w, h, c),
        s => panic!("augmentation expects a [w, h, c] image, got {s:?}"),
    }
}

/// Mirrors `x`.
pub fn flip_horizontal<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let (w, h, c) = dims(image);
    let col = h * c;
    let mut out = image.clone();
    for x in 0..w {
        out.data_mut()[x * col..(x + 1) * col].copy_from_slice(&image.data()[(w - 1 - x) * col..(w - x) * col]);
    }
    out
}

/// Mirrors `y`.
pub fn flip_vertical<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let (w, h, c) = dims(image);
    let mut out = image.clone();
    for x in 0..w {
        for y in 0..h {
            let dst = (x * h + y) * c;
            let src = (x * h + h - 1 - y) * c;
            out.data_mut()[dst..dst + c].copy_from_slice(&image.data()[src..src + c]);
        }
    }
    out
}

/// Moves content by `(dx, dy)` pixels, dropping what leaves the frame and
/// filling with zeros.
pub fn shift<T: Scalar>(image: &Tensor<T>, dx: isize, dy: isize) -> Tensor<T> {
    let (w, h, c) = dims(image);
    let mut out = image.zeros_like();
    for x in 0..w as isize {
        let sx = x - dx;
        if sx < 0 || sx >= w as isize {
            continue;
        }
        for y in 0..h as isize {
            let sy = y - dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let dst = (x as usize * h + y as usize) * c;
            let src = (sx as usize * h + sy as usize) * c;
            out.data_mut()[dst..dst + c].copy_from_slice(&image.data()[src..src + c]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize, c: usize) -> Tensor<f64> {
        Tensor::from_fn(&[w, h, c], |i| i as f64 + 1.0)
    }

    #[test]
    fn identity_plan_is_identity() {
        let img = ramp(5, 4, 3);
        assert_eq!(AugmentPlan::IDENTITY.apply(&img), img);
        let mut rng = crate::numerics::Rng::new(0);
        assert_eq!(augment(&img, &mut rng, AugmentFlags::default()), img);
    }

    #[test]
    fn left_shift_moves_content_left() {
        let ones = Tensor::<f64>::filled(&[4, 4, 1], 1.0);
        let plan = AugmentPlan {
            shift_x: Shift::Negative,
            ..AugmentPlan::IDENTITY
        };
        let out = plan.apply(&ones);
        for x in 0..4 {
            for y in 0..4 {
                assert_eq!(out.data()[x * 4 + y], if x < 2 { 1.0 } else { 0.0 });
            }
        }
        // Up: rows 0-1 keep content.
        let up = shift(&ones, 0, -2);
        assert_eq!(&up.data()[..4], &[1.0, 1.0, 0.0, 0.0]);
        let img = ramp(6, 6, 1);
        assert_eq!(shift(&img, -2, 0).data()[0], img.data()[2 * 6]);
    }

    #[test]
    fn left_then_right_is_lossy() {
        let img = ramp(6, 5, 2);
        let back = shift(&shift(&img, -2, 0), 2, 0);
        assert_ne!(back, img);
        assert!(back.data()[..2 * 5 * 2].iter().all(|&v| v == 0.0));
        assert_eq!(&back.data()[20..], &img.data()[20..]);
    }

    #[test]
    fn flips_mirror_the_right_axis() {
        let img = ramp(3, 2, 1);
        // Columns x=0: [1,2], x=1: [3,4], x=2: [5,6].
        assert_eq!(flip_horizontal(&img).data(), &[5.0, 6.0, 3.0, 4.0, 1.0, 2.0]);
        assert_eq!(flip_vertical(&img).data(), &[2.0, 1.0, 4.0, 3.0, 6.0, 5.0]);
    }

    #[test]
    fn seeded_and_seed_sensitive() {
        let img = ramp(8, 8, 3);
        let flags = AugmentFlags { flip: true, shift: true };
        let run = |seed| {
            let mut rng = crate::numerics::Rng::new(seed);
            (0..20).map(|_| augment(&img, &mut rng, flags)).collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn disabled_stages_draw_nothing() {
        let mut rng = crate::numerics::Rng::new(5);
        for _ in 0..100 {
            let p = AugmentPlan::draw(&mut rng, AugmentFlags { flip: false, shift: true });
            assert_eq!(p.flip, Flip::None);
            let p = AugmentPlan::draw(&mut rng, AugmentFlags { flip: true, shift: false });
            assert_eq!((p.shift_x, p.shift_y), (Shift::None, Shift::None));
        }
    }

    proptest! {
        #[test]
        fn flips_are_involutions(w in 1usize..7, h in 1usize..7, c in 1usize..4) {
            let img = ramp(w, h, c);
            prop_assert_eq!(flip_horizontal(&flip_horizontal(&img)), img.clone());
            prop_assert_eq!(flip_vertical(&flip_vertical(&img)), img);
        }

        #[test]
        fn shifts_preserve_shape_and_values(w in 1usize..7, h in 1usize..7, dx in -3isize..4, dy in -3isize..4) {
            let img = ramp(w, h, 2);
            let out = shift(&img, dx, dy);
            prop_assert_eq!(out.shape(), img.shape());
            for v in out.data() {
                prop_assert!(*v == 0.0 || img.data().contains(v));
            }
        }
    }
}
