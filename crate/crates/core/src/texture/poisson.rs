use super::{TexelState, UvTexture};
use crate::error::Result;
use crate::sparse::{conjugate_gradient, CsrOperator};
use crate::Exec;

/// CG stopping tolerance relative to `max(|b|, 1)`.
pub const BLEND_TOLERANCE: f64 = 1e-12;

/// Texels solved for: projected in the foreground and not on the image border.
fn region(fg: &UvTexture) -> Vec<bool> {
    let (w, h) = (fg.width(), fg.height());
    (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            fg.mask[i] == TexelState::Projected && x > 0 && y > 0 && x + 1 < w && y + 1 < h
        })
        .collect()
}

fn neighbors(i: usize, w: usize) -> [usize; 4] {
    [i - 1, i + 1, i - w, i + w]
}

/// Gradient-domain composite of the projected foreground onto the
/// background. Inside the region the result `f` satisfies
/// `4 f_p - sum f_q = sum (fg_p - fg_q)` with background values on every
/// neighbor outside; outside the region the background is copied unchanged.
///
/// Solved as `f = fg + h` with `h` harmonic and `h = bg - fg` on the boundary.
pub fn poisson_blend(fg: &UvTexture, bg: &UvTexture, exec: Exec) -> Result<UvTexture> {
    fg.same_size(bg)?;
    let w = fg.width();
    let inside = region(fg);
    let mut index = vec![usize::MAX; inside.len()];
    let unknowns: Vec<usize> = (0..inside.len()).filter(|&i| inside[i]).collect();
    for (k, &i) in unknowns.iter().enumerate() {
        index[i] = k;
    }
    let rows = unknowns
        .iter()
        .map(|&i| {
            let mut row = vec![(index[i], 4.0)];
            row.extend(
                neighbors(i, w)
                    .into_iter()
                    .filter(|&q| inside[q])
                    .map(|q| (index[q], -1.0)),
            );
            row
        })
        .collect();
    let op = CsrOperator::from_rows(rows);
    let solved: Vec<Result<Vec<f64>>> = exec.map_range(3, |c| {
        let b: Vec<f64> = unknowns
            .iter()
            .map(|&i| {
                neighbors(i, w)
                    .into_iter()
                    .filter(|&q| !inside[q])
                    .map(|q| bg.pixels[q][c] - fg.pixels[q][c])
                    .sum()
            })
            .collect();
        let mut h = vec![0.0; unknowns.len()];
        if !unknowns.is_empty() {
            conjugate_gradient(&op, &b, &mut h, BLEND_TOLERANCE, 20 * unknowns.len() + 100)?;
        }
        Ok(h)
    });
    let mut out = bg.clone();
    out.mask.fill(TexelState::Background);
    for (c, h) in solved.into_iter().enumerate() {
        let h = h?;
        for (k, &i) in unknowns.iter().enumerate() {
            out.pixels[i][c] = fg.pixels[i][c] + h[k];
        }
    }
    for &i in &unknowns {
        out.mask[i] = TexelState::Projected;
        for q in neighbors(i, w) {
            if !inside[q] {
                out.mask[q] = TexelState::Boundary;
            }
        }
    }
    Ok(out)
}

/// Largest deviation from the blending equation over the solved region.
pub fn poisson_residual(out: &UvTexture, fg: &UvTexture) -> f64 {
    let w = fg.width();
    let inside = region(fg);
    let mut worst: f64 = 0.0;
    for i in (0..inside.len()).filter(|&i| inside[i]) {
        for c in 0..3 {
            let lap: f64 = neighbors(i, w)
                .iter()
                .map(|&q| out.pixels[i][c] - out.pixels[q][c])
                .sum();
            let div: f64 = neighbors(i, w).iter().map(|&q| fg.pixels[i][c] - fg.pixels[q][c]).sum();
            worst = worst.max((lap - div).abs());
        }
    }
    worst
}

/// Gives every non-projected texel next to the projected region the mean of
/// its projected 4-neighbors and marks it as boundary, so the guidance field
/// is defined across the region's edge.
pub fn fill_boundary_ring(tex: &mut UvTexture) {
    let (w, h) = (tex.width(), tex.height());
    let mut updates = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if tex.mask[i] == TexelState::Projected {
                continue;
            }
            let mut sum = [0.0; 3];
            let mut n = 0.0;
            let cand = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for q in cand.into_iter().flatten() {
                if tex.mask[q] == TexelState::Projected {
                    for (s, v) in sum.iter_mut().zip(tex.pixels[q]) {
                        *s += v;
                    }
                    n += 1.0;
                }
            }
            if n > 0.0 {
                updates.push((i, sum.map(|s| s / n)));
            }
        }
    }
    for (i, p) in updates {
        tex.pixels[i] = p;
        tex.mask[i] = TexelState::Boundary;
    }
}
