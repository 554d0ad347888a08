//! Anti-aliased polyline strokes on a texel grid.
//!
//! Coverage of a texel by a segment is the overlap of a one-texel box,
//! centered at the texel and measured across the segment, with the stroke's
//! width interval. Overlapping strokes keep the largest coverage, so a
//! polyline never double-counts its joints. The canvas remembers which
//! strand, segment and segment parameter won each texel so callers can
//! interpolate their own attributes.

use crate::math::Vec2;

/// Texel owner: strand, segment, parameter along the segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokeHit {
    pub strand: usize,
    pub segment: usize,
    pub t: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub hits: Vec<Option<StrokeHit>>,
    /// Sum over strands of each strand's own coverage.
    pub density: Vec<f64>,
}

/// Overlap length of `[d - 0.5, d + 0.5]` with `[-half, half]`.
pub fn box_coverage(d: f64, half: f64) -> f64 {
    let d = d.abs();
    ((d + 0.5).min(half) - (d - 0.5).max(-half)).clamp(0.0, 1.0)
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            hits: vec![None; width * height],
            density: vec![0.0; width * height],
        }
    }

    pub fn coverage(&self, x: usize, y: usize) -> f64 {
        self.hits[y * self.width + x].map_or(0.0, |h| h.coverage)
    }

    /// Draws a polyline given in texel coordinates (texel (i, j) has its
    /// center at (i + 0.5, j + 0.5)).
    pub fn draw_polyline(&mut self, strand: usize, points: &[Vec2], half_width: f64) {
        if !(half_width > 0.0) {
            return;
        }
        let mut own = std::collections::BTreeMap::new();
        for (seg, w) in points.windows(2).enumerate() {
            self.draw_segment(strand, seg, w[0], w[1], half_width, &mut own);
        }
        if points.len() == 1 {
            self.draw_segment(strand, 0, points[0], points[0], half_width, &mut own);
        }
        for (idx, c) in own {
            self.density[idx] += c;
        }
    }

    fn draw_segment(
        &mut self,
        strand: usize,
        seg: usize,
        a: Vec2,
        b: Vec2,
        half: f64,
        own: &mut std::collections::BTreeMap<usize, f64>,
    ) {
        let pad = half + 1.0;
        let x0 = ((a.x.min(b.x) - pad).floor().max(0.0)) as usize;
        let y0 = ((a.y.min(b.y) - pad).floor().max(0.0)) as usize;
        let x1 = (a.x.max(b.x) + pad).ceil().min(self.width as f64);
        let y1 = (a.y.max(b.y) + pad).ceil().min(self.height as f64);
        if x1 <= 0.0 || y1 <= 0.0 {
            return;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        let ab = b - a;
        let len2 = ab.norm_squared();
        for y in y0..y1 {
            for x in x0..x1 {
                let p = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let d = (p - (a + ab * t)).norm();
                let c = box_coverage(d, half);
                if c <= 0.0 {
                    continue;
                }
                let o = own.entry(y * self.width + x).or_insert(0.0);
                *o = f64::max(*o, c);
                let slot = &mut self.hits[y * self.width + x];
                if slot.map_or(true, |h| c > h.coverage) {
                    *slot = Some(StrokeHit {
                        strand,
                        segment: seg,
                        t,
                        coverage: c,
                    });
                }
            }
        }
    }

    pub fn total_coverage(&self) -> f64 {
        self.hits.iter().flatten().map(|h| h.coverage).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_coverage_integrates_to_width() {
        for half in [0.2, 0.5, 1.3, 4.0] {
            let n = 20000;
            let step = 20.0 / n as f64;
            let area: f64 = (0..n).map(|i| box_coverage(-10.0 + (i as f64 + 0.5) * step, half) * step).sum();
            assert!((area - 2.0 * half).abs() < 1e-3, "{half}: {area}");
        }
    }

    #[test]
    fn horizontal_stroke_area() {
        let mut c = Canvas::new(128, 32);
        c.draw_polyline(0, &[Vec2::new(10.0, 16.0), Vec2::new(60.0, 16.0), Vec2::new(110.0, 16.0)], 2.0);
        let area = c.total_coverage();
        assert!((area - 400.0).abs() / 400.0 < 0.05, "{area}");
        assert_eq!(c.coverage(60, 16), 1.0);
        assert_eq!(c.coverage(60, 25), 0.0);
        assert!((c.density.iter().sum::<f64>() - area).abs() < 1e-9);
        c.draw_polyline(1, &[Vec2::new(10.0, 16.0), Vec2::new(110.0, 16.0)], 2.0);
        assert_eq!(c.density[16 * 128 + 60], 2.0);
        assert_eq!(c.total_coverage(), area);
    }
}
