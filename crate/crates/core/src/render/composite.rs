//! Front-to-back alpha compositing of depth-sorted Gaussians at one pixel.

/// One Gaussian's contribution at a pixel: color, opacity, and the Gaussian's
/// probability at the pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub color: [f64; 3],
    pub opacity: f64,
    pub probability: f64,
}

/// `C = Σ_i c_i o_i p_i Π_{j<i} (1 − o_j p_j)` over splats sorted near to far.
pub fn composite_gaussians(splats: &[Splat]) -> [f64; 3] {
    let mut out = [0.0; 3];
    let mut trans = 1.0;
    for s in splats {
        let a = s.opacity * s.probability;
        for k in 0..3 {
            out[k] += s.color[k] * a * trans;
        }
        trans *= 1.0 - a;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_and_empty() {
        let s = Splat {
            color: [0.2, 0.4, 0.9],
            opacity: 1.0,
            probability: 1.0,
        };
        assert_eq!(composite_gaussians(&[s]), [0.2, 0.4, 0.9]);
        assert_eq!(composite_gaussians(&[]), [0.0; 3]);
        let hidden = Splat { color: [1.0; 3], ..s };
        assert_eq!(composite_gaussians(&[s, hidden]), [0.2, 0.4, 0.9]);
    }
}
