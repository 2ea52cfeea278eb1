//! Synthetic layered geology, its boundary mask, and a pseudo-seismic
//! rendering of it.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::grid::{Grid, Image, Mask};
use crate::error::{Error, Result};

pub const MIN_MODEL_DIM: usize = 16;
/// Ricker peak frequency in cycles per row.
pub const RICKER_PEAK_FREQUENCY: f64 = 0.08;

/// Integer facies labels, increasing downward.
#[derive(Clone, Debug, PartialEq)]
pub struct FaciesLabelMap {
    pub grid: Grid<u16>,
}

impl FaciesLabelMap {
    pub fn new(grid: Grid<u16>) -> Self {
        FaciesLabelMap { grid }
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn label(&self, row: usize, col: usize) -> u16 {
        *self.grid.get(row, col)
    }

    pub fn distinct_labels(&self) -> usize {
        let mut seen: Vec<u16> = self.grid.data.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Rows `r >= 1` of column `col` whose label differs from row `r - 1`.
    pub fn transition_rows(&self, col: usize) -> Vec<usize> {
        (1..self.height())
            .filter(|&r| self.label(r, col) != self.label(r - 1, col))
            .collect()
    }
}

/// Generate `num_horizons` smooth, non-crossing horizons across a
/// `height x width` section. Each horizon is a base depth plus up to three
/// random sinusoids; per column the depths are sorted so horizons never
/// cross, and row labels count the horizons at or above them.
pub fn generate_facies_model(
    height: usize,
    width: usize,
    num_horizons: usize,
    seed: u64,
) -> Result<FaciesLabelMap> {
    if height < MIN_MODEL_DIM || width < MIN_MODEL_DIM {
        return Err(Error::invalid(format!(
            "facies model must be at least {MIN_MODEL_DIM}x{MIN_MODEL_DIM}, got {height}x{width}"
        )));
    }
    if num_horizons == 0 || num_horizons >= height / 2 {
        return Err(Error::invalid(format!(
            "num_horizons must be in 1..{} for height {height}, got {num_horizons}",
            height / 2
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = height as f64 / (num_horizons + 1) as f64;
    struct Wave {
        amp: f64,
        cycles: f64,
        phase: f64,
    }
    let horizons: Vec<(f64, Vec<Wave>)> = (0..num_horizons)
        .map(|k| {
            let base = spacing * (k as f64 + 1.0) + rng.random_range(-0.25..0.25) * spacing;
            let terms = rng.random_range(1..=3);
            let waves = (1..=terms)
                .map(|j| Wave {
                    amp: rng.random_range(0.0..0.3) * spacing / j as f64,
                    cycles: rng.random_range(0.3..2.5),
                    phase: rng.random_range(0.0..2.0 * PI),
                })
                .collect();
            (base, waves)
        })
        .collect();

    let mut grid = Grid::filled(height, width, 0u16);
    let mut rows = vec![0usize; num_horizons];
    for col in 0..width {
        let x = col as f64 / width as f64;
        for (slot, (base, waves)) in rows.iter_mut().zip(&horizons) {
            let depth = base
                + waves
                    .iter()
                    .map(|w| w.amp * (2.0 * PI * w.cycles * x + w.phase).sin())
                    .sum::<f64>();
            *slot = (depth.round().max(1.0) as usize).min(height - 1);
        }
        rows.sort_unstable();
        for row in 0..height {
            let label = rows.iter().take_while(|&&r| r <= row).count();
            grid.set(row, col, label as u16);
        }
    }
    Ok(FaciesLabelMap { grid })
}

/// Mark pixels whose 4-neighbourhood contains a different label, then
/// dilate by a `thickness x thickness` square. Even thicknesses extend one
/// extra pixel down/right.
pub fn boundary_mask(labels: &FaciesLabelMap, thickness: usize) -> Result<Mask> {
    if thickness == 0 {
        return Err(Error::invalid("boundary thickness must be at least 1"));
    }
    let (h, w) = (labels.height(), labels.width());
    let mut edge = Grid::filled(h, w, 0u8);
    for r in 0..h {
        for c in 0..w {
            let v = labels.label(r, c);
            let differs = (r > 0 && labels.label(r - 1, c) != v)
                || (r + 1 < h && labels.label(r + 1, c) != v)
                || (c > 0 && labels.label(r, c - 1) != v)
                || (c + 1 < w && labels.label(r, c + 1) != v);
            if differs {
                edge.set(r, c, 1);
            }
        }
    }
    if thickness == 1 {
        return Ok(edge);
    }
    let lo = (thickness as isize - 1) / 2;
    let hi = thickness as isize / 2;
    let mut out = Grid::filled(h, w, 0u8);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let hit = (-hi..=lo).any(|dr| {
                (-hi..=lo).any(|dc| {
                    let (rr, cc) = (r + dr, c + dc);
                    rr >= 0
                        && cc >= 0
                        && rr < h as isize
                        && cc < w as isize
                        && *edge.get(rr as usize, cc as usize) == 1
                })
            });
            if hit {
                out.set(r as usize, c as usize, 1);
            }
        }
    }
    Ok(out)
}

/// Ricker wavelet sampled at integer lags `-half..=half` rows.
pub fn ricker_wavelet(peak_frequency: f64) -> Vec<f64> {
    let half = ricker_half_width(peak_frequency) as isize;
    (-half..=half)
        .map(|t| {
            let a = (PI * peak_frequency * t as f64).powi(2);
            (1.0 - 2.0 * a) * (-a).exp()
        })
        .collect()
}

/// Number of rows on each side of the wavelet centre that are kept.
pub fn ricker_half_width(peak_frequency: f64) -> usize {
    (1.0 / peak_frequency).ceil() as usize
}

/// Noise-free amplitude section, row-major: each facies gets a random
/// impedance and every column's impedance contrasts are convolved with a
/// Ricker wavelet.
pub fn seismic_response(labels: &FaciesLabelMap, seed: u64) -> Vec<f64> {
    response_with_rng(labels, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn response_with_rng(labels: &FaciesLabelMap, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let facies = labels.grid.data.iter().copied().max().unwrap_or(0) as usize + 1;
    let mut impedance = Vec::with_capacity(facies);
    impedance.push(rng.random_range(1.5..2.5));
    for k in 1..facies {
        let step: f64 = rng.random_range(0.3..1.0);
        let prev: f64 = impedance[k - 1];
        let down = prev - step > 0.5 && rng.random_bool(0.5);
        impedance.push(if down { prev - step } else { prev + step });
    }

    let (h, w) = (labels.height(), labels.width());
    let wavelet = ricker_wavelet(RICKER_PEAK_FREQUENCY);
    let half = (wavelet.len() / 2) as isize;
    let mut trace = vec![0.0f64; h * w];
    let mut contrast = vec![0.0f64; h];
    for c in 0..w {
        contrast[0] = 0.0;
        for r in 1..h {
            contrast[r] =
                impedance[labels.label(r, c) as usize] - impedance[labels.label(r - 1, c) as usize];
        }
        for r in 0..h as isize {
            let mut acc = 0.0;
            for (i, wv) in wavelet.iter().enumerate() {
                let src = r + i as isize - half;
                if src >= 0 && src < h as isize {
                    acc += wv * contrast[src as usize];
                }
            }
            trace[r as usize * w + c] = acc;
        }
    }
    trace
}

/// [`seismic_response`] plus Gaussian noise with standard deviation
/// `noise_level * peak |amplitude|`, min-max normalized to `[0, 1]`.
/// A flat section normalizes to 0.5.
pub fn render_seismic(labels: &FaciesLabelMap, noise_level: f64, seed: u64) -> Result<Image> {
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(Error::invalid(format!(
            "noise level must be non-negative, got {noise_level}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (labels.height(), labels.width());
    let mut trace = response_with_rng(labels, &mut rng);

    if noise_level > 0.0 {
        let peak = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sigma = noise_level * if peak > 0.0 { peak } else { 1.0 };
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for v in &mut trace {
            *v += normal.sample(&mut rng);
        }
    }

    let (lo, hi) = trace
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let data = trace
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range) as f32
            } else {
                0.5
            }
        })
        .collect();
    Grid::from_vec(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halves(h: usize, w: usize) -> FaciesLabelMap {
        let mut g = Grid::filled(h, w, 0u16);
        for r in h / 2..h {
            for c in 0..w {
                g.set(r, c, 1);
            }
        }
        FaciesLabelMap::new(g)
    }

    #[test]
    fn one_horizon_two_facies() {
        for seed in 0..20 {
            let m = generate_facies_model(32, 32, 1, seed).unwrap();
            assert_eq!(m.distinct_labels(), 2);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_facies_model(64, 48, 4, 9).unwrap();
        let b = generate_facies_model(64, 48, 4, 9).unwrap();
        let c = generate_facies_model(64, 48, 4, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn columns_monotone_downward() {
        for seed in 0..30 {
            let m = generate_facies_model(64, 64, 4, seed).unwrap();
            for c in 0..64 {
                for r in 1..64 {
                    assert!(m.label(r, c) >= m.label(r - 1, c));
                }
            }
        }
    }

    #[test]
    fn rejects_small_dims() {
        assert!(generate_facies_model(15, 32, 1, 0).is_err());
        assert!(generate_facies_model(32, 8, 1, 0).is_err());
        assert!(generate_facies_model(32, 32, 0, 0).is_err());
    }

    #[test]
    fn uniform_map_has_no_boundary() {
        let m = FaciesLabelMap::new(Grid::filled(8, 8, 3u16));
        assert_eq!(boundary_mask(&m, 3).unwrap().count_ones(), 0);
    }

    #[test]
    fn half_split_marks_two_rows() {
        let m = halves(4, 4);
        let mask = boundary_mask(&m, 1).unwrap();
        #[rustfmt::skip]
        let expected = vec![
            0, 0, 0, 0,
            1, 1, 1, 1,
            1, 1, 1, 1,
            0, 0, 0, 0,
        ];
        assert_eq!(mask.data, expected);
    }

    #[test]
    fn thickness_is_monotone() {
        let m = generate_facies_model(32, 32, 3, 5).unwrap();
        let mut prev = boundary_mask(&m, 1).unwrap();
        for t in 2..7 {
            let next = boundary_mask(&m, t).unwrap();
            assert!(prev.data.iter().zip(&next.data).all(|(a, b)| a <= b));
            assert!(next.count_ones() >= prev.count_ones());
            prev = next;
        }
        assert!(boundary_mask(&m, 0).is_err());
    }

    #[test]
    fn flat_section_renders_mid_gray() {
        let m = FaciesLabelMap::new(Grid::filled(16, 16, 0u16));
        let img = render_seismic(&m, 0.0, 1).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rendering_normalized_and_seeded() {
        let m = generate_facies_model(32, 32, 3, 1).unwrap();
        let a = render_seismic(&m, 0.2, 4).unwrap();
        assert!(a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a, render_seismic(&m, 0.2, 4).unwrap());
        assert!(render_seismic(&m, -1.0, 4).is_err());
    }

    #[test]
    fn single_reflector_peaks_at_contrast() {
        let m = halves(32, 4);
        let img = render_seismic(&m, 0.0, 2).unwrap();
        for c in 0..4 {
            let col: Vec<f32> = (0..32).map(|r| *img.get(r, c)).collect();
            // Background away from the reflector sits at the same level;
            // the extreme deviation is at the contrast row.
            let bg = col[0];
            let peak = (0..32)
                .max_by(|&a, &b| (col[a] - bg).abs().total_cmp(&(col[b] - bg).abs()))
                .unwrap();
            assert_eq!(peak, 16);
        }
    }

    #[test]
    fn wavelet_is_symmetric_with_unit_peak() {
        let w = ricker_wavelet(RICKER_PEAK_FREQUENCY);
        let half = ricker_half_width(RICKER_PEAK_FREQUENCY);
        assert_eq!(w.len(), 2 * half + 1);
        assert_eq!(w[half], 1.0);
        for i in 0..half {
            assert!((w[i] - w[w.len() - 1 - i]).abs() < 1e-15);
        }
    }
}
