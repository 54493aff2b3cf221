//! Level counting, Weyl asymptotics and nearest-neighbour spacings.

use std::f64::consts::PI;

/// Two-term Weyl estimate of the number of Dirichlet levels below `energy`
/// for `H = -Δ/2` on a domain of given area and perimeter.
pub fn weyl_count(area: f64, perimeter: f64, energy: f64) -> f64 {
    area * energy / (2.0 * PI) - perimeter * (2.0 * energy).sqrt() / (4.0 * PI)
}

/// Number of levels `<= energy` in an ascending list.
pub fn counting_function(levels: &[f64], energy: f64) -> usize {
    levels.partition_point(|&e| e <= energy)
}

/// Relative deviation of the staircase from the Weyl law at the last level.
pub fn weyl_deviation(levels: &[f64], area: f64, perimeter: f64) -> f64 {
    let e = *levels.last().expect("empty spectrum");
    let w = weyl_count(area, perimeter, e);
    (counting_function(levels, e) as f64 - w) / w
}

/// Map levels onto a unit mean density using the Weyl law.
pub fn unfold(levels: &[f64], area: f64, perimeter: f64) -> Vec<f64> {
    levels.iter().map(|&e| weyl_count(area, perimeter, e)).collect()
}

/// Nearest-neighbour spacings of an unfolded sequence, rescaled to mean 1.
pub fn spacings(unfolded: &[f64]) -> Vec<f64> {
    let s: Vec<f64> = unfolded.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    s.into_iter().map(|v| v / mean).collect()
}

pub fn small_spacing_fraction(spacings: &[f64], threshold: f64) -> f64 {
    spacings.iter().filter(|&&s| s < threshold).count() as f64 / spacings.len() as f64
}

/// Lowest `count` levels of the Dirichlet rectangle, with quantum numbers.
pub fn rectangle_levels(lx: f64, ly: f64, count: usize) -> Vec<(f64, [u32; 2])> {
    // enough quantum numbers that the lowest `count` are all inside the box
    let e_max = {
        let area = lx * ly;
        let mut e = 2.0 * PI * count as f64 / area;
        while weyl_count(area, 2.0 * (lx + ly), e) < 2.0 * count as f64 + 10.0 {
            e *= 1.5;
        }
        e
    };
    let nx_max = ((2.0 * e_max).sqrt() * lx / PI).ceil() as u32 + 1;
    let ny_max = ((2.0 * e_max).sqrt() * ly / PI).ceil() as u32 + 1;
    let mut out = Vec::new();
    for nx in 1..=nx_max {
        for ny in 1..=ny_max {
            let e = 0.5 * PI * PI * ((nx * nx) as f64 / (lx * lx) + (ny * ny) as f64 / (ly * ly));
            out.push((e, [nx, ny]));
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out.truncate(count);
    out
}
