pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];

/// Foreground colors in color-class order (violet .. red).
pub const VIBGYOR: [Rgb; 7] = [
    [148, 0, 211],
    [75, 0, 130],
    [0, 0, 255],
    [0, 255, 0],
    [255, 255, 0],
    [255, 127, 0],
    [255, 0, 0],
];

pub fn distance(a: Rgb, b: Rgb) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Index of the closest entry of `palette`.
pub fn nearest(palette: &[Rgb], c: Rgb) -> usize {
    let mut best = 0;
    for (i, &p) in palette.iter().enumerate() {
        if distance(p, c) < distance(palette[best], c) {
            best = i;
        }
    }
    best
}
