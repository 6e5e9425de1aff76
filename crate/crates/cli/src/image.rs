//! Binary PGM/PPM export. Image rows follow grid rows, columns follow the
//! forward axis.

use bevmem_core::synth::ElementClass;

/// RGB per label: background black, crossing red, divider blue, boundary green.
pub fn palette(label: u8) -> [u8; 3] {
    match label {
        l if l == ElementClass::PedCrossing.label() => [255, 0, 0],
        l if l == ElementClass::Divider.label() => [0, 0, 255],
        l if l == ElementClass::Boundary.label() => [0, 255, 0],
        _ => [0, 0, 0],
    }
}

pub fn pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

pub fn ppm_labels(width: usize, height: usize, labels: &[u8]) -> Vec<u8> {
    assert_eq!(labels.len(), width * height);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(labels.iter().flat_map(|&l| palette(l)));
    out
}
