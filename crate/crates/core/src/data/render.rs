/// Class colours: class `c` (1-based) uses `PALETTE[(c − 1) % 24]`; label 0
/// renders black. The first 20 entries are a standard maximally distinct set.
pub const PALETTE: [[u8; 3]; 24] = [
    [0xe6, 0x19, 0x4b],
    [0x3c, 0xb4, 0x4b],
    [0xff, 0xe1, 0x19],
    [0x43, 0x63, 0xd8],
    [0xf5, 0x82, 0x31],
    [0x91, 0x1e, 0xb4],
    [0x42, 0xd4, 0xf4],
    [0xf0, 0x32, 0xe6],
    [0xbf, 0xef, 0x45],
    [0xfa, 0xbe, 0xd4],
    [0x46, 0x99, 0x90],
    [0xdc, 0xbe, 0xff],
    [0x9a, 0x63, 0x24],
    [0xff, 0xfa, 0xc8],
    [0x80, 0x00, 0x00],
    [0xaa, 0xff, 0xc3],
    [0x80, 0x80, 0x00],
    [0xff, 0xd8, 0xb1],
    [0x00, 0x00, 0x75],
    [0xa9, 0xa9, 0xa9],
    [0xff, 0xff, 0xff],
    [0x00, 0x64, 0x00],
    [0xff, 0x14, 0x93],
    [0x1e, 0x90, 0xff],
];

/// Binary portable pixmap (`P6`) of a `h × w` class map, row-major.
pub fn render_map(classes: &[u32], h: usize, w: usize) -> Vec<u8> {
    assert_eq!(classes.len(), h * w, "class map does not match {h}×{w}");
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(classes.len() * 3);
    for &c in classes {
        if c == 0 {
            out.extend_from_slice(&[0, 0, 0]);
        } else {
            out.extend_from_slice(&PALETTE[(c as usize - 1) % PALETTE.len()]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_fixture() {
        let img = render_map(&[1, 2, 0, 1, 1, 2], 2, 3);
        let mut want = b"P6\n3 2\n255\n".to_vec();
        for px in [
            [0xe6, 0x19, 0x4b],
            [0x3c, 0xb4, 0x4b],
            [0, 0, 0],
            [0xe6, 0x19, 0x4b],
            [0xe6, 0x19, 0x4b],
            [0x3c, 0xb4, 0x4b],
        ] {
            want.extend_from_slice(&px);
        }
        assert_eq!(img, want);
    }

    #[test]
    fn solid_map_and_wraparound() {
        let img = render_map(&[5; 12], 3, 4);
        let body = &img[b"P6\n4 3\n255\n".len()..];
        assert_eq!(body.len(), 36);
        assert!(body.chunks(3).all(|px| px == PALETTE[4]));
        assert_eq!(&render_map(&[25], 1, 1)[11..], &PALETTE[0]);
    }

    #[test]
    fn palette_entries_distinct() {
        for i in 0..PALETTE.len() {
            assert_ne!(PALETTE[i], [0, 0, 0]);
            for j in i + 1..PALETTE.len() {
                assert_ne!(PALETTE[i], PALETTE[j]);
            }
        }
    }
}
