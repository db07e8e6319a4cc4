mod common;

use common::{load_golden, render_both, GOLDEN_CASES};

#[test]
fn renders_match_golden_fixtures() {
    let cases = load_golden();
    assert_eq!(cases.len(), GOLDEN_CASES);
    for c in &cases {
        let (overlay, concat) = render_both(&c.image, &c.path, &c.style);
        assert_eq!(overlay, c.overlay, "{} overlay", c.name);
        assert_eq!(concat, c.concat, "{} concat", c.name);
        assert_eq!(overlay.encode_png().unwrap(), render_both(&c.image, &c.path, &c.style).0.encode_png().unwrap());
    }
}

#[test]
fn concat_keeps_input_in_first_three_channels() {
    for c in load_golden() {
        assert_eq!(c.concat.split_rgb(0).unwrap(), c.image, "{}", c.name);
        let drawn = c.concat.split_rgb(3).unwrap();
        assert!(drawn.data().iter().any(|&b| b != 0), "{}", c.name);
    }
}
