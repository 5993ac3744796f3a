use super::{Stroke, StrokePoint, StrokeSet};

/// Letters available through [`demo_letter`].
pub const DEMO_LETTERS: [&str; 3] = ["I", "A", "R"];

const SIZE_PX: f64 = 300.0;
const SCALE: f64 = 0.001;

fn stroke(points: &[(f64, f64, f64)]) -> Stroke {
    Stroke {
        points: points
            .iter()
            .map(|&(x, y, w_px)| StrokePoint { x, y, w: w_px * SCALE })
            .collect(),
    }
}

/// A 0.3 m square letter drawn with 7–9 mm lines.
pub fn demo_letter(name: &str) -> Option<StrokeSet> {
    let strokes = match name.to_ascii_uppercase().as_str() {
        "I" => vec![stroke(&[(150.0, 75.0, 8.0), (150.0, 150.0, 9.0), (150.0, 225.0, 8.0)])],
        "A" => vec![
            stroke(&[(150.0, 60.0, 7.0), (122.0, 150.0, 8.0), (95.0, 240.0, 9.0)]),
            stroke(&[(150.0, 60.0, 7.0), (178.0, 150.0, 8.0), (205.0, 240.0, 9.0)]),
            stroke(&[(118.0, 170.0, 7.0), (182.0, 170.0, 7.0)]),
        ],
        "R" => vec![
            stroke(&[(105.0, 60.0, 8.0), (105.0, 150.0, 9.0), (105.0, 240.0, 8.0)]),
            stroke(&[
                (105.0, 62.0, 7.0),
                (150.0, 62.0, 7.0),
                (180.0, 80.0, 8.0),
                (185.0, 105.0, 8.0),
                (175.0, 130.0, 8.0),
                (150.0, 145.0, 7.0),
                (105.0, 148.0, 7.0),
            ]),
            stroke(&[(135.0, 148.0, 8.0), (190.0, 240.0, 9.0)]),
        ],
        _ => return None,
    };
    Some(StrokeSet {
        width_px: SIZE_PX,
        height_px: SIZE_PX,
        scale: SCALE,
        anchor: None,
        strokes,
    })
}
