//! ASCII PGM (`P2`) output with a scale-preserving comment.
//!
//! Pixels are `floor((v - min)/(max - min) * 255)` so the maximum maps to
//! 255 and everything else to its linear bin; the original range is kept in
//! a `# min=<v> max=<v>` comment so the image can be un-scaled exactly.

use std::fs;
use std::io;
use std::path::Path;

use crate::space::ParameterVector;

/// Renders the grid function as an 8-bit ASCII PGM.
pub fn write_pgm(field: &ParameterVector, path: &Path) -> io::Result<()> {
    fs::write(path, render_pgm(field))
}

pub fn render_pgm(field: &ParameterVector) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in field.values() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let span = hi - lo;
    let mut out = String::new();
    out.push_str("P2\n");
    out.push_str(&format!("# min={lo} max={hi}\n"));
    out.push_str(&format!("{} {}\n255\n", field.cols(), field.rows()));
    let mut line_len = 0usize;
    for (i, v) in field.values().iter().enumerate() {
        let pixel = if span == 0.0 {
            0u32
        } else {
            (((v - lo) / span) * 255.0).floor().clamp(0.0, 255.0) as u32
        };
        let token = pixel.to_string();
        // keep lines under the customary 70-character limit
        if line_len > 0 && line_len + 1 + token.len() > 70 {
            out.push('\n');
            line_len = 0;
        } else if i > 0 && line_len > 0 {
            out.push(' ');
            line_len += 1;
        }
        out.push_str(&token);
        line_len += token.len();
    }
    out.push('\n');
    out
}

/// Reads back the `# min=<v> max=<v>` comment of a file written by
/// [`write_pgm`].
pub fn read_pgm_minmax(path: &Path) -> io::Result<(f64, f64)> {
    let text = fs::read_to_string(path)?;
    parse_pgm_minmax(&text)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "missing min/max comment"))
}

pub fn parse_pgm_minmax(text: &str) -> Option<(f64, f64)> {
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("# min=") else {
            continue;
        };
        let (min_s, max_s) = rest.split_once(" max=")?;
        return Some((min_s.parse().ok()?, max_s.parse().ok()?));
    }
    None
}

/// Pixel values in row-major order, for tests and tooling.
pub fn parse_pgm_pixels(text: &str) -> Option<Vec<u32>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next()? != "P2" {
        return None;
    }
    let dims: Vec<usize> = lines
        .next()?
        .split_whitespace()
        .map(|t| t.parse().ok())
        .collect::<Option<_>>()?;
    let _maxval = lines.next()?;
    let pixels: Vec<u32> = lines
        .flat_map(|l| l.split_whitespace())
        .map(|t| t.parse().ok())
        .collect::<Option<_>>()?;
    if dims.len() == 2 && pixels.len() == dims[0] * dims[1] {
        Some(pixels)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_two_by_two_example() {
        let field = ParameterVector::new(vec![0.0, 1.0, 0.5, 0.25], 2, 2, 1.0).unwrap();
        let text = render_pgm(&field);
        assert_eq!(parse_pgm_pixels(&text).unwrap(), vec![0, 255, 127, 63]);
        assert_eq!(parse_pgm_minmax(&text).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn constant_field_renders_as_black_with_recorded_scale() {
        let field = ParameterVector::constant(3.25, 2, 3, 1.0).unwrap();
        let text = render_pgm(&field);
        assert_eq!(parse_pgm_pixels(&text).unwrap(), vec![0; 6]);
        assert_eq!(parse_pgm_minmax(&text).unwrap(), (3.25, 3.25));
    }

    #[test]
    fn minmax_comment_round_trips_exactly() {
        let field = ParameterVector::new(
            vec![-0.12345678901234567, 2.718281828459045, 0.1, 0.2],
            2,
            2,
            1.0,
        )
        .unwrap();
        let text = render_pgm(&field);
        let (lo, hi) = parse_pgm_minmax(&text).unwrap();
        assert_eq!(lo, -0.12345678901234567);
        assert_eq!(hi, 2.718281828459045);
    }

    #[test]
    fn lines_stay_below_the_width_limit() {
        let field = ParameterVector::from_fn(40, 40, 1.0, |r, c| (r * 40 + c) as f64).unwrap();
        let text = render_pgm(&field);
        assert!(text.lines().all(|l| l.len() <= 70));
    }
}
