//! Plot artifacts: CSV tables and PPM scene overlays with end-effector
//! traces colored cyan to magenta over time.

use std::fs;
use std::io::Write;
use std::path::Path;

use demogen_autodiff::Tensor;

use crate::evaluation::EvalError;

/// Plain numeric CSV; values never need quoting.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), EvalError> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write the scene as binary PPM with the given pixel traces overlaid; each
/// trace fades cyan -> magenta along its index. Returns the number of trace
/// pixels drawn.
pub fn overlay_ppm(
    image: &Tensor<f32>,
    traces: &[Vec<(f64, f64)>],
    path: &Path,
) -> Result<usize, EvalError> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(EvalError::Config(format!(
            "overlay wants a [3, H, W] image, got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let plane = h * w;
    let mut rgb = vec![0u8; 3 * plane];
    for p in 0..plane {
        rgb[3 * p] = to_byte(image.data()[p]);
        rgb[3 * p + 1] = to_byte(image.data()[plane + p]);
        rgb[3 * p + 2] = to_byte(image.data()[2 * plane + p]);
    }

    let mut drawn = 0usize;
    for trace in traces {
        let denom = (trace.len().max(2) - 1) as f64;
        for (i, &(u, v)) in trace.iter().enumerate() {
            let (pu, pv) = (u.round() as isize, v.round() as isize);
            if pu < 0 || pv < 0 || pu >= w as isize || pv >= h as isize {
                continue;
            }
            let frac = i as f64 / denom;
            let p = pv as usize * w + pu as usize;
            rgb[3 * p] = (frac * 255.0).round() as u8;
            rgb[3 * p + 1] = ((1.0 - frac) * 255.0).round() as u8;
            rgb[3 * p + 2] = 255;
            drawn += 1;
        }
    }

    let mut f = fs::File::create(path)?;
    write!(f, "P6\n{w} {h}\n255\n")?;
    f.write_all(&rgb)?;
    Ok(drawn)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_draws_in_bounds_points_and_is_deterministic() {
        let img = Tensor::new(vec![3, 8, 8], vec![0.5; 192]).unwrap();
        let trace = vec![vec![(1.0, 1.0), (2.0, 2.0), (100.0, 100.0)]];
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ppm");
        let p2 = dir.path().join("b.ppm");
        assert_eq!(overlay_ppm(&img, &trace, &p1).unwrap(), 2);
        overlay_ppm(&img, &trace, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let bytes = std::fs::read(&p1).unwrap();
        assert!(bytes.starts_with(b"P6\n8 8\n255\n"));
    }

    #[test]
    fn csv_row_count_matches() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![vec!["1".into(), "2.5".into()], vec!["3".into(), "4.5".into()]];
        write_csv(&p, &["a", "b"], &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap(), "a,b");
    }
}
