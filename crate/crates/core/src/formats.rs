//! File formats: 8-bit grayscale PGM (binary P5) and PNG images, plain-text
//! grids for depth maps and blur-size maps, and the aperture-code text
//! format (`N` on the first line, then N rows of N values).

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::optics::ApertureCode;
use crate::sim::BlurSizeMap;

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

/// Writes intensities in [0, 1] as binary 8-bit PGM.
pub fn write_pgm(path: &Path, image: &Grid) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", image.w(), image.h())?;
    let bytes: Vec<u8> = image
        .as_slice()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Grid> {
    let data = std::fs::read(path)?;
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fmt_err(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };

    if token()? != "P5" {
        return Err(fmt_err(path, "not a binary PGM (expected P5)"));
    }
    let w: usize = token()?.parse().map_err(|e| fmt_err(path, format!("width: {e}")))?;
    let h: usize = token()?.parse().map_err(|e| fmt_err(path, format!("height: {e}")))?;
    let maxval: usize = token()?
        .parse()
        .map_err(|e| fmt_err(path, format!("maxval: {e}")))?;
    if maxval == 0 || maxval > 255 {
        return Err(fmt_err(path, format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    if data.len() < pos + w * h {
        return Err(fmt_err(path, "pixel data truncated"));
    }
    let scale = 1.0 / maxval as f64;
    let values = data[pos..pos + w * h]
        .iter()
        .map(|&b| b as f64 * scale)
        .collect();
    Ok(Grid::from_vec(h, w, values))
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

pub fn write_png(path: &Path, image: &Grid) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        image.w() as u32,
        image.h() as u32,
    );
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| fmt_err(path, e.to_string()))?;
    let bytes: Vec<u8> = image
        .as_slice()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| fmt_err(path, e.to_string()))?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Grid> {
    let file = std::fs::File::open(path)?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| fmt_err(path, e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| fmt_err(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(fmt_err(path, "only 8-bit PNG supported"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgba => 4,
        other => return Err(fmt_err(path, format!("unsupported color type {other:?}"))),
    };
    let mut values = Vec::with_capacity(w * h);
    for px in buf[..w * h * channels].chunks(channels) {
        // average color channels, ignore alpha
        let gray = match channels {
            1 | 2 => px[0] as f64,
            _ => (px[0] as f64 + px[1] as f64 + px[2] as f64) / 3.0,
        };
        values.push(gray / 255.0);
    }
    Ok(Grid::from_vec(h, w, values))
}

/// Reads a grayscale image by extension (`.pgm` or `.png`).
pub fn read_gray_auto(path: &Path) -> Result<Grid> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        Some("png") => read_png(path),
        other => Err(fmt_err(
            path,
            format!("unsupported image extension {other:?}"),
        )),
    }
}

// ---------------------------------------------------------------------------
// text grids
// ---------------------------------------------------------------------------

/// Writes `height width` then one row of full-precision values per line.
pub fn write_depth_text(path: &Path, depth: &Grid) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{} {}", depth.h(), depth.w())?;
    for r in 0..depth.h() {
        let row: Vec<String> = depth.row(r).iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_depth_text(path: &Path) -> Result<Grid> {
    let text = std::fs::read_to_string(path)?;
    let mut tokens = text.split_whitespace();
    let h: usize = tokens
        .next()
        .ok_or_else(|| fmt_err(path, "missing height"))?
        .parse()
        .map_err(|e| fmt_err(path, format!("height: {e}")))?;
    let w: usize = tokens
        .next()
        .ok_or_else(|| fmt_err(path, "missing width"))?
        .parse()
        .map_err(|e| fmt_err(path, format!("width: {e}")))?;
    let mut values = Vec::with_capacity(h * w);
    for token in tokens {
        values.push(
            token
                .parse::<f64>()
                .map_err(|e| fmt_err(path, format!("value: {e}")))?,
        );
    }
    if values.len() != h * w {
        return Err(fmt_err(
            path,
            format!("expected {} values, found {}", h * w, values.len()),
        ));
    }
    Ok(Grid::from_vec(h, w, values))
}

/// Writes `height width` then row-major integers, one row per line.
pub fn write_size_map(path: &Path, map: &BlurSizeMap) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{} {}", map.h(), map.w())?;
    for r in 0..map.h() {
        let row: Vec<String> = (0..map.w()).map(|c| map.get(r, c).to_string()).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_size_map(path: &Path) -> Result<BlurSizeMap> {
    let text = std::fs::read_to_string(path)?;
    let mut tokens = text.split_whitespace();
    let h: usize = tokens
        .next()
        .ok_or_else(|| fmt_err(path, "missing height"))?
        .parse()
        .map_err(|e| fmt_err(path, format!("height: {e}")))?;
    let w: usize = tokens
        .next()
        .ok_or_else(|| fmt_err(path, "missing width"))?
        .parse()
        .map_err(|e| fmt_err(path, format!("width: {e}")))?;
    let mut sizes = Vec::with_capacity(h * w);
    for token in tokens {
        sizes.push(
            token
                .parse::<u8>()
                .map_err(|e| fmt_err(path, format!("size: {e}")))?,
        );
    }
    if sizes.len() != h * w {
        return Err(fmt_err(
            path,
            format!("expected {} sizes, found {}", h * w, sizes.len()),
        ));
    }
    BlurSizeMap::new(h, w, sizes)
}

/// 8-bit PGM view of a size map, largest size rendered brightest.
pub fn write_size_map_pgm(path: &Path, map: &BlurSizeMap, max_size: usize) -> Result<()> {
    let scale = 1.0 / max_size.max(1) as f64;
    let view = Grid::from_fn(map.h(), map.w(), |r, c| map.get(r, c) as f64 * scale);
    write_pgm(path, &view)
}

// ---------------------------------------------------------------------------
// aperture codes
// ---------------------------------------------------------------------------

/// First line `N`, then N rows of N space-separated decimal values.
pub fn write_code(path: &Path, code: &ApertureCode) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", code.side())?;
    for r in 0..code.side() {
        let row: Vec<String> = code
            .values()
            .row(r)
            .iter()
            .map(|v| format!("{v:.17e}"))
            .collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_code(path: &Path) -> Result<ApertureCode> {
    let text = std::fs::read_to_string(path)?;
    let mut tokens = text.split_whitespace();
    let n: usize = tokens
        .next()
        .ok_or_else(|| fmt_err(path, "missing side length"))?
        .parse()
        .map_err(|e| fmt_err(path, format!("side: {e}")))?;
    let mut values = Vec::with_capacity(n * n);
    for token in tokens {
        values.push(
            token
                .parse::<f64>()
                .map_err(|e| fmt_err(path, format!("value: {e}")))?,
        );
    }
    if values.len() != n * n {
        return Err(fmt_err(
            path,
            format!("expected {} values, found {}", n * n, values.len()),
        ));
    }
    ApertureCode::new(Grid::from_vec(n, n, values))
}
