//! File formats: MFLD fields, PGM images, slice-stack volumes and cohort
//! manifests.
//!
//! MFLD is plain text. Line 1 is `MFLD <dim> <ncomp> <nx> <ny> [<nz>] <spacing>`;
//! lines starting with `#` directly after it are comments; the remaining
//! tokens are the values, component-major and then row-major with x fastest,
//! written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{MorphoError, Result};
use crate::field::{GridSpec, Image, ScalarField, Transformation, VectorField};

/// Components and grid read from an MFLD file.
#[derive(Clone, Debug, PartialEq)]
pub struct MfldData {
    pub grid: GridSpec,
    pub components: Vec<Vec<f64>>,
    pub comments: Vec<String>,
}

impl MfldData {
    pub fn into_scalar(self) -> Result<ScalarField> {
        if self.components.len() != 1 {
            return Err(MorphoError::Parse(format!(
                "expected a scalar field, found {} components",
                self.components.len()
            )));
        }
        let grid = self.grid;
        let values = self.components.into_iter().next().unwrap_or_default();
        ScalarField::new(grid, values)
    }

    pub fn into_transformation(self) -> Result<Transformation> {
        if self.components.len() != self.grid.dim() {
            return Err(MorphoError::Parse(format!(
                "a {}D transformation needs {} components, found {}",
                self.grid.dim(),
                self.grid.dim(),
                self.components.len()
            )));
        }
        Transformation::new(self.grid, self.components)
    }
}

/// Renders an MFLD document.
pub fn format_mfld(grid: &GridSpec, components: &[Vec<f64>], comments: &[&str]) -> String {
    let mut out = String::new();
    let _ = write!(out, "MFLD {} {} {} {}", grid.dim(), components.len(), grid.nx(), grid.ny());
    if grid.dim() == 3 {
        let _ = write!(out, " {}", grid.nz());
    }
    let _ = writeln!(out, " {:.16e}", grid.spacing());
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for comp in components {
        for row in comp.chunks(grid.nx()) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Parses an MFLD document.
pub fn parse_mfld(text: &str) -> Result<MfldData> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| MorphoError::Parse("empty MFLD file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first() != Some(&"MFLD") {
        return Err(MorphoError::Parse("missing MFLD magic".into()));
    }
    let num = |i: usize| -> Result<usize> {
        fields
            .get(i)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MorphoError::Parse(format!("bad MFLD header field {i}: `{header}`")))
    };
    let dim = num(1)?;
    let ncomp = num(2)?;
    let spacing_at = match dim {
        2 => 5,
        3 => 6,
        _ => return Err(MorphoError::Parse(format!("unsupported dimension {dim}"))),
    };
    if fields.len() != spacing_at + 1 {
        return Err(MorphoError::Parse(format!("bad MFLD header: `{header}`")));
    }
    let spacing: f64 = fields[spacing_at]
        .parse()
        .map_err(|_| MorphoError::Parse(format!("bad spacing in `{header}`")))?;
    let grid = if dim == 2 {
        GridSpec::new_2d(num(3)?, num(4)?, spacing)?
    } else {
        GridSpec::new_3d(num(3)?, num(4)?, num(5)?, spacing)?
    };
    let mut comments = Vec::new();
    let mut values = Vec::with_capacity(ncomp * grid.len());
    for line in lines {
        let t = line.trim();
        if let Some(c) = t.strip_prefix('#') {
            if values.is_empty() {
                comments.push(c.trim().to_string());
                continue;
            }
        }
        for tok in t.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| MorphoError::Parse(format!("bad value `{tok}`")))?;
            values.push(v);
        }
    }
    if values.len() != ncomp * grid.len() {
        return Err(MorphoError::Parse(format!(
            "expected {} values, found {}",
            ncomp * grid.len(),
            values.len()
        )));
    }
    let components = values.chunks(grid.len()).map(|c| c.to_vec()).collect();
    Ok(MfldData { grid, components, comments })
}

pub fn read_mfld(path: &Path) -> Result<MfldData> {
    let text = fs::read_to_string(path)
        .map_err(|e| MorphoError::Io(e).in_stage(format!("reading {}", path.display())))?;
    parse_mfld(&text).map_err(|e| e.in_stage(format!("parsing {}", path.display())))
}

pub fn write_mfld(path: &Path, grid: &GridSpec, components: &[Vec<f64>], comments: &[&str]) -> Result<()> {
    fs::write(path, format_mfld(grid, components, comments))
        .map_err(|e| MorphoError::Io(e).in_stage(format!("writing {}", path.display())))
}

pub fn write_transformation(path: &Path, t: &Transformation, comments: &[&str]) -> Result<()> {
    write_mfld(path, t.grid(), t.components(), comments)
}

pub fn write_scalar(path: &Path, f: &ScalarField, comments: &[&str]) -> Result<()> {
    write_mfld(path, f.grid(), &[f.values().to_vec()], comments)
}

pub fn write_vector(path: &Path, v: &VectorField, comments: &[&str]) -> Result<()> {
    write_mfld(path, v.grid(), v.components(), comments)
}

/// Encodes a 2D image as binary PGM (P5), rescaling `[0, 1]` to `0..=255`.
pub fn encode_pgm(image: &Image) -> Result<Vec<u8>> {
    let g = image.grid();
    g.ensure_dim("encode_pgm", 2)?;
    let mut out = format!("P5\n{} {}\n255\n", g.nx(), g.ny()).into_bytes();
    // row 0 of the grid (y = 0) is written first
    out.extend(image.values().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

/// Decodes PGM (P2 or P5) into an image with unit spacing, scaled by `1/maxval`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(MorphoError::Parse("truncated PGM".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    let parse = |s: String| -> Result<usize> {
        s.parse().map_err(|_| MorphoError::Parse(format!("bad PGM number `{s}`")))
    };
    let w = parse(token(&mut pos)?)?;
    let h = parse(token(&mut pos)?)?;
    let maxval = parse(token(&mut pos)?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(MorphoError::Parse(format!("bad PGM maxval {maxval}")));
    }
    let n = w * h;
    let raw: Vec<usize> = match magic.as_str() {
        "P2" => (0..n).map(|_| token(&mut pos).and_then(parse)).collect::<Result<_>>()?,
        "P5" => {
            pos += 1; // single whitespace after maxval
            let width = if maxval < 256 { 1 } else { 2 };
            let data = bytes
                .get(pos..pos + n * width)
                .ok_or_else(|| MorphoError::Parse("truncated PGM raster".into()))?;
            if width == 1 {
                data.iter().map(|b| *b as usize).collect()
            } else {
                data.chunks(2).map(|c| ((c[0] as usize) << 8) | c[1] as usize).collect()
            }
        }
        other => return Err(MorphoError::Parse(format!("unsupported PGM magic `{other}`"))),
    };
    if raw.iter().any(|v| *v > maxval) {
        return Err(MorphoError::Parse("PGM sample above maxval".into()));
    }
    let grid = GridSpec::new_2d(w, h, 1.0)?;
    Image::new(grid, raw.iter().map(|v| *v as f64 / maxval as f64).collect())
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| MorphoError::Io(e).in_stage(format!("reading {}", path.display())))?;
    decode_pgm(&bytes).map_err(|e| e.in_stage(format!("parsing {}", path.display())))
}

pub fn write_pgm(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, encode_pgm(image)?)
        .map_err(|e| MorphoError::Io(e).in_stage(format!("writing {}", path.display())))
}

/// Non-empty, non-comment lines of a manifest, resolved against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path)
        .map_err(|e| MorphoError::Io(e).in_stage(format!("reading {}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect();
    if entries.is_empty() {
        return Err(MorphoError::Parse(format!("{} lists no files", path.display())));
    }
    Ok(entries)
}

/// Writes `names` one per line.
pub fn write_manifest(path: &Path, names: &[String]) -> Result<()> {
    let mut text = names.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| MorphoError::Io(e).in_stage(format!("writing {}", path.display())))
}

/// Reads a 2D PGM image, or a volume when `path` ends in `.txt` (a manifest
/// of PGM slices in z order).
pub fn read_image(path: &Path) -> Result<Image> {
    if path.extension().is_some_and(|e| e == "txt") {
        let slices = read_manifest(path)?
            .iter()
            .map(|p| read_pgm(p))
            .collect::<Result<Vec<_>>>()?;
        Image::stack(&slices)
    } else {
        read_pgm(path)
    }
}

/// Writes a 2D image as PGM, or a volume as `<stem>_zNNN.pgm` slices plus the
/// manifest at `path`.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    if image.grid().dim() == 2 {
        return write_pgm(path, image);
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".into());
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut names = Vec::with_capacity(image.grid().nz());
    for k in 0..image.grid().nz() {
        let name = format!("{stem}_z{k:03}.pgm");
        write_pgm(&dir.join(&name), &image.slice_z(k)?)?;
        names.push(name);
    }
    write_manifest(path, &names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mfld_round_trip_is_exact() {
        let g = GridSpec::new_2d(5, 4, 0.1).unwrap();
        let comps: Vec<Vec<f64>> = (0..2)
            .map(|c| (0..g.len()).map(|i| (i as f64 * 0.731 + c as f64).sin() / 3.0).collect())
            .collect();
        let text = format_mfld(&g, &comps, &["direction: moving ∘ phi ≈ fixed"]);
        let back = parse_mfld(&text).unwrap();
        assert_eq!(back.grid, g);
        assert_eq!(back.components, comps);
        assert_eq!(back.comments, ["direction: moving ∘ phi ≈ fixed"]);
        let g3 = GridSpec::new_3d(3, 4, 5, 2.0).unwrap();
        let c3 = vec![(0..g3.len()).map(|i| i as f64).collect::<Vec<_>>()];
        assert_eq!(parse_mfld(&format_mfld(&g3, &c3, &[])).unwrap().components, c3);
    }

    #[test]
    fn mfld_rejects_malformed() {
        assert!(parse_mfld("").is_err());
        assert!(parse_mfld("NOPE 2 1 3 3 1.0\n").is_err());
        assert!(parse_mfld("MFLD 2 1 3 3 1.0\n1 2 3\n").is_err());
        assert!(parse_mfld("MFLD 4 1 3 3 1.0\n").is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let g = GridSpec::new_2d(4, 3, 1.0).unwrap();
        let img = Image::new(g, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        let back = decode_pgm(&encode_pgm(&img).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-12);
        let ascii = b"P2\n# comment\n3 3\n4\n0 1 2\n4 0 0\n0 0 0\n";
        let a = decode_pgm(ascii).unwrap();
        assert_eq!(&a.values()[..4], &[0.0, 0.25, 0.5, 1.0]);
        assert!(decode_pgm(b"P2\n3 3\n4\n0 1 2 9 0 0 0 0 0\n").is_err());
        assert!(decode_pgm(b"P2\n2 2\n4\n0 1 2 3\n").is_err());
    }
}
