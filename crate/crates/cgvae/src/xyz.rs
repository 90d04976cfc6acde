//! Multi-frame XYZ files: atom count, comment line, then
//! `element x y z` rows. Coordinates are written with 9 decimal places,
//! so a write/read round trip preserves them to 1e-9.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Conformation, Element};

pub fn format_xyz(frames: &[Conformation]) -> String {
    let mut out = String::new();
    for (k, f) in frames.iter().enumerate() {
        out.push_str(&format!("{}\n", f.len()));
        out.push_str(&format!("frame={}\n", k));
        for (e, p) in f.elements.iter().zip(f.coords.iter()) {
            out.push_str(&format!("{} {:.9} {:.9} {:.9}\n", e.symbol(), p[0], p[1], p[2]));
        }
    }
    out
}

pub fn write_xyz(frames: &[Conformation], path: &Path) -> Result<()> {
    std::fs::write(path, format_xyz(frames))?;
    Ok(())
}

pub fn parse_xyz(text: &str) -> Result<Vec<Conformation>> {
    let mut lines = text.lines().enumerate().peekable();
    let mut frames = Vec::new();
    while let Some((lineno, header)) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let count: usize = header.trim().parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("expected atom count, got '{}'", header.trim()),
        })?;
        let _comment = lines.next(); // may legitimately be missing for count 0
        let mut elements = Vec::with_capacity(count);
        let mut coords = Vec::with_capacity(count);
        for _ in 0..count {
            let Some((alineno, atom_line)) = lines.next() else {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("frame truncated: expected {} atoms", count),
                });
            };
            let fields: Vec<&str> = atom_line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: alineno + 1,
                    msg: format!("expected 'El x y z', got '{}'", atom_line),
                });
            }
            elements.push(Element::from_symbol(fields[0]).map_err(|_| Error::Parse {
                line: alineno + 1,
                msg: format!("unknown element '{}'", fields[0]),
            })?);
            let mut p = [0.0; 3];
            for (k, f) in fields[1..].iter().enumerate() {
                p[k] = f.parse().map_err(|_| Error::Parse {
                    line: alineno + 1,
                    msg: format!("bad coordinate '{}'", f),
                })?;
            }
            coords.push(p);
        }
        frames.push(Conformation::new(elements, coords)?);
    }
    Ok(frames)
}

pub fn read_xyz(path: &Path) -> Result<Vec<Conformation>> {
    let text = std::fs::read_to_string(path)?;
    parse_xyz(&text)
}
