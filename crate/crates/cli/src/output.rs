use std::io::{BufWriter, Write};
use std::path::Path;

use tempfile::NamedTempFile;

use crate::CliError;

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let tmp = NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush().map_err(io)?;
    }
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// ASCII PGM (`P2`) with maxval 255; each value is `floor(255 v + 0.5)`.
pub fn pgm(values: &[f64], height: usize, width: usize) -> String {
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in values.chunks(width) {
        let px: Vec<String> = row
            .iter()
            .map(|v| ((255.0 * v + 0.5).floor().clamp(0.0, 255.0) as u8).to_string())
            .collect();
        out.push_str(&px.join(" "));
        out.push('\n');
    }
    out
}
