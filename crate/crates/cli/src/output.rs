use std::io::Write;
use std::path::Path;

use bundle_menu::numeric::linspace;
use bundle_menu::oracle::fmt12;
use bundle_menu::{Bundle, Error, Result, VirtualModel};

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, body: &[u8], no_clobber: bool) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(body)?;
    tmp.as_file().sync_all()?;
    if no_clobber {
        tmp.persist_noclobber(path).map_err(|e| Error::Io(e.error))?;
    } else {
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    }
    Ok(())
}

/// `t`, one φ column per menu bundle, and their pointwise maximum.
pub fn curves_csv(model: &VirtualModel, menu: &[Bundle], grid_size: usize) -> Result<String> {
    if menu.is_empty() {
        return Err(Error::Argument("curves need a nonempty menu".into()));
    }
    let (lo, hi) = model.support();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(menu.iter().map(|b| b.key()));
    header.push("envelope".into());
    w.write_record(&header).map_err(csv_error)?;
    for t in linspace(lo, hi, grid_size) {
        let phi = menu.iter().map(|&b| model.eval_virtual(b, t)).collect::<Result<Vec<f64>>>()?;
        let top = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut row = vec![fmt12(t)];
        row.extend(phi.iter().map(|&x| fmt12(x)));
        row.push(fmt12(top));
        w.write_record(&row).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.into())
}
