//! Predicted exponents and regimes over a grid of (alpha, beta).

use scaling_dmft::exponents::{exponent_table, write_exponent_table};

fn main() -> scaling_dmft::Result<()> {
    let rows = exponent_table(&[1.5, 2.0, 3.0], &[0.25, 0.5, 1.0, 1.25, 1.75, 3.0])?;
    write_exponent_table(&rows, std::io::stdout().lock()).map_err(|e| scaling_dmft::Error::Io {
        path: "<stdout>".into(),
        source: e,
    })
}
